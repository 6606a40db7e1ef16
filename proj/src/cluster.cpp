#include "imqa/cluster.hpp"

#include <algorithm>
#include <set>
#include <tuple>

namespace imqa {

std::string to_string(ClusterOrigin o) { return o == ClusterOrigin::Keyword ? "keyword" : "citation_pool"; }

ClusterOrigin cluster_origin_from_string(std::string_view s) {
  if (s == "keyword") return ClusterOrigin::Keyword;
  if (s == "citation_pool") return ClusterOrigin::CitationPool;
  throw std::invalid_argument("unknown cluster origin '" + std::string(s) + "'");
}

void PaperCluster::validate(std::size_t expected_size) const {
  std::set<std::string> seen(member_doc_ids.begin(), member_doc_ids.end());
  if (seen.size() != member_doc_ids.size()) throw ClusterError(cluster_id + ": duplicate members");
  if (!seen.count(target_doc_id)) throw ClusterError(cluster_id + ": target not among members");
  if (seen.count(source_doc_id)) throw ClusterError(cluster_id + ": source among members");
  if (expected_size > 0 && member_doc_ids.size() != expected_size) {
    throw ClusterError(cluster_id + ": " + std::to_string(member_doc_ids.size()) + " members, expected " +
                       std::to_string(expected_size));
  }
}

std::string cluster_id_for(const RelationCandidate& c) {
  return "C" + sha256_hex(c.source_doc_id + '\x1f' + c.target_doc_id + '\x1f' + c.source_section + '\x1f' +
                          c.target_section)
                   .substr(0, 16);
}

PaperCluster build_cluster(const Document& source, const Document& target,
                           const std::vector<const Document*>& keyword_list, const Corpus& corpus,
                           std::uint64_t rng_seed, const std::string& cluster_id, std::size_t cluster_size) {
  if (cluster_size < 1) throw ClusterError("cluster size must be positive");
  if (!corpus.contains(target.doc_id)) throw ClusterError("target '" + target.doc_id + "' is not in the corpus");

  const auto src_kw = normalize_keywords(source.keywords);
  const std::set<std::string> src_set(src_kw.begin(), src_kw.end());

  struct Ranked {
    std::size_t overlap;
    const std::string* id;
  };
  std::vector<Ranked> ranked;
  std::set<std::string> listed;
  for (const Document* d : keyword_list) {
    if (d->doc_id == source.doc_id || d->doc_id == target.doc_id) continue;
    if (!listed.insert(d->doc_id).second) continue;
    std::size_t overlap = 0;
    for (const auto& k : normalize_keywords(d->keywords)) overlap += src_set.count(k);
    ranked.push_back({overlap, &d->doc_id});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.overlap != b.overlap) return a.overlap > b.overlap;
    return *a.id < *b.id;
  });

  std::vector<std::string> members{target.doc_id};
  for (std::size_t i = 0; i < ranked.size() && members.size() < cluster_size; ++i) members.push_back(*ranked[i].id);

  if (members.size() < cluster_size) {
    std::vector<std::string> pool;
    for (const auto& d : corpus) {
      if (d.doc_id == source.doc_id || d.doc_id == target.doc_id || listed.count(d.doc_id)) continue;
      pool.push_back(d.doc_id);
    }
    std::sort(pool.begin(), pool.end());
    const std::size_t need = cluster_size - members.size();
    if (pool.size() < need) {
      throw ClusterError("corpus too small for a " + std::to_string(cluster_size) + "-document cluster: " +
                         std::to_string(members.size() + pool.size()) + " eligible members for " + cluster_id);
    }
    SplitMix64 rng(derive_seed(rng_seed, cluster_id));
    for (std::size_t i = 0; i < need; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
      members.push_back(pool[i]);
    }
  }

  std::sort(members.begin(), members.end());
  PaperCluster c{cluster_id, source.doc_id, target.doc_id, std::move(members), ClusterOrigin::Keyword};
  c.validate(cluster_size);
  return c;
}

PaperCluster citation_cluster(const Document& source, const Document& target, const Corpus& corpus,
                              const std::string& cluster_id) {
  std::vector<std::string> members;
  for (const auto& id : source.resolved_targets()) {
    if (id != source.doc_id && corpus.contains(id)) members.push_back(id);
  }
  if (std::find(members.begin(), members.end(), target.doc_id) == members.end()) {
    throw ClusterError("target '" + target.doc_id + "' is not an in-corpus citation of '" + source.doc_id + "'");
  }
  std::sort(members.begin(), members.end());
  PaperCluster c{cluster_id, source.doc_id, target.doc_id, std::move(members), ClusterOrigin::CitationPool};
  c.validate(0);
  return c;
}

ShqaByDoc group_by_document(const std::vector<QaTriplet>& triplets) {
  ShqaByDoc out;
  for (const auto& t : triplets) out[t.doc_id].push_back(t);
  return out;
}

RetrievalQa select_retrieval_qa(const Document& target, const PaperCluster& cluster, const ShqaByDoc& shqa,
                                Embedder& embedder) {
  auto it = shqa.find(target.doc_id);
  if (it == shqa.end() || it->second.empty()) {
    throw ClusterError("target '" + target.doc_id + "' has no surviving single-hop QA");
  }
  auto own = it->second;
  std::vector<QaTriplet> others;
  for (const auto& m : cluster.member_doc_ids) {
    if (m == target.doc_id) continue;
    if (auto o = shqa.find(m); o != shqa.end()) others.insert(others.end(), o->second.begin(), o->second.end());
  }
  // Canonical order makes the floating-point sums independent of member order.
  auto full_order = [](const QaTriplet& a, const QaTriplet& b) {
    return std::tie(a.doc_id, a.section_name, a.question, a.answer) <
           std::tie(b.doc_id, b.section_name, b.question, b.answer);
  };
  std::sort(own.begin(), own.end(), full_order);
  std::sort(others.begin(), others.end(), full_order);

  std::vector<std::string> texts;
  for (const auto& t : own) texts.push_back(render_for_embedding(EmbedLevel::QA, t.question, t.answer, t.evidence));
  for (const auto& t : others) texts.push_back(render_for_embedding(EmbedLevel::QA, t.question, t.answer, t.evidence));
  const auto vecs = embedder.embed_batch(texts);

  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < own.size(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < others.size(); ++j) total += 1.0 - cosine(vecs[i], vecs[own.size() + j]);
    const bool better = total > best_score ||
                        (total == best_score && std::tie(own[i].question, own[i].answer) <
                                                    std::tie(own[best].question, own[best].answer));
    if (i == 0 || better) {
      best = i;
      best_score = total;
    }
  }
  return {own[best].question, own[best].answer, target.doc_id, own[best].section_name, best_score};
}

json cluster_to_json(const PaperCluster& c, const RetrievalQa& rqa) {
  return {{"cluster_id", c.cluster_id},
          {"source_doc_id", c.source_doc_id},
          {"target_doc_id", c.target_doc_id},
          {"member_doc_ids", c.member_doc_ids},
          {"origin", to_string(c.origin)},
          {"retrieval_question", rqa.question},
          {"retrieval_answer", rqa.answer},
          {"retrieval_section", rqa.section_name},
          {"distinctiveness", rqa.distinctiveness}};
}

PaperCluster cluster_from_json(const json& j) {
  return {j.at("cluster_id").get<std::string>(), j.at("source_doc_id").get<std::string>(),
          j.at("target_doc_id").get<std::string>(), j.at("member_doc_ids").get<std::vector<std::string>>(),
          cluster_origin_from_string(j.value("origin", std::string("keyword")))};
}

RetrievalQa retrieval_qa_from_json(const json& j) {
  return {j.at("retrieval_question").get<std::string>(), j.at("retrieval_answer").get<std::string>(),
          j.at("target_doc_id").get<std::string>(), j.value("retrieval_section", std::string{}),
          j.value("distinctiveness", 0.0)};
}

}  // namespace imqa
