#include "imqa/relation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>
#include <unordered_map>

namespace imqa {

void SectionIndex::add(SectionUnit unit) {
  if (unit.triplets.size() != unit.question_vectors.size()) {
    throw std::invalid_argument("SectionUnit: triplets and vectors are not aligned");
  }
  if (unit.triplets.empty()) return;
  by_doc_[unit.doc_id].push_back(std::move(unit));
}

const std::vector<SectionUnit>& SectionIndex::units_of(const std::string& doc_id) const {
  static const std::vector<SectionUnit> kEmpty;
  auto it = by_doc_.find(doc_id);
  return it == by_doc_.end() ? kEmpty : it->second;
}

SectionIndex build_section_index(const std::vector<QaTriplet>& triplets, Embedder& embedder, EmbedLevel level) {
  SectionIndex index;
  if (triplets.empty()) return index;
  std::vector<std::string> texts;
  texts.reserve(triplets.size());
  for (const auto& t : triplets) texts.push_back(render_for_embedding(level, t.question, t.answer, t.evidence));
  auto vecs = embedder.embed_batch(texts);

  std::vector<SectionUnit> units;
  std::map<std::pair<std::string, std::string>, std::size_t> slot;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    auto [it, inserted] = slot.emplace(std::pair{t.doc_id, t.section_name}, units.size());
    if (inserted) units.push_back({t.doc_id, t.section_name, {}, {}});
    auto& u = units[it->second];
    u.question_vectors.push_back(std::move(vecs[i]));
    u.triplets.push_back(t);
  }
  for (auto& u : units) index.add(std::move(u));
  return index;
}

SimilarityMatrix SimilarityMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  SimilarityMatrix m(rows.size(), cols);
  for (std::size_t p = 0; p < rows.size(); ++p) {
    if (rows[p].size() != cols) throw std::invalid_argument("SimilarityMatrix: ragged rows");
    for (std::size_t q = 0; q < cols; ++q) m.at(p, q) = rows[p][q];
  }
  return m;
}

SimilarityMatrix pair_matrix(const SectionUnit& a, const SectionUnit& b) {
  if (a.question_vectors.empty() || b.question_vectors.empty()) {
    throw std::invalid_argument("pair_matrix: empty section unit");
  }
  SimilarityMatrix m(a.question_vectors.size(), b.question_vectors.size());
  for (std::size_t p = 0; p < m.rows(); ++p) {
    for (std::size_t q = 0; q < m.cols(); ++q) m.at(p, q) = cosine(a.question_vectors[p], b.question_vectors[q]);
  }
  return m;
}

double section_similarity(const SimilarityMatrix& k, double tau) {
  double sum = 0.0;
  for (std::size_t p = 0; p < k.rows(); ++p) {
    for (std::size_t q = 0; q < k.cols(); ++q) {
      const double v = k.at(p, q);
      if (v >= tau) sum += std::fabs(v);
    }
  }
  return sum;
}

std::vector<const Document*> semantic_candidates(const Document& source, const Corpus& corpus) {
  const auto src = normalize_keywords(source.keywords);
  const std::set<std::string> src_set(src.begin(), src.end());
  std::vector<const Document*> out;
  for (const auto& d : corpus) {
    if (d.doc_id == source.doc_id) continue;
    for (const auto& k : normalize_keywords(d.keywords)) {
      if (src_set.count(k)) {
        out.push_back(&d);
        break;
      }
    }
  }
  return out;
}

bool relation_order(const RelationCandidate& a, const RelationCandidate& b) {
  if (a.pair_score != b.pair_score) return a.pair_score > b.pair_score;
  return std::tie(a.source_doc_id, a.target_doc_id, a.source_section, a.target_section, a.core_source_qa.question,
                  a.core_target_qa.question) < std::tie(b.source_doc_id, b.target_doc_id, b.source_section,
                                                        b.target_section, b.core_source_qa.question,
                                                        b.core_target_qa.question);
}

namespace {

json triplet_json(const QaTriplet& t) {
  return {{"doc_id", t.doc_id},
          {"section_name", t.section_name},
          {"question", t.question},
          {"answer", t.answer},
          {"evidence", t.evidence}};
}

struct ScoredPair {
  const SectionUnit* src;
  const SectionUnit* tgt;
  SimilarityMatrix matrix;
  double score;
};

}  // namespace

json relation_to_json(const RelationCandidate& c) {
  json j = {{"source_doc_id", c.source_doc_id},
            {"target_doc_id", c.target_doc_id},
            {"source_section", c.source_section},
            {"target_section", c.target_section},
            {"core_source_qa", triplet_json(c.core_source_qa)},
            {"core_target_qa", triplet_json(c.core_target_qa)},
            {"pair_score", c.pair_score},
            {"section_score", c.section_score},
            {"origin", to_string(c.origin)}};
  j["citation_sentence"] = c.citation_sentence ? json(*c.citation_sentence) : json(nullptr);
  return j;
}

RelationCandidate relation_from_json(const json& j) {
  RelationCandidate c;
  c.source_doc_id = j.at("source_doc_id").get<std::string>();
  c.target_doc_id = j.at("target_doc_id").get<std::string>();
  c.source_section = j.at("source_section").get<std::string>();
  c.target_section = j.at("target_section").get<std::string>();
  c.core_source_qa = triplet_from_json(j.at("core_source_qa"));
  c.core_target_qa = triplet_from_json(j.at("core_target_qa"));
  c.pair_score = j.at("pair_score").get<double>();
  c.section_score = j.at("section_score").get<double>();
  c.origin = relation_mode_from_string(j.at("origin").get<std::string>());
  if (j.contains("citation_sentence") && !j.at("citation_sentence").is_null()) {
    c.citation_sentence = j.at("citation_sentence").get<std::string>();
  }
  return c;
}

std::vector<RelationCandidate> rank_relations(const Document& source, const std::vector<const Document*>& candidates,
                                              const SectionIndex& units, const RelationOptions& opts) {
  if (opts.k_sections == 0) throw std::invalid_argument("rank_relations: k_sections must be positive");
  std::vector<RelationCandidate> out;
  const auto& src_units = units.units_of(source.doc_id);
  if (src_units.empty()) return out;

  for (const Document* cand : candidates) {
    if (cand->doc_id == source.doc_id) continue;
    const auto& tgt_units = units.units_of(cand->doc_id);
    std::vector<ScoredPair> pairs;
    for (const auto& su : src_units) {
      for (const auto& tu : tgt_units) {
        auto m = pair_matrix(su, tu);
        const double s = section_similarity(m, opts.tau);
        if (s > 0.0) pairs.push_back({&su, &tu, std::move(m), s});
      }
    }
    std::sort(pairs.begin(), pairs.end(), [](const ScoredPair& a, const ScoredPair& b) {
      if (a.score != b.score) return a.score > b.score;
      return std::tie(a.src->section_name, a.tgt->section_name) < std::tie(b.src->section_name, b.tgt->section_name);
    });
    if (pairs.size() > opts.k_sections) pairs.erase(pairs.begin() + static_cast<std::ptrdiff_t>(opts.k_sections), pairs.end());

    for (const auto& sp : pairs) {
      std::size_t bp = 0, bq = 0;
      for (std::size_t p = 0; p < sp.matrix.rows(); ++p) {
        for (std::size_t q = 0; q < sp.matrix.cols(); ++q) {
          const double v = sp.matrix.at(p, q);
          const double best = sp.matrix.at(bp, bq);
          if (v > best ||
              (v == best && std::tie(sp.src->triplets[p].question, sp.tgt->triplets[q].question) <
                                std::tie(sp.src->triplets[bp].question, sp.tgt->triplets[bq].question))) {
            bp = p;
            bq = q;
          }
        }
      }
      const double pair_score = sp.matrix.at(bp, bq);
      if (pair_score < opts.tau) continue;
      RelationCandidate c;
      c.source_doc_id = source.doc_id;
      c.target_doc_id = cand->doc_id;
      c.source_section = sp.src->section_name;
      c.target_section = sp.tgt->section_name;
      c.core_source_qa = sp.src->triplets[bp];
      c.core_target_qa = sp.tgt->triplets[bq];
      c.pair_score = pair_score;
      c.section_score = sp.score;
      c.origin = RelationMode::Semantic;
      out.push_back(std::move(c));
    }
  }
  std::sort(out.begin(), out.end(), relation_order);
  return out;
}

std::vector<RelationCandidate> enforce_diversity(const std::vector<RelationCandidate>& sorted, std::size_t cap) {
  if (cap == 0) throw std::invalid_argument("enforce_diversity: cap must be positive");
  std::unordered_map<std::string, std::size_t> uses;
  std::vector<RelationCandidate> out;
  for (const auto& c : sorted) {
    if (uses[c.source_doc_id] >= cap || uses[c.target_doc_id] >= cap) continue;
    ++uses[c.source_doc_id];
    ++uses[c.target_doc_id];
    out.push_back(c);
  }
  return out;
}

std::vector<RelationCandidate> citation_relations(const Document& source, const Corpus& corpus,
                                                  const SectionIndex& units, const RelationOptions& opts,
                                                  const ContextOptions& contexts) {
  std::map<std::string, std::string> first_sentence;
  std::vector<const Document*> targets;
  for (auto& ctx : extract_citation_contexts(source, corpus, contexts)) {
    if (first_sentence.emplace(ctx.target_doc_id, ctx.sentence).second) targets.push_back(&corpus.at(ctx.target_doc_id));
  }
  auto out = rank_relations(source, targets, units, opts);
  for (auto& c : out) {
    c.origin = RelationMode::Citation;
    c.citation_sentence = first_sentence.at(c.target_doc_id);
  }
  return out;
}

std::vector<RelationCandidate> construct_relations(const Corpus& corpus, const SectionIndex& units, RelationMode mode,
                                                   const RelationOptions& opts, std::size_t diversity_cap,
                                                   RelationStats* stats, unsigned workers) {
  const auto& docs = corpus.documents();
  auto per_doc = parallel_map<std::vector<RelationCandidate>>(docs.size(), workers, [&](std::size_t i) {
    const Document& d = docs[i];
    if (mode == RelationMode::Citation) return citation_relations(d, corpus, units, opts);
    return rank_relations(d, semantic_candidates(d, corpus), units, opts);
  });
  std::vector<RelationCandidate> all;
  for (auto& v : per_doc) {
    for (auto& c : v) all.push_back(std::move(c));
  }
  std::sort(all.begin(), all.end(), relation_order);
  auto kept = enforce_diversity(all, diversity_cap);
  if (stats) *stats = {docs.size(), all.size(), kept.size()};
  return kept;
}

}  // namespace imqa
