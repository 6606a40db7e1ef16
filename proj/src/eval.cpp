#include "imqa/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <set>
#include <unordered_map>

#include "imqa/text.hpp"

namespace imqa {

std::string to_string(EnvironmentKind k) {
  switch (k) {
    case EnvironmentKind::PaperCluster: return "paper_cluster";
    case EnvironmentKind::RandomCluster: return "random_cluster";
    case EnvironmentKind::FullCorpus: return "full_corpus";
  }
  return "?";
}

RetrievalEnvironment paper_cluster_environment(const PaperCluster& cluster) {
  return {EnvironmentKind::PaperCluster, cluster.member_doc_ids, cluster.target_doc_id};
}

RetrievalEnvironment random_cluster_environment(const std::string& gold_doc_id, std::size_t size,
                                                const Corpus& corpus, const std::string& exclude_doc_id,
                                                std::uint64_t seed, const std::string& label) {
  if (size == 0) throw std::invalid_argument("random_cluster_environment: size must be positive");
  std::vector<std::string> pool;
  for (const auto& d : corpus) {
    if (d.doc_id != gold_doc_id && d.doc_id != exclude_doc_id) pool.push_back(d.doc_id);
  }
  std::sort(pool.begin(), pool.end());
  if (pool.size() < size - 1) throw std::invalid_argument("random_cluster_environment: corpus too small");
  SplitMix64 rng(derive_seed(seed, "random-cluster:" + label));
  std::vector<std::string> members{gold_doc_id};
  for (std::size_t i = 0; i + 1 < size; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
    members.push_back(pool[i]);
  }
  std::sort(members.begin(), members.end());
  return {EnvironmentKind::RandomCluster, std::move(members), gold_doc_id};
}

RetrievalEnvironment full_corpus_environment(const std::string& gold_doc_id, const Corpus& corpus,
                                             const std::string& exclude_doc_id) {
  RetrievalEnvironment env{EnvironmentKind::FullCorpus, {}, gold_doc_id};
  for (const auto& d : corpus) {
    if (d.doc_id != exclude_doc_id) env.candidate_doc_ids.push_back(d.doc_id);
  }
  return env;
}

std::string to_string(DocRepresentation r) {
  return r == DocRepresentation::TitleAbstract ? "title_abstract" : "full_text_chunk_max";
}

DocRepresentation doc_representation_from_string(std::string_view s) {
  if (s == "title_abstract") return DocRepresentation::TitleAbstract;
  if (s == "full_text_chunk_max") return DocRepresentation::FullTextChunkMax;
  throw std::invalid_argument("unknown document representation '" + std::string(s) + "'");
}

DocIndex::DocIndex(const Corpus& corpus, Embedder& embedder, DocRepresentation rep, std::size_t chunk_words)
    : rep_(rep) {
  if (chunk_words == 0) throw std::invalid_argument("DocIndex: chunk_words must be positive");
  std::vector<std::string> texts;
  std::vector<std::pair<std::string, std::size_t>> owners;  // (doc_id, chunk count)
  for (const auto& d : corpus) {
    std::vector<std::string> chunks;
    if (rep == DocRepresentation::TitleAbstract) {
      chunks.push_back(trim(d.title + " " + d.abstract));
    } else {
      const auto words = split_whitespace(d.title + " " + d.abstract + " " + d.full_text());
      for (std::size_t i = 0; i < words.size(); i += chunk_words) {
        std::vector<std::string> part(words.begin() + static_cast<std::ptrdiff_t>(i),
                                      words.begin() + static_cast<std::ptrdiff_t>(std::min(words.size(), i + chunk_words)));
        chunks.push_back(join(part, " "));
      }
    }
    chunks.erase(std::remove_if(chunks.begin(), chunks.end(), [](const std::string& c) { return c.empty(); }),
                 chunks.end());
    if (chunks.empty()) chunks.push_back(d.doc_id);
    owners.emplace_back(d.doc_id, chunks.size());
    texts.insert(texts.end(), chunks.begin(), chunks.end());
  }
  if (texts.empty()) return;
  auto vecs = embedder.embed_batch(texts);
  std::size_t at = 0;
  for (const auto& [id, n] : owners) {
    auto& slot = vectors_[id];
    for (std::size_t i = 0; i < n; ++i) slot.push_back(std::move(vecs[at++]));
  }
}

const std::vector<EmbeddingVector>& DocIndex::vectors(const std::string& doc_id) const {
  auto it = vectors_.find(doc_id);
  if (it == vectors_.end()) throw std::invalid_argument("document '" + doc_id + "' is not indexed");
  return it->second;
}

std::size_t Ranking::rank_of(const std::string& doc_id) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first == doc_id) return i + 1;
  }
  throw std::invalid_argument("document '" + doc_id + "' is not in the ranking");
}

Ranking rank_by_scores(std::vector<std::pair<std::string, double>> scores) {
  std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return Ranking{std::move(scores)};
}

Ranking rank_candidates(const std::string& retrieval_question, const RetrievalEnvironment& env,
                        const DocIndex& index, Embedder& embedder) {
  const auto q = embedder.embed_batch({retrieval_question}).front();
  std::vector<std::pair<std::string, double>> scores;
  scores.reserve(env.candidate_doc_ids.size());
  for (const auto& id : env.candidate_doc_ids) {
    double best = -2.0;
    for (const auto& v : index.vectors(id)) best = std::max(best, cosine(q, v));
    scores.emplace_back(id, best);
  }
  return rank_by_scores(std::move(scores));
}

int hit_at_k(const Ranking& ranking, const std::string& gold, std::size_t k) {
  if (k == 0) throw std::invalid_argument("hit_at_k: k must be positive");
  return ranking.rank_of(gold) <= k ? 1 : 0;
}

double mean_hit_at_k(const std::vector<Ranking>& rankings, const std::vector<std::string>& golds, std::size_t k) {
  if (rankings.size() != golds.size()) throw std::invalid_argument("mean_hit_at_k: misaligned inputs");
  if (rankings.empty()) return 0.0;
  double hits = 0.0;
  for (std::size_t i = 0; i < rankings.size(); ++i) hits += hit_at_k(rankings[i], golds[i], k);
  return hits / static_cast<double>(rankings.size());
}

double mrr_at_k(const std::vector<Ranking>& rankings, const std::vector<std::string>& golds, std::size_t k) {
  if (rankings.size() != golds.size()) throw std::invalid_argument("mrr_at_k: misaligned inputs");
  if (k == 0) throw std::invalid_argument("mrr_at_k: k must be positive");
  if (rankings.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const std::size_t r = rankings[i].rank_of(golds[i]);
    if (r <= k) total += 1.0 / static_cast<double>(r);
  }
  return total / static_cast<double>(rankings.size());
}

namespace {

// 2c / (n_pred + n_gold): the F-measure with P = c/n_pred and R = c/n_gold.
double f_measure(std::size_t common, std::size_t n_pred, std::size_t n_gold) {
  if (n_pred == 0 && n_gold == 0) return 1.0;
  if (n_pred == 0 || n_gold == 0 || common == 0) return 0.0;
  return 2.0 * static_cast<double>(common) / static_cast<double>(n_pred + n_gold);
}

}  // namespace

double token_f1(const std::string& prediction, const std::string& gold) {
  const auto p = text::metric_tokens(prediction);
  const auto g = text::metric_tokens(gold);
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& t : g) ++counts[t];
  std::size_t common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  return f_measure(common, p.size(), g.size());
}

double rouge_l(const std::string& prediction, const std::string& gold) {
  const auto p = text::metric_tokens(prediction);
  const auto g = text::metric_tokens(gold);
  std::vector<std::size_t> prev(g.size() + 1, 0), cur(g.size() + 1, 0);
  for (std::size_t i = 1; i <= p.size(); ++i) {
    for (std::size_t j = 1; j <= g.size(); ++j) {
      cur[j] = p[i - 1] == g[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return f_measure(prev[g.size()], p.size(), g.size());
}

std::string render_judge_prompt(const std::string& question, const std::string& gold, const std::string& prediction) {
  std::string p =
      "You are grading an answer to a question about scientific papers.\n"
      "Decide whether the Prediction gives the same response to the Question as the reference Answer.\n"
      "Reply with one score: 1 if they agree, 0.5 if the Prediction is partially correct, 0 otherwise.\n\n";
  p += "Question: " + question + "\n";
  p += "Answer: " + gold + "\n";
  p += "Prediction: " + prediction + "\n\n";
  p += "Score:";
  return p;
}

std::optional<double> parse_judge_score(const std::string& s) {
  auto is_word = [](unsigned char c) { return std::isalnum(c) || c == '_'; };
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if (!std::isdigit(c) || (i > 0 && (is_word(static_cast<unsigned char>(s[i - 1])) || s[i - 1] == '.'))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && (std::isdigit(static_cast<unsigned char>(s[j])) || s[j] == '.')) ++j;
    std::string tok = s.substr(i, j - i);
    const bool followed_by_word = j < s.size() && is_word(static_cast<unsigned char>(s[j]));
    while (!tok.empty() && tok.back() == '.') tok.pop_back();
    i = j;
    if (followed_by_word || tok.empty() || std::count(tok.begin(), tok.end(), '.') > 1) continue;
    const double v = std::strtod(tok.c_str(), nullptr);
    if (v == 0.0 || v == 0.5 || v == 1.0) return v;
  }
  return std::nullopt;
}

std::optional<double> llm_judge(const std::string& question, const std::string& gold, const std::string& prediction,
                                TextGenerator& judge, const TextGenParams& params) {
  return parse_judge_score(judge.generate(render_judge_prompt(question, gold, prediction), params));
}

std::string render_answer_prompt(const Document& source, const Document& target, const std::string& question) {
  auto paper = [](const Document& d) {
    return "Title: " + d.title + "\nAbstract: " + d.abstract + "\n" + d.full_text() + "\n";
  };
  std::string p =
      "Answer the question using only the two scientific papers below. The question first identifies the "
      "second paper and then asks about both papers. Answer in one or two sentences.\n\n";
  p += "### Source Paper\n" + paper(source) + "\n";
  p += "### Target Paper\n" + paper(target) + "\n";
  p += "### Question\n" + question + "\n\n";
  p += "### Answer\n";
  return p;
}

std::string to_string(QaSetting s) { return s == QaSetting::Oracle ? "oracle" : "realistic"; }

json QaItemLog::to_json() const {
  return {{"item_id", item_id},
          {"supplied_doc_id", supplied_doc_id},
          {"prediction", prediction},
          {"accuracy", accuracy ? json(*accuracy) : json(nullptr)},
          {"token_f1", token_f1},
          {"rouge_l", rouge_l},
          {"error", error ? json(*error) : json(nullptr)}};
}

json QaScores::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"items", items},
          {"scored", scored},
          {"judged", judged},
          {"judge_failures", judge_failures},
          {"provider_failures", provider_failures},
          {"accuracy", opt(accuracy)},
          {"token_f1", opt(token_f1)},
          {"rouge_l", opt(rouge_l)}};
}

QaRun run_qa_setting(const std::vector<MhqaItem>& items, QaSetting setting, const Corpus& corpus,
                     const std::map<std::string, std::string>& top1, TextGenerator& answerer, TextGenerator& judge,
                     const TextGenParams& params, unsigned workers) {
  std::vector<MhqaItem> ordered = items;
  std::sort(ordered.begin(), ordered.end(), [](const MhqaItem& a, const MhqaItem& b) { return a.item_id < b.item_id; });

  auto logs = parallel_map<QaItemLog>(ordered.size(), workers, [&](std::size_t i) {
    const MhqaItem& it = ordered[i];
    QaItemLog log;
    log.item_id = it.item_id;
    try {
      if (setting == QaSetting::Oracle) {
        log.supplied_doc_id = it.target_doc_id;
      } else {
        auto t = top1.find(it.item_id);
        if (t == top1.end()) throw std::invalid_argument("no retrieval result for item " + it.item_id);
        log.supplied_doc_id = t->second;
      }
      const Document& src = corpus.at(it.source_doc_id);
      const Document& tgt = corpus.at(log.supplied_doc_id);
      log.prediction = trim(answerer.generate(render_answer_prompt(src, tgt, it.combined_question), params));
      log.token_f1 = token_f1(log.prediction, it.combined_answer);
      log.rouge_l = rouge_l(log.prediction, it.combined_answer);
      log.accuracy = llm_judge(it.combined_question, it.combined_answer, log.prediction, judge, params);
    } catch (const std::exception& e) {
      log.error = e.what();
    }
    return log;
  });

  QaRun run;
  run.scores.items = logs.size();
  double acc = 0, f1 = 0, rl = 0;
  for (const auto& l : logs) {
    if (l.error) {
      ++run.scores.provider_failures;
      continue;
    }
    ++run.scores.scored;
    f1 += l.token_f1;
    rl += l.rouge_l;
    if (l.accuracy) {
      ++run.scores.judged;
      acc += *l.accuracy;
    } else {
      ++run.scores.judge_failures;
    }
  }
  if (run.scores.scored > 0) {
    run.scores.token_f1 = f1 / static_cast<double>(run.scores.scored);
    run.scores.rouge_l = rl / static_cast<double>(run.scores.scored);
  }
  if (run.scores.judged > 0) run.scores.accuracy = acc / static_cast<double>(run.scores.judged);
  run.log = std::move(logs);
  return run;
}

}  // namespace imqa
