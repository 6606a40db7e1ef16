#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "imqa/cluster.hpp"
#include "imqa/corpus.hpp"
#include "imqa/mhqa.hpp"
#include "imqa/providers.hpp"

namespace imqa {

enum class EnvironmentKind { PaperCluster, RandomCluster, FullCorpus };

std::string to_string(EnvironmentKind k);

struct RetrievalEnvironment {
  EnvironmentKind kind = EnvironmentKind::PaperCluster;
  std::vector<std::string> candidate_doc_ids;
  std::string gold_doc_id;
};

RetrievalEnvironment paper_cluster_environment(const PaperCluster& cluster);

// Gold plus size-1 documents sampled uniformly from the corpus (excluding the
// gold and `exclude_doc_id`), seeded from (seed, label).
RetrievalEnvironment random_cluster_environment(const std::string& gold_doc_id, std::size_t size,
                                                const Corpus& corpus, const std::string& exclude_doc_id,
                                                std::uint64_t seed, const std::string& label);

RetrievalEnvironment full_corpus_environment(const std::string& gold_doc_id, const Corpus& corpus,
                                             const std::string& exclude_doc_id);

enum class DocRepresentation { TitleAbstract, FullTextChunkMax };

std::string to_string(DocRepresentation r);
DocRepresentation doc_representation_from_string(std::string_view s);

// Embedded text representation of each document: one vector for title+abstract,
// or one per fixed-size word chunk of the full text (scored by max).
class DocIndex {
 public:
  DocIndex(const Corpus& corpus, Embedder& embedder, DocRepresentation rep = DocRepresentation::TitleAbstract,
           std::size_t chunk_words = 256);

  bool contains(const std::string& doc_id) const { return vectors_.count(doc_id) > 0; }
  const std::vector<EmbeddingVector>& vectors(const std::string& doc_id) const;
  DocRepresentation representation() const { return rep_; }

 private:
  DocRepresentation rep_;
  std::map<std::string, std::vector<EmbeddingVector>> vectors_;
};

// Best first; equal scores ordered by doc_id.
struct Ranking {
  std::vector<std::pair<std::string, double>> entries;

  // 1-based rank; throws std::invalid_argument if absent.
  std::size_t rank_of(const std::string& doc_id) const;
};

Ranking rank_by_scores(std::vector<std::pair<std::string, double>> scores);

Ranking rank_candidates(const std::string& retrieval_question, const RetrievalEnvironment& env,
                        const DocIndex& index, Embedder& embedder);

int hit_at_k(const Ranking& ranking, const std::string& gold, std::size_t k);
double mean_hit_at_k(const std::vector<Ranking>& rankings, const std::vector<std::string>& golds, std::size_t k);
double mrr_at_k(const std::vector<Ranking>& rankings, const std::vector<std::string>& golds, std::size_t k);

double token_f1(const std::string& prediction, const std::string& gold);
double rouge_l(const std::string& prediction, const std::string& gold);

// Judge prompt for one (question, reference answer, prediction) triple.
std::string render_judge_prompt(const std::string& question, const std::string& gold, const std::string& prediction);

// First standalone number in the completion equal to 0, 0.5 or 1.
std::optional<double> parse_judge_score(const std::string& completion);

std::optional<double> llm_judge(const std::string& question, const std::string& gold, const std::string& prediction,
                                TextGenerator& judge, const TextGenParams& params = {});

// Answerer prompt: source full text, supplied target full text, combined question.
std::string render_answer_prompt(const Document& source, const Document& target, const std::string& question);

enum class QaSetting { Oracle, Realistic };

std::string to_string(QaSetting s);

struct QaItemLog {
  std::string item_id;
  std::string supplied_doc_id;
  std::string prediction;
  std::optional<double> accuracy;
  double token_f1 = 0.0;
  double rouge_l = 0.0;
  std::optional<std::string> error;

  json to_json() const;
  bool operator==(const QaItemLog&) const = default;
};

struct QaScores {
  std::size_t items = 0;
  std::size_t scored = 0;          // items without provider errors
  std::size_t judged = 0;          // items with a parsed judge score
  std::size_t judge_failures = 0;
  std::size_t provider_failures = 0;
  std::optional<double> accuracy;
  std::optional<double> token_f1;
  std::optional<double> rouge_l;

  json to_json() const;
};

struct QaRun {
  QaScores scores;
  std::vector<QaItemLog> log;  // item_id order
};

// Oracle supplies each item's gold target; realistic supplies top1[item_id].
QaRun run_qa_setting(const std::vector<MhqaItem>& items, QaSetting setting, const Corpus& corpus,
                     const std::map<std::string, std::string>& top1, TextGenerator& answerer,
                     TextGenerator& judge, const TextGenParams& params = {}, unsigned workers = 1);

}  // namespace imqa
