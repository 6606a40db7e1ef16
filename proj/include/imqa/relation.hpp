#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "imqa/corpus.hpp"
#include "imqa/providers.hpp"
#include "imqa/shqa.hpp"

namespace imqa {

// One section of one document, represented by its embedded QA units.
struct SectionUnit {
  std::string doc_id;
  std::string section_name;
  std::vector<EmbeddingVector> question_vectors;
  std::vector<QaTriplet> triplets;  // index-aligned with question_vectors
};

// Units per document, in section order of appearance.
class SectionIndex {
 public:
  void add(SectionUnit unit);
  const std::vector<SectionUnit>& units_of(const std::string& doc_id) const;
  std::size_t document_count() const { return by_doc_.size(); }

 private:
  std::map<std::string, std::vector<SectionUnit>> by_doc_;
};

// Groups records by (doc_id, section_name) in first-appearance order and embeds
// each triplet at `level` (questions by default).
SectionIndex build_section_index(const std::vector<QaTriplet>& triplets, Embedder& embedder,
                                 EmbedLevel level = EmbedLevel::Q);

class SimilarityMatrix {
 public:
  SimilarityMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), entries_(rows * cols, 0.0) {}
  static SimilarityMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double at(std::size_t p, std::size_t q) const { return entries_[p * cols_ + q]; }
  double& at(std::size_t p, std::size_t q) { return entries_[p * cols_ + q]; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> entries_;
};

// entries[p][q] = cosine(a.question_vectors[p], b.question_vectors[q])
SimilarityMatrix pair_matrix(const SectionUnit& a, const SectionUnit& b);

inline constexpr double kDefaultTau = 0.3;

// Sum over entries with K >= tau of |K|. The gate is on the raw value.
double section_similarity(const SimilarityMatrix& k, double tau = kDefaultTau);

// Other documents sharing at least one normalized keyword with `source`.
std::vector<const Document*> semantic_candidates(const Document& source, const Corpus& corpus);

struct RelationCandidate {
  std::string source_doc_id;
  std::string target_doc_id;
  std::string source_section;
  std::string target_section;
  QaTriplet core_source_qa;
  QaTriplet core_target_qa;
  double pair_score = 0.0;
  double section_score = 0.0;
  RelationMode origin = RelationMode::Semantic;
  std::optional<std::string> citation_sentence;
};

// pair_score descending, then (source, target, sections, core questions).
bool relation_order(const RelationCandidate& a, const RelationCandidate& b);

json relation_to_json(const RelationCandidate& c);
RelationCandidate relation_from_json(const json& j);

struct RelationOptions {
  double tau = kDefaultTau;
  std::size_t k_sections = 3;
};

// For each candidate document: score every section pair, keep the top
// k_sections with a positive score, and emit one candidate per kept pair whose
// core QAs are that matrix's argmax. Pairs whose argmax is below tau are
// discarded. Sorted with relation_order.
std::vector<RelationCandidate> rank_relations(const Document& source, const std::vector<const Document*>& candidates,
                                              const SectionIndex& units, const RelationOptions& opts = {});

// Greedy pass over a relation_order-sorted list, keeping a candidate only while
// both its documents appear in fewer than `cap` kept candidates.
std::vector<RelationCandidate> enforce_diversity(const std::vector<RelationCandidate>& sorted, std::size_t cap = 3);

// Same scoring as rank_relations with the target set restricted to documents
// reached through single-marker citation sentences. Each candidate carries the
// first such sentence for its target.
std::vector<RelationCandidate> citation_relations(const Document& source, const Corpus& corpus,
                                                  const SectionIndex& units, const RelationOptions& opts = {},
                                                  const ContextOptions& contexts = {});

struct RelationStats {
  std::size_t sources = 0;
  std::size_t scored = 0;      // before the diversity cap
  std::size_t kept = 0;
};

// Runs the mode-specific candidate generation for every document of the
// corpus, sorts globally, and applies the diversity cap.
std::vector<RelationCandidate> construct_relations(const Corpus& corpus, const SectionIndex& units, RelationMode mode,
                                                   const RelationOptions& opts, std::size_t diversity_cap,
                                                   RelationStats* stats = nullptr, unsigned workers = 1);

}  // namespace imqa
