#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "imqa/util.hpp"

namespace imqa {

enum class RelationMode { Semantic, Citation };

std::string to_string(RelationMode mode);
RelationMode relation_mode_from_string(std::string_view s);

struct Section {
  std::string name;
  std::size_t index = 0;
  std::vector<std::string> paragraphs;

  // Paragraphs joined by single spaces.
  std::string text() const;
};

struct CitationRef {
  std::string marker;
  std::optional<std::string> target_doc_id;
  // True iff target_doc_id names a document of the collection it was loaded with.
  bool resolved = false;
};

struct Document {
  std::string doc_id;
  std::string title;
  std::string abstract;
  std::vector<std::string> keywords;
  std::vector<Section> sections;
  std::vector<CitationRef> references;

  bool has_full_text() const;
  std::string full_text() const;
  const Section* find_section(std::string_view name) const;
  // Distinct in-collection targets, in reference order.
  std::vector<std::string> resolved_targets() const;
};

struct CitationContext {
  std::string sentence;
  std::string source_doc_id;
  std::string marker;
  std::string target_doc_id;
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ordered, id-indexed document collection. Immutable once built.
class Corpus {
 public:
  Corpus() = default;
  // Throws CorpusError on an empty or duplicate doc_id.
  explicit Corpus(std::vector<Document> docs);

  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const std::vector<Document>& documents() const { return docs_; }
  auto begin() const { return docs_.begin(); }
  auto end() const { return docs_.end(); }

  bool contains(std::string_view doc_id) const;
  const Document* find(std::string_view doc_id) const;
  const Document& at(std::string_view doc_id) const;

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> index_;
};

Document document_from_json(const json& j);
json document_to_json(const Document& doc);

// One JSON document per line. Blank lines are skipped. References are resolved
// against the loaded collection.
Corpus load_corpus(const std::filesystem::path& path);
Corpus parse_corpus(std::istream& in, const std::string& source_name = "<stream>");

struct FilterReport {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t missing_full_text = 0;
  std::size_t missing_abstract = 0;
  std::size_t missing_references = 0;
  std::size_t missing_keywords = 0;
  std::size_t too_few_citations = 0;

  json to_json() const;
};

inline constexpr std::size_t kMinResolvedCitations = 3;

// Keeps documents with full text, abstract and references; citation mode also
// needs >= 3 distinct resolved citations, semantic mode non-empty keywords.
// Empty paragraphs and sections are pruned from retained documents. Rejection
// counts are per criterion, so one document may count under several.
Corpus filter_eligible(const Corpus& corpus, RelationMode mode, FilterReport* report = nullptr);

// lowercase, trim, dedupe; result is sorted.
std::vector<std::string> normalize_keywords(const std::vector<std::string>& keywords);

struct SegmenterConfig {
  std::vector<std::string> abbreviations = {"et al.", "Fig.", "Figs.", "e.g.", "i.e.", "vs.", "cf.",
                                            "Eq.", "Eqs.", "No.", "Dr.", "approx.", "Ref.", "Refs.",
                                            "Tab.", "al.", "ca.", "Suppl."};
};

std::vector<std::string> split_sentences(std::string_view text, const SegmenterConfig& cfg = {});

struct CitationGrammar {
  // Each match's first capture group holds an integer list such as "3", "3,4" or "3-5".
  std::vector<std::string> patterns = {R"(\[(\d{1,3}(?:\s*[,\-]\s*\d{1,3})*)\])",
                                       R"(\((\d{1,3}(?:\s*[,\-]\s*\d{1,3})*)\))"};
};

// Cited reference numbers appearing in `sentence`, expanded ("[3-5]" -> 3,4,5).
std::vector<int> cited_numbers(std::string_view sentence, const CitationGrammar& grammar = {});

struct ContextOptions {
  SegmenterConfig segmenter;
  CitationGrammar grammar;
};

// One context per sentence carrying exactly one citation whose reference
// resolves to a document of `corpus`. Markers without a matching reference
// entry are skipped and reported through `warnings`.
std::vector<CitationContext> extract_citation_contexts(const Document& doc, const Corpus& corpus,
                                                       const ContextOptions& opts = {},
                                                       std::vector<std::string>* warnings = nullptr);

}  // namespace imqa
