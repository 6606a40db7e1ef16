#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "imqa/corpus.hpp"
#include "imqa/providers.hpp"

namespace imqa {

struct QaTriplet {
  std::string question;
  std::string answer;
  std::string evidence;
  std::string doc_id;
  std::string section_name;

  bool operator==(const QaTriplet&) const = default;
};

// Canonical ordering used for every tie-break: (doc_id, section_name, question).
bool canonical_less(const QaTriplet& a, const QaTriplet& b);

struct ShqaRecord {
  QaTriplet triplet;
  EmbeddingVector q_vec;
  EmbeddingVector a_vec;
  EmbeddingVector e_vec;
  double gap = 0.0;
};

// cos(Q, A) - cos(Q, E)
double similarity_gap(const EmbeddingVector& q, const EmbeddingVector& a, const EmbeddingVector& e);

// Single-paragraph extraction prompt.
std::string render_shqa_prompt(const std::string& paragraph);

// Marker the prompt places before the paragraph text.
inline constexpr std::string_view kShqaParagraphHeader = "Paragraph:\n";

struct ParsedQa {
  std::string question;
  std::string evidence;
  std::string answer;
};

// Extracts {question, evidence, answer} objects from a completion. Tolerates
// code fences, surrounding prose and trailing commas; a bare object or a run of
// objects is accepted as a list. Items missing a field or with an empty field
// are dropped. Returns nullopt when no structured list can be found.
std::optional<std::vector<ParsedQa>> parse_shqa_completion(const std::string& completion);

struct ShqaGeneration {
  std::vector<QaTriplet> triplets;
  std::vector<std::string> warnings;
  std::size_t parse_failures = 0;
};

ShqaGeneration generate_shqa(const Document& doc, const Section& section, TextGenerator& gen,
                             const TextGenParams& params = {});

enum class EvidenceMatch { Normalized, Strict };

std::string to_string(EvidenceMatch m);
EvidenceMatch evidence_match_from_string(std::string_view s);

std::string normalize_evidence_text(std::string_view text, EvidenceMatch mode);

// True iff the (normalized) evidence is a non-empty contiguous substring of the
// (normalized) section text.
bool validate_evidence(const QaTriplet& triplet, const Section& section,
                       EvidenceMatch mode = EvidenceMatch::Normalized);

// Embeds Q, A and E for every triplet and fills in the gap.
std::vector<ShqaRecord> build_shqa_records(const std::vector<QaTriplet>& triplets, Embedder& embedder);

struct GapFilterResult {
  std::vector<ShqaRecord> kept;
  std::vector<ShqaRecord> dropped;
};

// Drops floor(fraction * N) records with the smallest gap, corpus-wide. Both
// outputs keep input order.
GapFilterResult similarity_gap_filter(const std::vector<ShqaRecord>& records, double fraction = 0.10);

enum class LengthUnit { Tokens, Characters };

std::string to_string(LengthUnit u);
LengthUnit length_unit_from_string(std::string_view s);
// Whitespace tokens or Unicode code points.
std::size_t text_length(std::string_view s, LengthUnit unit);

struct ShqaStats {
  LengthUnit unit = LengthUnit::Tokens;
  std::size_t count = 0;
  std::size_t papers = 0;
  std::size_t sections = 0;
  std::optional<double> avg_question_length;
  std::optional<double> avg_answer_length;
  std::optional<double> avg_qa_per_paper;
  std::optional<double> avg_qa_per_section;
  std::map<std::string, std::size_t> total_by_section;  // keyed by section name
  std::map<std::string, double> avg_by_section;         // QAs per (paper, section) instance

  json to_json() const;
};

ShqaStats shqa_statistics(const std::vector<ShqaRecord>& records, LengthUnit unit = LengthUnit::Tokens);
ShqaStats shqa_statistics(const std::vector<QaTriplet>& triplets, LengthUnit unit = LengthUnit::Tokens);

// Persisted row: {doc_id, section_name, question, answer, evidence, gap}.
json shqa_record_to_json(const ShqaRecord& r);
QaTriplet triplet_from_json(const json& j);

}  // namespace imqa
