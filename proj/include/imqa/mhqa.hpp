#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "imqa/cluster.hpp"
#include "imqa/corpus.hpp"
#include "imqa/providers.hpp"
#include "imqa/relation.hpp"
#include "imqa/shqa.hpp"

namespace imqa {

enum class Verdict { Accept, Reject };

std::string to_string(Verdict v);

// Criterion names exactly as they appear in the output grammar.
inline constexpr std::string_view kFluency = "Fluency";
inline constexpr std::string_view kCompleteness = "Completeness";
inline constexpr std::string_view kCrossrefNecessity = "Cross-reference Necessity";
inline constexpr std::string_view kRelationalAppropriateness = "Relational Appropriateness";
inline constexpr std::string_view kDecision = "Decision";

inline constexpr std::string_view kFindTargetComponent = "Find Target Paper";
inline constexpr std::string_view kInterdocComponent = "Generate Inter-document QA";
inline constexpr std::string_view kMergeComponent = "Merge Complete QA";
inline constexpr std::string_view kValidationComponent = "QA Validation";

inline constexpr std::string_view kPreRejectSentinel = "Cannot generate inter-document multi-hop question.";

struct ValidationVerdict {
  Verdict fluency = Verdict::Accept;
  Verdict completeness = Verdict::Accept;
  Verdict crossref_necessity = Verdict::Accept;
  Verdict relational_appropriateness = Verdict::Accept;
  Verdict decision = Verdict::Accept;

  // Names of the four criteria judged Reject, in grammar order.
  std::vector<std::string> rejected_criteria() const;
};

struct MhqaDraft {
  std::string find_target_q;
  std::string find_target_a;
  std::string interdoc_q;
  std::string interdoc_a;
  std::string merged_q;
  std::string merged_a;
  ValidationVerdict verdict;
};

struct PreRejected {};

struct ParseFailure {
  std::string missing;  // grammar element that could not be found
};

using MhqaParse = std::variant<MhqaDraft, PreRejected, ParseFailure>;

// The values substituted into the input template.
struct MhqaInputs {
  std::string source_title;
  std::string source_section;
  std::string core_source_q;
  std::string core_source_a;
  std::string target_title;
  std::string target_section;
  std::string core_target_q;
  std::string core_target_a;
  std::string unique_target_q;
  std::string unique_target_a;
};

inline constexpr std::string_view kMhqaTemplateVersion = "mhqa-reasoning-v1";

// Reasoning instructions followed by the input template.
const std::string& mhqa_prompt_template();
// sha256 of the template; recorded with every item.
const std::string& mhqa_prompt_digest();

std::string render_mhqa_prompt(const MhqaInputs& inputs);
// Throws std::invalid_argument if the candidate and retrieval QA name different
// targets or a required field is empty.
std::string render_mhqa_prompt(const RelationCandidate& candidate, const RetrievalQa& rqa, const Corpus& corpus);

// Recovers the slot values from a rendered prompt (used by offline generators).
std::optional<MhqaInputs> parse_mhqa_inputs(const std::string& prompt);

MhqaParse parse_mhqa_output(const std::string& completion);

// Renders a completion in the output grammar; parse_mhqa_output inverts it.
std::string format_mhqa_output(const MhqaDraft& draft);

// Title quoted in "Identified target paper: '<title>'", if present.
std::optional<std::string> identified_title(const std::string& find_target_answer);

struct MhqaItem {
  std::string item_id;
  std::string retrieval_question;
  std::string retrieval_answer;
  std::string interdoc_question;
  std::string interdoc_answer;
  std::string combined_question;
  std::string combined_answer;
  std::string source_doc_id;
  std::string target_doc_id;
  std::string cluster_id;
  RelationMode origin = RelationMode::Semantic;
};

json item_to_json(const MhqaItem& item);
MhqaItem item_from_json(const json& j);

enum class RejectionKind { PreRejected, ParseFailure, ValidationRejected };

std::string to_string(RejectionKind k);

struct Rejected {
  std::string item_id;
  std::string cluster_id;
  RejectionKind kind = RejectionKind::ValidationRejected;
  std::vector<std::string> failing_criteria;
  std::string detail;

  json to_json() const;
};

std::string item_id_for(const PaperCluster& cluster);

// Emits an item only on an Accept decision whose Step-1 answer names the
// target's title (case-insensitive). Otherwise returns the audit record.
std::variant<MhqaItem, Rejected> finalize_item(const MhqaDraft& draft, const RelationCandidate& candidate,
                                               const PaperCluster& cluster, const RetrievalQa& rqa,
                                               const Corpus& corpus);

struct ConservationCounts {
  std::size_t candidates_in = 0;
  std::size_t pre_rejected = 0;
  std::size_t parse_failures = 0;
  std::size_t validation_rejected = 0;
  std::size_t items_out = 0;
  std::map<std::string, std::size_t> rejected_by_criterion;

  bool balanced() const {
    return candidates_in == pre_rejected + parse_failures + validation_rejected + items_out;
  }
  json to_json() const;
};

ConservationCounts tally(const std::vector<Rejected>& rejected, std::size_t items_out);

struct MhqaJob {
  RelationCandidate candidate;
  PaperCluster cluster;
  RetrievalQa rqa;
};

struct MhqaRun {
  std::vector<MhqaItem> items;      // sorted by item_id
  std::vector<Rejected> rejected;   // sorted by item_id
  ConservationCounts counts;
};

// Renders, generates, parses and finalizes every job. A ParseFailure is retried
// once at `retry_temperature` before it is counted.
MhqaRun generate_mhqa(const std::vector<MhqaJob>& jobs, const Corpus& corpus, TextGenerator& gen,
                      const TextGenParams& params = {}, double retry_temperature = 0.7, unsigned workers = 1);

struct SplitStats {
  std::size_t count = 0;
  std::optional<double> avg_retrieval_q_length;
  std::optional<double> avg_interdoc_q_length;
  std::optional<double> avg_combined_q_length;
  std::optional<double> avg_interdoc_a_length;
  std::optional<double> avg_combined_a_length;

  json to_json() const;
};

SplitStats split_statistics(const std::vector<MhqaItem>& items, LengthUnit unit = LengthUnit::Tokens);

struct DatasetSplit {
  std::vector<MhqaItem> dev;
  std::vector<MhqaItem> test;
};

// Seeded uniform sample of test_size items (by item_id order) as test; the
// rest is dev. Both outputs sorted by item_id.
DatasetSplit split_dataset(const std::vector<MhqaItem>& items, std::size_t test_size, std::uint64_t seed);

}  // namespace imqa
