#include "imqa/mhqa.hpp"

#include <algorithm>
#include <mutex>
#include <regex>

namespace imqa {
namespace {

constexpr std::string_view kReasoningPrompt = R"(You are a scientific QA generator for inter-document multi-hop
question construction.

Your task is to produce a structured QA reasoning process that
constructs an inter-document multi-hop question across multiple
scientific papers.

Step 0. Validation (not included in output)

Before generating any reasoning output, verify whether the Source QA
and Target QA form a meaningful multi-hop relationship such as
comparison, causation, conceptual linkage, or inference.

If no logical or conceptual overlap exists, output only:

Cannot generate inter-document multi-hop question.

Reasoning Components

Find Target Paper

Transform the Unique Target QA question into a question that asks
which paper addresses that topic.

The answer must identify the target paper using the format:

Identified target paper: '[Target Paper Title]'.

Generate Inter-document QA

Construct a comparative or integrative question connecting the
Source Paper and Target Paper using the Core QA pair.

The answer must be logically derived only from the provided QA pair.

Merge Complete QA

Combine the Find Target Paper question and the Inter-document QA
question into a single multi-hop question.

The final answer must be identical to or directly derived from the
Inter-document QA answer.

QA Validation

Evaluate the generated QA using the following criteria:

Fluency
Completeness
Cross-reference Necessity
Relational Appropriateness

Each criterion is labeled Accept or Reject and followed by an
overall Decision.

Output Format

<outputs>
  <component type="Find Target Paper">
    <question>...</question>
    <answer>...</answer>
  </component>

  <component type="Generate Inter-document QA">
    <question>...</question>
    <answer>...</answer>
  </component>

  <component type="Merge Complete QA">
    <question>...</question>
    <answer>...</answer>
  </component>

  <component type="QA Validation">
    <score type="Fluency">...</score>
    <score type="Completeness">...</score>
    <score type="Cross-reference Necessity">...</score>
    <score type="Relational Appropriateness">...</score>
    <score type="Decision">...</score>
  </component>
</outputs>
)";

constexpr std::string_view kInputHeader = "### Now Your Turn";

constexpr std::string_view kInputTemplate = R"(### Now Your Turn

<inputs>
  <source_paper>
    <title>{source_paper_title}</title>
    <section_name>{source_section_name}</section_name>
    <core_qa>
      <question>{core_source_q}</question>
      <answer>{core_source_a}</answer>
    </core_qa>
  </source_paper>
  <target_paper>
    <title>{target_paper_title}</title>
    <section_name>{target_section_name}</section_name>
    <core_qa>
      <question>{core_target_q}</question>
      <answer>{core_target_a}</answer>
    </core_qa>
    <unique_qa>
      <question>{unique_target_q}</question>
      <answer>{unique_target_a}</answer>
    </unique_qa>
  </target_paper>
</inputs>
)";

std::string regex_escape(std::string_view s) {
  static const std::string kSpecial = R"(\^$.|?*+()[]{}-)";
  std::string out;
  for (char c : s) {
    if (kSpecial.find(c) != std::string::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

// Inner text of the first <tag ...>...</tag>, optionally requiring type="name".
std::optional<std::string> element(const std::string& s, std::string_view tag,
                                   std::optional<std::string_view> type = std::nullopt) {
  std::string open = "<" + std::string(tag);
  if (type) {
    open += R"(\s+type\s*=\s*["'])" + regex_escape(*type) + R"(["']\s*)";
  } else {
    open += R"(\s*)";
  }
  const std::regex re(open + ">([\\s\\S]*?)</" + std::string(tag) + "\\s*>", std::regex::icase);
  std::smatch m;
  if (!std::regex_search(s, m, re)) return std::nullopt;
  return m[1].str();
}

std::optional<Verdict> parse_verdict(const std::string& raw) {
  const std::string v = to_lower_ascii(trim(raw));
  if (v.rfind("accept", 0) == 0) return Verdict::Accept;
  if (v.rfind("reject", 0) == 0) return Verdict::Reject;
  return std::nullopt;
}

double mean_length(const std::vector<MhqaItem>& items, LengthUnit unit, std::string MhqaItem::*field) {
  double total = 0;
  for (const auto& it : items) total += static_cast<double>(text_length(it.*field, unit));
  return total / static_cast<double>(items.size());
}

}  // namespace

std::string to_string(Verdict v) { return v == Verdict::Accept ? "Accept" : "Reject"; }

std::vector<std::string> ValidationVerdict::rejected_criteria() const {
  std::vector<std::string> out;
  if (fluency == Verdict::Reject) out.emplace_back(kFluency);
  if (completeness == Verdict::Reject) out.emplace_back(kCompleteness);
  if (crossref_necessity == Verdict::Reject) out.emplace_back(kCrossrefNecessity);
  if (relational_appropriateness == Verdict::Reject) out.emplace_back(kRelationalAppropriateness);
  return out;
}

const std::string& mhqa_prompt_template() {
  static const std::string t = std::string(kReasoningPrompt) + "\n" + std::string(kInputTemplate);
  return t;
}

const std::string& mhqa_prompt_digest() {
  static const std::string d = sha256_hex(std::string(kMhqaTemplateVersion) + "\n" + mhqa_prompt_template());
  return d;
}

std::string render_mhqa_prompt(const MhqaInputs& in) {
  std::string p = mhqa_prompt_template();
  const std::pair<std::string_view, const std::string*> slots[] = {
      {"{source_paper_title}", &in.source_title},   {"{source_section_name}", &in.source_section},
      {"{core_source_q}", &in.core_source_q},        {"{core_source_a}", &in.core_source_a},
      {"{target_paper_title}", &in.target_title},   {"{target_section_name}", &in.target_section},
      {"{core_target_q}", &in.core_target_q},        {"{core_target_a}", &in.core_target_a},
      {"{unique_target_q}", &in.unique_target_q},    {"{unique_target_a}", &in.unique_target_a}};
  // Slots occur in this order; searching past each substitution keeps slot-like
  // text inside values untouched.
  std::size_t from = 0;
  for (const auto& [slot, value] : slots) {
    const std::size_t pos = p.find(slot, from);
    if (pos == std::string::npos) continue;
    p.replace(pos, slot.size(), *value);
    from = pos + value->size();
  }
  return p;
}

std::string render_mhqa_prompt(const RelationCandidate& c, const RetrievalQa& rqa, const Corpus& corpus) {
  if (c.target_doc_id != rqa.target_doc_id) {
    throw std::invalid_argument("render_mhqa_prompt: candidate target '" + c.target_doc_id +
                                "' differs from retrieval QA target '" + rqa.target_doc_id + "'");
  }
  const Document& src = corpus.at(c.source_doc_id);
  const Document& tgt = corpus.at(c.target_doc_id);
  MhqaInputs in{src.title,
                c.source_section,
                c.core_source_qa.question,
                c.core_source_qa.answer,
                tgt.title,
                c.target_section,
                c.core_target_qa.question,
                c.core_target_qa.answer,
                rqa.question,
                rqa.answer};
  const std::pair<const char*, const std::string*> required[] = {
      {"source title", &in.source_title},      {"source section", &in.source_section},
      {"core source question", &in.core_source_q}, {"core source answer", &in.core_source_a},
      {"target title", &in.target_title},      {"target section", &in.target_section},
      {"core target question", &in.core_target_q}, {"core target answer", &in.core_target_a},
      {"retrieval question", &in.unique_target_q}, {"retrieval answer", &in.unique_target_a}};
  for (const auto& [name, value] : required) {
    if (trim(*value).empty()) throw std::invalid_argument(std::string("render_mhqa_prompt: missing ") + name);
  }
  return render_mhqa_prompt(in);
}

std::optional<MhqaInputs> parse_mhqa_inputs(const std::string& prompt) {
  const std::size_t at = prompt.rfind(kInputHeader);
  if (at == std::string::npos) return std::nullopt;
  const std::string tail = prompt.substr(at);
  auto src = element(tail, "source_paper");
  auto tgt = element(tail, "target_paper");
  if (!src || !tgt) return std::nullopt;
  auto src_core = element(*src, "core_qa");
  auto tgt_core = element(*tgt, "core_qa");
  auto uniq = element(*tgt, "unique_qa");
  if (!src_core || !tgt_core || !uniq) return std::nullopt;
  MhqaInputs in;
  const std::pair<std::string*, std::optional<std::string>> fields[] = {
      {&in.source_title, element(*src, "title")},
      {&in.source_section, element(*src, "section_name")},
      {&in.core_source_q, element(*src_core, "question")},
      {&in.core_source_a, element(*src_core, "answer")},
      {&in.target_title, element(*tgt, "title")},
      {&in.target_section, element(*tgt, "section_name")},
      {&in.core_target_q, element(*tgt_core, "question")},
      {&in.core_target_a, element(*tgt_core, "answer")},
      {&in.unique_target_q, element(*uniq, "question")},
      {&in.unique_target_a, element(*uniq, "answer")}};
  for (const auto& [dest, value] : fields) {
    if (!value) return std::nullopt;
    *dest = *value;
  }
  return in;
}

MhqaParse parse_mhqa_output(const std::string& completion) {
  if (completion.find(kPreRejectSentinel.substr(0, kPreRejectSentinel.size() - 1)) != std::string::npos) {
    return PreRejected{};
  }
  auto outputs = element(completion, "outputs");
  const std::string body = outputs ? *outputs : completion;

  MhqaDraft d;
  const std::tuple<std::string_view, std::string*, std::string*> qa_components[] = {
      {kFindTargetComponent, &d.find_target_q, &d.find_target_a},
      {kInterdocComponent, &d.interdoc_q, &d.interdoc_a},
      {kMergeComponent, &d.merged_q, &d.merged_a}};
  for (const auto& [name, q, a] : qa_components) {
    auto comp = element(body, "component", name);
    if (!comp) return ParseFailure{std::string(name)};
    auto qt = element(*comp, "question");
    if (!qt || trim(*qt).empty()) return ParseFailure{std::string(name) + "/question"};
    auto at = element(*comp, "answer");
    if (!at || trim(*at).empty()) return ParseFailure{std::string(name) + "/answer"};
    *q = trim(*qt);
    *a = trim(*at);
  }

  auto validation = element(body, "component", kValidationComponent);
  if (!validation) return ParseFailure{std::string(kValidationComponent)};
  const std::pair<std::string_view, Verdict*> scores[] = {
      {kFluency, &d.verdict.fluency},
      {kCompleteness, &d.verdict.completeness},
      {kCrossrefNecessity, &d.verdict.crossref_necessity},
      {kRelationalAppropriateness, &d.verdict.relational_appropriateness},
      {kDecision, &d.verdict.decision}};
  for (const auto& [name, dest] : scores) {
    auto raw = element(*validation, "score", name);
    if (!raw) return ParseFailure{std::string(kValidationComponent) + "/" + std::string(name)};
    auto v = parse_verdict(*raw);
    if (!v) return ParseFailure{std::string(kValidationComponent) + "/" + std::string(name)};
    *dest = *v;
  }
  return d;
}

std::string format_mhqa_output(const MhqaDraft& d) {
  std::string s = "<outputs>\n";
  auto component = [&](std::string_view name, const std::string& q, const std::string& a) {
    s += "  <component type=\"" + std::string(name) + "\">\n";
    s += "    <question>" + q + "</question>\n";
    s += "    <answer>" + a + "</answer>\n";
    s += "  </component>\n\n";
  };
  component(kFindTargetComponent, d.find_target_q, d.find_target_a);
  component(kInterdocComponent, d.interdoc_q, d.interdoc_a);
  component(kMergeComponent, d.merged_q, d.merged_a);
  s += "  <component type=\"" + std::string(kValidationComponent) + "\">\n";
  const std::pair<std::string_view, Verdict> scores[] = {
      {kFluency, d.verdict.fluency},
      {kCompleteness, d.verdict.completeness},
      {kCrossrefNecessity, d.verdict.crossref_necessity},
      {kRelationalAppropriateness, d.verdict.relational_appropriateness},
      {kDecision, d.verdict.decision}};
  for (const auto& [name, v] : scores) {
    s += "    <score type=\"" + std::string(name) + "\">" + to_string(v) + "</score>\n";
  }
  s += "  </component>\n</outputs>\n";
  return s;
}

std::optional<std::string> identified_title(const std::string& answer) {
  static const std::string kLead = "identified target paper:";
  const std::string lower = to_lower_ascii(answer);
  std::size_t at = lower.find(kLead);
  if (at == std::string::npos) return std::nullopt;
  std::size_t i = at + kLead.size();
  while (i < answer.size() && std::isspace(static_cast<unsigned char>(answer[i]))) ++i;
  if (i >= answer.size() || (answer[i] != '\'' && answer[i] != '"')) return std::nullopt;
  const char quote = answer[i];
  std::size_t line_end = answer.find('\n', i);
  if (line_end == std::string::npos) line_end = answer.size();
  const std::size_t close = answer.rfind(quote, line_end - 1);
  if (close == std::string::npos || close <= i) return std::nullopt;
  std::string title = trim(std::string_view(answer).substr(i + 1, close - i - 1));
  if (title.size() >= 2 && title.front() == '[' && title.back() == ']') title = trim(title.substr(1, title.size() - 2));
  return title;
}

json item_to_json(const MhqaItem& it) {
  return {{"item_id", it.item_id},
          {"retrieval_question", it.retrieval_question},
          {"retrieval_answer", it.retrieval_answer},
          {"interdoc_question", it.interdoc_question},
          {"interdoc_answer", it.interdoc_answer},
          {"combined_question", it.combined_question},
          {"combined_answer", it.combined_answer},
          {"source_doc_id", it.source_doc_id},
          {"target_doc_id", it.target_doc_id},
          {"cluster_id", it.cluster_id},
          {"origin", to_string(it.origin)}};
}

MhqaItem item_from_json(const json& j) {
  MhqaItem it;
  it.item_id = j.at("item_id").get<std::string>();
  it.retrieval_question = j.at("retrieval_question").get<std::string>();
  it.retrieval_answer = j.at("retrieval_answer").get<std::string>();
  it.interdoc_question = j.at("interdoc_question").get<std::string>();
  it.interdoc_answer = j.at("interdoc_answer").get<std::string>();
  it.combined_question = j.at("combined_question").get<std::string>();
  it.combined_answer = j.at("combined_answer").get<std::string>();
  it.source_doc_id = j.at("source_doc_id").get<std::string>();
  it.target_doc_id = j.at("target_doc_id").get<std::string>();
  it.cluster_id = j.at("cluster_id").get<std::string>();
  it.origin = relation_mode_from_string(j.at("origin").get<std::string>());
  return it;
}

std::string to_string(RejectionKind k) {
  switch (k) {
    case RejectionKind::PreRejected: return "pre_rejected";
    case RejectionKind::ParseFailure: return "parse_failure";
    case RejectionKind::ValidationRejected: return "validation_rejected";
  }
  return "?";
}

json Rejected::to_json() const {
  return {{"item_id", item_id},
          {"cluster_id", cluster_id},
          {"kind", to_string(kind)},
          {"failing_criteria", failing_criteria},
          {"detail", detail}};
}

std::string item_id_for(const PaperCluster& cluster) { return "M" + sha256_hex(cluster.cluster_id).substr(0, 16); }

std::variant<MhqaItem, Rejected> finalize_item(const MhqaDraft& draft, const RelationCandidate& candidate,
                                               const PaperCluster& cluster, const RetrievalQa& rqa,
                                               const Corpus& corpus) {
  (void)rqa;
  const std::string id = item_id_for(cluster);
  if (draft.verdict.decision == Verdict::Reject) {
    auto crit = draft.verdict.rejected_criteria();
    if (crit.empty()) crit.emplace_back(kDecision);
    return Rejected{id, cluster.cluster_id, RejectionKind::ValidationRejected, std::move(crit), "decision Reject"};
  }
  const Document& target = corpus.at(candidate.target_doc_id);
  auto named = identified_title(draft.find_target_a);
  if (!named || to_lower_ascii(*named) != to_lower_ascii(trim(target.title))) {
    return Rejected{id,
                    cluster.cluster_id,
                    RejectionKind::ValidationRejected,
                    {"Target Title"},
                    "find-target answer does not name '" + target.title + "'"};
  }
  MhqaItem it;
  it.item_id = id;
  it.retrieval_question = draft.find_target_q;
  it.retrieval_answer = draft.find_target_a;
  it.interdoc_question = draft.interdoc_q;
  it.interdoc_answer = draft.interdoc_a;
  it.combined_question = draft.merged_q;
  it.combined_answer = draft.merged_a;
  it.source_doc_id = candidate.source_doc_id;
  it.target_doc_id = candidate.target_doc_id;
  it.cluster_id = cluster.cluster_id;
  it.origin = candidate.origin;
  return it;
}

json ConservationCounts::to_json() const {
  return {{"candidates_in", candidates_in},
          {"pre_rejected", pre_rejected},
          {"parse_failures", parse_failures},
          {"validation_rejected", validation_rejected},
          {"items_out", items_out},
          {"rejected_by_criterion", rejected_by_criterion},
          {"balanced", balanced()}};
}

ConservationCounts tally(const std::vector<Rejected>& rejected, std::size_t items_out) {
  ConservationCounts c;
  c.items_out = items_out;
  for (const auto& r : rejected) {
    switch (r.kind) {
      case RejectionKind::PreRejected: ++c.pre_rejected; break;
      case RejectionKind::ParseFailure: ++c.parse_failures; break;
      case RejectionKind::ValidationRejected: ++c.validation_rejected; break;
    }
    if (r.kind == RejectionKind::ValidationRejected) {
      for (const auto& k : r.failing_criteria) ++c.rejected_by_criterion[k];
    }
  }
  c.candidates_in = c.pre_rejected + c.parse_failures + c.validation_rejected + c.items_out;
  return c;
}

MhqaRun generate_mhqa(const std::vector<MhqaJob>& jobs, const Corpus& corpus, TextGenerator& gen,
                      const TextGenParams& params, double retry_temperature, unsigned workers) {
  using Outcome = std::variant<MhqaItem, Rejected>;
  auto outcomes = parallel_map<Outcome>(jobs.size(), workers, [&](std::size_t i) -> Outcome {
    const auto& job = jobs[i];
    const std::string prompt = render_mhqa_prompt(job.candidate, job.rqa, corpus);
    MhqaParse parsed = parse_mhqa_output(gen.generate(prompt, params));
    if (std::holds_alternative<ParseFailure>(parsed)) {
      TextGenParams retry = params;
      retry.temperature = std::max(params.temperature, retry_temperature);
      parsed = parse_mhqa_output(gen.generate(prompt, retry));
    }
    const std::string id = item_id_for(job.cluster);
    if (std::holds_alternative<PreRejected>(parsed)) {
      return Rejected{id, job.cluster.cluster_id, RejectionKind::PreRejected, {}, "sentinel"};
    }
    if (auto* pf = std::get_if<ParseFailure>(&parsed)) {
      return Rejected{id, job.cluster.cluster_id, RejectionKind::ParseFailure, {}, "missing " + pf->missing};
    }
    return finalize_item(std::get<MhqaDraft>(parsed), job.candidate, job.cluster, job.rqa, corpus);
  });

  MhqaRun run;
  for (auto& o : outcomes) {
    if (auto* item = std::get_if<MhqaItem>(&o)) {
      run.items.push_back(std::move(*item));
    } else {
      run.rejected.push_back(std::move(std::get<Rejected>(o)));
    }
  }
  std::sort(run.items.begin(), run.items.end(),
            [](const MhqaItem& a, const MhqaItem& b) { return a.item_id < b.item_id; });
  std::sort(run.rejected.begin(), run.rejected.end(),
            [](const Rejected& a, const Rejected& b) { return a.item_id < b.item_id; });
  run.counts = tally(run.rejected, run.items.size());
  if (run.counts.candidates_in != jobs.size()) throw std::logic_error("generate_mhqa: outcome count mismatch");
  return run;
}

json SplitStats::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"count", count},
          {"avg_retrieval_q_length", opt(avg_retrieval_q_length)},
          {"avg_interdoc_q_length", opt(avg_interdoc_q_length)},
          {"avg_combined_q_length", opt(avg_combined_q_length)},
          {"avg_interdoc_a_length", opt(avg_interdoc_a_length)},
          {"avg_combined_a_length", opt(avg_combined_a_length)}};
}

SplitStats split_statistics(const std::vector<MhqaItem>& items, LengthUnit unit) {
  SplitStats s;
  s.count = items.size();
  if (items.empty()) return s;
  s.avg_retrieval_q_length = mean_length(items, unit, &MhqaItem::retrieval_question);
  s.avg_interdoc_q_length = mean_length(items, unit, &MhqaItem::interdoc_question);
  s.avg_combined_q_length = mean_length(items, unit, &MhqaItem::combined_question);
  s.avg_interdoc_a_length = mean_length(items, unit, &MhqaItem::interdoc_answer);
  s.avg_combined_a_length = mean_length(items, unit, &MhqaItem::combined_answer);
  return s;
}

DatasetSplit split_dataset(const std::vector<MhqaItem>& items, std::size_t test_size, std::uint64_t seed) {
  if (test_size > items.size()) {
    throw std::invalid_argument("split_dataset: test_size " + std::to_string(test_size) + " exceeds " +
                                std::to_string(items.size()) + " items");
  }
  std::vector<MhqaItem> pool = items;
  std::sort(pool.begin(), pool.end(), [](const MhqaItem& a, const MhqaItem& b) { return a.item_id < b.item_id; });
  SplitMix64 rng(derive_seed(seed, "split"));
  for (std::size_t i = 0; i < test_size; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  DatasetSplit out;
  out.test.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(test_size));
  out.dev.assign(pool.begin() + static_cast<std::ptrdiff_t>(test_size), pool.end());
  auto by_id = [](const MhqaItem& a, const MhqaItem& b) { return a.item_id < b.item_id; };
  std::sort(out.test.begin(), out.test.end(), by_id);
  std::sort(out.dev.begin(), out.dev.end(), by_id);
  return out;
}

}  // namespace imqa
