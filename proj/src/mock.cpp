#include "imqa/mock.hpp"

#include <algorithm>
#include <set>

#include "imqa/corpus.hpp"
#include "imqa/eval.hpp"
#include "imqa/mhqa.hpp"
#include "imqa/shqa.hpp"
#include "imqa/text.hpp"

namespace imqa {
namespace {

const std::set<std::string> kStopwords = {
    "about", "after", "also", "among", "and", "are", "based", "been", "being", "between", "both", "does",
    "each", "for", "from", "have", "into", "more", "most", "other", "over", "paper", "such", "than",
    "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "through", "using",
    "was", "were", "what", "when", "where", "which", "while", "with", "within", "would", "paragraph"};

std::set<std::string> content_words(const std::string& s) {
  std::set<std::string> out;
  for (auto& t : text::metric_tokens(s)) {
    if (t.size() >= 4 && !kStopwords.count(t)) out.insert(t);
  }
  return out;
}

std::string strip_final_punct(std::string s) {
  s = trim(s);
  while (!s.empty() && (s.back() == '.' || s.back() == '?' || s.back() == '!')) s.pop_back();
  return s;
}

// First few words of a question with the interrogative lead removed.
std::string topic_of(const std::string& question, std::size_t max_words = 8) {
  auto words = split_whitespace(strip_final_punct(question));
  static const std::set<std::string> kLead = {"what", "which", "how", "why", "who", "when", "where", "according",
                                              "to", "the", "paragraph,", "is", "are", "does", "do", "said",
                                              "about", "reported", "in", "was", "were"};
  std::size_t i = 0;
  while (i < words.size() && kLead.count(to_lower_ascii(words[i]))) ++i;
  if (i == words.size()) i = 0;
  std::vector<std::string> keep(words.begin() + static_cast<std::ptrdiff_t>(i),
                                words.begin() + static_cast<std::ptrdiff_t>(std::min(words.size(), i + max_words)));
  return join(keep, " ");
}

std::string between(const std::string& s, std::string_view open, std::string_view close, std::size_t from = 0) {
  const std::size_t a = s.find(open, from);
  if (a == std::string::npos) return {};
  const std::size_t start = a + open.size();
  const std::size_t b = close.empty() ? std::string::npos : s.find(close, start);
  return s.substr(start, b == std::string::npos ? std::string::npos : b - start);
}

std::vector<std::string> split_lines_nonempty(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t end = s.find('\n', start);
    if (end == std::string::npos) end = s.size();
    std::string line = trim(std::string_view(s).substr(start, end - start));
    if (!line.empty()) out.push_back(std::move(line));
    start = end + 1;
  }
  return out;
}

}  // namespace

std::string MockGenerator::generate(const std::string& prompt, const TextGenParams&) {
  if (prompt.rfind("You are an expert in reading comprehension.", 0) == 0) {
    const std::size_t at = prompt.rfind(kShqaParagraphHeader);
    if (at == std::string::npos) throw ProviderInputError("mock: single-hop prompt without a paragraph");
    return shqa(prompt.substr(at + kShqaParagraphHeader.size()));
  }
  if (prompt.find("### Now Your Turn") != std::string::npos) return mhqa(prompt);
  if (prompt.rfind("You are grading an answer", 0) == 0) return judge(prompt);
  if (prompt.find("### Source Paper\n") != std::string::npos && prompt.find("### Question\n") != std::string::npos) {
    return answer(prompt);
  }
  throw ProviderInputError("mock: unrecognized prompt");
}

std::string MockGenerator::shqa(const std::string& paragraph) const {
  json list = json::array();
  for (const auto& sentence : split_sentences(trim(paragraph))) {
    const auto words = split_whitespace(sentence);
    if (words.size() < 4) continue;
    const std::uint64_t h = derive_seed(seed_, "shqa:" + sentence);
    std::string evidence = sentence;
    // Now and then quote the paragraph inexactly, as real generators do.
    if (h % 9 == 0) evidence = "It is reported that " + sentence;
    std::vector<std::string> lead(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(8, words.size())));
    std::string question = "What does the paragraph report about " + strip_final_punct(join(lead, " ")) + "?";
    std::string answer = "The paragraph reports that " + strip_final_punct(sentence) + ".";
    list.push_back({{"question", question}, {"evidence", evidence}, {"answer", answer}});
  }
  return "```json\n" + list.dump(2) + "\n```\n";
}

std::string MockGenerator::mhqa(const std::string& prompt) const {
  auto in = parse_mhqa_inputs(prompt);
  if (!in) return "The inputs could not be read.";
  const std::uint64_t h = derive_seed(seed_, "mhqa:" + in->core_source_q + "\x1f" + in->core_target_q + "\x1f" +
                                                 in->unique_target_q);
  const auto src_words = content_words(in->core_source_q + " " + in->core_source_a);
  const auto tgt_words = content_words(in->core_target_q + " " + in->core_target_a);
  bool overlap = false;
  for (const auto& w : src_words) overlap = overlap || tgt_words.count(w);
  if (!overlap || h % 10 == 0 || h % 10 == 5) return std::string(kPreRejectSentinel) + "\n";

  MhqaDraft d;
  d.find_target_q = "Which paper addresses " + topic_of(in->unique_target_q) + "?";
  d.find_target_a = "Identified target paper: '" + in->target_title + "'.";
  d.interdoc_q = "How does the finding on " + topic_of(in->core_source_q) + " relate to the finding on " +
                 topic_of(in->core_target_q) + "?";
  d.interdoc_a = strip_final_punct(in->core_source_a) + ", while " + strip_final_punct(in->core_target_a) + ".";
  d.merged_q = "Considering the paper that addresses " + topic_of(in->unique_target_q) +
               ", how does the finding on " + topic_of(in->core_source_q) + " relate to its finding on " +
               topic_of(in->core_target_q) + "?";
  d.merged_a = d.interdoc_a;

  switch (h % 10) {
    case 1:
      d.verdict.crossref_necessity = Verdict::Reject;
      d.verdict.decision = Verdict::Reject;
      break;
    case 2:
      d.verdict.relational_appropriateness = Verdict::Reject;
      d.verdict.decision = Verdict::Reject;
      break;
    case 3:
      d.find_target_a = "Identified target paper: '" + in->source_title + "'.";
      break;
    default: break;
  }
  return format_mhqa_output(d);
}

std::string MockGenerator::answer(const std::string& prompt) const {
  const std::string question = trim(between(prompt, "### Question\n", "\n\n### Answer"));
  const std::string papers = between(prompt, "### Source Paper\n", "### Question\n");
  const auto qwords = content_words(question);
  std::string best;
  std::size_t best_overlap = 0;
  for (const auto& line : split_lines_nonempty(papers)) {
    if (line.rfind("### ", 0) == 0 || line.rfind("Title: ", 0) == 0) continue;
    for (const auto& s : split_sentences(line)) {
      std::size_t n = 0;
      for (const auto& w : content_words(s)) n += qwords.count(w);
      if (n > best_overlap) {
        best_overlap = n;
        best = s;
      }
    }
  }
  return best.empty() ? "The papers do not say." : best;
}

std::string MockGenerator::judge(const std::string& prompt) const {
  const std::string gold = trim(between(prompt, "\nAnswer: ", "\nPrediction: "));
  const std::string pred = trim(between(prompt, "\nPrediction: ", "\n\nScore:"));
  std::string score = "0";
  if (text::metric_tokens(gold) == text::metric_tokens(pred)) {
    score = "1";
  } else if (token_f1(pred, gold) >= 0.5) {
    score = "0.5";
  }
  return "Score: " + score;
}

}  // namespace imqa
