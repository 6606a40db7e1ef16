#include "imqa/shqa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

#include "imqa/text.hpp"

namespace imqa {

bool canonical_less(const QaTriplet& a, const QaTriplet& b) {
  return std::tie(a.doc_id, a.section_name, a.question) < std::tie(b.doc_id, b.section_name, b.question);
}

double similarity_gap(const EmbeddingVector& q, const EmbeddingVector& a, const EmbeddingVector& e) {
  return cosine(q, a) - cosine(q, e);
}

namespace {

constexpr std::string_view kShqaInstructions = R"(You are an expert in reading comprehension.
You will be provided with a single paragraph from a scientific paper.
Read the paragraph carefully and identify meaningful information
(entities, facts, relations, events) that can be directly and
unambiguously extracted from it.

For each identified meaningful fact, you must generate a JSON object
with the following three fields:

question: Generate one clear and specific question. The question must
detail the context or conditions (e.g., the specific patient group,
timeframe, or situation) mentioned in the text to pinpoint the fact
accurately.

evidence: Extract the minimal contiguous text span from the paragraph
that provides the evidence for the answer. This must be an exact quote
from the text.

answer: Based on the extracted evidence, formulate a natural complete
sentence that directly answers the question.

Rules:

Do not use any outside knowledge or inference.
All information must be sourced only from the given paragraph.

The evidence field must be an exact extraction without modification.

Avoid generating reasoning-type (multi-hop) questions.

Return the result as a JSON list with the following structure:

{
"question": "string",
"evidence": "string",
"answer": "string"
}
)";

std::string strip_code_fences(const std::string& s) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t eol = s.find('\n', i);
    if (eol == std::string::npos) eol = s.size();
    std::string_view line(s.data() + i, eol - i);
    if (trim(line).rfind("```", 0) != 0) {
      out.append(line);
      out.push_back('\n');
    }
    i = eol + 1;
  }
  return out;
}

// Index one past the bracket that closes the one at `open`, or npos.
std::size_t match_bracket(const std::string& s, std::size_t open) {
  const char o = s[open];
  const char c = o == '[' ? ']' : '}';
  int depth = 0;
  bool in_str = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    char ch = s[i];
    if (in_str) {
      if (ch == '\\') {
        ++i;
      } else if (ch == '"') {
        in_str = false;
      }
      continue;
    }
    if (ch == '"') {
      in_str = true;
    } else if (ch == o) {
      ++depth;
    } else if (ch == c) {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string::npos;
}

std::string drop_trailing_commas(const std::string& s) {
  std::string out;
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char ch = s[i];
    if (in_str) {
      out.push_back(ch);
      if (ch == '\\' && i + 1 < s.size()) {
        out.push_back(s[++i]);
      } else if (ch == '"') {
        in_str = false;
      }
      continue;
    }
    if (ch == '"') in_str = true;
    if (ch == ',') {
      std::size_t j = i + 1;
      while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j < s.size() && (s[j] == ']' || s[j] == '}')) continue;
    }
    out.push_back(ch);
  }
  return out;
}

std::optional<json> try_parse(const std::string& s) {
  json j = json::parse(drop_trailing_commas(s), nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  return j;
}

std::optional<ParsedQa> to_parsed(const json& item) {
  if (!item.is_object()) return std::nullopt;
  ParsedQa qa;
  for (auto [field, dest] : {std::pair{"question", &qa.question}, std::pair{"evidence", &qa.evidence},
                             std::pair{"answer", &qa.answer}}) {
    auto it = item.find(field);
    if (it == item.end() || !it->is_string()) return std::nullopt;
    *dest = trim(it->get<std::string>());
    if (dest->empty()) return std::nullopt;
  }
  return qa;
}

}  // namespace

std::string render_shqa_prompt(const std::string& paragraph) {
  std::string p(kShqaInstructions);
  p += "\n";
  p += kShqaParagraphHeader;
  p += paragraph;
  p += "\n";
  return p;
}

std::optional<std::vector<ParsedQa>> parse_shqa_completion(const std::string& completion) {
  const std::string body = strip_code_fences(completion);
  std::vector<json> items;
  bool structured = false;

  // Prose may contain brackets of its own ("[3]"), so try each '[' in turn.
  for (std::size_t open = body.find('['); open != std::string::npos && !structured;
       open = body.find('[', open + 1)) {
    std::size_t close = match_bracket(body, open);
    if (close == std::string::npos) continue;
    auto j = try_parse(body.substr(open, close - open));
    if (j && j->is_array() && (j->empty() || (*j)[0].is_object())) {
      structured = true;
      for (auto& e : *j) items.push_back(e);
    }
  }
  if (!structured) {
    for (std::size_t pos = body.find('{'); pos != std::string::npos; pos = body.find('{', pos)) {
      std::size_t close = match_bracket(body, pos);
      if (close == std::string::npos) break;
      if (auto j = try_parse(body.substr(pos, close - pos)); j && j->is_object()) {
        structured = true;
        items.push_back(*j);
        pos = close;
      } else {
        ++pos;
      }
    }
  }
  if (!structured) return std::nullopt;
  std::vector<ParsedQa> out;
  for (const auto& item : items) {
    if (auto qa = to_parsed(item)) out.push_back(std::move(*qa));
  }
  return out;
}

ShqaGeneration generate_shqa(const Document& doc, const Section& section, TextGenerator& gen,
                             const TextGenParams& params) {
  ShqaGeneration out;
  for (std::size_t p = 0; p < section.paragraphs.size(); ++p) {
    const auto& para = section.paragraphs[p];
    if (trim(para).empty()) continue;
    const std::string completion = gen.generate(render_shqa_prompt(para), params);
    auto parsed = parse_shqa_completion(completion);
    if (!parsed) {
      ++out.parse_failures;
      out.warnings.push_back(doc.doc_id + "/" + section.name + " paragraph " + std::to_string(p) +
                             ": completion is not a parseable QA list");
      continue;
    }
    for (auto& qa : *parsed) {
      out.triplets.push_back({std::move(qa.question), std::move(qa.answer), std::move(qa.evidence), doc.doc_id,
                              section.name});
    }
  }
  return out;
}

std::string to_string(EvidenceMatch m) { return m == EvidenceMatch::Strict ? "strict" : "normalized"; }

EvidenceMatch evidence_match_from_string(std::string_view s) {
  if (s == "strict") return EvidenceMatch::Strict;
  if (s == "normalized") return EvidenceMatch::Normalized;
  throw std::invalid_argument("unknown evidence match mode '" + std::string(s) + "'");
}

std::string normalize_evidence_text(std::string_view t, EvidenceMatch mode) {
  return mode == EvidenceMatch::Strict ? std::string(t) : text::normalize_loose(t);
}

bool validate_evidence(const QaTriplet& triplet, const Section& section, EvidenceMatch mode) {
  const std::string ev = normalize_evidence_text(triplet.evidence, mode);
  if (trim(ev).empty()) return false;
  return normalize_evidence_text(section.text(), mode).find(ev) != std::string::npos;
}

std::vector<ShqaRecord> build_shqa_records(const std::vector<QaTriplet>& triplets, Embedder& embedder) {
  std::vector<ShqaRecord> out;
  if (triplets.empty()) return out;
  std::vector<std::string> qs, as, es;
  for (const auto& t : triplets) {
    qs.push_back(t.question);
    as.push_back(t.answer);
    es.push_back(t.evidence);
  }
  auto qv = embedder.embed_batch(qs);
  auto av = embedder.embed_batch(as);
  auto ev = embedder.embed_batch(es);
  out.reserve(triplets.size());
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    ShqaRecord r{triplets[i], std::move(qv[i]), std::move(av[i]), std::move(ev[i]), 0.0};
    r.gap = similarity_gap(r.q_vec, r.a_vec, r.e_vec);
    out.push_back(std::move(r));
  }
  return out;
}

GapFilterResult similarity_gap_filter(const std::vector<ShqaRecord>& records, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw std::invalid_argument("similarity_gap_filter: fraction must be in [0, 1)");
  const std::size_t n = records.size();
  // The epsilon absorbs products like 0.29 * 100 = 28.999999999999996.
  const auto n_drop = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = records[a];
    const auto& rb = records[b];
    if (ra.gap != rb.gap) return ra.gap < rb.gap;
    return canonical_less(ra.triplet, rb.triplet);
  });
  std::vector<bool> drop(n, false);
  for (std::size_t i = 0; i < n_drop; ++i) drop[order[i]] = true;
  GapFilterResult out;
  for (std::size_t i = 0; i < n; ++i) (drop[i] ? out.dropped : out.kept).push_back(records[i]);
  return out;
}

std::string to_string(LengthUnit u) { return u == LengthUnit::Tokens ? "tokens" : "characters"; }

LengthUnit length_unit_from_string(std::string_view s) {
  if (s == "tokens") return LengthUnit::Tokens;
  if (s == "characters") return LengthUnit::Characters;
  throw std::invalid_argument("unknown length unit '" + std::string(s) + "'");
}

std::size_t text_length(std::string_view s, LengthUnit unit) {
  if (unit == LengthUnit::Tokens) return split_whitespace(s).size();
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

json ShqaStats::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"length_unit", to_string(unit)},
          {"count", count},
          {"papers", papers},
          {"sections", sections},
          {"avg_question_length", opt(avg_question_length)},
          {"avg_answer_length", opt(avg_answer_length)},
          {"avg_qa_per_paper", opt(avg_qa_per_paper)},
          {"avg_qa_per_section", opt(avg_qa_per_section)},
          {"total_by_section", total_by_section},
          {"avg_by_section", avg_by_section}};
}

ShqaStats shqa_statistics(const std::vector<QaTriplet>& triplets, LengthUnit unit) {
  ShqaStats s;
  s.unit = unit;
  s.count = triplets.size();
  if (triplets.empty()) return s;
  double q_len = 0, a_len = 0;
  std::set<std::string> papers;
  std::set<std::pair<std::string, std::string>> sections;
  std::map<std::string, std::size_t> instances_by_name;
  for (const auto& t : triplets) {
    q_len += static_cast<double>(text_length(t.question, unit));
    a_len += static_cast<double>(text_length(t.answer, unit));
    papers.insert(t.doc_id);
    if (sections.insert({t.doc_id, t.section_name}).second) ++instances_by_name[t.section_name];
    ++s.total_by_section[t.section_name];
  }
  const double n = static_cast<double>(triplets.size());
  s.papers = papers.size();
  s.sections = sections.size();
  s.avg_question_length = q_len / n;
  s.avg_answer_length = a_len / n;
  s.avg_qa_per_paper = n / static_cast<double>(papers.size());
  s.avg_qa_per_section = n / static_cast<double>(sections.size());
  for (const auto& [name, total] : s.total_by_section) {
    s.avg_by_section[name] = static_cast<double>(total) / static_cast<double>(instances_by_name[name]);
  }
  return s;
}

ShqaStats shqa_statistics(const std::vector<ShqaRecord>& records, LengthUnit unit) {
  std::vector<QaTriplet> ts;
  ts.reserve(records.size());
  for (const auto& r : records) ts.push_back(r.triplet);
  return shqa_statistics(ts, unit);
}

json shqa_record_to_json(const ShqaRecord& r) {
  return {{"doc_id", r.triplet.doc_id},     {"section_name", r.triplet.section_name},
          {"question", r.triplet.question}, {"answer", r.triplet.answer},
          {"evidence", r.triplet.evidence}, {"gap", r.gap}};
}

QaTriplet triplet_from_json(const json& j) {
  return {j.at("question").get<std::string>(), j.at("answer").get<std::string>(),
          j.at("evidence").get<std::string>(), j.at("doc_id").get<std::string>(),
          j.at("section_name").get<std::string>()};
}

}  // namespace imqa
