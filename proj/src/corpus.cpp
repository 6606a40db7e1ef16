#include "imqa/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "imqa/text.hpp"

namespace imqa {

std::string to_string(RelationMode mode) { return mode == RelationMode::Semantic ? "semantic" : "citation"; }

RelationMode relation_mode_from_string(std::string_view s) {
  if (s == "semantic") return RelationMode::Semantic;
  if (s == "citation") return RelationMode::Citation;
  throw std::invalid_argument("unknown relation mode '" + std::string(s) + "'");
}

std::string Section::text() const { return join(paragraphs, " "); }

bool Document::has_full_text() const {
  for (const auto& s : sections) {
    for (const auto& p : s.paragraphs) {
      if (!trim(p).empty()) return true;
    }
  }
  return false;
}

std::string Document::full_text() const {
  std::string out;
  for (const auto& s : sections) {
    if (!out.empty()) out += "\n\n";
    out += s.name;
    out += "\n";
    out += s.text();
  }
  return out;
}

const Section* Document::find_section(std::string_view name) const {
  for (const auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::vector<std::string> Document::resolved_targets() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& r : references) {
    if (r.resolved && r.target_doc_id && seen.insert(*r.target_doc_id).second) out.push_back(*r.target_doc_id);
  }
  return out;
}

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    const auto& id = docs_[i].doc_id;
    if (id.empty()) throw CorpusError("document at position " + std::to_string(i) + " has an empty doc_id");
    if (!index_.emplace(id, i).second) throw CorpusError("duplicate doc_id '" + id + "'");
  }
}

bool Corpus::contains(std::string_view doc_id) const { return index_.count(std::string(doc_id)) > 0; }

const Document* Corpus::find(std::string_view doc_id) const {
  auto it = index_.find(std::string(doc_id));
  return it == index_.end() ? nullptr : &docs_[it->second];
}

const Document& Corpus::at(std::string_view doc_id) const {
  const Document* d = find(doc_id);
  if (!d) throw CorpusError("unknown doc_id '" + std::string(doc_id) + "'");
  return *d;
}

Document document_from_json(const json& j) {
  if (!j.is_object()) throw CorpusError("record is not an object");
  Document d;
  d.doc_id = j.at("doc_id").get<std::string>();
  if (d.doc_id.empty()) throw CorpusError("empty doc_id");
  d.title = j.value("title", std::string{});
  d.abstract = j.value("abstract", std::string{});
  if (j.contains("keywords")) d.keywords = j.at("keywords").get<std::vector<std::string>>();
  if (j.contains("sections")) {
    for (const auto& s : j.at("sections")) {
      Section sec;
      sec.name = s.at("name").get<std::string>();
      if (trim(sec.name).empty()) throw CorpusError("section with empty name in '" + d.doc_id + "'");
      sec.index = d.sections.size();
      sec.paragraphs = s.at("paragraphs").get<std::vector<std::string>>();
      d.sections.push_back(std::move(sec));
    }
  }
  if (j.contains("references")) {
    for (const auto& r : j.at("references")) {
      CitationRef ref;
      ref.marker = r.at("marker").get<std::string>();
      if (r.contains("target_doc_id") && !r.at("target_doc_id").is_null()) {
        ref.target_doc_id = r.at("target_doc_id").get<std::string>();
      }
      d.references.push_back(std::move(ref));
    }
  }
  return d;
}

json document_to_json(const Document& doc) {
  json sections = json::array();
  for (const auto& s : doc.sections) sections.push_back({{"name", s.name}, {"paragraphs", s.paragraphs}});
  json refs = json::array();
  for (const auto& r : doc.references) {
    json jr = {{"marker", r.marker}};
    if (r.target_doc_id) jr["target_doc_id"] = *r.target_doc_id;
    refs.push_back(std::move(jr));
  }
  return {{"doc_id", doc.doc_id},   {"title", doc.title},       {"abstract", doc.abstract},
          {"keywords", doc.keywords}, {"sections", sections}, {"references", refs}};
}

Corpus parse_corpus(std::istream& in, const std::string& source_name) {
  std::vector<Document> docs;
  std::unordered_map<std::string, std::size_t> first_line;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    Document d;
    try {
      d = document_from_json(json::parse(line));
    } catch (const std::exception& e) {
      throw CorpusError(source_name + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
    auto [it, inserted] = first_line.emplace(d.doc_id, lineno);
    if (!inserted) {
      throw CorpusError(source_name + ":" + std::to_string(lineno) + ": duplicate doc_id '" + d.doc_id +
                        "' (first seen on line " + std::to_string(it->second) + ")");
    }
    docs.push_back(std::move(d));
  }
  for (auto& d : docs) {
    for (auto& r : d.references) r.resolved = r.target_doc_id && first_line.count(*r.target_doc_id) > 0;
  }
  return Corpus(std::move(docs));
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file " + path.string());
  return parse_corpus(in, path.string());
}

json FilterReport::to_json() const {
  return {{"input", input},
          {"kept", kept},
          {"rejected",
           {{"missing_full_text", missing_full_text},
            {"missing_abstract", missing_abstract},
            {"missing_references", missing_references},
            {"missing_keywords", missing_keywords},
            {"too_few_citations", too_few_citations}}}};
}

namespace {

Document prune_empty(const Document& d) {
  Document out = d;
  out.sections.clear();
  for (const auto& s : d.sections) {
    Section sec{s.name, out.sections.size(), {}};
    for (const auto& p : s.paragraphs) {
      if (!trim(p).empty()) sec.paragraphs.push_back(p);
    }
    if (!sec.paragraphs.empty()) out.sections.push_back(std::move(sec));
  }
  return out;
}

}  // namespace

Corpus filter_eligible(const Corpus& corpus, RelationMode mode, FilterReport* report) {
  FilterReport r;
  r.input = corpus.size();
  std::vector<Document> kept;
  for (const auto& d : corpus) {
    bool ok = true;
    if (!d.has_full_text()) { ++r.missing_full_text; ok = false; }
    if (trim(d.abstract).empty()) { ++r.missing_abstract; ok = false; }
    if (d.references.empty()) { ++r.missing_references; ok = false; }
    if (mode == RelationMode::Semantic && normalize_keywords(d.keywords).empty()) {
      ++r.missing_keywords;
      ok = false;
    }
    if (mode == RelationMode::Citation && d.resolved_targets().size() < kMinResolvedCitations) {
      ++r.too_few_citations;
      ok = false;
    }
    if (ok) kept.push_back(prune_empty(d));
  }
  r.kept = kept.size();
  if (report) *report = r;
  return Corpus(std::move(kept));
}

std::vector<std::string> normalize_keywords(const std::vector<std::string>& keywords) {
  std::set<std::string> out;
  for (const auto& k : keywords) {
    auto t = to_lower_ascii(trim(k));
    if (!t.empty()) out.insert(std::move(t));
  }
  return {out.begin(), out.end()};
}

std::vector<std::string> split_sentences(std::string_view text, const SegmenterConfig& cfg) {
  std::vector<std::string> out;
  std::size_t start = 0;
  auto protected_at = [&](std::size_t end) {
    // end is one past the terminal '.'
    for (const auto& abbr : cfg.abbreviations) {
      if (abbr.size() > end) continue;
      std::size_t b = end - abbr.size();
      if (text.compare(b, abbr.size(), abbr) != 0) continue;
      if (b == 0 || std::isspace(static_cast<unsigned char>(text[b - 1])) || text[b - 1] == '(') return true;
    }
    return false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    std::size_t j = i + 1;
    if (j >= text.size() || !std::isspace(static_cast<unsigned char>(text[j]))) continue;
    while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j >= text.size()) continue;
    unsigned char next = static_cast<unsigned char>(text[j]);
    if (!std::isupper(next) && !std::isdigit(next)) continue;
    if (c == '.' && protected_at(i + 1)) continue;
    auto s = trim(text.substr(start, i + 1 - start));
    if (!s.empty()) out.push_back(std::move(s));
    start = j;
    i = j - 1;
  }
  auto tail = trim(text.substr(std::min(start, text.size())));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

namespace {

std::vector<int> expand_list(const std::string& list) {
  std::vector<int> out;
  std::size_t i = 0;
  auto read_int = [&](int& v) {
    while (i < list.size() && std::isspace(static_cast<unsigned char>(list[i]))) ++i;
    std::size_t b = i;
    while (i < list.size() && std::isdigit(static_cast<unsigned char>(list[i]))) ++i;
    if (b == i) return false;
    v = std::stoi(list.substr(b, i - b));
    while (i < list.size() && std::isspace(static_cast<unsigned char>(list[i]))) ++i;
    return true;
  };
  while (i < list.size()) {
    int a = 0;
    if (!read_int(a)) break;
    if (i < list.size() && list[i] == '-') {
      ++i;
      int b = 0;
      if (!read_int(b)) break;
      if (b < a) std::swap(a, b);
      for (int v = a; v <= b; ++v) out.push_back(v);
    } else {
      out.push_back(a);
    }
    if (i < list.size() && list[i] == ',') ++i;
  }
  return out;
}

std::optional<int> marker_number(std::string_view marker) {
  std::size_t i = 0;
  while (i < marker.size() && !std::isdigit(static_cast<unsigned char>(marker[i]))) ++i;
  if (i == marker.size()) return std::nullopt;
  std::size_t j = i;
  while (j < marker.size() && std::isdigit(static_cast<unsigned char>(marker[j]))) ++j;
  return std::stoi(std::string(marker.substr(i, j - i)));
}

}  // namespace

std::vector<int> cited_numbers(std::string_view sentence, const CitationGrammar& grammar) {
  const std::string s = text::unify_punctuation(sentence);
  std::vector<int> out;
  for (const auto& pat : grammar.patterns) {
    const std::regex re(pat);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
      auto nums = expand_list((*it)[1].str());
      out.insert(out.end(), nums.begin(), nums.end());
    }
  }
  return out;
}

std::vector<CitationContext> extract_citation_contexts(const Document& doc, const Corpus& corpus,
                                                       const ContextOptions& opts,
                                                       std::vector<std::string>* warnings) {
  std::unordered_map<int, const CitationRef*> by_number;
  for (const auto& r : doc.references) {
    if (auto n = marker_number(r.marker)) by_number.emplace(*n, &r);
  }
  std::vector<CitationContext> out;
  for (const auto& sec : doc.sections) {
    for (const auto& para : sec.paragraphs) {
      for (auto& sentence : split_sentences(para, opts.segmenter)) {
        auto nums = cited_numbers(sentence, opts.grammar);
        if (nums.size() != 1) continue;
        auto it = by_number.find(nums.front());
        if (it == by_number.end()) {
          if (warnings) {
            warnings->push_back(doc.doc_id + ": marker " + std::to_string(nums.front()) +
                                " has no reference entry; sentence skipped");
          }
          continue;
        }
        const CitationRef& ref = *it->second;
        if (!ref.resolved || !ref.target_doc_id || !corpus.contains(*ref.target_doc_id)) continue;
        if (*ref.target_doc_id == doc.doc_id) continue;
        out.push_back({std::move(sentence), doc.doc_id, ref.marker, *ref.target_doc_id});
      }
    }
  }
  return out;
}

}  // namespace imqa
