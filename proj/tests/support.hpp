#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "imqa/corpus.hpp"
#include "imqa/providers.hpp"

namespace testing {

using imqa::Document;
using imqa::EmbeddingVector;

// Generator whose completions come from a callback.
class ScriptedGenerator final : public imqa::TextGenerator {
 public:
  using Fn = std::function<std::string(const std::string&, const imqa::TextGenParams&)>;
  explicit ScriptedGenerator(Fn fn, std::string id = "scripted") : fn_(std::move(fn)), id_(std::move(id)) {}

  std::string backend_id() const override { return id_; }
  std::string generate(const std::string& prompt, const imqa::TextGenParams& params) override {
    ++calls;
    return fn_(prompt, params);
  }

  std::atomic<int> calls{0};

 private:
  Fn fn_;
  std::string id_;
};

// Embedder with hand-set vectors for listed texts; anything else is hashed.
class TableEmbedder final : public imqa::Embedder {
 public:
  explicit TableEmbedder(std::size_t dim) : dim_(dim), fallback_(dim) {}

  void set(const std::string& text, std::vector<double> v) { table_[text] = std::move(v); }

  std::string backend_id() const override { return "table"; }
  std::size_t dimension() const override { return dim_; }
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override {
    ++batches;
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) {
      auto it = table_.find(t);
      out.push_back(it != table_.end() ? EmbeddingVector{it->second} : fallback_.embed_one(t));
    }
    return out;
  }

  int batches = 0;

 private:
  std::size_t dim_;
  imqa::HashEmbedder fallback_;
  std::map<std::string, std::vector<double>> table_;
};

struct SectionSpec {
  std::string name;
  std::vector<std::string> paragraphs;
};

inline Document make_doc(const std::string& id, std::vector<std::string> keywords = {"k"},
                         std::vector<SectionSpec> sections = {{"Results", {"Some text here."}}},
                         std::vector<std::pair<std::string, std::string>> refs = {{"1", "EXT"}},
                         std::string title = {}, std::string abstract = "An abstract.") {
  Document d;
  d.doc_id = id;
  d.title = title.empty() ? "Title of " + id : title;
  d.abstract = std::move(abstract);
  d.keywords = std::move(keywords);
  for (auto& s : sections) {
    imqa::Section sec;
    sec.name = s.name;
    sec.index = d.sections.size();
    sec.paragraphs = s.paragraphs;
    d.sections.push_back(std::move(sec));
  }
  for (auto& [marker, target] : refs) {
    imqa::CitationRef r;
    r.marker = marker;
    if (!target.empty()) r.target_doc_id = target;
    d.references.push_back(std::move(r));
  }
  return d;
}

// Serializes through JSONL so `resolved` flags are computed as on load.
inline imqa::Corpus make_corpus(const std::vector<Document>& docs) {
  std::string s;
  for (const auto& d : docs) s += imqa::document_to_json(d).dump() + "\n";
  std::istringstream in(s);
  return imqa::parse_corpus(in, "fixture");
}

inline std::filesystem::path temp_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  auto p = std::filesystem::temp_directory_path() /
           ("imqa_" + name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::filesystem::path toy_corpus_path() { return std::filesystem::path(IMQA_TEST_DATA_DIR) / "toy_corpus.jsonl"; }

}  // namespace testing
