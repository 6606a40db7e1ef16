#include <set>
#include <sstream>

#include "doctest.h"
#include "imqa/corpus.hpp"
#include "support.hpp"

using namespace imqa;
using testing::make_corpus;
using testing::make_doc;

namespace {

Corpus parse(const std::string& s) {
  std::istringstream in(s);
  return parse_corpus(in, "mem");
}

std::string rec(const std::string& id) {
  return json{{"doc_id", id}, {"title", "t"}, {"abstract", "a"}, {"keywords", {"k"}},
              {"sections", {{{"name", "Intro"}, {"paragraphs", {"p"}}}}},
              {"references", {{{"marker", "1"}}}}}
      .dump();
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("load preserves count and order") {
    auto c = parse(rec("A") + "\n" + rec("B") + "\n" + rec("C") + "\n");
    REQUIRE(c.size() == 3);
    CHECK(c.documents()[0].doc_id == "A");
    CHECK(c.documents()[2].doc_id == "C");
    CHECK(parse("").size() == 0);
  }

  TEST_CASE("duplicate doc_id names the id") {
    try {
      parse(rec("P1") + "\n" + rec("P1") + "\n");
      FAIL("expected duplicate error");
    } catch (const CorpusError& e) {
      CHECK(std::string(e.what()).find("P1") != std::string::npos);
    }
  }

  TEST_CASE("malformed record reports its line") {
    try {
      parse(rec("A") + "\n{broken\n");
      FAIL("expected parse error");
    } catch (const CorpusError& e) {
      CHECK(std::string(e.what()).find("mem:2") != std::string::npos);
    }
  }

  TEST_CASE("resolved flag follows corpus membership") {
    auto c = make_corpus({make_doc("A", {"k"}, {{"S", {"x"}}}, {{"1", "B"}, {"2", "Z"}, {"3", ""}}), make_doc("B")});
    const auto& a = c.at("A");
    CHECK(a.references[0].resolved);
    CHECK_FALSE(a.references[1].resolved);
    CHECK_FALSE(a.references[2].resolved);
    CHECK(a.resolved_targets() == std::vector<std::string>{"B"});
  }

  TEST_CASE("citation mode needs three resolved citations") {
    std::vector<Document> docs = {make_doc("T1"), make_doc("T2"), make_doc("T3")};
    docs.push_back(make_doc("TWO", {"k"}, {{"S", {"x"}}}, {{"1", "T1"}, {"2", "T2"}, {"3", "EXT"}}));
    docs.push_back(make_doc("THREE", {"k"}, {{"S", {"x"}}}, {{"1", "T1"}, {"2", "T2"}, {"3", "T3"}}));
    auto c = make_corpus(docs);
    FilterReport r;
    auto kept = filter_eligible(c, RelationMode::Citation, &r);
    CHECK_FALSE(kept.contains("TWO"));
    CHECK(kept.contains("THREE"));
    CHECK(r.too_few_citations == 4);
  }

  TEST_CASE("empty abstract is excluded in both modes") {
    auto d = make_doc("A", {"k"}, {{"S", {"x"}}}, {{"1", "B"}, {"2", "C"}, {"3", "D"}}, "T", "");
    auto c = make_corpus({d, make_doc("B"), make_doc("C"), make_doc("D")});
    CHECK_FALSE(filter_eligible(c, RelationMode::Semantic).contains("A"));
    CHECK_FALSE(filter_eligible(c, RelationMode::Citation).contains("A"));
  }

  TEST_CASE("semantic mode needs keywords; empty sections are pruned") {
    auto c = make_corpus({make_doc("A", {" "}), make_doc("B", {"x"}, {{"S", {"text", ""}}, {"Empty", {""}}})});
    auto kept = filter_eligible(c, RelationMode::Semantic);
    CHECK_FALSE(kept.contains("A"));
    REQUIRE(kept.contains("B"));
    REQUIRE(kept.at("B").sections.size() == 1);
    CHECK(kept.at("B").sections[0].paragraphs.size() == 1);
  }

  TEST_CASE("filter_eligible is idempotent on random corpora") {
    SplitMix64 rng(3);
    for (int round = 0; round < 30; ++round) {
      std::vector<Document> docs;
      const int n = 5 + static_cast<int>(rng.below(10));
      for (int i = 0; i < n; ++i) {
        std::vector<std::pair<std::string, std::string>> refs;
        const int nr = static_cast<int>(rng.below(6));
        for (int r = 0; r < nr; ++r) refs.emplace_back(std::to_string(r + 1), "D" + std::to_string(rng.below(n + 3)));
        std::vector<std::string> kw;
        if (rng.below(4)) kw.push_back("kw" + std::to_string(rng.below(3)));
        std::vector<testing::SectionSpec> secs;
        if (rng.below(5)) secs.push_back({"S", {rng.below(3) ? "text" : ""}});
        docs.push_back(make_doc("D" + std::to_string(i), kw, secs, refs, "T", rng.below(5) ? "abs" : ""));
      }
      auto c = make_corpus(docs);
      for (auto mode : {RelationMode::Semantic, RelationMode::Citation}) {
        auto once = filter_eligible(c, mode);
        auto twice = filter_eligible(once, mode);
        REQUIRE(once.size() == twice.size());
        for (std::size_t i = 0; i < once.size(); ++i) {
          CHECK(document_to_json(once.documents()[i]) == document_to_json(twice.documents()[i]));
        }
      }
    }
  }

  TEST_CASE("keywords normalize") {
    CHECK(normalize_keywords({"PCR", " pcr ", "Covid", ""}) == std::vector<std::string>{"covid", "pcr"});
  }

  TEST_CASE("sentence splitting protects abbreviations") {
    auto s = split_sentences("Smith et al. found X. Then Y happened! 3 more? yes.");
    REQUIRE(s.size() == 3);
    CHECK(s[0] == "Smith et al. found X.");
    CHECK(s[1] == "Then Y happened!");
    CHECK(s[2] == "3 more? yes.");
  }

  TEST_CASE("citation numbers expand lists and ranges") {
    CHECK(cited_numbers("see [3-5] and [7]") == std::vector<int>{3, 4, 5, 7});
    CHECK(cited_numbers("as in [3, 4]") == std::vector<int>{3, 4});
    CHECK(cited_numbers("range [2\xE2\x80\x93" "3]") == std::vector<int>{2, 3});
    CHECK(cited_numbers("no markers here").empty());
  }

  TEST_CASE("citation contexts: single resolved marker only") {
    auto src = make_doc("S", {"k"},
                        {{"Intro", {"X improves Y [3]. As shown in [3, 4], Z holds. Prior work [9] exists."}}},
                        {{"1", "EXT1"}, {"2", "EXT2"}, {"3", "P7"}, {"4", "P8"}, {"9", ""}});
    auto c = make_corpus({src, make_doc("P7"), make_doc("P8")});
    auto ctx = extract_citation_contexts(c.at("S"), c);
    REQUIRE(ctx.size() == 1);
    CHECK(ctx[0].target_doc_id == "P7");
    CHECK(ctx[0].sentence == "X improves Y [3].");
    CHECK(ctx[0].source_doc_id == "S");
  }

  TEST_CASE("multi-marker sentences yield nothing") {
    auto src = make_doc("S", {"k"}, {{"Intro", {"A [1,2] b. C [1-3] d."}}}, {{"1", "A1"}, {"2", "A2"}, {"3", "A3"}});
    auto c = make_corpus({src, make_doc("A1"), make_doc("A2"), make_doc("A3")});
    CHECK(extract_citation_contexts(c.at("S"), c).empty());
  }

  TEST_CASE("missing reference entry warns and is skipped") {
    auto src = make_doc("S", {"k"}, {{"Intro", {"Claim [12]."}}}, {{"1", "A1"}});
    auto c = make_corpus({src, make_doc("A1")});
    std::vector<std::string> warnings;
    CHECK(extract_citation_contexts(c.at("S"), c, {}, &warnings).empty());
    CHECK(warnings.size() == 1);
  }

  TEST_CASE("context targets exist in corpus and in references") {
    auto corpus = load_corpus(testing::toy_corpus_path());
    for (const auto& d : corpus) {
      for (const auto& ctx : extract_citation_contexts(d, corpus)) {
        CHECK(corpus.contains(ctx.target_doc_id));
        bool listed = false;
        for (const auto& r : d.references) listed = listed || (r.target_doc_id && *r.target_doc_id == ctx.target_doc_id);
        CHECK(listed);
      }
    }
  }
}
