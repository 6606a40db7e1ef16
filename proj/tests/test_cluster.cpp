#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "imqa/cluster.hpp"
#include "support.hpp"

using namespace imqa;

namespace {

// Source S with keyword "k"; n_overlap docs K00.. share it, the rest R00.. do not.
Corpus keyword_corpus(int n_overlap, int n_rest) {
  std::vector<Document> docs{testing::make_doc("S", {"k", "extra"}), testing::make_doc("T", {"k"})};
  char buf[16];
  for (int i = 0; i < n_overlap; ++i) {
    std::snprintf(buf, sizeof buf, "K%02d", i);
    // every third shares both keywords so the overlap ranking matters
    docs.push_back(testing::make_doc(buf, i % 3 == 0 ? std::vector<std::string>{"k", "extra"} : std::vector<std::string>{"k"}));
  }
  for (int i = 0; i < n_rest; ++i) {
    std::snprintf(buf, sizeof buf, "R%02d", i);
    docs.push_back(testing::make_doc(buf, {"other"}));
  }
  return testing::make_corpus(docs);
}

std::vector<const Document*> keyword_list(const Corpus& c) {
  std::vector<const Document*> out;
  for (const auto& d : c)
    if (d.doc_id[0] == 'K') out.push_back(&d);
  return out;
}

QaTriplet qa(const std::string& doc, const std::string& q) { return {q, "ans", "ev", doc, "Results"}; }

std::string qa_text(const std::string& q) { return render_for_embedding(EmbedLevel::QA, q, "ans", "ev"); }

}  // namespace

TEST_SUITE("cluster") {
  TEST_CASE("40 keyword candidates: top 29 by overlap plus the target") {
    auto c = keyword_corpus(40, 5);
    auto cl = build_cluster(c.at("S"), c.at("T"), keyword_list(c), c, 1, "C1");
    REQUIRE(cl.member_doc_ids.size() == 30);
    CHECK_NOTHROW(cl.validate(30));
    std::set<std::string> m(cl.member_doc_ids.begin(), cl.member_doc_ids.end());
    // 14 double-overlap docs (K00, K03, ... K39) always make it
    for (int i = 0; i < 40; i += 3) CHECK(m.count((i < 10 ? "K0" : "K") + std::to_string(i)));
    for (const auto& id : m) CHECK(id[0] != 'R');
    CHECK(m.count("T"));
    CHECK_FALSE(m.count("S"));
    CHECK(std::is_sorted(cl.member_doc_ids.begin(), cl.member_doc_ids.end()));
  }

  TEST_CASE("10 keyword candidates are padded with 19 random non-candidates") {
    auto c = keyword_corpus(10, 40);
    auto cl = build_cluster(c.at("S"), c.at("T"), keyword_list(c), c, 5, "C2");
    std::set<std::string> m(cl.member_doc_ids.begin(), cl.member_doc_ids.end());
    CHECK(m.size() == 30);
    CHECK(std::count_if(m.begin(), m.end(), [](const std::string& s) { return s[0] == 'K'; }) == 10);
    CHECK(std::count_if(m.begin(), m.end(), [](const std::string& s) { return s[0] == 'R'; }) == 19);
    CHECK_FALSE(m.count("S"));

    auto again = build_cluster(c.at("S"), c.at("T"), keyword_list(c), c, 5, "C2");
    CHECK(again.member_doc_ids == cl.member_doc_ids);
    auto other = build_cluster(c.at("S"), c.at("T"), keyword_list(c), c, 6, "C2");
    auto other_id = build_cluster(c.at("S"), c.at("T"), keyword_list(c), c, 5, "C3");
    // 19 of 40 pads: some seed must pick a different set
    CHECK((other.member_doc_ids != cl.member_doc_ids || other_id.member_doc_ids != cl.member_doc_ids));
  }

  TEST_CASE("corpus too small to fill the cluster") {
    auto c = keyword_corpus(5, 10);
    CHECK_THROWS_AS(build_cluster(c.at("S"), c.at("T"), keyword_list(c), c, 1, "C4"), ClusterError);
    CHECK(build_cluster(c.at("S"), c.at("T"), keyword_list(c), c, 1, "C4", 16).member_doc_ids.size() == 16);
  }

  TEST_CASE("random corpora always give valid clusters") {
    SplitMix64 rng(8);
    for (int round = 0; round < 50; ++round) {
      auto c = keyword_corpus(static_cast<int>(rng.below(50)), 30 + static_cast<int>(rng.below(20)));
      auto cl = build_cluster(c.at("S"), c.at("T"), keyword_list(c), c, rng.next(), "R" + std::to_string(round));
      CHECK_NOTHROW(cl.validate(30));
    }
  }

  TEST_CASE("validate rejects broken clusters") {
    PaperCluster c{"X", "S", "T", {"A", "T"}, ClusterOrigin::Keyword};
    CHECK_NOTHROW(c.validate(2));
    CHECK_THROWS_AS(c.validate(3), ClusterError);
    c.member_doc_ids = {"A", "A", "T"};
    CHECK_THROWS_AS(c.validate(0), ClusterError);
    c.member_doc_ids = {"A", "S", "T"};
    CHECK_THROWS_AS(c.validate(0), ClusterError);
    c.member_doc_ids = {"A", "B"};
    CHECK_THROWS_AS(c.validate(0), ClusterError);
  }

  TEST_CASE("citation cluster is the in-corpus cited pool") {
    std::vector<std::pair<std::string, std::string>> refs;
    std::vector<Document> docs;
    for (int i = 0; i < 12; ++i) {
      const std::string id = "C" + std::to_string(i);
      refs.push_back({std::to_string(i + 1), id});
      docs.push_back(testing::make_doc(id));
    }
    refs.push_back({"13", "EXTERNAL"});
    docs.push_back(testing::make_doc("S", {"k"}, {{"Intro", {"x"}}}, refs));
    auto c = testing::make_corpus(docs);
    auto cl = citation_cluster(c.at("S"), c.at("C3"), c, "CC");
    CHECK(cl.member_doc_ids.size() == 12);
    CHECK(cl.origin == ClusterOrigin::CitationPool);
    std::vector<std::string> expected;
    for (int i = 0; i < 12; ++i) expected.push_back("C" + std::to_string(i));
    std::sort(expected.begin(), expected.end());
    CHECK(cl.member_doc_ids == expected);

    auto lone = testing::make_corpus({testing::make_doc("S2", {"k"}, {{"Intro", {"x"}}}, {{"1", "C0"}}), testing::make_doc("C0"),
                                      testing::make_doc("Z")});
    CHECK_THROWS_AS(citation_cluster(lone.at("S2"), lone.at("Z"), lone, "CZ"), ClusterError);
  }

  TEST_CASE("retrieval QA: most distant target QA wins") {
    testing::TableEmbedder emb(2);
    emb.set(qa_text("r1"), {1, 0});
    emb.set(qa_text("q1"), {0.9, std::sqrt(1 - 0.81)});
    emb.set(qa_text("q2"), {0.1, std::sqrt(1 - 0.01)});
    auto c = testing::make_corpus({testing::make_doc("T"), testing::make_doc("O")});
    PaperCluster cl{"X", "S", "T", {"O", "T"}, ClusterOrigin::Keyword};
    ShqaByDoc shqa{{"T", {qa("T", "q1"), qa("T", "q2")}}, {"O", {qa("O", "r1")}}};
    auto r = select_retrieval_qa(c.at("T"), cl, shqa, emb);
    CHECK(r.question == "q2");
    CHECK(r.target_doc_id == "T");
    CHECK(r.distinctiveness == doctest::Approx(0.9));

    ShqaByDoc single{{"T", {qa("T", "q1")}}, {"O", {qa("O", "r1")}}};
    CHECK(select_retrieval_qa(c.at("T"), cl, single, emb).question == "q1");

    ShqaByDoc none{{"O", {qa("O", "r1")}}};
    CHECK_THROWS_AS(select_retrieval_qa(c.at("T"), cl, none, emb), ClusterError);
  }

  TEST_CASE("retrieval QA: duplicated distractor doubles its contribution") {
    testing::TableEmbedder emb(3);
    emb.set(qa_text("r1"), {1, 0, 0});
    emb.set(qa_text("q1"), {0.8, 0.6, 0});
    emb.set(qa_text("q2"), {0.2, 0, std::sqrt(0.96)});
    auto c = testing::make_corpus({testing::make_doc("T"), testing::make_doc("O")});
    PaperCluster cl{"X", "S", "T", {"O", "T"}, ClusterOrigin::Keyword};
    ShqaByDoc once{{"T", {qa("T", "q1"), qa("T", "q2")}}, {"O", {qa("O", "r1")}}};
    ShqaByDoc twice{{"T", {qa("T", "q1"), qa("T", "q2")}}, {"O", {qa("O", "r1"), qa("O", "r1")}}};
    auto a = select_retrieval_qa(c.at("T"), cl, once, emb);
    auto b = select_retrieval_qa(c.at("T"), cl, twice, emb);
    CHECK(a.question == b.question);
    CHECK(a.question == "q2");
    CHECK(a.distinctiveness == doctest::Approx(0.8));
    CHECK(b.distinctiveness == doctest::Approx(1.6));
  }

  TEST_CASE("retrieval QA is invariant to member and QA order") {
    SplitMix64 rng(4);
    for (int round = 0; round < 40; ++round) {
      HashEmbedder emb(8);
      std::vector<std::string> members{"A", "B", "C", "T"};
      ShqaByDoc shqa;
      for (const auto& m : members)
        for (int i = 0; i < 1 + static_cast<int>(rng.below(4)); ++i)
          shqa[m].push_back(qa(m, m + " question " + std::to_string(rng.below(1000))));
      auto c = testing::make_corpus({testing::make_doc("A"), testing::make_doc("B"), testing::make_doc("C"), testing::make_doc("T")});
      PaperCluster cl{"X", "S", "T", members, ClusterOrigin::Keyword};
      auto r1 = select_retrieval_qa(c.at("T"), cl, shqa, emb);
      std::reverse(cl.member_doc_ids.begin(), cl.member_doc_ids.end());
      for (auto& [_, v] : shqa) std::reverse(v.begin(), v.end());
      auto r2 = select_retrieval_qa(c.at("T"), cl, shqa, emb);
      CHECK(r1.question == r2.question);
      CHECK(r1.distinctiveness == r2.distinctiveness);
      CHECK(r1.question.rfind("T ", 0) == 0);
    }
  }

  TEST_CASE("cluster ids and JSON round trip") {
    RelationCandidate rc;
    rc.source_doc_id = "S";
    rc.target_doc_id = "T";
    rc.source_section = "A";
    rc.target_section = "B";
    const auto id = cluster_id_for(rc);
    CHECK(id == cluster_id_for(rc));
    rc.target_section = "C";
    CHECK(id != cluster_id_for(rc));

    PaperCluster cl{id, "S", "T", {"A", "T"}, ClusterOrigin::CitationPool};
    RetrievalQa r{"q", "a", "T", "Results", 1.5};
    const json j = cluster_to_json(cl, r);
    auto back = cluster_from_json(j);
    CHECK(back.member_doc_ids == cl.member_doc_ids);
    CHECK(back.origin == ClusterOrigin::CitationPool);
    auto rb = retrieval_qa_from_json(j);
    CHECK(rb.question == "q");
    CHECK(rb.distinctiveness == 1.5);
  }
}
