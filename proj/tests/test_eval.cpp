#include <algorithm>
#include <cmath>
#include <regex>
#include <set>
#include <sstream>

#include "doctest.h"
#include "imqa/eval.hpp"
#include "imqa/mock.hpp"
#include "support.hpp"

using namespace imqa;
using testing::ScriptedGenerator;

namespace {

Ranking ranking_with_gold_at(std::size_t rank, std::size_t n = 10) {
  std::vector<std::pair<std::string, double>> s;
  for (std::size_t i = 1; i <= n; ++i) s.push_back({i == rank ? "G" : "D" + std::to_string(i), 1.0 - 0.01 * i});
  return rank_by_scores(s);
}

// Whitespace split, surrounding punctuation stripped, first purely numeric
// token whose value is 0, 0.5 or 1.
std::optional<double> oracle_judge(const std::string& s) {
  std::istringstream in(s);
  std::string w;
  static const std::regex num("^[0-9]+(\\.[0-9]+)?$");
  while (in >> w) {
    while (!w.empty() && std::string("()[]:;,\"'!?.").find(w.back()) != std::string::npos) w.pop_back();
    while (!w.empty() && std::string("()[]:;,\"'!?").find(w.front()) != std::string::npos) w.erase(0, 1);
    if (!std::regex_match(w, num)) continue;
    const double v = std::stod(w);
    if (v == 0 || v == 0.5 || v == 1) return v;
  }
  return std::nullopt;
}

MhqaItem qa_item(const std::string& id, const std::string& q, const std::string& a, const std::string& target = "T") {
  MhqaItem it;
  it.item_id = id;
  it.source_doc_id = "S";
  it.target_doc_id = target;
  it.combined_question = q;
  it.combined_answer = a;
  return it;
}

Corpus qa_corpus() {
  return testing::make_corpus({testing::make_doc("S", {"k"}, {{"Intro", {"Source text."}}}),
                               testing::make_doc("T", {"k"}, {{"Results", {"Target text."}}}),
                               testing::make_doc("W", {"k"}, {{"Results", {"Wrong text."}}})});
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("ranking: sort contract and ties") {
    auto r = rank_by_scores({{"b", 0.5}, {"a", 0.1}, {"c", 0.9}});
    CHECK(r.entries[0].first == "c");
    CHECK(r.entries[1].first == "b");
    CHECK(r.entries[2].first == "a");
    auto t = rank_by_scores({{"z", 0.5}, {"m", 0.5}, {"a", 0.5}});
    CHECK(t.entries[0].first == "a");
    CHECK(t.rank_of("z") == 3);
    CHECK_THROWS_AS(t.rank_of("q"), std::invalid_argument);
  }

  TEST_CASE("rank_candidates: self match first and order invariance") {
    std::vector<Document> docs;
    for (int i = 0; i < 8; ++i)
      docs.push_back(testing::make_doc("D" + std::to_string(i), {"k"}, {{"R", {"x"}}}, {{"1", "E"}}, "Paper " + std::to_string(i),
                                       "Abstract about topic number " + std::to_string(i) + "."));
    auto corpus = testing::make_corpus(docs);
    HashEmbedder emb(64);
    DocIndex idx(corpus, emb);
    const auto& gold = corpus.at("D3");
    RetrievalEnvironment env{EnvironmentKind::PaperCluster, {"D0", "D1", "D2", "D3", "D4"}, "D3"};
    auto r = rank_candidates(gold.title + "\n" + gold.abstract, env, idx, emb);
    CHECK(r.entries.size() == 5);
    CHECK(r.entries[0].first == "D3");
    for (std::size_t i = 0; i + 1 < r.entries.size(); ++i) CHECK(r.entries[i].second >= r.entries[i + 1].second);
    std::reverse(env.candidate_doc_ids.begin(), env.candidate_doc_ids.end());
    auto r2 = rank_candidates("Abstract about topic", env, idx, emb);
    std::rotate(env.candidate_doc_ids.begin(), env.candidate_doc_ids.begin() + 2, env.candidate_doc_ids.end());
    CHECK(rank_candidates("Abstract about topic", env, idx, emb).entries == r2.entries);

    env.candidate_doc_ids.push_back("NOPE");
    CHECK_THROWS(rank_candidates("q", env, idx, emb));
  }

  TEST_CASE("full-text chunks: best chunk scores the document") {
    std::string long_para;
    for (int i = 0; i < 40; ++i) long_para += "filler" + std::to_string(i) + " ";
    auto corpus = testing::make_corpus({testing::make_doc("A", {"k"}, {{"R", {long_para, "needle haystack"}}})});
    HashEmbedder emb(64);
    DocIndex idx(corpus, emb, DocRepresentation::FullTextChunkMax, 10);
    CHECK(idx.vectors("A").size() >= 4);
    CHECK_THROWS_AS(idx.vectors("B"), std::invalid_argument);
  }

  TEST_CASE("hit and mrr examples") {
    CHECK(hit_at_k(ranking_with_gold_at(1), "G", 1) == 1);
    CHECK(hit_at_k(ranking_with_gold_at(4), "G", 3) == 0);
    std::vector<Ranking> rs;
    std::vector<std::string> gs(10, "G");
    for (std::size_t r : {1, 2, 3, 1, 2, 3, 4, 5, 7, 10}) rs.push_back(ranking_with_gold_at(r));
    CHECK(mean_hit_at_k(rs, gs, 3) == doctest::Approx(0.6));

    std::vector<Ranking> three = {ranking_with_gold_at(2), ranking_with_gold_at(3), ranking_with_gold_at(6)};
    std::vector<std::string> g3(3, "G");
    CHECK(std::abs(mrr_at_k(three, g3, 5) - (0.5 + 1.0 / 3.0) / 3.0) < 1e-12);
    CHECK(mrr_at_k(three, g3, 5) == doctest::Approx(0.27778).epsilon(1e-4));
    std::vector<Ranking> tops(4, ranking_with_gold_at(1));
    CHECK(mrr_at_k(tops, std::vector<std::string>(4, "G"), 5) == 1.0);
    std::vector<Ranking> lows(4, ranking_with_gold_at(9));
    CHECK(mrr_at_k(lows, std::vector<std::string>(4, "G"), 5) == 0.0);

    CHECK_THROWS_AS(mrr_at_k(three, {"G"}, 5), std::invalid_argument);
    CHECK_THROWS_AS(mean_hit_at_k(three, g3, 0), std::invalid_argument);
    CHECK_THROWS_AS(hit_at_k(ranking_with_gold_at(1), "missing", 1), std::invalid_argument);
  }

  TEST_CASE("hit is monotone in k and bounds mrr") {
    SplitMix64 rng(13);
    for (int round = 0; round < 100; ++round) {
      std::vector<Ranking> rs;
      for (int i = 0; i < 12; ++i) rs.push_back(ranking_with_gold_at(1 + rng.below(20), 20));
      std::vector<std::string> gs(rs.size(), "G");
      double prev = 0;
      for (std::size_t k = 1; k <= 20; ++k) {
        const double h = mean_hit_at_k(rs, gs, k);
        CHECK(h >= prev);
        CHECK(mrr_at_k(rs, gs, k) <= h + 1e-12);
        prev = h;
      }
      CHECK(prev == 1.0);
    }
  }

  TEST_CASE("token F1 and ROUGE-L examples") {
    CHECK(token_f1("The cat sat.", "the cat sat") == 1.0);
    CHECK(token_f1("dogs bark", "cats meow") == 0.0);
    CHECK(token_f1("a b", "a b c") == doctest::Approx(0.8));
    CHECK(token_f1("", "") == 1.0);
    CHECK(token_f1("", "x") == 0.0);
    CHECK(token_f1("a a b", "a b b") == doctest::Approx(2.0 / 3.0));
    CHECK(rouge_l("a c", "a b c") == 0.8);
    CHECK(rouge_l("x y z", "x y z") == 1.0);
    CHECK(rouge_l("p q", "r s") == 0.0);
    CHECK(rouge_l("c b a", "a b c") == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("metrics are symmetric and bounded") {
    SplitMix64 rng(31);
    const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "The", "cat,"};
    auto sent = [&] {
      std::string s;
      for (int i = 0; i < static_cast<int>(rng.below(8)); ++i) s += vocab[rng.below(vocab.size())] + " ";
      return s;
    };
    for (int round = 0; round < 300; ++round) {
      const auto x = sent(), y = sent();
      CHECK(token_f1(x, y) == doctest::Approx(token_f1(y, x)));
      CHECK(rouge_l(x, y) == doctest::Approx(rouge_l(y, x)));
      CHECK(rouge_l(x, y) <= token_f1(x, y) + 1e-12);
      CHECK(token_f1(x, y) >= 0.0);
      CHECK(token_f1(x, y) <= 1.0);
    }
  }

  TEST_CASE("judge parse agrees with an independent scan") {
    const std::vector<std::string> fixtures = {"Score: 1 (exact)",
                                               "0.5",
                                               "I would rate this 0.5 out of 1.",
                                               "Grade 3? No: 0.",
                                               "The answer matches. Final: 1",
                                               "no score here",
                                               "Score 10/10",
                                               "Score: 0",
                                               "After 2 checks, 1."};
    for (const auto& f : fixtures) {
      INFO(f);
      CHECK(parse_judge_score(f) == oracle_judge(f));
    }
    CHECK(parse_judge_score("Score: 1 (exact)") == std::optional<double>(1.0));
    CHECK_FALSE(parse_judge_score("no score here").has_value());
  }

  TEST_CASE("judge prompt and mock judge") {
    const auto p = render_judge_prompt("Q?", "Gold.", "Pred.");
    CHECK(p.find("Question: Q?") != std::string::npos);
    CHECK(p.find("Answer: Gold.") != std::string::npos);
    CHECK(p.find("Prediction: Pred.") != std::string::npos);
    MockGenerator mock(1);
    CHECK(llm_judge("Q?", "Twenty minutes.", "Twenty minutes.", mock) == std::optional<double>(1.0));
    ScriptedGenerator half([](const std::string&, const TextGenParams&) { return std::string("0.5"); });
    CHECK(llm_judge("Q", "a", "b", half) == std::optional<double>(0.5));
  }

  TEST_CASE("answer prompt carries both papers and the question") {
    auto c = qa_corpus();
    const auto p = render_answer_prompt(c.at("S"), c.at("T"), "What links them?");
    CHECK(p.find("Source text.") < p.find("Target text."));
    CHECK(p.find("### Question\nWhat links them?") != std::string::npos);
  }

  TEST_CASE("qa: echoing answerer hits the ceiling") {
    auto c = qa_corpus();
    std::vector<MhqaItem> items = {qa_item("i1", "Q1?", "Alpha beta."), qa_item("i2", "Q2?", "Gamma.")};
    ScriptedGenerator answerer([&](const std::string& p, const TextGenParams&) {
      return std::string(p.find("Q1?") != std::string::npos ? "Alpha beta." : "Gamma.");
    });
    MockGenerator judge(0);
    auto run = run_qa_setting(items, QaSetting::Oracle, c, {}, answerer, judge);
    CHECK(run.scores.accuracy == std::optional<double>(1.0));
    CHECK(run.scores.token_f1 == std::optional<double>(1.0));
    CHECK(run.scores.rouge_l == std::optional<double>(1.0));
  }

  TEST_CASE("qa: scripted judge scores average to 0.625") {
    auto c = qa_corpus();
    std::vector<MhqaItem> items = {qa_item("i1", "Q1?", "a"), qa_item("i2", "Q2?", "a"), qa_item("i3", "Q3?", "a"),
                                   qa_item("i4", "Q4?", "a"), qa_item("i5", "Q5?", "a")};
    ScriptedGenerator answerer([](const std::string&, const TextGenParams&) { return std::string("a"); });
    ScriptedGenerator judge([](const std::string& p, const TextGenParams&) {
      if (p.find("Q1?") != std::string::npos || p.find("Q2?") != std::string::npos) return std::string("Score: 1");
      if (p.find("Q3?") != std::string::npos) return std::string("Score: 0.5");
      if (p.find("Q4?") != std::string::npos) return std::string("Score: 0");
      return std::string("unsure");
    });
    auto run = run_qa_setting(items, QaSetting::Oracle, c, {}, answerer, judge, {}, 2);
    CHECK(run.scores.accuracy == std::optional<double>(0.625));
    CHECK(run.scores.judged == 4);
    CHECK(run.scores.judge_failures == 1);
    CHECK(run.scores.items == 5);
  }

  TEST_CASE("qa: provider errors stay per item") {
    auto c = qa_corpus();
    std::vector<MhqaItem> items = {qa_item("i1", "Q1?", "a"), qa_item("i2", "BOOM", "a")};
    ScriptedGenerator answerer([](const std::string& p, const TextGenParams&) {
      if (p.find("BOOM") != std::string::npos) throw ProviderError("backend down");
      return std::string("a");
    });
    MockGenerator judge(0);
    auto run = run_qa_setting(items, QaSetting::Oracle, c, {}, answerer, judge);
    CHECK(run.scores.provider_failures == 1);
    CHECK(run.scores.scored == 1);
    CHECK(run.log[1].error.has_value());
    CHECK(run.scores.accuracy == std::optional<double>(1.0));
    auto missing = run_qa_setting(items, QaSetting::Realistic, c, {{"i1", "T"}}, answerer, judge);
    CHECK(missing.scores.provider_failures == 1);
    CHECK(missing.log[1].error->find("no retrieval result") != std::string::npos);
  }

  TEST_CASE("qa: realistic with perfect retrieval equals oracle") {
    auto c = qa_corpus();
    std::vector<MhqaItem> items = {qa_item("i2", "What is in the target?", "Target text."),
                                   qa_item("i1", "What is in the source?", "Source text.")};
    MockGenerator mock(4);
    auto oracle = run_qa_setting(items, QaSetting::Oracle, c, {}, mock, mock);
    auto realistic = run_qa_setting(items, QaSetting::Realistic, c, {{"i1", "T"}, {"i2", "T"}}, mock, mock);
    CHECK(oracle.log == realistic.log);
    CHECK(oracle.scores.to_json() == realistic.scores.to_json());
    CHECK(oracle.log[0].item_id == "i1");
    auto wrong = run_qa_setting(items, QaSetting::Realistic, c, {{"i1", "W"}, {"i2", "W"}}, mock, mock);
    CHECK(wrong.log[0].supplied_doc_id == "W");
  }

  TEST_CASE("environments") {
    std::vector<Document> docs;
    for (int i = 0; i < 40; ++i) docs.push_back(testing::make_doc("D" + std::to_string(100 + i)));
    auto c = testing::make_corpus(docs);
    PaperCluster cl{"C", "D100", "D101", {"D101", "D102", "D103"}, ClusterOrigin::Keyword};
    auto pc = paper_cluster_environment(cl);
    CHECK(pc.gold_doc_id == "D101");
    CHECK(pc.candidate_doc_ids.size() == 3);

    auto rc = random_cluster_environment("D101", 30, c, "D100", 9, "C");
    std::set<std::string> m(rc.candidate_doc_ids.begin(), rc.candidate_doc_ids.end());
    CHECK(m.size() == 30);
    CHECK(m.count("D101"));
    CHECK_FALSE(m.count("D100"));
    CHECK(random_cluster_environment("D101", 30, c, "D100", 9, "C").candidate_doc_ids == rc.candidate_doc_ids);
    CHECK_THROWS(random_cluster_environment("D101", 40, c, "D100", 9, "C"));

    auto fc = full_corpus_environment("D101", c, "D100");
    CHECK(fc.candidate_doc_ids.size() == 39);
  }
}
