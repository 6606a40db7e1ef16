#include <set>
#include <stdexcept>

#include "doctest.h"
#include "imqa/text.hpp"
#include "imqa/util.hpp"
#include "support.hpp"

using namespace imqa;

TEST_SUITE("util") {
  TEST_CASE("sha256 matches the published test vector") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  }

  TEST_CASE("trim, split and join") {
    CHECK(trim("  a b \n") == "a b");
    CHECK(split_whitespace(" a  b\tc\n") == std::vector<std::string>{"a", "b", "c"});
    CHECK(join({"a", "b"}, ", ") == "a, b");
    CHECK(contains_ci("Hello World", "WORLD"));
  }

  TEST_CASE("SplitMix64 is deterministic and below() stays in range") {
    SplitMix64 a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    SplitMix64 r(7);
    for (int i = 0; i < 2000; ++i) {
      auto v = r.below(13);
      CHECK(v < 13);
      double u = r.unit();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
    }
    CHECK(derive_seed(1, "x") == derive_seed(1, "x"));
    CHECK(derive_seed(1, "x") != derive_seed(1, "y"));
    CHECK(derive_seed(1, "x") != derive_seed(2, "x"));
  }

  TEST_CASE("parallel_map keeps index order and rethrows") {
    auto out = parallel_map<int>(100, 4, [](std::size_t i) { return static_cast<int>(i * i); });
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == static_cast<int>(i * i));
    CHECK_THROWS_AS(parallel_map<int>(10, 3,
                                      [](std::size_t i) -> int {
                                        if (i == 5) throw std::runtime_error("boom");
                                        return 0;
                                      }),
                    std::runtime_error);
  }

  TEST_CASE("atomic write and JSONL round trip") {
    auto dir = testing::temp_dir("util");
    write_jsonl(dir / "a.jsonl", {json{{"x", 1}}, json{{"x", 2}}});
    auto rows = read_jsonl(dir / "a.jsonl");
    REQUIRE(rows.size() == 2);
    CHECK(rows[1]["x"] == 2);
    write_file_atomic(dir / "b.jsonl", "{\"x\":1}\nnot json\n");
    try {
      read_jsonl(dir / "b.jsonl");
      FAIL("expected a parse error");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
  }
}

TEST_SUITE("text") {
  TEST_CASE("NFKC folds compatibility characters") {
    CHECK(text::nfkc("\xEF\xAC\x81") == "fi");       // U+FB01 ligature
    CHECK(text::nfkc("\xEF\xBC\xA1") == "A");        // fullwidth A
  }

  TEST_CASE("dash and quote variants unify") {
    CHECK(text::unify_punctuation("a\xE2\x80\x93" "b") == "a-b");   // en dash
    CHECK(text::unify_punctuation("a\xE2\x80\x94" "b") == "a-b");   // em dash
    CHECK(text::unify_punctuation("\xE2\x80\x9Cq\xE2\x80\x9D") == "\"q\"");
    CHECK(text::unify_punctuation("it\xE2\x80\x99s") == "it's");
  }

  TEST_CASE("whitespace collapses including NBSP") {
    CHECK(text::collapse_whitespace("  a \t\n b\xC2\xA0\xC2\xA0" "c ") == "a b c");
  }

  TEST_CASE("metric tokens lowercase and strip punctuation") {
    CHECK(text::metric_tokens("Hello, World!") == std::vector<std::string>{"hello", "world"});
    CHECK(text::metric_tokens("  ").empty());
    CHECK(text::metric_tokens("A-b c.d") == std::vector<std::string>{"a", "b", "c", "d"});
  }
}
