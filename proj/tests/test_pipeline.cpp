#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "imqa/pipeline.hpp"
#include "support.hpp"

using namespace imqa;
namespace fs = std::filesystem;

namespace {

json toy_json() {
  std::ifstream in(fs::path(IMQA_TEST_DATA_DIR) / "toy_config.json");
  return json::parse(in);
}

PipelineConfig toy_config(const fs::path& out) {
  json j = toy_json();
  j["output_dir"] = out.string();
  return PipelineConfig::from_json(j, IMQA_TEST_DATA_DIR);
}

Pipeline toy_pipeline(const PipelineConfig& cfg) { return Pipeline(cfg, make_providers(cfg)); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::string l;
  std::size_t n = 0;
  while (std::getline(in, l))
    if (!l.empty()) ++n;
  return n;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config: unknown keys, ranges, missing endpoints") {
    json j = toy_json();
    j["colour"] = "blue";
    CHECK_THROWS_AS(PipelineConfig::from_json(j, IMQA_TEST_DATA_DIR), ConfigError);

    j = toy_json();
    j["tau"] = 1.5;
    try {
      PipelineConfig::from_json(j, IMQA_TEST_DATA_DIR);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("'tau'") != std::string::npos);
    }

    j = toy_json();
    j["mock_providers"] = false;
    CHECK_THROWS_AS(PipelineConfig::from_json(j, IMQA_TEST_DATA_DIR), ConfigError);

    j = toy_json();
    j["mode"] = "telepathy";
    CHECK_THROWS_AS(PipelineConfig::from_json(j, IMQA_TEST_DATA_DIR), ConfigError);

    j = toy_json();
    j.erase("corpus");
    CHECK_THROWS_AS(PipelineConfig::from_json(j, IMQA_TEST_DATA_DIR), ConfigError);
  }

  TEST_CASE("config: relative paths resolve and digest ignores plumbing") {
    auto a = toy_config("/tmp/a");
    auto b = toy_config("/tmp/b");
    CHECK(a.corpus.is_absolute());
    CHECK(fs::exists(a.corpus));
    b.workers = 4;
    CHECK(a.digest() == b.digest());
    b.tau = 0.4;
    CHECK(a.digest() != b.digest());
    auto round = PipelineConfig::from_json(a.to_json());
    CHECK(round.digest() == a.digest());
  }

  TEST_CASE("config: remote endpoints take the key from the environment only") {
    json j = toy_json();
    j["mock_providers"] = false;
    j["generator"] = {{"base_url", "http://127.0.0.1:9"}, {"model", "m"}, {"api_key_env", "IMQA_TEST_KEY"}};
    j["embedder"] = {{"base_url", "http://127.0.0.1:9"}, {"model", "e"}, {"dimension", 8}};
    auto cfg = PipelineConfig::from_json(j, IMQA_TEST_DATA_DIR);
    const auto dumped = cfg.to_json().dump();
    CHECK(dumped.find("IMQA_TEST_KEY") != std::string::npos);
    j["generator"]["api_key"] = "literal";
    CHECK_THROWS_AS(PipelineConfig::from_json(j, IMQA_TEST_DATA_DIR), ConfigError);
  }

  TEST_CASE("stage graph") {
    for (Stage s : kAllStages) CHECK(stage_from_string(to_string(s)) == s);
    CHECK_THROWS(stage_from_string("nope"));
    CHECK(stage_dependencies(Stage::Ingest).empty());
    CHECK(stage_dependencies(Stage::Split) == std::vector<Stage>{Stage::Mhqa});
  }

  TEST_CASE("full toy run, rerun no-op, staleness and force") {
    const auto dir = testing::temp_dir("pipe");
    auto cfg = toy_config(dir);
    auto p = toy_pipeline(cfg);
    for (Stage s : kAllStages) CHECK(p.status(s) == StageStatus::Missing);

    CHECK_THROWS_AS(p.run(Stage::Shqa), StageError);
    try {
      p.run(Stage::Cluster);
    } catch (const StageError& e) {
      CHECK(std::string(e.what()).rfind("cluster: ", 0) == 0);
    }

    auto results = p.run_all();
    for (const auto& r : results) CHECK_FALSE(r.skipped);
    for (Stage s : kAllStages) {
      CHECK(p.status(s) == StageStatus::Current);
      CHECK(fs::exists(dir / "manifests" / (to_string(s) + ".json")));
    }

    auto mh = p.manifest(Stage::Mhqa)->counts;
    CHECK(mh.at("candidates_in").get<std::size_t>() ==
          mh.at("pre_rejected").get<std::size_t>() + mh.at("parse_failures").get<std::size_t>() +
              mh.at("validation_rejected").get<std::size_t>() + mh.at("items_out").get<std::size_t>());
    CHECK(line_count(dir / "dataset.jsonl") == mh.at("items_out").get<std::size_t>());
    CHECK(line_count(dir / "dev.jsonl") + line_count(dir / "test.jsonl") == line_count(dir / "dataset.jsonl"));

    std::map<Stage, std::string> bytes;
    for (Stage s : kAllStages) bytes[s] = slurp(dir / "manifests" / (to_string(s) + ".json"));
    for (const auto& r : p.run_all()) CHECK(r.skipped);
    for (Stage s : kAllStages) CHECK(slurp(dir / "manifests" / (to_string(s) + ".json")) == bytes[s]);

    auto report = render_report(dir);
    CHECK(report.find("conservation") != std::string::npos);
    CHECK(report.find("[holds]") != std::string::npos);
    CHECK(report.find("document representation: title_abstract") != std::string::npos);

    auto tau_cfg = cfg;
    tau_cfg.tau = 0.35;
    auto q = toy_pipeline(tau_cfg);
    CHECK(q.status(Stage::Ingest) == StageStatus::Current);
    CHECK(q.status(Stage::Shqa) == StageStatus::Current);
    for (Stage s : {Stage::Relate, Stage::Cluster, Stage::Mhqa, Stage::Split, Stage::EvalRetrieval, Stage::EvalQa,
                    Stage::Stats})
      CHECK(q.status(s) == StageStatus::Stale);
    CHECK_THROWS_AS(q.run(Stage::Cluster), StageError);

    auto forced = p.run(Stage::Stats, true);
    CHECK_FALSE(forced.skipped);
    CHECK(p.status(Stage::Stats) == StageStatus::Current);

    // tampering with an upstream artifact makes its consumers stale
    {
      std::ofstream f(dir / "relations.jsonl", std::ios::app);
      f << "\n";
    }
    CHECK(p.status(Stage::Relate) == StageStatus::Stale);
    CHECK(p.status(Stage::Cluster) == StageStatus::Stale);
    fs::remove_all(dir);
  }

  TEST_CASE("a held lock blocks a second runner") {
    const auto dir = testing::temp_dir("lock");
    auto p = toy_pipeline(toy_config(dir));
    const int fd = ::open((dir / ".lock").c_str(), O_RDWR | O_CREAT, 0644);
    REQUIRE(fd >= 0);
    REQUIRE(::flock(fd, LOCK_EX | LOCK_NB) == 0);
    try {
      p.run(Stage::Ingest);
      FAIL("expected StageError");
    } catch (const StageError& e) {
      CHECK(std::string(e.what()).find("locked") != std::string::npos);
    }
    ::flock(fd, LOCK_UN);
    ::close(fd);
    CHECK_NOTHROW(p.run(Stage::Ingest));
    fs::remove_all(dir);
  }

  TEST_CASE("missing corpus is a stage error") {
    const auto dir = testing::temp_dir("nocorpus");
    auto cfg = toy_config(dir);
    cfg.corpus = dir / "absent.jsonl";
    auto p = toy_pipeline(cfg);
    CHECK_THROWS_WITH_AS(p.run(Stage::Ingest), doctest::Contains("ingest: "), StageError);
    CHECK_THROWS(render_report(dir));
    fs::remove_all(dir);
  }
}
