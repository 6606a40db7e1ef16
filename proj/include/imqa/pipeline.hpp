#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "imqa/corpus.hpp"
#include "imqa/eval.hpp"
#include "imqa/providers.hpp"
#include "imqa/shqa.hpp"

namespace imqa {

// Error text is always prefixed with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what) : std::runtime_error(stage + ": " + what) {}
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EndpointConfig {
  std::string base_url;
  std::string model;
  std::string api_key_env;  // name of the environment variable holding the key
  std::size_t dimension = 0;  // embedder only
};

struct PipelineConfig {
  std::filesystem::path corpus;
  RelationMode mode = RelationMode::Semantic;
  double tau = kDefaultTau;
  std::size_t k_sections = 3;
  double filter_fraction = 0.10;
  std::size_t cluster_size = 30;
  std::size_t diversity_cap = 3;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;

  EvidenceMatch evidence_match = EvidenceMatch::Normalized;
  LengthUnit length_unit = LengthUnit::Tokens;
  DocRepresentation retriever_representation = DocRepresentation::TitleAbstract;
  std::size_t chunk_words = 256;
  double test_fraction = 0.2;
  double temperature = 0.0;
  unsigned workers = 1;
  std::ptrdiff_t max_in_flight = 8;
  bool mock_providers = false;
  std::optional<EndpointConfig> generator;
  std::optional<EndpointConfig> embedder;
  std::filesystem::path cache_dir;  // defaults to <output_dir>/cache

  // Relative paths resolve against base_dir. Unknown keys are errors.
  static PipelineConfig from_json(const json& j, const std::filesystem::path& base_dir = {});
  static PipelineConfig load(const std::filesystem::path& path);
  json to_json() const;

  // Throws ConfigError naming the first out-of-range field.
  void validate() const;

  // Run identity: everything that can change an output. Paths, worker counts
  // and cache location are excluded.
  std::string digest() const;
};

struct ProviderSet {
  std::shared_ptr<TextGenerator> generator;
  std::shared_ptr<Embedder> embedder;
};

// Mock providers when cfg.mock_providers, remote endpoints otherwise; both
// wrapped with caching and retry.
ProviderSet make_providers(const PipelineConfig& cfg);

enum class Stage { Ingest, Shqa, Relate, Cluster, Mhqa, Split, EvalRetrieval, EvalQa, Stats };

inline constexpr std::array<Stage, 9> kAllStages = {Stage::Ingest, Stage::Shqa,          Stage::Relate,
                                                    Stage::Cluster, Stage::Mhqa,         Stage::Split,
                                                    Stage::EvalRetrieval, Stage::EvalQa, Stage::Stats};

std::string to_string(Stage s);
Stage stage_from_string(std::string_view s);
std::vector<Stage> stage_dependencies(Stage s);

struct StageManifest {
  Stage stage = Stage::Ingest;
  std::string chain_digest;   // stage config digest chained with upstream chains
  std::string config_digest;  // this stage's own parameters
  std::string input_digest;   // upstream artifacts actually consumed
  json counts = json::object();
  std::map<std::string, std::string> outputs;  // file name -> sha256
  double wall_time_s = 0.0;

  json to_json() const;
  static StageManifest from_json(const json& j);
};

enum class StageStatus { Missing, Stale, Current };

std::string to_string(StageStatus s);

struct StageResult {
  StageManifest manifest;
  bool skipped = false;
};

class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, ProviderSet providers);

  const PipelineConfig& config() const { return cfg_; }

  // Executes one stage; a current stage is a no-op unless force is set.
  // Upstream stages must be current. Holds the run-directory lock.
  StageResult run(Stage stage, bool force = false);
  // Every stage in order.
  std::vector<StageResult> run_all(bool force = false);

  StageStatus status(Stage stage) const;
  std::optional<StageManifest> manifest(Stage stage) const;
  std::string expected_chain(Stage stage) const;
  json stage_config(Stage stage) const;

  std::filesystem::path artifact(const std::string& name) const { return cfg_.output_dir / name; }

 private:
  StageManifest run_locked(Stage stage);

  PipelineConfig cfg_;
  ProviderSet providers_;
};

// Human-readable summary of whatever stages have run in `run_dir`. Contains no
// timings so a golden run is byte-stable. Throws if no manifest is present.
std::string render_report(const std::filesystem::path& run_dir);

}  // namespace imqa
