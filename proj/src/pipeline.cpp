#include "imqa/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "imqa/cluster.hpp"
#include "imqa/mhqa.hpp"
#include "imqa/mock.hpp"
#include "imqa/relation.hpp"

namespace fs = std::filesystem;

namespace imqa {
namespace {

const char* const kManifestDir = "manifests";

const std::set<std::string> kConfigKeys = {
    "corpus",         "mode",          "tau",           "k_sections",     "filter_fraction",
    "cluster_size",   "diversity_cap", "seed",          "output_dir",     "evidence_match",
    "length_unit",    "retriever_representation",       "chunk_words",    "test_fraction",
    "temperature",    "workers",       "max_in_flight", "mock_providers", "generator",
    "embedder",       "cache_dir"};

EndpointConfig endpoint_from_json(const json& j, const std::string& name) {
  static const std::set<std::string> keys = {"base_url", "model", "api_key_env", "dimension"};
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw ConfigError("unknown key '" + name + "." + k + "'");
  }
  EndpointConfig e;
  e.base_url = j.value("base_url", std::string{});
  e.model = j.value("model", std::string{});
  e.api_key_env = j.value("api_key_env", std::string{});
  e.dimension = j.value("dimension", std::size_t{0});
  return e;
}

json endpoint_to_json(const EndpointConfig& e) {
  return {{"base_url", e.base_url}, {"model", e.model}, {"api_key_env", e.api_key_env}, {"dimension", e.dimension}};
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string fmt_opt(const json& v, int precision = 4) {
  if (v.is_null()) return "n/a";
  if (v.is_number_float()) return fmt(v.get<double>(), precision);
  return v.dump();
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string file_digest(const fs::path& p) { return sha256_hex(read_file(p)); }

// Advisory lock on the run directory; one stage at a time.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) {
    fs::create_directories(dir);
    const auto path = dir / ".lock";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw std::runtime_error("run directory " + dir.string() + " is locked by another stage");
    }
  }
  ~RunLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

struct Outputs {
  std::vector<std::pair<std::string, std::string>> files;  // name -> content

  void add(const std::string& name, std::string content) { files.emplace_back(name, std::move(content)); }
  void add_jsonl(const std::string& name, const std::vector<json>& rows) {
    std::string s;
    for (const auto& r : rows) s += r.dump() + "\n";
    add(name, std::move(s));
  }
};

std::vector<json> load_rows(const fs::path& p) { return read_jsonl(p); }

Corpus load_ingested(const fs::path& dir) { return load_corpus(dir / "corpus.jsonl"); }

std::vector<QaTriplet> load_triplets(const fs::path& p) {
  std::vector<QaTriplet> out;
  for (const auto& j : load_rows(p)) out.push_back(triplet_from_json(j));
  return out;
}

std::vector<MhqaItem> load_items(const fs::path& p) {
  std::vector<MhqaItem> out;
  for (const auto& j : load_rows(p)) out.push_back(item_from_json(j));
  return out;
}

void check_identity(const std::string& stage, bool ok, const std::string& what) {
  if (!ok) throw StageError(stage, "conservation identity violated: " + what);
}

}  // namespace

// ---- config ----

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!kConfigKeys.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  PipelineConfig c;
  try {
    c.corpus = resolve(j.at("corpus").get<std::string>(), base_dir);
    c.output_dir = resolve(j.at("output_dir").get<std::string>(), base_dir);
    if (j.contains("mode")) c.mode = relation_mode_from_string(j["mode"].get<std::string>());
    c.tau = j.value("tau", c.tau);
    c.k_sections = j.value("k_sections", c.k_sections);
    c.filter_fraction = j.value("filter_fraction", c.filter_fraction);
    c.cluster_size = j.value("cluster_size", c.cluster_size);
    c.diversity_cap = j.value("diversity_cap", c.diversity_cap);
    c.seed = j.value("seed", c.seed);
    if (j.contains("evidence_match")) c.evidence_match = evidence_match_from_string(j["evidence_match"].get<std::string>());
    if (j.contains("length_unit")) c.length_unit = length_unit_from_string(j["length_unit"].get<std::string>());
    if (j.contains("retriever_representation")) {
      c.retriever_representation = doc_representation_from_string(j["retriever_representation"].get<std::string>());
    }
    c.chunk_words = j.value("chunk_words", c.chunk_words);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.temperature = j.value("temperature", c.temperature);
    c.workers = j.value("workers", c.workers);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.mock_providers = j.value("mock_providers", c.mock_providers);
    if (j.contains("generator")) c.generator = endpoint_from_json(j["generator"], "generator");
    if (j.contains("embedder")) c.embedder = endpoint_from_json(j["embedder"], "embedder");
    if (j.contains("cache_dir")) c.cache_dir = resolve(j["cache_dir"].get<std::string>(), base_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

json PipelineConfig::to_json() const {
  json j = {{"corpus", corpus.string()},
            {"mode", imqa::to_string(mode)},
            {"tau", tau},
            {"k_sections", k_sections},
            {"filter_fraction", filter_fraction},
            {"cluster_size", cluster_size},
            {"diversity_cap", diversity_cap},
            {"seed", seed},
            {"output_dir", output_dir.string()},
            {"evidence_match", imqa::to_string(evidence_match)},
            {"length_unit", imqa::to_string(length_unit)},
            {"retriever_representation", imqa::to_string(retriever_representation)},
            {"chunk_words", chunk_words},
            {"test_fraction", test_fraction},
            {"temperature", temperature},
            {"workers", workers},
            {"max_in_flight", max_in_flight},
            {"mock_providers", mock_providers}};
  if (generator) j["generator"] = endpoint_to_json(*generator);
  if (embedder) j["embedder"] = endpoint_to_json(*embedder);
  if (!cache_dir.empty()) j["cache_dir"] = cache_dir.string();
  return j;
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& range) {
    throw ConfigError("config field '" + field + "' out of range: expected " + range);
  };
  if (corpus.empty()) fail("corpus", "a path");
  if (output_dir.empty()) fail("output_dir", "a path");
  if (!(tau >= 0.0 && tau <= 1.0)) fail("tau", "[0, 1]");
  if (k_sections < 1 || k_sections > 100) fail("k_sections", "[1, 100]");
  if (!(filter_fraction >= 0.0 && filter_fraction < 1.0)) fail("filter_fraction", "[0, 1)");
  if (cluster_size < 2 || cluster_size > 10000) fail("cluster_size", "[2, 10000]");
  if (diversity_cap < 1 || diversity_cap > 1000) fail("diversity_cap", "[1, 1000]");
  if (chunk_words < 1) fail("chunk_words", ">= 1");
  if (!(test_fraction > 0.0 && test_fraction <= 1.0)) fail("test_fraction", "(0, 1]");
  if (!(temperature >= 0.0 && temperature <= 2.0)) fail("temperature", "[0, 2]");
  if (workers < 1 || workers > 256) fail("workers", "[1, 256]");
  if (max_in_flight < 1 || max_in_flight > 1024) fail("max_in_flight", "[1, 1024]");
  if (!mock_providers) {
    if (!generator || generator->base_url.empty() || generator->model.empty()) {
      fail("generator", "base_url and model (or mock_providers)");
    }
    if (!embedder || embedder->base_url.empty() || embedder->model.empty() || embedder->dimension == 0) {
      fail("embedder", "base_url, model and dimension (or mock_providers)");
    }
  }
}

std::string PipelineConfig::digest() const {
  json j = to_json();
  for (const char* k : {"corpus", "output_dir", "workers", "max_in_flight", "cache_dir"}) j.erase(k);
  for (const char* k : {"generator", "embedder"}) {
    if (j.contains(k)) j[k].erase("api_key_env");
  }
  return sha256_hex(j.dump());
}

// ---- providers ----

ProviderSet make_providers(const PipelineConfig& cfg) {
  std::shared_ptr<TextGenerator> gen;
  std::shared_ptr<Embedder> emb;
  std::shared_ptr<DiskCache> cache;
  if (cfg.mock_providers) {
    gen = std::make_shared<MockGenerator>(cfg.seed);
    emb = std::make_shared<HashEmbedder>();
    cache = std::make_shared<DiskCache>();
  } else {
    auto endpoint = [](const EndpointConfig& e) {
      RemoteEndpoint ep{e.base_url, e.model, {}, std::chrono::seconds(120)};
      if (!e.api_key_env.empty()) {
        if (const char* key = std::getenv(e.api_key_env.c_str())) ep.api_key = key;
      }
      return ep;
    };
    gen = std::make_shared<RemoteGenerator>(endpoint(*cfg.generator));
    emb = std::make_shared<RemoteEmbedder>(endpoint(*cfg.embedder), cfg.embedder->dimension);
    cache = std::make_shared<DiskCache>(cfg.cache_dir.empty() ? cfg.output_dir / "cache" : cfg.cache_dir);
  }
  return {std::make_shared<CachedGenerator>(gen, cache, RetryPolicy{}, cfg.max_in_flight),
          std::make_shared<CachedEmbedder>(emb, cache, RetryPolicy{}, cfg.max_in_flight)};
}

// ---- stages ----

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Shqa: return "shqa";
    case Stage::Relate: return "relate";
    case Stage::Cluster: return "cluster";
    case Stage::Mhqa: return "mhqa";
    case Stage::Split: return "split";
    case Stage::EvalRetrieval: return "eval-retrieval";
    case Stage::EvalQa: return "eval-qa";
    case Stage::Stats: return "stats";
  }
  return "?";
}

Stage stage_from_string(std::string_view s) {
  for (Stage st : kAllStages) {
    if (to_string(st) == s) return st;
  }
  throw std::invalid_argument("unknown stage '" + std::string(s) + "'");
}

std::vector<Stage> stage_dependencies(Stage s) {
  switch (s) {
    case Stage::Ingest: return {};
    case Stage::Shqa: return {Stage::Ingest};
    case Stage::Relate: return {Stage::Ingest, Stage::Shqa};
    case Stage::Cluster: return {Stage::Ingest, Stage::Shqa, Stage::Relate};
    case Stage::Mhqa: return {Stage::Ingest, Stage::Cluster};
    case Stage::Split: return {Stage::Mhqa};
    case Stage::EvalRetrieval: return {Stage::Ingest, Stage::Cluster, Stage::Split};
    case Stage::EvalQa: return {Stage::Ingest, Stage::Split, Stage::EvalRetrieval};
    case Stage::Stats: return {Stage::Shqa, Stage::Mhqa, Stage::Split};
  }
  return {};
}

std::string to_string(StageStatus s) {
  switch (s) {
    case StageStatus::Missing: return "missing";
    case StageStatus::Stale: return "stale";
    case StageStatus::Current: return "current";
  }
  return "?";
}

json StageManifest::to_json() const {
  return {{"stage", imqa::to_string(stage)},
          {"chain_digest", chain_digest},
          {"config_digest", config_digest},
          {"input_digest", input_digest},
          {"counts", counts},
          {"outputs", outputs},
          {"wall_time_s", wall_time_s}};
}

StageManifest StageManifest::from_json(const json& j) {
  StageManifest m;
  m.stage = stage_from_string(j.at("stage").get<std::string>());
  m.chain_digest = j.at("chain_digest").get<std::string>();
  m.config_digest = j.at("config_digest").get<std::string>();
  m.input_digest = j.at("input_digest").get<std::string>();
  m.counts = j.at("counts");
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  m.wall_time_s = j.value("wall_time_s", 0.0);
  return m;
}

Pipeline::Pipeline(PipelineConfig cfg, ProviderSet providers) : cfg_(std::move(cfg)), providers_(std::move(providers)) {
  cfg_.validate();
  if (!providers_.generator || !providers_.embedder) throw ConfigError("pipeline needs a generator and an embedder");
}

json Pipeline::stage_config(Stage stage) const {
  const std::string gen_id = providers_.generator->backend_id();
  const std::string emb_id = providers_.embedder->backend_id();
  json j = {{"stage", to_string(stage)}};
  switch (stage) {
    case Stage::Ingest: {
      std::string corpus_digest = "missing";
      if (fs::exists(cfg_.corpus)) corpus_digest = file_digest(cfg_.corpus);
      j["corpus_digest"] = corpus_digest;
      j["mode"] = to_string(cfg_.mode);
      break;
    }
    case Stage::Shqa:
      j["evidence_match"] = to_string(cfg_.evidence_match);
      j["filter_fraction"] = cfg_.filter_fraction;
      j["generator"] = gen_id;
      j["embedder"] = emb_id;
      j["temperature"] = cfg_.temperature;
      j["seed"] = cfg_.seed;
      break;
    case Stage::Relate:
      j["mode"] = to_string(cfg_.mode);
      j["tau"] = cfg_.tau;
      j["k_sections"] = cfg_.k_sections;
      j["diversity_cap"] = cfg_.diversity_cap;
      j["embedder"] = emb_id;
      break;
    case Stage::Cluster:
      j["mode"] = to_string(cfg_.mode);
      j["cluster_size"] = cfg_.cluster_size;
      j["seed"] = cfg_.seed;
      j["embedder"] = emb_id;
      break;
    case Stage::Mhqa:
      j["generator"] = gen_id;
      j["temperature"] = cfg_.temperature;
      j["seed"] = cfg_.seed;
      j["prompt_digest"] = mhqa_prompt_digest();
      j["config_digest"] = cfg_.digest();
      break;
    case Stage::Split:
      j["test_fraction"] = cfg_.test_fraction;
      j["seed"] = cfg_.seed;
      break;
    case Stage::EvalRetrieval:
      j["representation"] = to_string(cfg_.retriever_representation);
      j["chunk_words"] = cfg_.chunk_words;
      j["embedder"] = emb_id;
      j["seed"] = cfg_.seed;
      break;
    case Stage::EvalQa:
      j["generator"] = gen_id;
      j["temperature"] = cfg_.temperature;
      j["seed"] = cfg_.seed;
      break;
    case Stage::Stats:
      j["length_unit"] = to_string(cfg_.length_unit);
      break;
  }
  return j;
}

std::string Pipeline::expected_chain(Stage stage) const {
  std::string s = sha256_hex(stage_config(stage).dump());
  for (Stage dep : stage_dependencies(stage)) s += "\n" + expected_chain(dep);
  return sha256_hex(s);
}

std::optional<StageManifest> Pipeline::manifest(Stage stage) const {
  const auto p = cfg_.output_dir / kManifestDir / (to_string(stage) + ".json");
  if (!fs::exists(p)) return std::nullopt;
  try {
    return StageManifest::from_json(json::parse(read_file(p)));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

StageStatus Pipeline::status(Stage stage) const {
  auto m = manifest(stage);
  if (!m) return StageStatus::Missing;
  if (m->chain_digest != expected_chain(stage)) return StageStatus::Stale;
  for (const auto& [name, digest] : m->outputs) {
    const auto p = artifact(name);
    if (!fs::exists(p) || file_digest(p) != digest) return StageStatus::Stale;
  }
  // The upstream artifacts consumed must still be the ones on disk.
  std::string inputs;
  for (Stage dep : stage_dependencies(stage)) {
    if (status(dep) != StageStatus::Current) return StageStatus::Stale;
    auto dm = manifest(dep);
    inputs += dm->chain_digest + "\n";
    for (const auto& [name, digest] : dm->outputs) inputs += name + ":" + digest + "\n";
  }
  if (sha256_hex(inputs) != m->input_digest) return StageStatus::Stale;
  return StageStatus::Current;
}

StageResult Pipeline::run(Stage stage, bool force) {
  const std::string name = to_string(stage);
  try {
    RunLock lock(cfg_.output_dir);
    for (Stage dep : stage_dependencies(stage)) {
      const auto st = status(dep);
      if (st != StageStatus::Current) {
        throw StageError(name, "upstream stage '" + to_string(dep) + "' is " + to_string(st) + "; run it first");
      }
    }
    if (!force && status(stage) == StageStatus::Current) return {*manifest(stage), true};
    return {run_locked(stage), false};
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::vector<StageResult> Pipeline::run_all(bool force) {
  std::vector<StageResult> out;
  for (Stage s : kAllStages) out.push_back(run(s, force));
  return out;
}

StageManifest Pipeline::run_locked(Stage stage) {
  const std::string name = to_string(stage);
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = cfg_.output_dir;
  TextGenerator& gen = *providers_.generator;
  Embedder& emb = *providers_.embedder;
  TextGenParams params;
  params.temperature = cfg_.temperature;
  params.seed = static_cast<std::int64_t>(cfg_.seed & 0x7fffffffffffffffULL);

  Outputs out;
  json counts = json::object();

  switch (stage) {
    case Stage::Ingest: {
      if (!fs::exists(cfg_.corpus)) throw StageError(name, "corpus file " + cfg_.corpus.string() + " not found");
      const Corpus raw = load_corpus(cfg_.corpus);
      FilterReport report;
      const Corpus kept = filter_eligible(raw, cfg_.mode, &report);
      std::vector<const Document*> docs;
      for (const auto& d : kept) docs.push_back(&d);
      std::sort(docs.begin(), docs.end(), [](auto* a, auto* b) { return a->doc_id < b->doc_id; });
      std::vector<json> rows;
      for (auto* d : docs) rows.push_back(document_to_json(*d));
      out.add_jsonl("corpus.jsonl", rows);
      out.add("ingest_report.json", report.to_json().dump(2) + "\n");
      counts = {{"in", report.input}, {"kept", report.kept}, {"dropped", report.input - report.kept}, {"failed", 0}};
      check_identity(name, report.input >= report.kept, "kept exceeds input");
      break;
    }

    case Stage::Shqa: {
      const Corpus corpus = load_ingested(dir);
      struct Task {
        const Document* doc;
        const Section* section;
      };
      std::vector<Task> tasks;
      std::vector<const Document*> docs;
      for (const auto& d : corpus) docs.push_back(&d);
      std::sort(docs.begin(), docs.end(), [](auto* a, auto* b) { return a->doc_id < b->doc_id; });
      for (auto* d : docs) {
        for (const auto& s : d->sections) tasks.push_back({d, &s});
      }
      auto gens = parallel_map<ShqaGeneration>(tasks.size(), cfg_.workers, [&](std::size_t i) {
        return generate_shqa(*tasks[i].doc, *tasks[i].section, gen, params);
      });

      std::vector<QaTriplet> accepted;
      std::vector<json> evidence_rejected, warnings;
      std::size_t generated = 0, parse_failures = 0;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        parse_failures += gens[i].parse_failures;
        for (const auto& w : gens[i].warnings) warnings.push_back({{"doc_id", tasks[i].doc->doc_id},
                                                                   {"section_name", tasks[i].section->name},
                                                                   {"warning", w}});
        for (const auto& t : gens[i].triplets) {
          ++generated;
          if (validate_evidence(t, *tasks[i].section, cfg_.evidence_match)) {
            accepted.push_back(t);
          } else {
            evidence_rejected.push_back({{"doc_id", t.doc_id},
                                         {"section_name", t.section_name},
                                         {"question", t.question},
                                         {"answer", t.answer},
                                         {"evidence", t.evidence}});
          }
        }
      }
      const auto records = build_shqa_records(accepted, emb);
      const auto filtered = similarity_gap_filter(records, cfg_.filter_fraction);
      std::vector<json> kept_rows, dropped_rows;
      for (const auto& r : filtered.kept) kept_rows.push_back(shqa_record_to_json(r));
      for (const auto& r : filtered.dropped) dropped_rows.push_back(shqa_record_to_json(r));
      out.add_jsonl("shqa.jsonl", kept_rows);
      out.add_jsonl("shqa_dropped.jsonl", dropped_rows);
      out.add_jsonl("shqa_evidence_rejected.jsonl", evidence_rejected);
      out.add_jsonl("shqa_warnings.jsonl", warnings);
      counts = {{"sections", tasks.size()},
                {"in", generated},
                {"kept", filtered.kept.size()},
                {"dropped", filtered.dropped.size()},
                {"failed", evidence_rejected.size()},
                {"parse_failures", parse_failures}};
      check_identity(name, generated == evidence_rejected.size() + filtered.dropped.size() + filtered.kept.size(),
                     "generated != evidence_rejected + dropped + kept");
      break;
    }

    case Stage::Relate: {
      const Corpus corpus = load_ingested(dir);
      const auto triplets = load_triplets(dir / "shqa.jsonl");
      const SectionIndex index = build_section_index(triplets, emb);
      RelationStats stats;
      const auto rels = construct_relations(corpus, index, cfg_.mode, {cfg_.tau, cfg_.k_sections},
                                            cfg_.diversity_cap, &stats, cfg_.workers);
      std::vector<json> rows;
      for (const auto& r : rels) rows.push_back(relation_to_json(r));
      out.add_jsonl("relations.jsonl", rows);
      counts = {{"sources", stats.sources},
                {"in", stats.scored},
                {"kept", stats.kept},
                {"dropped", stats.scored - stats.kept},
                {"failed", 0}};
      check_identity(name, stats.kept == rels.size() && stats.scored >= stats.kept, "kept != relations written");
      break;
    }

    case Stage::Cluster: {
      const Corpus corpus = load_ingested(dir);
      const auto by_doc = group_by_document(load_triplets(dir / "shqa.jsonl"));
      std::vector<RelationCandidate> rels;
      for (const auto& j : load_rows(dir / "relations.jsonl")) rels.push_back(relation_from_json(j));

      using Built = std::pair<std::optional<json>, std::optional<json>>;  // (cluster row, failure row)
      auto built = parallel_map<Built>(rels.size(), cfg_.workers, [&](std::size_t i) -> Built {
        const auto& r = rels[i];
        const std::string cid = cluster_id_for(r);
        try {
          const Document& src = corpus.at(r.source_doc_id);
          const Document& tgt = corpus.at(r.target_doc_id);
          PaperCluster c = r.origin == RelationMode::Citation
                               ? citation_cluster(src, tgt, corpus, cid)
                               : build_cluster(src, tgt, semantic_candidates(src, corpus), corpus, cfg_.seed, cid,
                                               cfg_.cluster_size);
          const RetrievalQa rqa = select_retrieval_qa(tgt, c, by_doc, emb);
          json row = cluster_to_json(c, rqa);
          row["relation"] = relation_to_json(r);
          return {row, std::nullopt};
        } catch (const ClusterError& e) {
          return {std::nullopt, json{{"cluster_id", cid},
                                     {"source_doc_id", r.source_doc_id},
                                     {"target_doc_id", r.target_doc_id},
                                     {"reason", e.what()}}};
        }
      });
      std::vector<json> rows, failures;
      for (auto& [row, fail] : built) {
        if (row) rows.push_back(std::move(*row));
        if (fail) failures.push_back(std::move(*fail));
      }
      out.add_jsonl("clusters.jsonl", rows);
      out.add_jsonl("cluster_failures.jsonl", failures);
      counts = {{"in", rels.size()}, {"kept", rows.size()}, {"dropped", 0}, {"failed", failures.size()}};
      check_identity(name, rels.size() == rows.size() + failures.size(), "relations != clusters + failures");
      break;
    }

    case Stage::Mhqa: {
      const Corpus corpus = load_ingested(dir);
      std::vector<MhqaJob> jobs;
      for (const auto& j : load_rows(dir / "clusters.jsonl")) {
        jobs.push_back({relation_from_json(j.at("relation")), cluster_from_json(j), retrieval_qa_from_json(j)});
      }
      const MhqaRun run = generate_mhqa(jobs, corpus, gen, params, 0.7, cfg_.workers);
      std::vector<json> items, rejected;
      for (const auto& it : run.items) {
        json row = item_to_json(it);
        row["prompt_digest"] = mhqa_prompt_digest();
        row["config_digest"] = cfg_.digest();
        items.push_back(std::move(row));
      }
      for (const auto& r : run.rejected) rejected.push_back(r.to_json());
      out.add_jsonl("dataset.jsonl", items);
      out.add_jsonl("rejected.jsonl", rejected);
      counts = run.counts.to_json();
      counts["in"] = run.counts.candidates_in;
      counts["kept"] = run.counts.items_out;
      counts["dropped"] = run.counts.pre_rejected + run.counts.validation_rejected;
      counts["failed"] = run.counts.parse_failures;
      check_identity(name, run.counts.balanced() && run.counts.candidates_in == jobs.size(),
                     "candidates_in != pre_rejected + parse_failures + validation_rejected + items_out");
      break;
    }

    case Stage::Split: {
      const auto items = load_items(dir / "dataset.jsonl");
      std::size_t test_size = static_cast<std::size_t>(std::floor(cfg_.test_fraction * static_cast<double>(items.size()) + 1e-9));
      if (test_size == 0 && !items.empty()) test_size = 1;
      const DatasetSplit split = split_dataset(items, test_size, cfg_.seed);
      std::vector<json> dev, test;
      for (const auto& it : split.dev) dev.push_back(item_to_json(it));
      for (const auto& it : split.test) test.push_back(item_to_json(it));
      out.add_jsonl("dev.jsonl", dev);
      out.add_jsonl("test.jsonl", test);
      counts = {{"in", items.size()}, {"kept", items.size()}, {"dev", dev.size()}, {"test", test.size()},
                {"dropped", 0}, {"failed", 0}};
      check_identity(name, items.size() == dev.size() + test.size(), "items != dev + test");
      break;
    }

    case Stage::EvalRetrieval: {
      const Corpus corpus = load_ingested(dir);
      const auto items = load_items(dir / "test.jsonl");
      std::map<std::string, PaperCluster> clusters;
      for (const auto& j : load_rows(dir / "clusters.jsonl")) {
        auto c = cluster_from_json(j);
        clusters.emplace(c.cluster_id, std::move(c));
      }
      const DocIndex index(corpus, emb, cfg_.retriever_representation, cfg_.chunk_words);

      struct EnvSpec {
        EnvironmentKind kind;
        std::vector<std::size_t> hits;
        std::size_t mrr_k;
      };
      const std::vector<EnvSpec> specs = {{EnvironmentKind::PaperCluster, {1, 3}, 5},
                                          {EnvironmentKind::RandomCluster, {1, 3}, 5},
                                          {EnvironmentKind::FullCorpus, {1, 50}, 50}};
      using PerItem = std::vector<Ranking>;
      auto rankings = parallel_map<PerItem>(items.size(), cfg_.workers, [&](std::size_t i) {
        const auto& it = items[i];
        auto c = clusters.find(it.cluster_id);
        if (c == clusters.end()) throw std::runtime_error("item " + it.item_id + " has no cluster");
        PerItem r;
        r.push_back(rank_candidates(it.retrieval_question, paper_cluster_environment(c->second), index, emb));
        r.push_back(rank_candidates(it.retrieval_question,
                                    random_cluster_environment(it.target_doc_id, c->second.member_doc_ids.size(),
                                                               corpus, it.source_doc_id, cfg_.seed, it.item_id),
                                    index, emb));
        r.push_back(rank_candidates(it.retrieval_question,
                                    full_corpus_environment(it.target_doc_id, corpus, it.source_doc_id), index, emb));
        return r;
      });

      json per_item = json::array();
      for (std::size_t i = 0; i < items.size(); ++i) {
        json row = {{"item_id", items[i].item_id}, {"gold_doc_id", items[i].target_doc_id}};
        for (std::size_t e = 0; e < specs.size(); ++e) {
          const auto& rk = rankings[i][e];
          row[to_string(specs[e].kind)] = {{"rank", rk.rank_of(items[i].target_doc_id)},
                                           {"top1", rk.entries.front().first}};
        }
        per_item.push_back(std::move(row));
      }
      json aggregates = json::object();
      std::vector<std::string> golds;
      for (const auto& it : items) golds.push_back(it.target_doc_id);
      for (std::size_t e = 0; e < specs.size(); ++e) {
        std::vector<Ranking> rs;
        for (const auto& r : rankings) rs.push_back(r[e]);
        json a = {{"queries", items.size()}};
        for (std::size_t k : specs[e].hits) {
          a["hit@" + std::to_string(k)] = items.empty() ? json(nullptr) : json(mean_hit_at_k(rs, golds, k));
        }
        a["mrr@" + std::to_string(specs[e].mrr_k)] = items.empty() ? json(nullptr) : json(mrr_at_k(rs, golds, specs[e].mrr_k));
        aggregates[to_string(specs[e].kind)] = a;
      }
      json result = {{"representation", to_string(cfg_.retriever_representation)},
                     {"realistic_top1_environment", "paper_cluster"},
                     {"aggregates", aggregates},
                     {"items", per_item}};
      out.add("retrieval.json", result.dump(2) + "\n");
      counts = {{"in", items.size()}, {"kept", items.size()}, {"dropped", 0}, {"failed", 0}};
      break;
    }

    case Stage::EvalQa: {
      const Corpus corpus = load_ingested(dir);
      const auto items = load_items(dir / "test.jsonl");
      const json retrieval = json::parse(read_file(dir / "retrieval.json"));
      std::map<std::string, std::string> top1;
      for (const auto& row : retrieval.at("items")) {
        top1[row.at("item_id").get<std::string>()] = row.at("paper_cluster").at("top1").get<std::string>();
      }
      json result = {{"metric_normalization", "lowercase; punctuation to space; whitespace tokens"}};
      std::size_t failed = 0;
      for (QaSetting s : {QaSetting::Oracle, QaSetting::Realistic}) {
        const QaRun run = run_qa_setting(items, s, corpus, top1, gen, gen, params, cfg_.workers);
        json log = json::array();
        for (const auto& l : run.log) log.push_back(l.to_json());
        result[to_string(s)] = {{"scores", run.scores.to_json()}, {"items", log}};
        failed += run.scores.provider_failures;
      }
      out.add("qa.json", result.dump(2) + "\n");
      counts = {{"in", items.size()}, {"kept", items.size()}, {"dropped", 0}, {"failed", failed}};
      break;
    }

    case Stage::Stats: {
      const auto triplets = load_triplets(dir / "shqa.jsonl");
      const auto all = load_items(dir / "dataset.jsonl");
      const auto dev = load_items(dir / "dev.jsonl");
      const auto test = load_items(dir / "test.jsonl");
      json result = {{"length_unit", to_string(cfg_.length_unit)},
                     {"shqa", shqa_statistics(triplets, cfg_.length_unit).to_json()},
                     {"mhqa",
                      {{"all", split_statistics(all, cfg_.length_unit).to_json()},
                       {"dev", split_statistics(dev, cfg_.length_unit).to_json()},
                       {"test", split_statistics(test, cfg_.length_unit).to_json()}}}};
      out.add("stats.json", result.dump(2) + "\n");
      counts = {{"in", triplets.size() + all.size()}, {"kept", triplets.size() + all.size()}, {"dropped", 0},
                {"failed", 0}};
      break;
    }
  }

  StageManifest m;
  m.stage = stage;
  m.chain_digest = expected_chain(stage);
  m.config_digest = sha256_hex(stage_config(stage).dump());
  std::string inputs;
  for (Stage dep : stage_dependencies(stage)) {
    auto dm = manifest(dep);
    inputs += dm->chain_digest + "\n";
    for (const auto& [fname, digest] : dm->outputs) inputs += fname + ":" + digest + "\n";
  }
  m.input_digest = sha256_hex(inputs);
  m.counts = counts;
  for (const auto& [fname, content] : out.files) {
    write_file_atomic(dir / fname, content);
    m.outputs[fname] = sha256_hex(content);
  }
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  fs::create_directories(dir / kManifestDir);
  write_file_atomic(dir / kManifestDir / (name + ".json"), m.to_json().dump(2) + "\n");
  return m;
}

// ---- report ----

std::string render_report(const fs::path& dir) {
  std::map<Stage, StageManifest> ms;
  for (Stage s : kAllStages) {
    const auto p = dir / kManifestDir / (to_string(s) + ".json");
    if (fs::exists(p)) ms.emplace(s, StageManifest::from_json(json::parse(read_file(p))));
  }
  if (ms.empty()) throw std::runtime_error("no stage manifests in " + dir.string());

  std::ostringstream os;
  os << "Run " << ms.begin()->second.chain_digest.substr(0, 12) << " (first recorded stage chain)\n\n";
  os << "Stage counts\n";
  os << pad("stage", 16) << pad("in", 8) << pad("kept", 8) << pad("dropped", 9) << "failed\n";
  for (const auto& [s, m] : ms) {
    auto c = [&](const char* k) { return m.counts.contains(k) ? m.counts[k].dump() : std::string("-"); };
    os << pad(to_string(s), 16) << pad(c("in"), 8) << pad(c("kept"), 8) << pad(c("dropped"), 9) << c("failed") << "\n";
  }

  if (ms.count(Stage::Shqa)) {
    const auto triplets = load_triplets(dir / "shqa.jsonl");
    LengthUnit unit = LengthUnit::Tokens;
    json statsj;
    if (fs::exists(dir / "stats.json")) {
      statsj = json::parse(read_file(dir / "stats.json"));
      unit = length_unit_from_string(statsj.at("length_unit").get<std::string>());
    }
    const auto st = shqa_statistics(triplets, unit);
    const auto& c = ms.at(Stage::Shqa).counts;
    os << "\nSingle-hop QA statistics (length unit: " << to_string(unit) << ")\n";
    os << "  generated triplets:       " << c.value("in", 0) << "\n";
    os << "  evidence gate rejected:   " << c.value("failed", 0) << "\n";
    os << "  similarity-gap dropped:   " << c.value("dropped", 0) << "\n";
    os << "  # of QA:                  " << st.count << "\n";
    os << "  avg question length:      " << (st.avg_question_length ? fmt(*st.avg_question_length, 2) : "n/a") << "\n";
    os << "  avg answer length:        " << (st.avg_answer_length ? fmt(*st.avg_answer_length, 2) : "n/a") << "\n";
    os << "  avg QA per paper:         " << (st.avg_qa_per_paper ? fmt(*st.avg_qa_per_paper, 2) : "n/a") << "\n";
    os << "  avg QA per section:       " << (st.avg_qa_per_section ? fmt(*st.avg_qa_per_section, 2) : "n/a") << "\n";
    if (!st.total_by_section.empty()) {
      os << "  QA by section name (total / avg per section instance):\n";
      for (const auto& [sec, n] : st.total_by_section) {
        os << "    " << pad(sec, 24) << n << " / " << fmt(st.avg_by_section.at(sec), 2) << "\n";
      }
    }
  }

  if (ms.count(Stage::Relate)) {
    const auto& c = ms.at(Stage::Relate).counts;
    os << "\nRelations: " << c.value("in", 0) << " scored, " << c.value("kept", 0) << " kept after diversity cap\n";
  }
  if (ms.count(Stage::Cluster)) {
    const auto& c = ms.at(Stage::Cluster).counts;
    os << "Clusters: " << c.value("kept", 0) << " built, " << c.value("failed", 0) << " failed\n";
  }

  if (ms.count(Stage::Mhqa)) {
    const auto& c = ms.at(Stage::Mhqa).counts;
    const std::size_t in = c.value("candidates_in", 0), pre = c.value("pre_rejected", 0),
                      pf = c.value("parse_failures", 0), vr = c.value("validation_rejected", 0),
                      outn = c.value("items_out", 0);
    os << "\nMulti-hop QA conservation\n";
    os << "  candidates_in = pre_rejected + parse_failures + validation_rejected + items_out\n";
    os << "  " << in << " = " << pre << " + " << pf << " + " << vr << " + " << outn << "  ["
       << (in == pre + pf + vr + outn ? "holds" : "VIOLATED") << "]\n";
    if (c.contains("rejected_by_criterion") && !c["rejected_by_criterion"].empty()) {
      os << "  validation rejections by criterion:\n";
      for (const auto& [k, v] : c["rejected_by_criterion"].items()) os << "    " << pad(k, 28) << v.dump() << "\n";
    }
  }

  if (ms.count(Stage::Split)) {
    const auto& c = ms.at(Stage::Split).counts;
    os << "\nSplit: dev " << c.value("dev", 0) << ", test " << c.value("test", 0) << "\n";
  }

  if (fs::exists(dir / "stats.json") && ms.count(Stage::Stats)) {
    const json s = json::parse(read_file(dir / "stats.json"));
    os << "\nMulti-hop QA statistics (length unit: " << s.at("length_unit").get<std::string>() << ")\n";
    os << pad("split", 8) << pad("count", 7) << pad("retr_q", 9) << pad("inter_q", 9) << pad("comb_q", 9)
       << pad("inter_a", 9) << "comb_a\n";
    for (const char* split : {"all", "dev", "test"}) {
      const auto& r = s.at("mhqa").at(split);
      os << pad(split, 8) << pad(r.at("count").dump(), 7) << pad(fmt_opt(r.at("avg_retrieval_q_length"), 2), 9)
         << pad(fmt_opt(r.at("avg_interdoc_q_length"), 2), 9) << pad(fmt_opt(r.at("avg_combined_q_length"), 2), 9)
         << pad(fmt_opt(r.at("avg_interdoc_a_length"), 2), 9) << fmt_opt(r.at("avg_combined_a_length"), 2) << "\n";
    }
  }

  if (ms.count(Stage::EvalRetrieval) && fs::exists(dir / "retrieval.json")) {
    const json r = json::parse(read_file(dir / "retrieval.json"));
    os << "\nRetrieval (query: retrieval question only; document representation: "
       << r.at("representation").get<std::string>() << ")\n";
    os << "  note: the document text indexed by the retriever is a configuration choice, not a fixed protocol\n";
    for (const char* env : {"paper_cluster", "random_cluster", "full_corpus"}) {
      const auto& a = r.at("aggregates").at(env);
      os << "  " << pad(env, 16);
      for (const auto& [k, v] : a.items()) {
        if (k == "queries") continue;
        os << pad(k + " " + fmt_opt(v), 16);
      }
      os << "n=" << a.at("queries").dump() << "\n";
    }
  }

  if (ms.count(Stage::EvalQa) && fs::exists(dir / "qa.json")) {
    const json q = json::parse(read_file(dir / "qa.json"));
    os << "\nAnswering (" << q.at("metric_normalization").get<std::string>() << ")\n";
    os << "  " << pad("setting", 12) << pad("accuracy", 10) << pad("token_f1", 10) << pad("rouge_l", 10)
       << pad("judged", 8) << pad("judge_fail", 12) << "provider_fail\n";
    for (const char* s : {"oracle", "realistic"}) {
      const auto& sc = q.at(s).at("scores");
      os << "  " << pad(s, 12) << pad(fmt_opt(sc.at("accuracy")), 10) << pad(fmt_opt(sc.at("token_f1")), 10)
         << pad(fmt_opt(sc.at("rouge_l")), 10) << pad(sc.at("judged").dump(), 8)
         << pad(sc.at("judge_failures").dump(), 12) << sc.at("provider_failures").dump() << "\n";
    }
  }
  return os.str();
}

}  // namespace imqa
