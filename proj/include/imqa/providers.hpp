#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "imqa/util.hpp"

namespace imqa {

class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Worth retrying: transport failures, 5xx, rate limiting.
class TransientProviderError : public ProviderError {
 public:
  TransientProviderError(const std::string& what, bool rate_limited = false)
      : ProviderError(what), rate_limited_(rate_limited) {}
  bool rate_limited() const { return rate_limited_; }

 private:
  bool rate_limited_;
};

class ProviderInputError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

struct TextGenParams {
  double temperature = 0.0;
  int max_output_tokens = 1024;
  std::optional<std::int64_t> seed;

  json to_json() const;
};

struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dimension() const { return values.size(); }
};

enum class EmbedLevel { Q, A, E, QA };

std::string to_string(EmbedLevel level);
EmbedLevel embed_level_from_string(std::string_view s);

// Text rendering of a (question, answer, evidence) unit at the given level.
// QA joins question and answer with one space.
std::string render_for_embedding(EmbedLevel level, const std::string& question, const std::string& answer,
                                 const std::string& evidence);

// Cosine similarity clamped to [-1, 1]. Throws std::invalid_argument on a
// dimension mismatch or a zero-norm vector.
double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

class TextGenerator {
 public:
  virtual ~TextGenerator() = default;
  virtual std::string backend_id() const = 0;
  virtual std::string generate(const std::string& prompt, const TextGenParams& params) = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string backend_id() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) = 0;
};

// Content-addressed store: entries live at <root>/<k[0:2]>/<k>, written atomically.
// An empty root keeps everything in memory.
class DiskCache {
 public:
  explicit DiskCache(std::filesystem::path root = {});

  std::optional<std::string> get(const std::string& key);
  void put(const std::string& key, const std::string& value);

  static std::string key_for(const json& request);

 private:
  std::filesystem::path path_for(const std::string& key) const;

  std::filesystem::path root_;
  std::mutex mu_;
  std::unordered_map<std::string, std::string> memory_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{250};
  double jitter = 0.25;
  std::function<void(std::chrono::milliseconds)> sleep;  // defaults to this_thread::sleep_for
};

// Calls fn until it succeeds, retrying TransientProviderError with exponential
// backoff. The last transient error is rethrown as ProviderError.
std::string call_with_retry(const RetryPolicy& policy, const std::function<std::string()>& fn,
                            std::uint64_t jitter_seed = 0);

struct ProviderStats {
  std::atomic<std::size_t> backend_calls{0};
  std::atomic<std::size_t> cache_hits{0};
};

// Caching + retry + in-flight cap around any generator.
class CachedGenerator final : public TextGenerator {
 public:
  CachedGenerator(std::shared_ptr<TextGenerator> inner, std::shared_ptr<DiskCache> cache, RetryPolicy retry = {},
                  std::ptrdiff_t max_in_flight = 8, std::size_t max_prompt_bytes = 1 << 20);

  std::string backend_id() const override { return inner_->backend_id(); }
  std::string generate(const std::string& prompt, const TextGenParams& params) override;

  const ProviderStats& stats() const { return stats_; }

 private:
  std::shared_ptr<TextGenerator> inner_;
  std::shared_ptr<DiskCache> cache_;
  RetryPolicy retry_;
  std::counting_semaphore<> in_flight_;
  std::size_t max_prompt_bytes_;
  ProviderStats stats_;
};

// Per-text caching around an embedder; only uncached distinct texts reach the backend.
class CachedEmbedder final : public Embedder {
 public:
  CachedEmbedder(std::shared_ptr<Embedder> inner, std::shared_ptr<DiskCache> cache, RetryPolicy retry = {},
                 std::ptrdiff_t max_in_flight = 8);

  std::string backend_id() const override { return inner_->backend_id(); }
  std::size_t dimension() const override { return inner_->dimension(); }
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override;

  const ProviderStats& stats() const { return stats_; }

 private:
  std::shared_ptr<Embedder> inner_;
  std::shared_ptr<DiskCache> cache_;
  RetryPolicy retry_;
  std::counting_semaphore<> in_flight_;
  ProviderStats stats_;
};

// Offline embedder: signed feature hashing of character n-grams, L2-normalized.
class HashEmbedder final : public Embedder {
 public:
  explicit HashEmbedder(std::size_t dimension = 256, std::size_t ngram = 3);

  std::string backend_id() const override;
  std::size_t dimension() const override { return dim_; }
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override;

  EmbeddingVector embed_one(const std::string& text) const;

 private:
  std::size_t dim_;
  std::size_t ngram_;
};

struct RemoteEndpoint {
  std::string base_url;  // scheme://host[:port]
  std::string model;
  std::string api_key;   // read from the environment by the caller
  std::chrono::seconds timeout{120};
};

// Completion contract: POST /v1/completions {model, prompt, temperature, max_tokens, seed?}
// -> {"choices": [{"text": ...}]}
class RemoteGenerator final : public TextGenerator {
 public:
  explicit RemoteGenerator(RemoteEndpoint endpoint) : ep_(std::move(endpoint)) {}
  std::string backend_id() const override { return "remote:" + ep_.base_url + "/" + ep_.model; }
  std::string generate(const std::string& prompt, const TextGenParams& params) override;

 private:
  RemoteEndpoint ep_;
};

// Embedding contract: POST /v1/embeddings {model, input: [...]}
// -> {"data": [{"index": i, "embedding": [...]}]}
class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(RemoteEndpoint endpoint, std::size_t dimension) : ep_(std::move(endpoint)), dim_(dimension) {}
  std::string backend_id() const override { return "remote:" + ep_.base_url + "/" + ep_.model; }
  std::size_t dimension() const override { return dim_; }
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) override;

 private:
  RemoteEndpoint ep_;
  std::size_t dim_;
};

}  // namespace imqa
