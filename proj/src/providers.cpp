#include "imqa/providers.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <thread>

namespace imqa {

json TextGenParams::to_json() const {
  json j = {{"temperature", temperature}, {"max_output_tokens", max_output_tokens}};
  j["seed"] = seed ? json(*seed) : json(nullptr);
  return j;
}

std::string to_string(EmbedLevel level) {
  switch (level) {
    case EmbedLevel::Q: return "Q";
    case EmbedLevel::A: return "A";
    case EmbedLevel::E: return "E";
    case EmbedLevel::QA: return "QA";
  }
  return "?";
}

EmbedLevel embed_level_from_string(std::string_view s) {
  if (s == "Q") return EmbedLevel::Q;
  if (s == "A") return EmbedLevel::A;
  if (s == "E") return EmbedLevel::E;
  if (s == "QA") return EmbedLevel::QA;
  throw std::invalid_argument("unknown embed level '" + std::string(s) + "'");
}

std::string render_for_embedding(EmbedLevel level, const std::string& question, const std::string& answer,
                                 const std::string& evidence) {
  switch (level) {
    case EmbedLevel::Q: return question;
    case EmbedLevel::A: return answer;
    case EmbedLevel::E: return evidence;
    case EmbedLevel::QA: return question + " " + answer;
  }
  return question;
}

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.dimension() != v.dimension()) {
    throw std::invalid_argument("cosine: dimension mismatch (" + std::to_string(u.dimension()) + " vs " +
                                std::to_string(v.dimension()) + ")");
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.values.size(); ++i) {
    dot += u.values[i] * v.values[i];
    nu += u.values[i] * u.values[i];
    nv += v.values[i] * v.values[i];
  }
  if (nu == 0.0 || nv == 0.0) throw std::invalid_argument("cosine: zero-norm vector");
  const double c = dot / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(c, -1.0, 1.0);
}

// ---- cache -----------------------------------------------------------------

DiskCache::DiskCache(std::filesystem::path root) : root_(std::move(root)) {
  if (!root_.empty()) std::filesystem::create_directories(root_);
}

std::string DiskCache::key_for(const json& request) { return sha256_hex(request.dump()); }

std::filesystem::path DiskCache::path_for(const std::string& key) const { return root_ / key.substr(0, 2) / key; }

std::optional<std::string> DiskCache::get(const std::string& key) {
  {
    std::lock_guard lock(mu_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  }
  if (root_.empty()) return std::nullopt;
  auto p = path_for(key);
  std::error_code ec;
  if (!std::filesystem::exists(p, ec)) return std::nullopt;
  std::string value = read_file(p);
  std::lock_guard lock(mu_);
  memory_.emplace(key, value);
  return value;
}

void DiskCache::put(const std::string& key, const std::string& value) {
  if (!root_.empty()) write_file_atomic(path_for(key), value);
  std::lock_guard lock(mu_);
  memory_[key] = value;
}

// ---- retry -----------------------------------------------------------------

std::string call_with_retry(const RetryPolicy& policy, const std::function<std::string()>& fn,
                            std::uint64_t jitter_seed) {
  SplitMix64 rng(jitter_seed);
  const int attempts = std::max(1, policy.max_attempts);
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const TransientProviderError& e) {
      if (attempt >= attempts) {
        throw ProviderError("provider failed after " + std::to_string(attempts) + " attempts: " + e.what());
      }
      double scale = std::pow(2.0, attempt - 1) * (1.0 + policy.jitter * (2.0 * rng.unit() - 1.0));
      if (e.rate_limited()) scale *= 2.0;
      auto delay = std::chrono::milliseconds(static_cast<long long>(policy.base_delay.count() * scale));
      if (policy.sleep) {
        policy.sleep(delay);
      } else {
        std::this_thread::sleep_for(delay);
      }
    }
  }
}

namespace {

class SlotGuard {
 public:
  explicit SlotGuard(std::counting_semaphore<>& sem) : sem_(sem) { sem_.acquire(); }
  ~SlotGuard() { sem_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  std::counting_semaphore<>& sem_;
};

json vector_to_json(const EmbeddingVector& v) { return v.values; }

}  // namespace

// ---- cached generator ------------------------------------------------------

CachedGenerator::CachedGenerator(std::shared_ptr<TextGenerator> inner, std::shared_ptr<DiskCache> cache,
                                 RetryPolicy retry, std::ptrdiff_t max_in_flight, std::size_t max_prompt_bytes)
    : inner_(std::move(inner)),
      cache_(cache ? std::move(cache) : std::make_shared<DiskCache>()),
      retry_(std::move(retry)),
      in_flight_(std::max<std::ptrdiff_t>(1, max_in_flight)),
      max_prompt_bytes_(max_prompt_bytes) {}

std::string CachedGenerator::generate(const std::string& prompt, const TextGenParams& params) {
  if (prompt.empty()) throw ProviderInputError("generate: empty prompt");
  if (prompt.size() > max_prompt_bytes_) {
    throw ProviderInputError("generate: prompt of " + std::to_string(prompt.size()) + " bytes exceeds limit of " +
                             std::to_string(max_prompt_bytes_));
  }
  const std::string key = DiskCache::key_for(
      {{"kind", "generate"}, {"backend", inner_->backend_id()}, {"prompt", sha256_hex(prompt)},
       {"params", params.to_json()}});
  if (auto hit = cache_->get(key)) {
    ++stats_.cache_hits;
    return *hit;
  }
  std::string out;
  {
    SlotGuard slot(in_flight_);
    out = call_with_retry(
        retry_,
        [&] {
          ++stats_.backend_calls;
          return inner_->generate(prompt, params);
        },
        fnv1a64(key));
  }
  cache_->put(key, out);
  return out;
}

// ---- cached embedder -------------------------------------------------------

CachedEmbedder::CachedEmbedder(std::shared_ptr<Embedder> inner, std::shared_ptr<DiskCache> cache, RetryPolicy retry,
                               std::ptrdiff_t max_in_flight)
    : inner_(std::move(inner)),
      cache_(cache ? std::move(cache) : std::make_shared<DiskCache>()),
      retry_(std::move(retry)),
      in_flight_(std::max<std::ptrdiff_t>(1, max_in_flight)) {}

std::vector<EmbeddingVector> CachedEmbedder::embed_batch(const std::vector<std::string>& texts) {
  if (texts.empty()) throw ProviderInputError("embed_batch: empty batch");
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].empty()) throw ProviderInputError("embed_batch: empty text at index " + std::to_string(i));
  }
  const std::string backend = inner_->backend_id();
  auto key_of = [&](const std::string& t) {
    return DiskCache::key_for({{"kind", "embed"}, {"backend", backend}, {"text", sha256_hex(t)}});
  };

  std::vector<EmbeddingVector> out(texts.size());
  std::vector<std::string> missing;
  std::set<std::string> missing_seen;
  std::vector<std::optional<std::string>> cached(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    cached[i] = cache_->get(key_of(texts[i]));
    if (cached[i]) {
      ++stats_.cache_hits;
    } else if (missing_seen.insert(texts[i]).second) {
      missing.push_back(texts[i]);
    }
  }

  std::unordered_map<std::string, EmbeddingVector> fresh;
  if (!missing.empty()) {
    std::vector<EmbeddingVector> got;
    {
      SlotGuard slot(in_flight_);
      call_with_retry(
          retry_,
          [&] {
            ++stats_.backend_calls;
            got = inner_->embed_batch(missing);
            return std::string{};
          },
          fnv1a64(missing.front()));
    }
    if (got.size() != missing.size()) {
      throw ProviderError("embed_batch: backend returned " + std::to_string(got.size()) + " vectors for " +
                          std::to_string(missing.size()) + " texts");
    }
    for (std::size_t i = 0; i < missing.size(); ++i) {
      const auto& v = got[i];
      if (v.dimension() != inner_->dimension()) {
        throw ProviderError("embed_batch: dimension mismatch, expected " + std::to_string(inner_->dimension()) +
                            " got " + std::to_string(v.dimension()));
      }
      for (double x : v.values) {
        if (!std::isfinite(x)) throw ProviderError("embed_batch: non-finite embedding value");
      }
      cache_->put(key_of(missing[i]), vector_to_json(v).dump());
      fresh.emplace(missing[i], v);
    }
  }

  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (cached[i]) {
      out[i].values = json::parse(*cached[i]).get<std::vector<double>>();
    } else {
      out[i] = fresh.at(texts[i]);
    }
  }
  return out;
}

// ---- hash embedder ---------------------------------------------------------

HashEmbedder::HashEmbedder(std::size_t dimension, std::size_t ngram) : dim_(dimension), ngram_(ngram) {
  if (dim_ == 0 || ngram_ == 0) throw std::invalid_argument("HashEmbedder: dimension and ngram must be positive");
}

std::string HashEmbedder::backend_id() const {
  return "mock-hash-embed:d" + std::to_string(dim_) + ":n" + std::to_string(ngram_);
}

EmbeddingVector HashEmbedder::embed_one(const std::string& text) const {
  const std::string padded = " " + to_lower_ascii(text) + " ";
  EmbeddingVector v;
  v.values.assign(dim_, 0.0);
  if (padded.size() < ngram_) return v;
  for (std::size_t i = 0; i + ngram_ <= padded.size(); ++i) {
    const std::uint64_t h = fnv1a64(std::string_view(padded).substr(i, ngram_));
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v.values[h % dim_] += sign;
  }
  double norm = 0.0;
  for (double x : v.values) norm += x * x;
  if (norm == 0.0) {
    // Every n-gram cancelled out; fall back to a deterministic unit basis vector.
    v.values[fnv1a64(padded) % dim_] = 1.0;
    return v;
  }
  norm = std::sqrt(norm);
  for (double& x : v.values) x /= norm;
  return v;
}

std::vector<EmbeddingVector> HashEmbedder::embed_batch(const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].empty()) throw ProviderInputError("embed_batch: empty text at index " + std::to_string(i));
    out.push_back(embed_one(texts[i]));
  }
  return out;
}

}  // namespace imqa
