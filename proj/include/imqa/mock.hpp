#pragma once

#include <cstdint>
#include <string>

#include "imqa/providers.hpp"

namespace imqa {

// Offline stand-in for the text generation backend. Recognizes the single-hop,
// multi-hop, answerer and judge prompts. Output is deterministic and always
// parseable; some single-hop evidence is misquoted and some multi-hop
// candidates are pre-rejected or fail validation, so those paths get exercised.
class MockGenerator final : public TextGenerator {
 public:
  explicit MockGenerator(std::uint64_t seed = 0) : seed_(seed) {}

  std::string backend_id() const override { return "mock:" + std::to_string(seed_); }
  std::string generate(const std::string& prompt, const TextGenParams& params) override;

  std::string shqa(const std::string& paragraph) const;
  std::string mhqa(const std::string& prompt) const;
  std::string answer(const std::string& prompt) const;
  std::string judge(const std::string& prompt) const;

 private:
  std::uint64_t seed_;
};

}  // namespace imqa
