#include <httplib.h>

#include "imqa/providers.hpp"

namespace imqa {
namespace {

std::string post_json(const RemoteEndpoint& ep, const std::string& path, const json& body) {
  httplib::Client client(ep.base_url);
  client.set_connection_timeout(ep.timeout);
  client.set_read_timeout(ep.timeout);
  client.set_write_timeout(ep.timeout);
  httplib::Headers headers;
  if (!ep.api_key.empty()) headers.emplace("Authorization", "Bearer " + ep.api_key);
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw TransientProviderError("transport error contacting " + ep.base_url + path + ": " +
                                 httplib::to_string(res.error()));
  }
  if (res->status == 429) throw TransientProviderError("rate limited by " + ep.base_url, true);
  if (res->status >= 500) {
    throw TransientProviderError("server error " + std::to_string(res->status) + " from " + ep.base_url + path);
  }
  if (res->status >= 400) {
    throw ProviderError("request rejected with status " + std::to_string(res->status) + ": " + res->body);
  }
  return res->body;
}

}  // namespace

std::string RemoteGenerator::generate(const std::string& prompt, const TextGenParams& params) {
  json body = {{"model", ep_.model},
               {"prompt", prompt},
               {"temperature", params.temperature},
               {"max_tokens", params.max_output_tokens}};
  if (params.seed) body["seed"] = *params.seed;
  const std::string raw = post_json(ep_, "/v1/completions", body);
  try {
    return json::parse(raw).at("choices").at(0).at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw ProviderError(std::string("malformed completion response: ") + e.what());
  }
}

std::vector<EmbeddingVector> RemoteEmbedder::embed_batch(const std::vector<std::string>& texts) {
  const std::string raw = post_json(ep_, "/v1/embeddings", {{"model", ep_.model}, {"input", texts}});
  std::vector<EmbeddingVector> out(texts.size());
  try {
    const json j = json::parse(raw);
    const auto& data = j.at("data");
    if (data.size() != texts.size()) throw ProviderError("embedding response length mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t idx = data[i].value("index", i);
      if (idx >= out.size()) throw ProviderError("embedding response index out of range");
      out[idx].values = data[i].at("embedding").get<std::vector<double>>();
    }
  } catch (const json::exception& e) {
    throw ProviderError(std::string("malformed embedding response: ") + e.what());
  }
  return out;
}

}  // namespace imqa
