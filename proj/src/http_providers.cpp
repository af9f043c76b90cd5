#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "vgs/backends.hpp"

namespace vgs {

namespace {

using json = nlohmann::json;

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string base_path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("provider endpoint '" + url + "' has no scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  std::string path = url.substr(path_start);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {url.substr(0, path_start), path};
}

std::string mime_for(const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

json post_once(const ProviderConfig& cfg, const std::string& path, const std::string& payload) {
  const auto url = split_url(cfg.endpoint_url);
  httplib::Client client(url.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.request_timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.request_timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (cfg.auth_token) headers.emplace("Authorization", "Bearer " + *cfg.auth_token);

  auto res = client.Post(url.base_path + path, headers, payload, "application/json");
  if (!res) throw NetworkError("request to " + cfg.endpoint_url + path + " failed: " + httplib::to_string(res.error()));
  if (res->status >= 500 || res->status == 408)
    throw NetworkError("provider returned HTTP " + std::to_string(res->status) + " for " + path);
  if (res->status < 200 || res->status >= 300)
    throw ProtocolError("provider returned HTTP " + std::to_string(res->status) + " for " + path + ": " +
                        res->body.substr(0, 200));
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("malformed provider response: ") + e.what());
  }
}

}  // namespace

namespace detail {

json post_json(const ProviderConfig& cfg, const std::string& path, const json& body) {
  const std::string payload = body.dump();
  return call_with_retries(cfg, [&] { return post_once(cfg, path, payload); });
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string image_payload(const ImageRef& image) {
  switch (image.kind) {
    case ImageRef::Kind::url:
      return image.value;
    case ImageRef::Kind::file_path:
      return "data:" + mime_for(image.value) + ";base64," + base64_encode(read_image_bytes(image));
    case ImageRef::Kind::sim_id:
      break;
  }
  throw ImageError("sim image '" + image.value + "' cannot be sent to an HTTP provider");
}

}  // namespace detail

HttpPolicyProvider::HttpPolicyProvider(ProviderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  split_url(cfg_.endpoint_url);
}

json HttpPolicyProvider::request_body(const GenerationRequest& req) const {
  json user_content = json::array();
  user_content.push_back({{"type", "text"}, {"text", req.prompt}});
  user_content.push_back({{"type", "image_url"}, {"image_url", {{"url", detail::image_payload(req.image)}}}});

  json messages = json::array();
  messages.push_back({{"role", "user"}, {"content", user_content}});

  json body{{"model", cfg_.model_id}, {"max_tokens", req.max_new_units}};
  if (!req.prefix.empty()) {
    std::string joined;
    for (const auto& s : req.prefix) {
      if (!joined.empty()) joined += ' ';
      joined += s;
    }
    messages.push_back({{"role", "assistant"}, {"content", joined}});
    body["continue_final_message"] = true;
    body["add_generation_prompt"] = false;
  }
  body["messages"] = std::move(messages);
  if (req.greedy) {
    body["greedy"] = true;
    body["top_k"] = 1;
  } else {
    body["temperature"] = req.temperature;
  }
  if (req.seed) body["seed"] = *req.seed;
  return body;
}

std::string HttpPolicyProvider::generate_continuation(const GenerationRequest& req) {
  req.validate();
  const json body = request_body(req);
  const json res = detail::post_json(cfg_, "/chat/completions", body);
  try {
    const auto& message = res.at("choices").at(0).at("message");
    const auto& content = message.at("content");
    if (content.is_null()) return "";
    return content.get<std::string>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("chat response missing choices[0].message.content: ") + e.what());
  }
}

HttpEmbeddingProvider::HttpEmbeddingProvider(ProviderConfig cfg, std::size_t dim) : cfg_(std::move(cfg)), dim_(dim) {
  cfg_.validate();
  split_url(cfg_.endpoint_url);
  if (dim_ == 0) throw ConfigError("embedding dim must be positive");
}

Embedding HttpEmbeddingProvider::request(const json& body) {
  const json res = detail::post_json(cfg_, "/embeddings", body);
  Embedding e;
  try {
    e.values = res.at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const json::exception& ex) {
    throw ProtocolError(std::string("embedding response missing data[0].embedding: ") + ex.what());
  }
  if (e.dim() != dim_)
    throw ProtocolError("embedding has dim " + std::to_string(e.dim()) + ", expected " + std::to_string(dim_));
  for (double v : e.values)
    if (!std::isfinite(v)) throw ProtocolError("embedding contains non-finite values");
  return e;
}

Embedding HttpEmbeddingProvider::embed_text(std::string_view text) {
  if (text.empty()) throw ConfigError("cannot embed empty text");
  return request({{"model", cfg_.model_id}, {"input", std::string(text)}, {"modality", "text"}});
}

Embedding HttpEmbeddingProvider::embed_image(const ImageRef& image) {
  return request({{"model", cfg_.model_id}, {"input", detail::image_payload(image)}, {"modality", "image"}});
}

}  // namespace vgs
