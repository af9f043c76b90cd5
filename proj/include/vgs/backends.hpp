#pragma once

// Provider interfaces for candidate generation and embeddings. Everything
// above this layer talks to PolicyProvider / EmbeddingProvider only, so the
// HTTP clients and the simulator are interchangeable.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "vgs/error.hpp"

namespace vgs {

struct ImageRef {
  enum class Kind { file_path, url, sim_id };

  Kind kind = Kind::file_path;
  std::string value;

  static ImageRef file(std::string path) { return {Kind::file_path, std::move(path)}; }
  static ImageRef url(std::string u) { return {Kind::url, std::move(u)}; }
  static ImageRef sim(std::string id) { return {Kind::sim_id, std::move(id)}; }

  /// "sim:<id>" → sim id, "http(s)://..." → url, anything else → file path.
  static ImageRef parse(std::string_view spec);

  /// Inverse of parse().
  std::string to_string() const;

  /// Throws ConfigError on an empty value.
  void validate() const;

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

std::string_view to_string(ImageRef::Kind kind);

void to_json(nlohmann::json& j, const ImageRef& image);
void from_json(const nlohmann::json& j, ImageRef& image);

/// Reads a file-path image; throws ImageError if it cannot be read.
std::string read_image_bytes(const ImageRef& image);

struct GenerationRequest {
  std::string prompt;
  ImageRef image;
  std::vector<std::string> prefix;  ///< committed sentences y_<i
  double temperature = 1.0;         ///< ignored when greedy
  bool greedy = false;
  int max_new_units = 256;
  std::optional<std::uint64_t> seed;

  void validate() const;
};

struct ProviderConfig {
  std::string endpoint_url;
  std::string model_id;
  std::optional<std::string> auth_token;
  std::chrono::milliseconds request_timeout{30'000};
  int max_retries = 2;
  std::chrono::milliseconds retry_backoff{250};

  void validate() const;
};

struct Embedding {
  std::vector<double> values;
  std::size_t dim() const { return values.size(); }
};

class PolicyProvider {
 public:
  virtual ~PolicyProvider() = default;

  /// Raw continuation text; empty means the policy emitted only EOS.
  virtual std::string generate_continuation(const GenerationRequest& req) = 0;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::size_t dim() const = 0;
  virtual std::string model_id() const = 0;
  virtual Embedding embed_text(std::string_view text) = 0;
  virtual Embedding embed_image(const ImageRef& image) = 0;
};

/// Text half from one provider, image half from another. Dimensions must
/// agree; checked at construction.
class PairedEmbeddingProvider final : public EmbeddingProvider {
 public:
  PairedEmbeddingProvider(std::shared_ptr<EmbeddingProvider> text, std::shared_ptr<EmbeddingProvider> image);

  std::size_t dim() const override { return text_->dim(); }
  std::string model_id() const override;
  Embedding embed_text(std::string_view text) override { return text_->embed_text(text); }
  Embedding embed_image(const ImageRef& image) override { return image_->embed_image(image); }

 private:
  std::shared_ptr<EmbeddingProvider> text_;
  std::shared_ptr<EmbeddingProvider> image_;
};

/// Memoizes another provider. Safe for concurrent use.
class CachingEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit CachingEmbeddingProvider(std::shared_ptr<EmbeddingProvider> inner) : inner_(std::move(inner)) {}

  std::size_t dim() const override { return inner_->dim(); }
  std::string model_id() const override { return inner_->model_id(); }
  Embedding embed_text(std::string_view text) override;
  Embedding embed_image(const ImageRef& image) override;

 private:
  Embedding lookup_or(const std::string& key, const std::function<Embedding()>& compute);

  std::shared_ptr<EmbeddingProvider> inner_;
  std::shared_mutex mutex_;
  std::unordered_map<std::string, Embedding> cache_;
};

/// Calls `fn` until it succeeds, a non-retryable error is thrown, or
/// 1 + cfg.max_retries attempts have been made. Backoff doubles per retry.
template <class Fn, class Sleep>
auto call_with_retries(const ProviderConfig& cfg, Fn&& fn, Sleep&& sleep) -> decltype(fn()) {
  auto delay = cfg.retry_backoff;
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const ProviderError& e) {
      if (!e.retryable() || attempt >= cfg.max_retries) throw;
    }
    sleep(delay);
    delay *= 2;
  }
}

template <class Fn>
auto call_with_retries(const ProviderConfig& cfg, Fn&& fn) -> decltype(fn()) {
  return call_with_retries(cfg, std::forward<Fn>(fn), [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); });
}

/// OpenAI-style chat-completion client. See docs/provider_protocol.md.
class HttpPolicyProvider final : public PolicyProvider {
 public:
  explicit HttpPolicyProvider(ProviderConfig cfg);
  std::string generate_continuation(const GenerationRequest& req) override;

  /// Request body sent for `req`; exposed for protocol tests.
  nlohmann::json request_body(const GenerationRequest& req) const;

 private:
  ProviderConfig cfg_;
};

/// Embedding endpoint client with a declared output dimension.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(ProviderConfig cfg, std::size_t dim);

  std::size_t dim() const override { return dim_; }
  std::string model_id() const override { return cfg_.model_id; }
  Embedding embed_text(std::string_view text) override;
  Embedding embed_image(const ImageRef& image) override;

 private:
  Embedding request(const nlohmann::json& body);

  ProviderConfig cfg_;
  std::size_t dim_;
};

namespace detail {

/// POSTs JSON to cfg.endpoint_url + path with retries; returns the parsed body.
nlohmann::json post_json(const ProviderConfig& cfg, const std::string& path, const nlohmann::json& body);

std::string base64_encode(std::string_view bytes);

/// "data:<mime>;base64,<payload>" for file images, the URL itself for url images.
std::string image_payload(const ImageRef& image);

}  // namespace detail

}  // namespace vgs
