#include "vgs/backends.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <mutex>
#include <sstream>

namespace vgs {

ImageRef ImageRef::parse(std::string_view spec) {
  if (spec.starts_with("sim:")) return sim(std::string(spec.substr(4)));
  if (spec.starts_with("http://") || spec.starts_with("https://")) return url(std::string(spec));
  return file(std::string(spec));
}

std::string ImageRef::to_string() const {
  switch (kind) {
    case Kind::sim_id:
      return "sim:" + value;
    case Kind::url:
    case Kind::file_path:
      return value;
  }
  return value;
}

void ImageRef::validate() const {
  if (value.empty()) throw ConfigError("image reference has an empty value");
}

std::string_view to_string(ImageRef::Kind kind) {
  switch (kind) {
    case ImageRef::Kind::file_path:
      return "file";
    case ImageRef::Kind::url:
      return "url";
    case ImageRef::Kind::sim_id:
      return "sim";
  }
  return "file";
}

void to_json(nlohmann::json& j, const ImageRef& image) {
  j = nlohmann::json{{"kind", to_string(image.kind)}, {"value", image.value}};
}

void from_json(const nlohmann::json& j, ImageRef& image) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "file")
    image.kind = ImageRef::Kind::file_path;
  else if (kind == "url")
    image.kind = ImageRef::Kind::url;
  else if (kind == "sim")
    image.kind = ImageRef::Kind::sim_id;
  else
    throw ConfigError("unknown image kind '" + kind + "'");
  image.value = j.at("value").get<std::string>();
  image.validate();
}

std::string read_image_bytes(const ImageRef& image) {
  if (image.kind != ImageRef::Kind::file_path) throw ImageError("not a file image: " + image.to_string());
  std::ifstream in(image.value, std::ios::binary);
  if (!in) throw ImageError("cannot read image file '" + image.value + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw ImageError("error while reading image file '" + image.value + "'");
  return bytes;
}

void GenerationRequest::validate() const {
  image.validate();
  if (!greedy && !(temperature >= 0.0 && std::isfinite(temperature)))
    throw ConfigError("temperature must be a finite value >= 0");
  if (max_new_units < 1) throw ConfigError("max_new_units must be >= 1");
}

void ProviderConfig::validate() const {
  if (endpoint_url.empty()) throw ConfigError("provider endpoint url is empty");
  if (request_timeout.count() <= 0) throw ConfigError("provider request timeout must be > 0");
  if (max_retries < 0) throw ConfigError("provider max_retries must be >= 0");
  if (retry_backoff.count() < 0) throw ConfigError("provider retry backoff must be >= 0");
}

PairedEmbeddingProvider::PairedEmbeddingProvider(std::shared_ptr<EmbeddingProvider> text,
                                                 std::shared_ptr<EmbeddingProvider> image)
    : text_(std::move(text)), image_(std::move(image)) {
  if (!text_ || !image_) throw ConfigError("paired embedding provider needs both halves");
  if (text_->dim() != image_->dim())
    throw ConfigError("embedding dimension mismatch: text model '" + text_->model_id() + "' has dim " +
                      std::to_string(text_->dim()) + ", image model '" + image_->model_id() + "' has dim " +
                      std::to_string(image_->dim()));
}

std::string PairedEmbeddingProvider::model_id() const { return text_->model_id() + "+" + image_->model_id(); }

Embedding CachingEmbeddingProvider::lookup_or(const std::string& key, const std::function<Embedding()>& compute) {
  {
    std::shared_lock lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  Embedding e = compute();
  std::unique_lock lock(mutex_);
  return cache_.try_emplace(key, std::move(e)).first->second;
}

Embedding CachingEmbeddingProvider::embed_text(std::string_view text) {
  std::string key = "t:";
  key.append(text);
  return lookup_or(key, [&] { return inner_->embed_text(text); });
}

Embedding CachingEmbeddingProvider::embed_image(const ImageRef& image) {
  const std::string key = "i:" + std::string(to_string(image.kind)) + ":" + image.value;
  return lookup_or(key, [&] { return inner_->embed_image(image); });
}

}  // namespace vgs
