#include "vgs/reward.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "vgs/segmenter.hpp"

namespace vgs {

RewardScore RewardScore::checked(double v) {
  if (!std::isfinite(v) || v < -1.0 - 1e-9 || v > 1.0 + 1e-9)
    throw ShapeError("reward " + std::to_string(v) + " outside [-1, 1]");
  return {std::clamp(v, -1.0, 1.0)};
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ShapeError("cosine: dimension mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ShapeError("cosine: zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

ProcessRewardModel::ProcessRewardModel(std::shared_ptr<EmbeddingProvider> embedder) : embedder_(std::move(embedder)) {
  if (!embedder_) throw ConfigError("reward model needs an embedding provider");
}

RewardScore ProcessRewardModel::score(std::string_view sentence, const ImageRef& image) {
  if (trim(sentence).empty()) throw ConfigError("cannot score an empty sentence");

  std::string key = std::string(to_string(image.kind));
  key += '\0';
  key += image.value;
  key += '\0';
  key.append(sentence);
  {
    std::shared_lock lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  const auto text = embedder_->embed_text(sentence);
  const auto img = embedder_->embed_image(image);
  const auto s = RewardScore::checked(cosine(text, img));
  std::unique_lock lock(mutex_);
  cache_.insert_or_assign(std::move(key), s);
  return s;
}

RewardScore ProcessRewardModel::mean_over_response(std::span<const std::string> response, const ImageRef& image) {
  if (response.empty()) throw ConfigError("cannot score an empty response");
  double sum = 0.0;
  for (const auto& s : response) sum += score(s, image).value;
  return RewardScore::checked(sum / static_cast<double>(response.size()));
}

}  // namespace vgs
