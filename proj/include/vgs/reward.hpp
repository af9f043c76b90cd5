#pragma once

// Process reward: image/text embedding cosine similarity of one step.

#include <memory>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vgs/backends.hpp"

namespace vgs {

/// Cosine similarity; value lies in [-1, 1].
struct RewardScore {
  double value = 0.0;

  /// Throws if `v` is non-finite or outside [-1, 1] beyond 1e-9.
  static RewardScore checked(double v);
  friend auto operator<=>(const RewardScore&, const RewardScore&) = default;
};

/// a·b / (|a||b|). Throws ShapeError on dimension mismatch or a zero vector.
double cosine(std::span<const double> a, std::span<const double> b);

inline double cosine(const Embedding& a, const Embedding& b) { return cosine(a.values, b.values); }

/// Scores (sentence, image) pairs with an embedding provider and memoizes the
/// result per content key. Safe for concurrent use.
class ProcessRewardModel {
 public:
  explicit ProcessRewardModel(std::shared_ptr<EmbeddingProvider> embedder);

  RewardScore score(std::string_view sentence, const ImageRef& image);

  /// Arithmetic mean of per-sentence scores. Throws on an empty response.
  RewardScore mean_over_response(std::span<const std::string> response, const ImageRef& image);

  EmbeddingProvider& embedder() { return *embedder_; }
  std::shared_ptr<EmbeddingProvider> shared_embedder() const { return embedder_; }

 private:
  std::shared_ptr<EmbeddingProvider> embedder_;
  std::shared_mutex mutex_;
  std::unordered_map<std::string, RewardScore> cache_;
};

}  // namespace vgs
