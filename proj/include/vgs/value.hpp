#pragma once

// Long-term value model over (sentence, image) states, trained with
// semi-gradient TD(0):
//
//   target = r + gamma * V(next)      (r alone when the step is terminal)
//   loss   = mean over batch of (target - V(current))^2, target held fixed
//
// Three heads share one interface: a lookup table keyed by the exact feature
// vector, a linear map, and a single tanh hidden layer.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vgs/backends.hpp"

namespace vgs {

/// L2-normalized text embedding followed by L2-normalized image embedding.
using StateFeatures = std::vector<double>;

StateFeatures featurize(std::string_view sentence, const ImageRef& image, EmbeddingProvider& embedder);

struct TDSample {
  StateFeatures current;
  double reward = 0.0;
  std::optional<StateFeatures> next;  ///< absent on the last step of a response

  bool terminal() const { return !next.has_value(); }
};

double td_target(double reward, double v_next, bool terminal, double gamma);

enum class Architecture { tabular, linear, one_hidden_layer };

std::string_view to_string(Architecture a);
Architecture architecture_from_string(std::string_view s);

class ValueHead {
 public:
  /// Unseen feature vectors predict `default_value`.
  static ValueHead tabular(std::size_t input_dim, double default_value = 0.0);
  /// Zero bias, weights U(-0.1/sqrt(d), 0.1/sqrt(d)).
  static ValueHead linear(std::size_t input_dim, std::uint64_t seed = 0);
  /// V(x) = w2 . tanh(W1 x + b1) + b2; zero biases, W1 ~ U(+-1/sqrt(d)), w2 ~ U(+-1/sqrt(h)).
  static ValueHead one_hidden_layer(std::size_t input_dim, std::size_t hidden_dim = 256, std::uint64_t seed = 0);

  Architecture architecture() const { return arch_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }

  std::optional<double> trained_gamma() const { return trained_gamma_; }
  void set_trained_gamma(double gamma) { trained_gamma_ = gamma; }

  double predict(std::span<const double> features) const;

  /// grad += scale * dV/dparams at `features`; returns V(features).
  /// Tabular heads only touch the slot of an already registered key.
  double accumulate_gradient(std::span<const double> features, double scale, std::span<double> grad) const;

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  // Tabular heads.
  double default_value() const { return default_value_; }
  std::optional<std::size_t> slot(std::span<const double> features) const;
  /// Registers `features` (initialized to the default value) if new.
  std::size_t ensure_slot(std::span<const double> features);
  void set_value(std::span<const double> features, double value);
  const std::vector<StateFeatures>& table_keys() const { return keys_; }

 private:
  ValueHead(Architecture arch, std::size_t input_dim, std::size_t hidden_dim);
  void check_shape(std::span<const double> features) const;

  Architecture arch_;
  std::size_t input_dim_;
  std::size_t hidden_dim_ = 0;
  std::vector<double> params_;
  std::optional<double> trained_gamma_;

  double default_value_ = 0.0;
  std::vector<StateFeatures> keys_;
  std::unordered_map<std::string, std::size_t> index_;

  friend ValueHead load_checkpoint(const std::filesystem::path& path);
};

enum class Optimizer { plain_sgd, adaptive_moment };

std::string_view to_string(Optimizer o);
Optimizer optimizer_from_string(std::string_view s);

/// Defaults suit a real vision-language model; the sim needs larger steps.
struct TrainConfig {
  double gamma = 0.9;
  double learning_rate = 5e-5;
  std::size_t batch_size = 1024;
  std::size_t epochs = 3;
  std::uint64_t shuffle_seed = 0;
  Optimizer optimizer = Optimizer::adaptive_moment;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;  ///< sample-weighted mean of per-batch squared TD error
  std::size_t batches = 0;
};

struct TrainResult {
  ValueHead head;
  std::vector<EpochStats> epochs;
};

/// Throws NumericalError (with the global batch index) on a non-finite loss.
TrainResult train(ValueHead head, std::span<const TDSample> dataset, const TrainConfig& cfg);

struct GradientCheck {
  double max_relative_error = 0.0;
  double analytic_norm = 0.0;
};

/// Analytic gradient of (target - V(current))^2 with the target frozen vs.
/// central differences (step 1e-5). Relative error denominators are floored
/// at 1e-6 so vanishing components are compared absolutely.
GradientCheck gradient_check(const ValueHead& head, const TDSample& sample, double gamma);

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const ValueHead& head, const std::filesystem::path& path);
ValueHead load_checkpoint(const std::filesystem::path& path);

}  // namespace vgs
