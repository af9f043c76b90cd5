#include "vgs/value.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "vgs/rng.hpp"

namespace vgs {

namespace {

using json = nlohmann::json;

std::string key_bytes(std::span<const double> features) {
  std::string key(features.size() * sizeof(double), '\0');
  std::memcpy(key.data(), features.data(), key.size());
  return key;
}

void append_normalized(StateFeatures& out, const Embedding& e, std::string_view what) {
  double norm = 0.0;
  for (double v : e.values) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw ShapeError(std::string(what) + " embedding has zero or non-finite norm");
  for (double v : e.values) out.push_back(v / norm);
}

}  // namespace

StateFeatures featurize(std::string_view sentence, const ImageRef& image, EmbeddingProvider& embedder) {
  if (sentence.empty()) throw ConfigError("cannot featurize an empty sentence");
  const auto text = embedder.embed_text(sentence);
  const auto img = embedder.embed_image(image);
  StateFeatures f;
  f.reserve(text.dim() + img.dim());
  append_normalized(f, text, "text");
  append_normalized(f, img, "image");
  return f;
}

double td_target(double reward, double v_next, bool terminal, double gamma) {
  return terminal ? reward : reward + gamma * v_next;
}

std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::tabular:
      return "tabular";
    case Architecture::linear:
      return "linear";
    case Architecture::one_hidden_layer:
      return "one-hidden-layer";
  }
  return "linear";
}

Architecture architecture_from_string(std::string_view s) {
  if (s == "tabular") return Architecture::tabular;
  if (s == "linear") return Architecture::linear;
  if (s == "one-hidden-layer" || s == "mlp") return Architecture::one_hidden_layer;
  throw ConfigError("unknown value-head architecture '" + std::string(s) + "'");
}

std::string_view to_string(Optimizer o) { return o == Optimizer::plain_sgd ? "plain-sgd" : "adaptive-moment"; }

Optimizer optimizer_from_string(std::string_view s) {
  if (s == "plain-sgd" || s == "sgd") return Optimizer::plain_sgd;
  if (s == "adaptive-moment" || s == "adam") return Optimizer::adaptive_moment;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

ValueHead::ValueHead(Architecture arch, std::size_t input_dim, std::size_t hidden_dim)
    : arch_(arch), input_dim_(input_dim), hidden_dim_(hidden_dim) {
  if (input_dim_ == 0) throw ConfigError("value head input dim must be positive");
}

ValueHead ValueHead::tabular(std::size_t input_dim, double default_value) {
  ValueHead h(Architecture::tabular, input_dim, 0);
  h.default_value_ = default_value;
  return h;
}

ValueHead ValueHead::linear(std::size_t input_dim, std::uint64_t seed) {
  ValueHead h(Architecture::linear, input_dim, 0);
  Rng rng(seed);
  const double scale = 0.1 / std::sqrt(static_cast<double>(input_dim));
  h.params_.resize(input_dim + 1, 0.0);
  for (std::size_t i = 0; i < input_dim; ++i) h.params_[i] = rng.uniform(-scale, scale);
  return h;
}

ValueHead ValueHead::one_hidden_layer(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed) {
  if (hidden_dim == 0) throw ConfigError("hidden dim must be positive");
  ValueHead h(Architecture::one_hidden_layer, input_dim, hidden_dim);
  Rng rng(seed);
  // Layout: W1 (hidden x input, row-major) | b1 (hidden) | w2 (hidden) | b2.
  h.params_.assign(hidden_dim * input_dim + 2 * hidden_dim + 1, 0.0);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (std::size_t i = 0; i < hidden_dim * input_dim; ++i) h.params_[i] = rng.uniform(-s1, s1);
  const std::size_t w2 = hidden_dim * input_dim + hidden_dim;
  for (std::size_t j = 0; j < hidden_dim; ++j) h.params_[w2 + j] = rng.uniform(-s2, s2);
  return h;
}

void ValueHead::check_shape(std::span<const double> features) const {
  if (features.size() != input_dim_)
    throw ShapeError("value head expects " + std::to_string(input_dim_) + " features, got " +
                     std::to_string(features.size()));
}

std::optional<std::size_t> ValueHead::slot(std::span<const double> features) const {
  check_shape(features);
  if (auto it = index_.find(key_bytes(features)); it != index_.end()) return it->second;
  return std::nullopt;
}

std::size_t ValueHead::ensure_slot(std::span<const double> features) {
  if (arch_ != Architecture::tabular) throw ConfigError("ensure_slot on a non-tabular head");
  check_shape(features);
  auto [it, inserted] = index_.try_emplace(key_bytes(features), keys_.size());
  if (inserted) {
    keys_.emplace_back(features.begin(), features.end());
    params_.push_back(default_value_);
  }
  return it->second;
}

void ValueHead::set_value(std::span<const double> features, double value) { params_[ensure_slot(features)] = value; }

double ValueHead::predict(std::span<const double> features) const {
  check_shape(features);
  switch (arch_) {
    case Architecture::tabular: {
      const auto s = slot(features);
      return s ? params_[*s] : default_value_;
    }
    case Architecture::linear: {
      double v = params_[input_dim_];
      for (std::size_t i = 0; i < input_dim_; ++i) v += params_[i] * features[i];
      return v;
    }
    case Architecture::one_hidden_layer: {
      const std::size_t d = input_dim_;
      const std::size_t h = hidden_dim_;
      const double* w1 = params_.data();
      const double* b1 = w1 + h * d;
      const double* w2 = b1 + h;
      double v = w2[h];
      for (std::size_t j = 0; j < h; ++j) {
        double z = b1[j];
        for (std::size_t k = 0; k < d; ++k) z += w1[j * d + k] * features[k];
        v += w2[j] * std::tanh(z);
      }
      return v;
    }
  }
  return 0.0;
}

double ValueHead::accumulate_gradient(std::span<const double> features, double scale, std::span<double> grad) const {
  check_shape(features);
  if (grad.size() != params_.size()) throw ShapeError("gradient buffer size does not match parameter count");
  switch (arch_) {
    case Architecture::tabular: {
      const auto s = slot(features);
      if (!s) return default_value_;
      grad[*s] += scale;
      return params_[*s];
    }
    case Architecture::linear: {
      double v = params_[input_dim_];
      for (std::size_t i = 0; i < input_dim_; ++i) {
        v += params_[i] * features[i];
        grad[i] += scale * features[i];
      }
      grad[input_dim_] += scale;
      return v;
    }
    case Architecture::one_hidden_layer: {
      const std::size_t d = input_dim_;
      const std::size_t h = hidden_dim_;
      const double* w1 = params_.data();
      const double* b1 = w1 + h * d;
      const double* w2 = b1 + h;
      double* g_w1 = grad.data();
      double* g_b1 = g_w1 + h * d;
      double* g_w2 = g_b1 + h;
      double v = w2[h];
      for (std::size_t j = 0; j < h; ++j) {
        double z = b1[j];
        for (std::size_t k = 0; k < d; ++k) z += w1[j * d + k] * features[k];
        const double a = std::tanh(z);
        v += w2[j] * a;
        g_w2[j] += scale * a;
        const double dz = scale * w2[j] * (1.0 - a * a);
        g_b1[j] += dz;
        for (std::size_t k = 0; k < d; ++k) g_w1[j * d + k] += dz * features[k];
      }
      g_w2[h] += scale;
      return v;
    }
  }
  return 0.0;
}

void TrainConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
}

namespace {

class ParameterUpdater {
 public:
  ParameterUpdater(Optimizer kind, double lr, std::size_t n) : kind_(kind), lr_(lr) {
    if (kind_ == Optimizer::adaptive_moment) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    }
  }

  void step(std::span<double> params, std::span<const double> grad) {
    if (kind_ == Optimizer::plain_sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * grad[i];
      return;
    }
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1 * m_[i] + (1.0 - beta1) * grad[i];
      v_[i] = beta2 * v_[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  }

 private:
  Optimizer kind_;
  double lr_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

}  // namespace

TrainResult train(ValueHead head, std::span<const TDSample> dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("training dataset is empty");
  for (const auto& s : dataset) {
    if (s.current.size() != head.input_dim() || (s.next && s.next->size() != head.input_dim()))
      throw ShapeError("training sample feature dim does not match the value head");
  }

  const bool tabular = head.architecture() == Architecture::tabular;
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> cur_slot;
  std::vector<std::size_t> next_slot;
  if (tabular) {
    cur_slot.reserve(dataset.size());
    next_slot.reserve(dataset.size());
    for (const auto& s : dataset) {
      cur_slot.push_back(head.ensure_slot(s.current));
      next_slot.push_back(s.next ? head.ensure_slot(*s.next) : kNone);
    }
  }

  const std::size_t n = dataset.size();
  const std::size_t batch = std::min(cfg.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(cfg.shuffle_seed);
  ParameterUpdater updater(cfg.optimizer, cfg.learning_rate, head.parameters().size());
  std::vector<double> grad(head.parameters().size(), 0.0);
  std::vector<double> targets(batch);

  TrainResult result{std::move(head), {}};
  ValueHead& h = result.head;
  std::size_t global_batch = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += batch, ++batches, ++global_batch) {
      const std::size_t end = std::min(begin + batch, n);
      const double inv = 1.0 / static_cast<double>(end - begin);
      std::fill(grad.begin(), grad.end(), 0.0);

      // Targets use the parameters as they stand before this batch's update.
      double loss = 0.0;
      if (tabular) {
        const auto p = h.parameters();
        for (std::size_t k = begin; k < end; ++k) {
          const std::size_t i = order[k];
          const double v_next = next_slot[i] == kNone ? 0.0 : p[next_slot[i]];
          const double err = td_target(dataset[i].reward, v_next, next_slot[i] == kNone, cfg.gamma) - p[cur_slot[i]];
          loss += err * err;
          grad[cur_slot[i]] -= 2.0 * inv * err;
        }
      } else {
        for (std::size_t k = begin; k < end; ++k) {
          const auto& s = dataset[order[k]];
          targets[k - begin] = td_target(s.reward, s.next ? h.predict(*s.next) : 0.0, s.terminal(), cfg.gamma);
        }
        for (std::size_t k = begin; k < end; ++k) {
          const auto& s = dataset[order[k]];
          const double v = h.predict(s.current);
          const double err = targets[k - begin] - v;
          loss += err * err;
          h.accumulate_gradient(s.current, -2.0 * inv * err, grad);
        }
      }
      if (!std::isfinite(loss))
        throw NumericalError("non-finite TD loss at batch " + std::to_string(global_batch) + " (epoch " +
                                 std::to_string(epoch) + "); learning rate " + std::to_string(cfg.learning_rate) +
                                 " is likely too high",
                             global_batch);
      loss_sum += loss;
      updater.step(h.parameters(), grad);
    }
    result.epochs.push_back({epoch, loss_sum / static_cast<double>(n), batches});
  }
  for (double p : h.parameters())
    if (!std::isfinite(p)) throw NumericalError("training produced non-finite parameters", global_batch);
  h.set_trained_gamma(cfg.gamma);
  return result;
}

GradientCheck gradient_check(const ValueHead& head, const TDSample& sample, double gamma) {
  if (head.architecture() == Architecture::tabular) throw ConfigError("gradient check needs a parametric head");
  const double target = td_target(sample.reward, sample.next ? head.predict(*sample.next) : 0.0, sample.terminal(), gamma);

  std::vector<double> analytic(head.parameters().size(), 0.0);
  const double v = head.predict(sample.current);
  head.accumulate_gradient(sample.current, -2.0 * (target - v), analytic);

  constexpr double step = 1e-5;
  ValueHead probe = head;
  auto params = probe.parameters();
  GradientCheck out;
  double norm2 = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = target - probe.predict(sample.current);
    params[i] = saved - step;
    const double down = target - probe.predict(sample.current);
    params[i] = saved;
    const double numeric = (up * up - down * down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(analytic[i] - numeric) / denom);
    norm2 += analytic[i] * analytic[i];
  }
  out.analytic_norm = std::sqrt(norm2);
  return out;
}

void save_checkpoint(const ValueHead& head, const std::filesystem::path& path) {
  json j{{"format", "vgs.value_head"},
         {"version", kCheckpointVersion},
         {"architecture", to_string(head.architecture())},
         {"input_dim", head.input_dim()},
         {"hidden_dim", head.hidden_dim()},
         {"gamma", head.trained_gamma() ? json(*head.trained_gamma()) : json(nullptr)}};
  if (head.architecture() == Architecture::tabular) {
    j["default_value"] = head.default_value();
    json table = json::array();
    const auto p = head.parameters();
    for (std::size_t i = 0; i < head.table_keys().size(); ++i) table.push_back({{"key", head.table_keys()[i]}, {"value", p[i]}});
    j["table"] = std::move(table);
  } else {
    j["params"] = std::vector<double>(head.parameters().begin(), head.parameters().end());
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint '" + path.string() + "' for writing");
  out << j.dump(1) << '\n';
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

ValueHead load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("checkpoint '" + path.string() + "' is not valid JSON: " + e.what(), 0);
  }
  try {
    if (!j.is_object() || j.value("format", "") != "vgs.value_head")
      throw SchemaVersionError("'" + path.string() + "' is not a value-head checkpoint", 0);
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw SchemaVersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                   std::to_string(kCheckpointVersion) + ")",
                               0);
    const auto arch = architecture_from_string(j.at("architecture").get<std::string>());
    const auto dim = j.at("input_dim").get<std::size_t>();
    const auto hidden = j.at("hidden_dim").get<std::size_t>();

    ValueHead head = arch == Architecture::tabular ? ValueHead::tabular(dim, j.at("default_value").get<double>())
                     : arch == Architecture::linear ? ValueHead::linear(dim)
                                                    : ValueHead::one_hidden_layer(dim, hidden);
    if (arch == Architecture::tabular) {
      for (const auto& entry : j.at("table")) {
        const auto key = entry.at("key").get<std::vector<double>>();
        if (key.size() != dim) throw ParseError("checkpoint table key has wrong dimension", 0);
        head.set_value(key, entry.at("value").get<double>());
      }
    } else {
      const auto params = j.at("params").get<std::vector<double>>();
      if (params.size() != head.params_.size())
        throw ParseError("checkpoint has " + std::to_string(params.size()) + " parameters, architecture needs " +
                             std::to_string(head.params_.size()),
                         0);
      head.params_ = params;
    }
    if (!j.at("gamma").is_null()) head.set_trained_gamma(j.at("gamma").get<double>());
    return head;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint '" + path.string() + "' is malformed: " + e.what(), 0);
  } catch (const ConfigError& e) {
    throw ParseError("checkpoint '" + path.string() + "' is malformed: " + e.what(), 0);
  }
}

}  // namespace vgs
