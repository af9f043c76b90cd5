#pragma once

// Stepwise inference-time search. At every step the policy proposes N x K
// continuations (plus one greedy continuation), each truncated to its first
// sentence; the scorer rates every candidate and the best one is committed.
// Decoding stops once every candidate is empty (EOS) or max_steps is reached.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vgs/backends.hpp"
#include "vgs/reward.hpp"
#include "vgs/segmenter.hpp"
#include "vgs/value.hpp"

namespace vgs {

enum class Guidance { value, prm, none };

std::string_view to_string(Guidance g);
Guidance guidance_from_string(std::string_view s);

struct SearchConfig {
  std::vector<double> temperatures = {0.1, 0.3, 0.5, 0.7, 0.9};
  std::size_t samples_per_temperature = 1;  ///< K
  bool include_greedy = true;
  std::size_t max_steps = 40;
  Guidance guidance = Guidance::value;
  std::uint64_t seed = 0;
  std::size_t max_in_flight = 6;
  int max_new_units = 256;

  void validate() const;
  std::size_t candidates_per_step() const;
};

void to_json(nlohmann::json& j, const SearchConfig& c);
void from_json(const nlohmann::json& j, SearchConfig& c);

struct SearchState {
  std::string prompt;
  ImageRef image;
  std::vector<std::string> steps;
};

/// Rates one candidate sentence given the committed prefix.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual Guidance kind() const = 0;
  virtual double score(const SearchState& state, const std::string& sentence) = 0;
};

/// V(featurize(sentence, image)).
class ValueScorer final : public StepScorer {
 public:
  ValueScorer(std::shared_ptr<const ValueHead> head, std::shared_ptr<EmbeddingProvider> embedder);
  Guidance kind() const override { return Guidance::value; }
  double score(const SearchState& state, const std::string& sentence) override;

 private:
  std::shared_ptr<const ValueHead> head_;
  std::shared_ptr<EmbeddingProvider> embedder_;
};

/// Immediate reward only.
class PrmScorer final : public StepScorer {
 public:
  explicit PrmScorer(std::shared_ptr<ProcessRewardModel> prm);
  Guidance kind() const override { return Guidance::prm; }
  double score(const SearchState& state, const std::string& sentence) override;

 private:
  std::shared_ptr<ProcessRewardModel> prm_;
};

struct StepCandidate {
  std::string sentence;
  std::optional<double> temperature;  ///< absent for the greedy candidate
  std::uint64_t seed = 0;
};

struct StepChoice {
  std::vector<StepCandidate> candidates;  ///< non-empty candidates, in generation order
  std::vector<double> scores;
  std::size_t chosen_index = 0;
  std::size_t dropped_empty = 0;
  std::optional<double> wall_ms;
};

struct BonResponse {
  std::string text;
  std::vector<std::string> sentences;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  double score = 0.0;
};

struct SearchTrace {
  std::string method;  ///< value-search | prm-search | greedy | bon
  std::string prompt;
  ImageRef image;
  SearchConfig config;
  std::vector<StepChoice> steps;
  std::vector<std::string> sentences;  ///< committed sentences
  std::string final_response;          ///< sentences joined by single spaces
  std::string stop_reason;             ///< eos | max-steps | aborted | degenerate
  std::size_t provider_calls = 0;
  std::vector<BonResponse> bon_responses;  ///< best-of-n only
  std::optional<std::size_t> bon_chosen;
  std::optional<double> wall_ms;
};

void to_json(nlohmann::json& j, const SearchTrace& t);
void from_json(const nlohmann::json& j, SearchTrace& t);

/// Source-method label for a guidance mode.
std::string method_name(Guidance g);

/// Thrown when a provider call fails mid-search; carries the partial trace.
class SearchAborted : public ProviderError {
 public:
  SearchAborted(const std::string& what, SearchTrace partial)
      : ProviderError(what), trace_(std::make_shared<SearchTrace>(std::move(partial))) {}
  const SearchTrace& trace() const { return *trace_; }

 private:
  std::shared_ptr<SearchTrace> trace_;
};

struct SearchOptions {
  SegmentationRules rules;
  bool record_timing = false;
};

/// Seed of candidate `k` at temperature index `t` of step `step`; the greedy
/// candidate uses t == SIZE_MAX. Independent of K, so candidate sets nest.
std::uint64_t candidate_seed(std::uint64_t search_seed, std::size_t step, std::size_t t, std::size_t k);

/// Index of the first maximal score.
std::size_t first_argmax(const std::vector<double>& scores);

/// Throws DegeneratePolicyError if every candidate is empty at the first
/// step, SearchAborted on a provider failure. `scorer` may be null only when
/// cfg.guidance == none (the first candidate is then committed).
SearchTrace guided_search(const std::string& prompt, const ImageRef& image, const SearchConfig& cfg, StepScorer* scorer,
                          PolicyProvider& policy, const SearchOptions& options = {});

struct GreedyResult {
  SearchTrace trace;
  bool degenerate = false;  ///< EOS at the very first step
};

GreedyResult greedy_decode(const std::string& prompt, const ImageRef& image, PolicyProvider& policy,
                           std::size_t max_steps = 40, const SearchOptions& options = {});

/// Picks one of several complete responses.
class ResponseSelector {
 public:
  struct Selection {
    std::vector<double> scores;
    std::size_t chosen = 0;
  };
  virtual ~ResponseSelector() = default;
  virtual std::string name() const = 0;
  virtual Selection select(const std::string& prompt, const ImageRef& image,
                           const std::vector<std::vector<std::string>>& responses) = 0;
};

/// Mean per-sentence reward; empty responses score -infinity.
class MeanPrmSelector final : public ResponseSelector {
 public:
  explicit MeanPrmSelector(std::shared_ptr<ProcessRewardModel> prm) : prm_(std::move(prm)) {}
  std::string name() const override { return "mean-prm"; }
  Selection select(const std::string& prompt, const ImageRef& image,
                   const std::vector<std::vector<std::string>>& responses) override;

 private:
  std::shared_ptr<ProcessRewardModel> prm_;
};

struct BestOfNConfig {
  std::size_t n = 30;
  std::vector<double> temperatures = {0.1, 0.3, 0.5, 0.7, 0.9};
  std::uint64_t seed = 0;
  std::size_t max_in_flight = 6;
  int max_new_units = 256;

  void validate() const;
};

/// Response i is sampled at temperatures[i % |temperatures|] (round-robin), so
/// a remainder goes to the first temperatures.
SearchTrace best_of_n(const std::string& prompt, const ImageRef& image, const BestOfNConfig& cfg,
                      ResponseSelector& selector, PolicyProvider& policy, const SearchOptions& options = {});

struct SweepItem {
  std::string prompt;
  ImageRef image;
};

struct SweepFailure {
  std::size_t item = 0;
  std::string error;
};

struct SweepRow {
  std::size_t step_size = 0;
  std::size_t succeeded = 0;
  std::vector<SweepFailure> failures;
  double mean_steps = 0.0;
  double mean_chosen_score = 0.0;        ///< mean over runs of the summed chosen scores
  std::optional<double> mean_metric;     ///< mean of the caller's metric, when given
  std::vector<std::string> responses;    ///< per item; empty for failed cells
};

struct SweepTable {
  double temperature = 0.5;
  std::string guidance;
  std::vector<SweepRow> rows;  ///< ascending step size
};

void to_json(nlohmann::json& j, const SweepTable& t);
void from_json(const nlohmann::json& j, SweepTable& t);

using SweepMetric = std::function<double(const SweepItem&, const SearchTrace&)>;

/// For each size K, runs guided_search with temperatures {T} and K samples
/// per step. Failed cells are recorded and the sweep moves on.
SweepTable sweep_step_size(const std::vector<SweepItem>& items, std::vector<std::size_t> step_sizes, double temperature,
                           const SearchConfig& base, StepScorer* scorer, PolicyProvider& policy,
                           const SweepMetric& metric = {}, const SearchOptions& options = {});

std::string render_sweep_text(const SweepTable& t);

}  // namespace vgs
