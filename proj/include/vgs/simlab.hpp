#pragma once

// Synthetic episodic captioning MDPs with exact dynamic-programming oracles.
//
// Every action is a one-token "sentence" (e.g. "w0s3a1.") whose name is unique
// across the whole world, so a sentence identifies the (state, action) pair it
// was taken from. The sim embedding provider places token and image vectors so
// that cosine(token, image) equals the action's reward, and the sim policy
// provider samples actions from softmax(logit / T). Higher layers therefore
// run unmodified on top of the sim.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "vgs/backends.hpp"
#include "vgs/reward.hpp"
#include "vgs/rng.hpp"
#include "vgs/value.hpp"

namespace vgs::sim {

struct Transition {
  std::size_t next = 0;
  double probability = 1.0;
};

struct SimAction {
  std::string token;
  double reward = 0.0;  ///< in [-1, 1]
  double logit = 0.0;   ///< policy preference
  std::vector<Transition> transitions;
};

struct SimState {
  std::vector<SimAction> actions;  ///< empty for terminal (absorbing) states
  bool terminal() const { return actions.empty(); }
};

struct SimMDP {
  std::vector<SimState> states;
  std::size_t start = 0;
  std::size_t horizon = 1;
  double gamma = 0.9;

  /// Throws ConfigError on any broken invariant (row sums, token format,
  /// reward range, dangling transitions, horizon).
  void validate() const;

  /// Renames every token to "<prefix>s<state>a<action>.".
  void assign_tokens(std::string_view prefix);

  std::size_t action_count() const;
};

void to_json(nlohmann::json& j, const SimMDP& mdp);
void from_json(const nlohmann::json& j, SimMDP& mdp);

/// Per-state action probabilities.
using Policy = std::vector<std::vector<double>>;

/// softmax(logit / T); T == 0 puts all mass on the first maximal logit.
Policy softmax_policy(const SimMDP& mdp, double temperature);

/// Finite-horizon backward induction. With a policy, on-policy values;
/// without, optimal values. Indexed by state.
std::vector<double> dp_values(const SimMDP& mdp, const Policy* policy = nullptr);

/// Q[s][a] = r(s,a) + gamma * sum_s' P(s'|s,a) V(s').
std::vector<std::vector<double>> action_values(const SimMDP& mdp, std::span<const double> values);

/// max_s |V(s) - backup(V)(s)| for the stationary Bellman operator.
double bellman_residual(const SimMDP& mdp, std::span<const double> values, const Policy* policy = nullptr);

struct EpisodeStep {
  std::size_t state = 0;
  std::size_t action = 0;
  double reward = 0.0;
};

struct SimEpisode {
  std::vector<EpisodeStep> steps;
  double discounted_return = 0.0;
};

SimEpisode sample_episode(const SimMDP& mdp, const Policy& policy, std::size_t start, Rng& rng);

struct RandomMdpOptions {
  std::size_t max_states = 20;
  std::size_t num_states = 0;  ///< exact total (including the terminal state) when non-zero
  double reward_lo = 0.0;
  double reward_hi = 0.5;
  double gamma = 0.9;
};

/// Layered DAG: start state, 2-3 further layers, one shared terminal state.
SimMDP make_random_mdp(std::uint64_t seed, const RandomMdpOptions& options = {});

/// Three-step deterministic chain with reward 1 on the last step.
SimMDP make_chain_mdp(double gamma = 0.9);

/// Two actions at the start state: the one with the higher immediate reward
/// leads into a low-reward subtree, the other into a high-reward one.
struct TrapMDP {
  SimMDP mdp;
  std::size_t trap_action = 0;  ///< argmax immediate reward at start
  std::size_t good_action = 0;  ///< argmax optimal value at start
};

/// a: 0.9 then 0.0; b: 0.5 then 0.8; gamma 0.9.
TrapMDP make_canonical_trap();

/// 2-4 step trap; the separation is verified with dp_values before returning.
TrapMDP make_trap_mdp(std::uint64_t seed);

/// Best and worst achievable discounted return from each state.
std::pair<std::vector<double>, std::vector<double>> return_bounds(const SimMDP& mdp);

/// Several MDPs, one per sim image id, sharing one embedding space.
class SimWorld {
 public:
  struct TokenRef {
    std::size_t world = 0;
    std::size_t state = 0;
    std::size_t action = 0;
  };

  /// Adds an MDP under `image_id`; its tokens are renamed with prefix "w<k>".
  std::size_t add(std::string image_id, SimMDP mdp);

  std::size_t size() const { return worlds_.size(); }
  const SimMDP& mdp(std::size_t world) const { return worlds_.at(world).mdp; }
  const std::string& image_id(std::size_t world) const { return worlds_.at(world).image_id; }
  std::optional<std::size_t> find_image(std::string_view image_id) const;
  std::optional<TokenRef> find_token(std::string_view token) const;

  /// Discounted return of a committed response; throws ProtocolError if a
  /// sentence is not a legal action along the replayed path.
  double response_return(std::string_view image_id, std::span<const std::string> sentences, std::uint64_t env_seed) const;

  /// Replays `prefix` from the start state. Stochastic transitions are drawn
  /// from an RNG keyed by (env_seed, image, prefix), so replay is consistent
  /// with the policy provider's rollouts.
  std::size_t replay(std::size_t world, std::span<const std::string> prefix, std::uint64_t env_seed,
                     double* discounted_return = nullptr) const;

  /// Next state after taking `action` in `state`, given the hash of the path so far.
  std::size_t step(std::size_t world, std::size_t state, std::size_t action, std::uint64_t path_hash) const;
  std::uint64_t path_hash_start(std::size_t world, std::uint64_t env_seed) const;

 private:
  struct Entry {
    std::string image_id;
    SimMDP mdp;
  };
  std::vector<Entry> worlds_;
  std::unordered_map<std::string, TokenRef> tokens_;
};

class SimPolicyProvider final : public PolicyProvider {
 public:
  SimPolicyProvider(std::shared_ptr<const SimWorld> world, std::uint64_t seed);
  std::string generate_continuation(const GenerationRequest& req) override;

  std::uint64_t env_seed() const { return seed_; }

 private:
  std::shared_ptr<const SimWorld> world_;
  std::uint64_t seed_;
};

class SimEmbeddingProvider final : public EmbeddingProvider {
 public:
  /// dim = world->size() + extra_dims.
  SimEmbeddingProvider(std::shared_ptr<const SimWorld> world, std::uint64_t seed, std::size_t extra_dims = 8);

  std::size_t dim() const override { return dim_; }
  std::string model_id() const override;
  Embedding embed_text(std::string_view text) override;
  Embedding embed_image(const ImageRef& image) override;

 private:
  Embedding hashed_unit(std::uint64_t h, std::size_t first_dim) const;

  std::shared_ptr<const SimWorld> world_;
  std::uint64_t seed_;
  std::size_t dim_;
};

struct SimProviders {
  std::shared_ptr<const SimWorld> world;
  std::shared_ptr<SimPolicyProvider> policy;
  std::shared_ptr<SimEmbeddingProvider> embedder;
};

SimProviders sim_as_providers(std::shared_ptr<const SimWorld> world, std::uint64_t seed, std::size_t extra_dims = 8);

/// Single-MDP convenience: the MDP is registered as image "img-0".
SimProviders sim_as_providers(SimMDP mdp, std::uint64_t seed);

/// Tabular head holding the exact on-policy action value of every token of
/// every world (the DP-exact value table).
ValueHead dp_value_head(const SimWorld& world, EmbeddingProvider& embedder, double policy_temperature = 1.0);

struct ExploreOptions {
  std::size_t episodes = 1000;
  double temperature = 1.0;
  bool exploring_starts = true;  ///< start state uniform over non-terminal states
  std::uint64_t seed = 0;
};

/// TD samples from episodes sampled directly in the MDP, with rewards taken
/// from the reward model and features from featurize(). The result is
/// independent of the sim policy provider.
std::vector<TDSample> exploratory_samples(const SimWorld& world, std::size_t world_index, ProcessRewardModel& prm,
                                          const ExploreOptions& options);

}  // namespace vgs::sim
