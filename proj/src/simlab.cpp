#include "vgs/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "vgs/segmenter.hpp"

namespace vgs::sim {

namespace {

using json = nlohmann::json;

std::size_t first_argmax(std::span<const double> xs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[best]) best = i;
  return best;
}

std::vector<double> softmax_row(const SimState& s, double temperature) {
  std::vector<double> p(s.actions.size(), 0.0);
  if (p.empty()) return p;
  std::vector<double> logits;
  for (const auto& a : s.actions) logits.push_back(a.logit);
  if (temperature <= 0.0) {
    p[first_argmax(logits)] = 1.0;
    return p;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp((logits[i] - mx) / temperature);
  for (double& x : p) x /= z;
  return p;
}

double backup(const SimMDP& mdp, const SimAction& a, std::span<const double> next_values) {
  double v = a.reward;
  for (const auto& t : a.transitions) v += mdp.gamma * t.probability * next_values[t.next];
  return v;
}

std::size_t sample_transition(const SimAction& a, Rng& rng) {
  if (a.transitions.size() == 1) return a.transitions.front().next;
  std::vector<double> w;
  for (const auto& t : a.transitions) w.push_back(t.probability);
  return a.transitions[rng.categorical(w)].next;
}

}  // namespace

void SimMDP::validate() const {
  if (states.empty()) throw ConfigError("sim MDP has no states");
  if (start >= states.size()) throw ConfigError("sim MDP start state out of range");
  if (horizon < 1) throw ConfigError("sim MDP horizon must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("sim MDP gamma must lie in [0, 1]");
  for (std::size_t s = 0; s < states.size(); ++s) {
    for (const auto& a : states[s].actions) {
      if (a.token.size() < 2 || a.token.back() != '.' || a.token.find_first_of(" \t\n.!?") != a.token.size() - 1)
        throw ConfigError("sim token '" + a.token + "' must be a single word ending in '.'");
      if (!(a.reward >= -1.0 && a.reward <= 1.0)) throw ConfigError("sim reward outside [-1, 1] for " + a.token);
      if (!std::isfinite(a.logit)) throw ConfigError("sim logit not finite for " + a.token);
      if (a.transitions.empty()) throw ConfigError("sim action " + a.token + " has no transitions");
      double total = 0.0;
      for (const auto& t : a.transitions) {
        if (t.next >= states.size()) throw ConfigError("sim transition target out of range in " + a.token);
        if (!(t.probability >= 0.0)) throw ConfigError("negative transition probability in " + a.token);
        total += t.probability;
      }
      if (std::abs(total - 1.0) > 1e-12) throw ConfigError("transition row of " + a.token + " does not sum to 1");
    }
  }
}

void SimMDP::assign_tokens(std::string_view prefix) {
  for (std::size_t s = 0; s < states.size(); ++s)
    for (std::size_t a = 0; a < states[s].actions.size(); ++a)
      states[s].actions[a].token = std::string(prefix) + "s" + std::to_string(s) + "a" + std::to_string(a) + ".";
}

std::size_t SimMDP::action_count() const {
  std::size_t n = 0;
  for (const auto& s : states) n += s.actions.size();
  return n;
}

void to_json(json& j, const SimMDP& mdp) {
  json states = json::array();
  for (const auto& s : mdp.states) {
    json actions = json::array();
    for (const auto& a : s.actions) {
      json tr = json::array();
      for (const auto& t : a.transitions) tr.push_back({{"next", t.next}, {"p", t.probability}});
      actions.push_back({{"token", a.token}, {"reward", a.reward}, {"logit", a.logit}, {"transitions", tr}});
    }
    states.push_back({{"actions", actions}});
  }
  j = json{{"gamma", mdp.gamma}, {"horizon", mdp.horizon}, {"start", mdp.start}, {"states", states}};
}

void from_json(const json& j, SimMDP& mdp) {
  mdp = {};
  mdp.gamma = j.at("gamma").get<double>();
  mdp.horizon = j.at("horizon").get<std::size_t>();
  mdp.start = j.at("start").get<std::size_t>();
  for (const auto& js : j.at("states")) {
    SimState s;
    for (const auto& ja : js.at("actions")) {
      SimAction a;
      a.token = ja.at("token").get<std::string>();
      a.reward = ja.at("reward").get<double>();
      a.logit = ja.value("logit", 0.0);
      for (const auto& jt : ja.at("transitions")) a.transitions.push_back({jt.at("next").get<std::size_t>(), jt.at("p").get<double>()});
      s.actions.push_back(std::move(a));
    }
    mdp.states.push_back(std::move(s));
  }
  mdp.validate();
}

Policy softmax_policy(const SimMDP& mdp, double temperature) {
  Policy p;
  p.reserve(mdp.states.size());
  for (const auto& s : mdp.states) p.push_back(softmax_row(s, temperature));
  return p;
}

std::vector<double> dp_values(const SimMDP& mdp, const Policy* policy) {
  const std::size_t n = mdp.states.size();
  std::vector<double> next(n, 0.0);
  std::vector<double> cur(n, 0.0);
  for (std::size_t t = mdp.horizon; t-- > 0;) {
    for (std::size_t s = 0; s < n; ++s) {
      const auto& st = mdp.states[s];
      if (st.terminal()) {
        cur[s] = 0.0;
        continue;
      }
      double v = policy ? 0.0 : -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < st.actions.size(); ++a) {
        const double q = backup(mdp, st.actions[a], next);
        v = policy ? v + (*policy)[s][a] * q : std::max(v, q);
      }
      cur[s] = v;
    }
    std::swap(cur, next);
  }
  return next;
}

std::vector<std::vector<double>> action_values(const SimMDP& mdp, std::span<const double> values) {
  std::vector<std::vector<double>> q(mdp.states.size());
  for (std::size_t s = 0; s < mdp.states.size(); ++s)
    for (const auto& a : mdp.states[s].actions) q[s].push_back(backup(mdp, a, values));
  return q;
}

double bellman_residual(const SimMDP& mdp, std::span<const double> values, const Policy* policy) {
  const auto q = action_values(mdp, values);
  double worst = 0.0;
  for (std::size_t s = 0; s < mdp.states.size(); ++s) {
    double b = 0.0;
    if (!mdp.states[s].terminal()) {
      if (policy) {
        for (std::size_t a = 0; a < q[s].size(); ++a) b += (*policy)[s][a] * q[s][a];
      } else {
        b = *std::max_element(q[s].begin(), q[s].end());
      }
    }
    worst = std::max(worst, std::abs(values[s] - b));
  }
  return worst;
}

SimEpisode sample_episode(const SimMDP& mdp, const Policy& policy, std::size_t start, Rng& rng) {
  SimEpisode ep;
  std::size_t s = start;
  double discount = 1.0;
  for (std::size_t t = 0; t < mdp.horizon && !mdp.states[s].terminal(); ++t) {
    const std::size_t a = rng.categorical(policy[s]);
    const auto& act = mdp.states[s].actions[a];
    ep.steps.push_back({s, a, act.reward});
    ep.discounted_return += discount * act.reward;
    discount *= mdp.gamma;
    s = sample_transition(act, rng);
  }
  return ep;
}

SimMDP make_random_mdp(std::uint64_t seed, const RandomMdpOptions& options) {
  Rng rng(mix(seed, std::string_view("random-mdp")));
  const std::size_t layers = static_cast<std::size_t>(rng.between(3, 4));

  // Layer sizes: layer 0 is the start state; the terminal state comes last.
  std::vector<std::size_t> sizes(layers, 1);
  if (options.num_states) {
    if (options.num_states < layers + 1) throw ConfigError("too few states for a layered random MDP");
    for (std::size_t extra = options.num_states - layers - 1; extra > 0; --extra) sizes[1 + rng.index(layers - 1)]++;
  } else {
    std::size_t budget = std::max<std::size_t>(options.max_states, layers + 1) - 1 - 1;
    for (std::size_t l = 1; l < layers; ++l) {
      const std::size_t remaining_layers = layers - 1 - l;
      const std::size_t cap = std::min<std::size_t>(4, budget - remaining_layers);
      sizes[l] = static_cast<std::size_t>(rng.between(std::min<int>(2, static_cast<int>(cap)), static_cast<int>(cap)));
      budget -= sizes[l];
    }
  }

  std::vector<std::size_t> first(layers + 1, 0);
  for (std::size_t l = 0; l < layers; ++l) first[l + 1] = first[l] + sizes[l];
  const std::size_t terminal = first[layers];

  SimMDP mdp;
  mdp.gamma = options.gamma;
  mdp.horizon = layers;
  mdp.states.resize(terminal + 1);
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t s = first[l]; s < first[l + 1]; ++s) {
      const int n_actions = rng.between(2, 3);
      for (int a = 0; a < n_actions; ++a) {
        SimAction act;
        act.reward = rng.uniform(options.reward_lo, options.reward_hi);
        act.logit = rng.uniform(-1.0, 1.0);
        if (l + 1 == layers || rng.uniform() < 0.25) {
          act.transitions.push_back({terminal, 1.0});
        } else {
          const std::size_t width = sizes[l + 1];
          const std::size_t m = std::min<std::size_t>(width, static_cast<std::size_t>(rng.between(1, 2)));
          std::vector<std::size_t> pool(width);
          for (std::size_t i = 0; i < width; ++i) pool[i] = first[l + 1] + i;
          rng.shuffle(pool.begin(), pool.end());
          std::vector<double> w(m);
          double total = 0.0;
          for (auto& x : w) total += x = -std::log(1.0 - rng.uniform());
          for (std::size_t i = 0; i < m; ++i) act.transitions.push_back({pool[i], w[i] / total});
        }
        mdp.states[s].actions.push_back(std::move(act));
      }
    }
  }
  mdp.assign_tokens("r");
  mdp.validate();
  return mdp;
}

SimMDP make_chain_mdp(double gamma) {
  SimMDP mdp;
  mdp.gamma = gamma;
  mdp.horizon = 3;
  mdp.states.resize(4);
  for (std::size_t s = 0; s < 3; ++s) {
    SimAction a;
    a.reward = s == 2 ? 1.0 : 0.0;
    a.transitions.push_back({s + 1, 1.0});
    mdp.states[s].actions.push_back(std::move(a));
  }
  mdp.assign_tokens("c");
  mdp.validate();
  return mdp;
}

namespace {

SimAction deterministic_action(double reward, double logit, std::size_t next) {
  SimAction a;
  a.reward = reward;
  a.logit = logit;
  a.transitions.push_back({next, 1.0});
  return a;
}

/// Appends a deterministic subtree with `steps` remaining actions and rewards
/// drawn from [lo, hi]; returns its root. `terminal` is the shared sink.
std::size_t grow_subtree(SimMDP& mdp, std::size_t steps, double lo, double hi, std::size_t terminal, Rng& rng) {
  if (steps == 0) return terminal;
  const std::size_t root = mdp.states.size();
  mdp.states.emplace_back();
  const int branching = rng.between(1, 2);
  for (int b = 0; b < branching; ++b) {
    const double reward = rng.uniform(lo, hi);
    const double logit = rng.uniform(-1.0, 1.0);
    const std::size_t child = grow_subtree(mdp, steps - 1, lo, hi, terminal, rng);
    mdp.states[root].actions.push_back(deterministic_action(reward, logit, child));
  }
  return root;
}

void verify_trap(const TrapMDP& trap) {
  const auto& mdp = trap.mdp;
  const auto optimal = dp_values(mdp);
  const auto q = action_values(mdp, optimal);
  const auto& start_actions = mdp.states[mdp.start].actions;
  std::vector<double> rewards;
  for (const auto& a : start_actions) rewards.push_back(a.reward);
  const auto [best, worst] = return_bounds(mdp);
  const auto& trap_act = start_actions[trap.trap_action];
  const auto& good_act = start_actions[trap.good_action];
  const double worst_good = good_act.reward + mdp.gamma * worst[good_act.transitions.front().next];
  const double best_trap = trap_act.reward + mdp.gamma * best[trap_act.transitions.front().next];
  if (first_argmax(rewards) != trap.trap_action || first_argmax(q[mdp.start]) != trap.good_action ||
      !(worst_good > best_trap))
    throw std::logic_error("trap MDP construction failed its separation check");
}

}  // namespace

TrapMDP make_canonical_trap() {
  TrapMDP trap;
  auto& mdp = trap.mdp;
  mdp.gamma = 0.9;
  mdp.horizon = 2;
  mdp.states.resize(4);
  const std::size_t terminal = 3;
  mdp.states[0].actions.push_back(deterministic_action(0.9, 0.0, 1));
  mdp.states[0].actions.push_back(deterministic_action(0.5, 0.0, 2));
  mdp.states[1].actions.push_back(deterministic_action(0.0, 0.0, terminal));
  mdp.states[2].actions.push_back(deterministic_action(0.8, 0.0, terminal));
  trap.trap_action = 0;
  trap.good_action = 1;
  mdp.assign_tokens("t");
  mdp.validate();
  verify_trap(trap);
  return trap;
}

TrapMDP make_trap_mdp(std::uint64_t seed) {
  Rng rng(mix(seed, std::string_view("trap-mdp")));
  const std::size_t depth = static_cast<std::size_t>(rng.between(2, 4));

  TrapMDP trap;
  auto& mdp = trap.mdp;
  mdp.gamma = 0.9;
  mdp.horizon = depth;
  mdp.states.resize(2);  // 0: start, 1: terminal sink
  const std::size_t terminal = 1;

  // The trap's immediate reward beats the good action by 0.1..0.5, while one
  // discounted step of the good subtree (>= 0.9 * 0.6) outweighs that gap and
  // the trap subtree never pays more than 0.
  const double trap_reward = rng.uniform(0.7, 0.95);
  const double good_reward = rng.uniform(std::max(0.2, trap_reward - 0.5), trap_reward - 0.1);
  const std::size_t trap_root = grow_subtree(mdp, depth - 1, -0.9, 0.0, terminal, rng);
  const std::size_t good_root = grow_subtree(mdp, depth - 1, 0.6, 1.0, terminal, rng);

  const bool trap_first = rng.uniform() < 0.5;
  trap.trap_action = trap_first ? 0 : 1;
  trap.good_action = 1 - trap.trap_action;
  mdp.states[0].actions.resize(2);
  // Close but distinct start logits: the T -> 0 limit is unique, and both
  // actions still show up among sampled candidates.
  const double trap_logit = rng.uniform(-0.1, 0.1);
  const double good_logit = rng.uniform(-0.1, 0.1);
  mdp.states[0].actions[trap.trap_action] = deterministic_action(trap_reward, trap_logit, trap_root);
  mdp.states[0].actions[trap.good_action] = deterministic_action(good_reward, good_logit, good_root);

  mdp.assign_tokens("t");
  mdp.validate();
  verify_trap(trap);
  return trap;
}

std::pair<std::vector<double>, std::vector<double>> return_bounds(const SimMDP& mdp) {
  const std::size_t n = mdp.states.size();
  std::vector<double> best(n, 0.0);
  std::vector<double> worst(n, 0.0);
  for (std::size_t t = 0; t < mdp.horizon; ++t) {
    std::vector<double> nb(n, 0.0);
    std::vector<double> nw(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      const auto& st = mdp.states[s];
      if (st.terminal()) continue;
      nb[s] = -std::numeric_limits<double>::infinity();
      nw[s] = std::numeric_limits<double>::infinity();
      for (const auto& a : st.actions) {
        double hi = -std::numeric_limits<double>::infinity();
        double lo = std::numeric_limits<double>::infinity();
        for (const auto& tr : a.transitions) {
          if (tr.probability <= 0.0) continue;
          hi = std::max(hi, best[tr.next]);
          lo = std::min(lo, worst[tr.next]);
        }
        nb[s] = std::max(nb[s], a.reward + mdp.gamma * hi);
        nw[s] = std::min(nw[s], a.reward + mdp.gamma * lo);
      }
    }
    best = std::move(nb);
    worst = std::move(nw);
  }
  return {best, worst};
}

// --- SimWorld ---------------------------------------------------------------

std::size_t SimWorld::add(std::string image_id, SimMDP mdp) {
  if (image_id.empty()) throw ConfigError("sim image id must be non-empty");
  if (find_image(image_id)) throw ConfigError("duplicate sim image id '" + image_id + "'");
  const std::size_t k = worlds_.size();
  mdp.assign_tokens("w" + std::to_string(k));
  mdp.validate();
  for (std::size_t s = 0; s < mdp.states.size(); ++s)
    for (std::size_t a = 0; a < mdp.states[s].actions.size(); ++a) tokens_[mdp.states[s].actions[a].token] = {k, s, a};
  worlds_.push_back({std::move(image_id), std::move(mdp)});
  return k;
}

std::optional<std::size_t> SimWorld::find_image(std::string_view image_id) const {
  for (std::size_t k = 0; k < worlds_.size(); ++k)
    if (worlds_[k].image_id == image_id) return k;
  return std::nullopt;
}

std::optional<SimWorld::TokenRef> SimWorld::find_token(std::string_view token) const {
  if (auto it = tokens_.find(std::string(token)); it != tokens_.end()) return it->second;
  return std::nullopt;
}

std::uint64_t SimWorld::path_hash_start(std::size_t world, std::uint64_t env_seed) const {
  return mix(mix(env_seed, std::string_view("env")), std::string_view(worlds_.at(world).image_id));
}

std::size_t SimWorld::step(std::size_t world, std::size_t state, std::size_t action, std::uint64_t path_hash) const {
  const auto& act = worlds_.at(world).mdp.states.at(state).actions.at(action);
  if (act.transitions.size() == 1) return act.transitions.front().next;
  Rng rng(path_hash);
  return sample_transition(act, rng);
}

std::size_t SimWorld::replay(std::size_t world, std::span<const std::string> prefix, std::uint64_t env_seed,
                             double* discounted_return) const {
  const auto& mdp = worlds_.at(world).mdp;
  std::size_t state = mdp.start;
  std::uint64_t h = path_hash_start(world, env_seed);
  double ret = 0.0;
  double discount = 1.0;
  for (const auto& sentence : prefix) {
    const auto token = trim(sentence);
    const auto ref = find_token(token);
    if (!ref || ref->world != world || ref->state != state)
      throw ProtocolError("sentence '" + std::string(token) + "' is not a legal action in state " +
                          std::to_string(state) + " of sim image '" + worlds_[world].image_id + "'");
    ret += discount * mdp.states[state].actions[ref->action].reward;
    discount *= mdp.gamma;
    h = mix(h, token);
    state = step(world, state, ref->action, h);
  }
  if (discounted_return) *discounted_return = ret;
  return state;
}

double SimWorld::response_return(std::string_view image_id, std::span<const std::string> sentences,
                                 std::uint64_t env_seed) const {
  const auto world = find_image(image_id);
  if (!world) throw ImageError("unknown sim image '" + std::string(image_id) + "'");
  double ret = 0.0;
  replay(*world, sentences, env_seed, &ret);
  return ret;
}

// --- providers -------------------------------------------------------------

SimPolicyProvider::SimPolicyProvider(std::shared_ptr<const SimWorld> world, std::uint64_t seed)
    : world_(std::move(world)), seed_(seed) {
  if (!world_ || world_->size() == 0) throw ConfigError("sim policy provider needs a non-empty world");
}

std::string SimPolicyProvider::generate_continuation(const GenerationRequest& req) {
  req.validate();
  if (req.image.kind != ImageRef::Kind::sim_id) throw ImageError("sim policy only accepts sim image ids");
  const auto world = world_->find_image(req.image.value);
  if (!world) throw ImageError("unknown sim image '" + req.image.value + "'");
  const auto& mdp = world_->mdp(*world);

  std::size_t state = world_->replay(*world, req.prefix, seed_);
  std::uint64_t path = world_->path_hash_start(*world, seed_);
  for (const auto& s : req.prefix) path = mix(path, trim(s));

  std::uint64_t h = mix(mix(seed_, req.seed.value_or(0)), std::string_view(req.prompt));
  h = mix(h, std::string_view(req.image.value));
  for (const auto& s : req.prefix) h = mix(h, std::string_view(s));
  h = mix(h, req.greedy ? 1 : 0);
  h = mix(h, req.greedy ? 0.0 : req.temperature);
  Rng rng(h);

  std::string out;
  for (int unit = 0; unit < req.max_new_units && !mdp.states[state].terminal(); ++unit) {
    const auto probs = softmax_row(mdp.states[state], req.greedy ? 0.0 : req.temperature);
    const std::size_t a = rng.categorical(probs);
    const auto& token = mdp.states[state].actions[a].token;
    if (!out.empty()) out += ' ';
    out += token;
    path = mix(path, std::string_view(token));
    state = world_->step(*world, state, a, path);
  }
  return out;
}

SimEmbeddingProvider::SimEmbeddingProvider(std::shared_ptr<const SimWorld> world, std::uint64_t seed,
                                           std::size_t extra_dims)
    : world_(std::move(world)), seed_(seed), dim_(0) {
  if (!world_) throw ConfigError("sim embedding provider needs a world");
  if (extra_dims < 2) throw ConfigError("sim embedding provider needs at least 2 extra dims");
  dim_ = world_->size() + extra_dims;
}

std::string SimEmbeddingProvider::model_id() const { return "sim-embed-" + std::to_string(seed_); }

Embedding SimEmbeddingProvider::hashed_unit(std::uint64_t h, std::size_t first_dim) const {
  Rng rng(h);
  Embedding e;
  e.values.assign(dim_, 0.0);
  double norm = 0.0;
  while (norm == 0.0) {
    for (std::size_t i = first_dim; i < dim_; ++i) norm += (e.values[i] = rng.normal()) * e.values[i];
  }
  norm = std::sqrt(norm);
  for (double& v : e.values) v /= norm;
  return e;
}

Embedding SimEmbeddingProvider::embed_text(std::string_view text) {
  if (text.empty()) throw ConfigError("cannot embed empty text");
  const auto token = trim(text);
  const std::uint64_t h = mix(mix(seed_, std::string_view("text")), token);
  const auto ref = world_->find_token(token);
  if (!ref) return hashed_unit(h, 0);

  // r * e_world + sqrt(1 - r^2) * u, with u a unit vector orthogonal to every
  // image axis, so cosine(token, image of its world) == r.
  const double r = world_->mdp(ref->world).states[ref->state].actions[ref->action].reward;
  Embedding e = hashed_unit(h, world_->size());
  const double ortho = std::sqrt(std::max(0.0, 1.0 - r * r));
  for (double& v : e.values) v *= ortho;
  e.values[ref->world] = r;
  return e;
}

Embedding SimEmbeddingProvider::embed_image(const ImageRef& image) {
  image.validate();
  if (image.kind == ImageRef::Kind::sim_id) {
    if (const auto k = world_->find_image(image.value)) {
      Embedding e;
      e.values.assign(dim_, 0.0);
      e.values[*k] = 1.0;
      return e;
    }
    return hashed_unit(mix(mix(seed_, std::string_view("image-id")), std::string_view(image.value)), 0);
  }
  const std::string bytes = image.kind == ImageRef::Kind::file_path ? read_image_bytes(image) : image.value;
  return hashed_unit(mix(mix(seed_, std::string_view("image-bytes")), std::string_view(bytes)), 0);
}

SimProviders sim_as_providers(std::shared_ptr<const SimWorld> world, std::uint64_t seed, std::size_t extra_dims) {
  SimProviders p;
  p.world = world;
  p.policy = std::make_shared<SimPolicyProvider>(world, seed);
  p.embedder = std::make_shared<SimEmbeddingProvider>(world, seed, extra_dims);
  return p;
}

SimProviders sim_as_providers(SimMDP mdp, std::uint64_t seed) {
  auto world = std::make_shared<SimWorld>();
  world->add("img-0", std::move(mdp));
  return sim_as_providers(std::move(world), seed);
}

ValueHead dp_value_head(const SimWorld& world, EmbeddingProvider& embedder, double policy_temperature) {
  ValueHead head = ValueHead::tabular(2 * embedder.dim());
  for (std::size_t k = 0; k < world.size(); ++k) {
    const auto& mdp = world.mdp(k);
    const auto policy = softmax_policy(mdp, policy_temperature);
    const auto q = action_values(mdp, dp_values(mdp, &policy));
    const auto image = ImageRef::sim(world.image_id(k));
    for (std::size_t s = 0; s < mdp.states.size(); ++s)
      for (std::size_t a = 0; a < mdp.states[s].actions.size(); ++a)
        head.set_value(featurize(mdp.states[s].actions[a].token, image, embedder), q[s][a]);
  }
  head.set_trained_gamma(world.size() ? world.mdp(0).gamma : 0.9);
  return head;
}

std::vector<TDSample> exploratory_samples(const SimWorld& world, std::size_t world_index, ProcessRewardModel& prm,
                                          const ExploreOptions& options) {
  const auto& mdp = world.mdp(world_index);
  const auto image = ImageRef::sim(world.image_id(world_index));
  const auto policy = softmax_policy(mdp, options.temperature);

  std::vector<std::size_t> starts;
  if (options.exploring_starts) {
    for (std::size_t s = 0; s < mdp.states.size(); ++s)
      if (!mdp.states[s].terminal()) starts.push_back(s);
  } else {
    starts.push_back(mdp.start);
  }

  // One feature vector and reward per (state, action), computed once.
  std::vector<std::vector<StateFeatures>> features(mdp.states.size());
  std::vector<std::vector<double>> rewards(mdp.states.size());
  for (std::size_t s = 0; s < mdp.states.size(); ++s) {
    for (const auto& a : mdp.states[s].actions) {
      features[s].push_back(featurize(a.token, image, prm.embedder()));
      rewards[s].push_back(prm.score(a.token, image).value);
    }
  }

  Rng rng(mix(options.seed, std::string_view("explore")));
  std::vector<TDSample> samples;
  for (std::size_t e = 0; e < options.episodes; ++e) {
    const auto ep = sample_episode(mdp, policy, starts[rng.index(starts.size())], rng);
    for (std::size_t t = 0; t < ep.steps.size(); ++t) {
      const auto& st = ep.steps[t];
      TDSample sample{features[st.state][st.action], rewards[st.state][st.action], std::nullopt};
      if (t + 1 < ep.steps.size()) sample.next = features[ep.steps[t + 1].state][ep.steps[t + 1].action];
      samples.push_back(std::move(sample));
    }
  }
  return samples;
}

}  // namespace vgs::sim
