#include "vgs/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "vgs/parallel.hpp"
#include "vgs/rng.hpp"

namespace vgs {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr std::size_t kGreedySlot = std::numeric_limits<std::size_t>::max();

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Slot {
  std::optional<double> temperature;
  std::uint64_t seed;
};

std::vector<Slot> candidate_slots(const SearchConfig& cfg, std::size_t step) {
  std::vector<Slot> slots;
  if (cfg.include_greedy) slots.push_back({std::nullopt, candidate_seed(cfg.seed, step, kGreedySlot, 0)});
  for (std::size_t t = 0; t < cfg.temperatures.size(); ++t)
    for (std::size_t k = 0; k < cfg.samples_per_temperature; ++k)
      slots.push_back({cfg.temperatures[t], candidate_seed(cfg.seed, step, t, k)});
  return slots;
}

SearchTrace run_search(const std::string& prompt, const ImageRef& image, const SearchConfig& cfg, StepScorer* scorer,
                       PolicyProvider& policy, const SearchOptions& options, bool throw_on_degenerate) {
  cfg.validate();
  image.validate();
  if (cfg.guidance != Guidance::none) {
    if (!scorer) throw ConfigError("guidance '" + std::string(to_string(cfg.guidance)) + "' needs a scorer");
    if (scorer->kind() != cfg.guidance)
      throw ConfigError("scorer kind '" + std::string(to_string(scorer->kind())) + "' does not match guidance '" +
                        std::string(to_string(cfg.guidance)) + "'");
  }

  const auto started = Clock::now();
  SearchTrace trace;
  trace.method = method_name(cfg.guidance);
  trace.prompt = prompt;
  trace.image = image;
  trace.config = cfg;

  SearchState state{prompt, image, {}};
  std::atomic<std::size_t> calls{0};

  auto abort = [&](const std::exception& e) -> SearchAborted {
    trace.stop_reason = "aborted";
    trace.provider_calls = calls;
    trace.sentences = state.steps;
    trace.final_response = join(state.steps);
    return SearchAborted(std::string("search aborted at step ") + std::to_string(state.steps.size() + 1) + ": " +
                             e.what(),
                         trace);
  };

  trace.stop_reason = "max-steps";
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const auto step_started = Clock::now();
    const auto slots = candidate_slots(cfg, step);
    std::vector<std::string> texts(slots.size());
    try {
      parallel_for(slots.size(), cfg.max_in_flight, [&](std::size_t i) {
        GenerationRequest req;
        req.prompt = prompt;
        req.image = image;
        req.prefix = state.steps;
        req.greedy = !slots[i].temperature.has_value();
        req.temperature = slots[i].temperature.value_or(1.0);
        req.max_new_units = cfg.max_new_units;
        req.seed = slots[i].seed;
        ++calls;
        texts[i] = policy.generate_continuation(req);
      });
    } catch (const ProviderError& e) {
      throw abort(e);
    }

    StepChoice choice;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      auto sentence = std::string(trim(first_sentence(texts[i], options.rules).first));
      if (sentence.empty()) {
        ++choice.dropped_empty;
        continue;
      }
      choice.candidates.push_back({std::move(sentence), slots[i].temperature, slots[i].seed});
    }

    if (choice.candidates.empty()) {
      if (step == 0) {
        if (throw_on_degenerate) throw DegeneratePolicyError("every candidate at the first step was empty (EOS)");
        trace.stop_reason = "degenerate";
      } else {
        trace.stop_reason = "eos";
      }
      break;
    }

    if (cfg.guidance == Guidance::none) {
      choice.scores.assign(choice.candidates.size(), 0.0);
    } else {
      std::map<std::string, double> memo;
      try {
        for (const auto& c : choice.candidates) {
          auto it = memo.find(c.sentence);
          if (it == memo.end()) it = memo.emplace(c.sentence, scorer->score(state, c.sentence)).first;
          choice.scores.push_back(it->second);
        }
      } catch (const ProviderError& e) {
        throw abort(e);
      }
    }
    choice.chosen_index = first_argmax(choice.scores);
    if (options.record_timing) choice.wall_ms = elapsed_ms(step_started);
    state.steps.push_back(choice.candidates[choice.chosen_index].sentence);
    trace.steps.push_back(std::move(choice));
  }

  trace.sentences = state.steps;
  trace.final_response = join(state.steps);
  trace.provider_calls = calls;
  if (options.record_timing) trace.wall_ms = elapsed_ms(started);
  return trace;
}

json candidate_json(const StepCandidate& c) {
  return {{"sentence", c.sentence},
          {"greedy", !c.temperature.has_value()},
          {"temperature", c.temperature ? json(*c.temperature) : json(nullptr)},
          {"seed", c.seed}};
}

std::optional<double> optional_double(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::string_view to_string(Guidance g) {
  switch (g) {
    case Guidance::value:
      return "value";
    case Guidance::prm:
      return "prm";
    case Guidance::none:
      return "none";
  }
  return "none";
}

Guidance guidance_from_string(std::string_view s) {
  if (s == "value") return Guidance::value;
  if (s == "prm") return Guidance::prm;
  if (s == "none" || s == "greedy") return Guidance::none;
  throw ConfigError("unknown guidance '" + std::string(s) + "' (expected value, prm or none)");
}

std::string method_name(Guidance g) {
  switch (g) {
    case Guidance::value:
      return "value-search";
    case Guidance::prm:
      return "prm-search";
    case Guidance::none:
      return "greedy";
  }
  return "greedy";
}

void SearchConfig::validate() const {
  if (max_steps < 1) throw ConfigError("search max_steps must be >= 1");
  if (samples_per_temperature < 1) throw ConfigError("samples_per_temperature must be >= 1");
  if (guidance != Guidance::none && temperatures.empty())
    throw ConfigError("search temperatures must be non-empty unless guidance is none");
  for (double t : temperatures)
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("search temperatures must be positive");
  if (candidates_per_step() == 0) throw ConfigError("search config yields no candidates per step");
  if (max_new_units < 1) throw ConfigError("max_new_units must be >= 1");
}

std::size_t SearchConfig::candidates_per_step() const {
  return temperatures.size() * samples_per_temperature + (include_greedy ? 1 : 0);
}

void to_json(json& j, const SearchConfig& c) {
  j = json{{"temperatures", c.temperatures},
           {"samples_per_temperature", c.samples_per_temperature},
           {"include_greedy", c.include_greedy},
           {"max_steps", c.max_steps},
           {"guidance", to_string(c.guidance)},
           {"seed", c.seed},
           {"max_in_flight", c.max_in_flight},
           {"max_new_units", c.max_new_units}};
}

void from_json(const json& j, SearchConfig& c) {
  const SearchConfig d;
  c.temperatures = j.value("temperatures", d.temperatures);
  c.samples_per_temperature = j.value("samples_per_temperature", d.samples_per_temperature);
  c.include_greedy = j.value("include_greedy", d.include_greedy);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.guidance = guidance_from_string(j.value("guidance", std::string(to_string(d.guidance))));
  c.seed = j.value("seed", d.seed);
  c.max_in_flight = j.value("max_in_flight", d.max_in_flight);
  c.max_new_units = j.value("max_new_units", d.max_new_units);
}

ValueScorer::ValueScorer(std::shared_ptr<const ValueHead> head, std::shared_ptr<EmbeddingProvider> embedder)
    : head_(std::move(head)), embedder_(std::move(embedder)) {
  if (!head_ || !embedder_) throw ConfigError("value scorer needs a value head and an embedding provider");
  if (head_->input_dim() != 2 * embedder_->dim())
    throw ConfigError("value head input dim " + std::to_string(head_->input_dim()) + " does not match 2 x embedding dim " +
                      std::to_string(embedder_->dim()));
}

double ValueScorer::score(const SearchState& state, const std::string& sentence) {
  return head_->predict(featurize(sentence, state.image, *embedder_));
}

PrmScorer::PrmScorer(std::shared_ptr<ProcessRewardModel> prm) : prm_(std::move(prm)) {
  if (!prm_) throw ConfigError("reward scorer needs a reward model");
}

double PrmScorer::score(const SearchState& state, const std::string& sentence) {
  return prm_->score(sentence, state.image).value;
}

std::uint64_t candidate_seed(std::uint64_t search_seed, std::size_t step, std::size_t t, std::size_t k) {
  return mix(mix(mix(mix(search_seed, std::string_view("candidate")), step), t), k);
}

std::size_t first_argmax(const std::vector<double>& scores) {
  if (scores.empty()) throw ConfigError("argmax of an empty score list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

SearchTrace guided_search(const std::string& prompt, const ImageRef& image, const SearchConfig& cfg, StepScorer* scorer,
                          PolicyProvider& policy, const SearchOptions& options) {
  return run_search(prompt, image, cfg, scorer, policy, options, true);
}

GreedyResult greedy_decode(const std::string& prompt, const ImageRef& image, PolicyProvider& policy,
                           std::size_t max_steps, const SearchOptions& options) {
  SearchConfig cfg;
  cfg.temperatures.clear();
  cfg.include_greedy = true;
  cfg.guidance = Guidance::none;
  cfg.max_steps = max_steps;
  GreedyResult r;
  r.trace = run_search(prompt, image, cfg, nullptr, policy, options, false);
  r.degenerate = r.trace.stop_reason == "degenerate";
  return r;
}

ResponseSelector::Selection MeanPrmSelector::select(const std::string&, const ImageRef& image,
                                                    const std::vector<std::vector<std::string>>& responses) {
  if (responses.empty()) throw ConfigError("nothing to select from");
  Selection s;
  for (const auto& r : responses)
    s.scores.push_back(r.empty() ? -std::numeric_limits<double>::infinity() : prm_->mean_over_response(r, image).value);
  s.chosen = first_argmax(s.scores);
  return s;
}

void BestOfNConfig::validate() const {
  if (n < 1) throw ConfigError("best-of-n needs n >= 1");
  if (temperatures.empty()) throw ConfigError("best-of-n needs at least one temperature");
  for (double t : temperatures)
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("best-of-n temperatures must be positive");
  if (max_new_units < 1) throw ConfigError("max_new_units must be >= 1");
}

SearchTrace best_of_n(const std::string& prompt, const ImageRef& image, const BestOfNConfig& cfg,
                      ResponseSelector& selector, PolicyProvider& policy, const SearchOptions& options) {
  cfg.validate();
  image.validate();
  const auto started = Clock::now();

  SearchTrace trace;
  trace.method = "bon";
  trace.prompt = prompt;
  trace.image = image;
  trace.config.temperatures = cfg.temperatures;
  trace.config.samples_per_temperature = (cfg.n + cfg.temperatures.size() - 1) / cfg.temperatures.size();
  trace.config.include_greedy = false;
  trace.config.guidance = Guidance::none;
  trace.config.seed = cfg.seed;
  trace.config.max_in_flight = cfg.max_in_flight;
  trace.config.max_new_units = cfg.max_new_units;

  std::vector<BonResponse> responses(cfg.n);
  std::atomic<std::size_t> calls{0};
  try {
    parallel_for(cfg.n, cfg.max_in_flight, [&](std::size_t i) {
      auto& r = responses[i];
      r.temperature = cfg.temperatures[i % cfg.temperatures.size()];
      r.seed = mix(mix(cfg.seed, std::string_view("bon")), i);
      GenerationRequest req;
      req.prompt = prompt;
      req.image = image;
      req.temperature = r.temperature;
      req.max_new_units = cfg.max_new_units;
      req.seed = r.seed;
      ++calls;
      r.sentences = split_sentences(policy.generate_continuation(req), options.rules);
      for (auto& s : r.sentences) s = std::string(trim(s));
      std::erase_if(r.sentences, [](const std::string& s) { return s.empty(); });
      r.text = join(r.sentences);
    });
  } catch (const ProviderError& e) {
    trace.stop_reason = "aborted";
    trace.provider_calls = calls;
    throw SearchAborted(std::string("best-of-n aborted: ") + e.what(), trace);
  }

  std::vector<std::vector<std::string>> all;
  for (const auto& r : responses) all.push_back(r.sentences);
  const auto selection = selector.select(prompt, image, all);
  if (selection.scores.size() != responses.size() || selection.chosen >= responses.size())
    throw ConfigError("selector '" + selector.name() + "' returned a malformed selection");
  for (std::size_t i = 0; i < responses.size(); ++i) responses[i].score = selection.scores[i];

  trace.bon_chosen = selection.chosen;
  trace.sentences = responses[selection.chosen].sentences;
  trace.final_response = responses[selection.chosen].text;
  trace.bon_responses = std::move(responses);
  trace.stop_reason = "eos";
  trace.provider_calls = calls;
  if (options.record_timing) trace.wall_ms = elapsed_ms(started);
  return trace;
}

void to_json(json& j, const SearchTrace& t) {
  json steps = json::array();
  for (const auto& s : t.steps) {
    json cands = json::array();
    for (const auto& c : s.candidates) cands.push_back(candidate_json(c));
    json js{{"candidates", cands},
            {"scores", s.scores},
            {"chosen_index", s.chosen_index},
            {"dropped_empty", s.dropped_empty}};
    if (s.wall_ms) js["wall_ms"] = *s.wall_ms;
    steps.push_back(std::move(js));
  }
  j = json{{"method", t.method},
           {"prompt", t.prompt},
           {"image", t.image},
           {"config", t.config},
           {"steps", steps},
           {"sentences", t.sentences},
           {"final_response", t.final_response},
           {"stop_reason", t.stop_reason},
           {"provider_calls", t.provider_calls}};
  if (t.bon_chosen) {
    json rs = json::array();
    for (const auto& r : t.bon_responses)
      rs.push_back({{"text", r.text},
                    {"sentences", r.sentences},
                    {"temperature", r.temperature},
                    {"seed", r.seed},
                    // -inf (empty response) has no JSON spelling
                    {"score", std::isfinite(r.score) ? json(r.score) : json(nullptr)}});
    j["bon"] = {{"chosen", *t.bon_chosen}, {"responses", rs}};
  }
  if (t.wall_ms) j["wall_ms"] = *t.wall_ms;
}

void from_json(const json& j, SearchTrace& t) {
  t = {};
  t.method = j.at("method").get<std::string>();
  t.prompt = j.at("prompt").get<std::string>();
  t.image = j.at("image").get<ImageRef>();
  t.config = j.at("config").get<SearchConfig>();
  for (const auto& js : j.at("steps")) {
    StepChoice s;
    for (const auto& jc : js.at("candidates"))
      s.candidates.push_back(
          {jc.at("sentence").get<std::string>(), optional_double(jc, "temperature"), jc.at("seed").get<std::uint64_t>()});
    s.scores = js.at("scores").get<std::vector<double>>();
    s.chosen_index = js.at("chosen_index").get<std::size_t>();
    s.dropped_empty = js.value("dropped_empty", std::size_t{0});
    s.wall_ms = optional_double(js, "wall_ms");
    if (s.scores.size() != s.candidates.size() || s.chosen_index >= s.candidates.size())
      throw ParseError("trace step has inconsistent candidates/scores", 0);
    t.steps.push_back(std::move(s));
  }
  t.sentences = j.at("sentences").get<std::vector<std::string>>();
  t.final_response = j.at("final_response").get<std::string>();
  t.stop_reason = j.at("stop_reason").get<std::string>();
  t.provider_calls = j.at("provider_calls").get<std::size_t>();
  if (j.contains("bon")) {
    const auto& b = j.at("bon");
    t.bon_chosen = b.at("chosen").get<std::size_t>();
    for (const auto& jr : b.at("responses")) {
      BonResponse r;
      r.text = jr.at("text").get<std::string>();
      r.sentences = jr.at("sentences").get<std::vector<std::string>>();
      r.temperature = jr.at("temperature").get<double>();
      r.seed = jr.at("seed").get<std::uint64_t>();
      r.score = optional_double(jr, "score").value_or(-std::numeric_limits<double>::infinity());
      t.bon_responses.push_back(std::move(r));
    }
  }
  t.wall_ms = optional_double(j, "wall_ms");
}

SweepTable sweep_step_size(const std::vector<SweepItem>& items, std::vector<std::size_t> step_sizes, double temperature,
                           const SearchConfig& base, StepScorer* scorer, PolicyProvider& policy,
                           const SweepMetric& metric, const SearchOptions& options) {
  if (items.empty()) throw ConfigError("sweep needs at least one (prompt, image) item");
  if (step_sizes.empty()) throw ConfigError("sweep needs at least one step size");
  for (auto s : step_sizes)
    if (s < 1) throw ConfigError("sweep step sizes must be positive");
  std::sort(step_sizes.begin(), step_sizes.end());
  step_sizes.erase(std::unique(step_sizes.begin(), step_sizes.end()), step_sizes.end());

  SweepTable table;
  table.temperature = temperature;
  table.guidance = std::string(to_string(base.guidance));
  for (auto size : step_sizes) {
    SearchConfig cfg = base;
    cfg.temperatures = {temperature};
    cfg.samples_per_temperature = size;

    SweepRow row;
    row.step_size = size;
    double steps = 0.0;
    double chosen = 0.0;
    double metric_sum = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      try {
        const auto trace = guided_search(items[i].prompt, items[i].image, cfg, scorer, policy, options);
        double total = 0.0;
        for (const auto& s : trace.steps) total += s.scores[s.chosen_index];
        steps += static_cast<double>(trace.steps.size());
        chosen += total;
        if (metric) metric_sum += metric(items[i], trace);
        row.responses.push_back(trace.final_response);
        ++row.succeeded;
      } catch (const Error& e) {
        row.failures.push_back({i, e.what()});
        row.responses.emplace_back();
      }
    }
    if (row.succeeded) {
      const double n = static_cast<double>(row.succeeded);
      row.mean_steps = steps / n;
      row.mean_chosen_score = chosen / n;
      if (metric) row.mean_metric = metric_sum / n;
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

void to_json(json& j, const SweepTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json failures = json::array();
    for (const auto& f : r.failures) failures.push_back({{"item", f.item}, {"error", f.error}});
    rows.push_back({{"step_size", r.step_size},
                    {"succeeded", r.succeeded},
                    {"failures", failures},
                    {"mean_steps", r.mean_steps},
                    {"mean_chosen_score", r.mean_chosen_score},
                    {"mean_metric", r.mean_metric ? json(*r.mean_metric) : json(nullptr)},
                    {"responses", r.responses}});
  }
  j = json{{"temperature", t.temperature}, {"guidance", t.guidance}, {"rows", rows}};
}

void from_json(const json& j, SweepTable& t) {
  t = {};
  t.temperature = j.at("temperature").get<double>();
  t.guidance = j.at("guidance").get<std::string>();
  for (const auto& jr : j.at("rows")) {
    SweepRow r;
    r.step_size = jr.at("step_size").get<std::size_t>();
    r.succeeded = jr.at("succeeded").get<std::size_t>();
    for (const auto& f : jr.at("failures")) r.failures.push_back({f.at("item").get<std::size_t>(), f.at("error").get<std::string>()});
    r.mean_steps = jr.at("mean_steps").get<double>();
    r.mean_chosen_score = jr.at("mean_chosen_score").get<double>();
    r.mean_metric = optional_double(jr, "mean_metric");
    r.responses = jr.at("responses").get<std::vector<std::string>>();
    t.rows.push_back(std::move(r));
  }
}

std::string render_sweep_text(const SweepTable& t) {
  std::ostringstream out;
  out << "# step-size sweep, T=" << fixed(t.temperature, 2) << ", guidance=" << t.guidance << "\n";
  out << "step_size\tsucceeded\tfailed\tmean_steps\tmean_chosen_score\tmean_metric\n";
  for (const auto& r : t.rows)
    out << r.step_size << '\t' << r.succeeded << '\t' << r.failures.size() << '\t' << fixed(r.mean_steps) << '\t'
        << fixed(r.mean_chosen_score, 6) << '\t' << (r.mean_metric ? fixed(*r.mean_metric, 6) : std::string("-")) << "\n";
  return out.str();
}

}  // namespace vgs
