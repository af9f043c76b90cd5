#include "vgs/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include <CLI11.hpp>

#include "vgs/eval.hpp"
#include "vgs/hash.hpp"
#include "vgs/reward.hpp"
#include "vgs/rng.hpp"

#ifndef VGS_ASSET_DIR
#define VGS_ASSET_DIR "assets"
#endif

namespace vgs {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

/// Exit code of a failed simulate property check.
constexpr int kPropertyFailed = 1;

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void require_known_keys(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [k, _] : j.items())
    if (std::find_if(keys.begin(), keys.end(), [&](const char* x) { return k == x; }) == keys.end())
      throw ConfigError("unknown key '" + k + "' in config section '" + section + "'");
}

HttpSection parse_http(const json& j, const std::string& section, bool embedding) {
  if (j.contains("auth_token") || j.contains("api_key"))
    throw ConfigError("config section '" + section +
                      "' holds an inline secret; name an environment variable with auth_token_env instead");
  require_known_keys(j, section,
                     {"endpoint_url", "model_id", "auth_token_env", "timeout_ms", "max_retries", "retry_backoff_ms", "dim"});
  HttpSection s;
  s.provider.endpoint_url = j.at("endpoint_url").get<std::string>();
  s.provider.model_id = j.value("model_id", std::string());
  s.provider.request_timeout = std::chrono::milliseconds(j.value("timeout_ms", 30'000));
  s.provider.max_retries = j.value("max_retries", 2);
  s.provider.retry_backoff = std::chrono::milliseconds(j.value("retry_backoff_ms", 250));
  if (j.contains("auth_token_env")) s.auth_token_env = j.at("auth_token_env").get<std::string>();
  if (embedding) s.dim = j.at("dim").get<std::size_t>();
  return s;
}

json http_json(const HttpSection& s) {
  json j{{"endpoint_url", s.provider.endpoint_url},
         {"model_id", s.provider.model_id},
         {"timeout_ms", s.provider.request_timeout.count()},
         {"max_retries", s.provider.max_retries},
         {"retry_backoff_ms", s.provider.retry_backoff.count()}};
  if (s.auth_token_env) j["auth_token_env"] = *s.auth_token_env;
  if (s.dim) j["dim"] = s.dim;
  return j;
}

ProviderConfig with_secret(const HttpSection& s) {
  ProviderConfig cfg = s.provider;
  if (s.auth_token_env) {
    const char* v = std::getenv(s.auth_token_env->c_str());
    if (!v || !*v) throw ConfigError("environment variable " + *s.auth_token_env + " (auth token) is not set");
    cfg.auth_token = v;
  }
  return cfg;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << body) || !out.flush()) throw IoError("cannot write " + path.string());
}

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = trim(item);
    std::size_t v = 0;
    try {
      std::size_t used = 0;
      const long long parsed = std::stoll(std::string(t), &used);
      if (used != t.size() || parsed < 1) throw std::invalid_argument("not positive");
      v = static_cast<std::size_t>(parsed);
    } catch (const std::exception&) {
      throw ConfigError("step size '" + std::string(t) + "' is not a positive integer");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("no step sizes given");
  return out;
}

SegmentationRules rules_for(const RunConfig& cfg) {
  return cfg.abbreviations_file ? SegmentationRules::with_abbreviations_file(*cfg.abbreviations_file)
                                : SegmentationRules{};
}

std::vector<ImageRef> parse_images(const std::vector<std::string>& lines) {
  std::vector<ImageRef> images;
  for (const auto& l : lines) images.push_back(ImageRef::parse(l));
  return images;
}

// --- commands ---------------------------------------------------------------

struct Common {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig load_config(const Common& c) {
  auto cfg = RunConfig::load(c.config ? std::optional<fs::path>(*c.config) : std::nullopt);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.sim.seed.reset();  // the flag drives the sim world as well
  }
  return cfg;
}

struct BuildArgs {
  std::string images;
  std::string prompts;
  std::optional<std::size_t> responses_per_pair;
};

int cmd_build_dataset(const Common& c, const BuildArgs& a, std::ostream& out) {
  auto cfg = load_config(c);
  if (a.responses_per_pair) cfg.data.responses_per_pair = *a.responses_per_pair;
  cfg.finalize();
  const auto images = parse_images(read_lines(a.images));
  const auto prompts = read_lines(a.prompts);
  if (images.empty()) throw ConfigError("images file " + a.images + " lists no images");
  if (prompts.empty()) throw ConfigError("prompts file " + a.prompts + " lists no prompts");

  const auto providers = make_providers(cfg);
  ProcessRewardModel prm(providers.embedder);
  auto options = cfg.data;
  options.rules = rules_for(cfg);
  const auto pairs = build_pairs(images, prompts, cfg.seed);
  const auto result = build_triplets(pairs, *providers.policy, prm, options);

  fs::create_directories(c.out);
  const fs::path data = fs::path(c.out) / "triplets.jsonl";
  write_jsonl(result.records, data);

  double lo = 1.0, hi = -1.0, sum = 0.0;
  for (const auto& r : result.records) {
    lo = std::min(lo, r.reward);
    hi = std::max(hi, r.reward);
    sum += r.reward;
  }
  const double n = static_cast<double>(result.records.size());
  json summary{{"pairs", pairs.size()},
               {"failed_pairs", result.failures.size()},
               {"records", result.records.size()},
               {"reward_mean", n > 0 ? json(sum / n) : json(nullptr)},
               {"reward_min", n > 0 ? json(lo) : json(nullptr)},
               {"reward_max", n > 0 ? json(hi) : json(nullptr)}};
  write_file(fs::path(c.out) / "summary.json", summary.dump(2) + "\n");
  write_manifest(c.out, "build-dataset", cfg.hash(), {"triplets.jsonl", "summary.json"});

  out << "records " << result.records.size() << " from " << pairs.size() - result.failures.size() << "/" << pairs.size()
      << " pairs\n";
  if (n > 0) out << "reward mean " << fmt(sum / n) << " min " << fmt(lo) << " max " << fmt(hi) << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::optional<double> gamma;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> shuffle_seed;
  std::optional<std::string> optimizer;
  std::optional<std::string> architecture;
  std::optional<std::size_t> hidden_dim;
};

int cmd_train_value(const Common& c, const TrainArgs& a, std::ostream& out) {
  auto cfg = load_config(c);
  if (a.gamma) cfg.train.gamma = *a.gamma;
  if (a.lr) cfg.train.learning_rate = *a.lr;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.shuffle_seed) cfg.train.shuffle_seed = *a.shuffle_seed;
  if (a.optimizer) cfg.train.optimizer = optimizer_from_string(*a.optimizer);
  if (a.architecture) cfg.architecture = architecture_from_string(*a.architecture);
  if (a.hidden_dim) cfg.hidden_dim = *a.hidden_dim;
  cfg.finalize();

  std::vector<TripletRecord> records;
  try {
    records = read_jsonl<TripletRecord>(a.data);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  if (records.empty()) throw ConfigError("training data " + a.data + " holds no records");

  const auto providers = make_providers(cfg);
  const auto samples = to_td_samples(records, *providers.embedder);
  const std::size_t dim = 2 * providers.embedder->dim();
  const std::uint64_t init_seed = mix(cfg.seed, std::string_view("init"));
  ValueHead head = cfg.architecture == Architecture::tabular ? ValueHead::tabular(dim)
                   : cfg.architecture == Architecture::linear
                       ? ValueHead::linear(dim, init_seed)
                       : ValueHead::one_hidden_layer(dim, cfg.hidden_dim, init_seed);
  const auto result = train(std::move(head), samples, cfg.train);

  fs::create_directories(c.out);
  save_checkpoint(result.head, fs::path(c.out) / "value_head.json");
  json curve = json::array();
  for (const auto& e : result.epochs)
    curve.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"batches", e.batches}});
  write_file(fs::path(c.out) / "loss_curve.json",
             json{{"gamma", cfg.train.gamma}, {"samples", samples.size()}, {"epochs", curve}}.dump(2) + "\n");
  write_manifest(c.out, "train-value", cfg.hash(), {"value_head.json", "loss_curve.json"});

  out << "trained " << to_string(cfg.architecture) << " head on " << samples.size() << " samples\n";
  for (const auto& e : result.epochs) out << "epoch " << e.epoch << " loss " << fmt(e.mean_loss, 8) << "\n";
  return 0;
}

struct SearchArgs {
  std::string prompt;
  std::string image;
  std::string guidance = "value";
  std::optional<std::string> checkpoint;
  std::optional<std::size_t> n;
  std::string selector = "mean-prm";
  bool record_timing = false;
};

std::unique_ptr<StepScorer> make_scorer(Guidance g, const std::optional<std::string>& checkpoint,
                                        const Providers& providers) {
  if (g == Guidance::value) {
    if (!checkpoint) throw ConfigError("value guidance needs --checkpoint");
    auto head = std::make_shared<const ValueHead>(load_checkpoint(*checkpoint));
    return std::make_unique<ValueScorer>(head, providers.embedder);
  }
  if (g == Guidance::prm) return std::make_unique<PrmScorer>(std::make_shared<ProcessRewardModel>(providers.embedder));
  return nullptr;
}

int cmd_search(const Common& c, const SearchArgs& a, std::ostream& out) {
  auto cfg = load_config(c);
  if (a.n) cfg.bon.n = *a.n;
  cfg.finalize();
  if (a.guidance == "value" && !a.checkpoint) throw ConfigError("--guidance value requires --checkpoint");
  const auto image = ImageRef::parse(a.image);
  const auto providers = make_providers(cfg);
  SearchOptions options{rules_for(cfg), a.record_timing};

  SearchTrace trace;
  if (a.guidance == "bon") {
    std::unique_ptr<ResponseSelector> selector;
    if (a.selector == "mean-prm") {
      selector = std::make_unique<MeanPrmSelector>(std::make_shared<ProcessRewardModel>(providers.embedder));
    } else if (a.selector == "judge") {
      const fs::path rubric = cfg.rubric.value_or(fs::path(VGS_ASSET_DIR) / "judge_rubric.txt");
      selector = std::make_unique<JudgeTournamentSelector>(
          http_judge(cfg.judge ? std::optional(with_secret(*cfg.judge)) : std::nullopt), load_rubric(rubric), cfg.seed);
    } else {
      throw ConfigError("unknown selector '" + a.selector + "' (expected mean-prm or judge)");
    }
    trace = best_of_n(a.prompt, image, cfg.bon, *selector, *providers.policy, options);
  } else if (a.guidance == "greedy") {
    trace = greedy_decode(a.prompt, image, *providers.policy, cfg.search.max_steps, options).trace;
  } else {
    auto search_cfg = cfg.search;
    search_cfg.guidance = guidance_from_string(a.guidance);
    const auto scorer = make_scorer(search_cfg.guidance, a.checkpoint, providers);
    trace = guided_search(a.prompt, image, search_cfg, scorer.get(), *providers.policy, options);
  }

  fs::create_directories(c.out);
  write_file(fs::path(c.out) / "trace.json", json(trace).dump(2) + "\n");
  write_manifest(c.out, "search", cfg.hash(), {"trace.json"});
  out << trace.final_response << "\n";
  return 0;
}

struct SweepArgs {
  std::string sizes = "2,4,8,16";
  double temperature = 0.5;
  std::string guidance = "value";
  std::optional<std::string> checkpoint;
  std::optional<std::string> prompt;
  std::optional<std::string> image;
  std::optional<std::string> prompts_file;
  std::optional<std::string> images_file;
};

int cmd_sweep(const Common& c, const SweepArgs& a, std::ostream& out, std::ostream& err) {
  auto cfg = load_config(c);
  cfg.finalize();
  const auto sizes = parse_sizes(a.sizes);
  if (!(a.temperature > 0.0)) throw ConfigError("--temperature must be positive");

  std::vector<std::string> prompts;
  if (a.prompts_file) prompts = read_lines(*a.prompts_file);
  if (a.prompt) prompts.push_back(*a.prompt);
  std::vector<std::string> image_specs;
  if (a.images_file) image_specs = read_lines(*a.images_file);
  if (a.image) image_specs.push_back(*a.image);
  if (prompts.empty() || image_specs.empty()) throw ConfigError("sweep needs prompts (--prompt/--prompts) and images");

  std::vector<SweepItem> items;
  for (const auto& p : build_pairs(parse_images(image_specs), prompts, cfg.seed)) items.push_back({p.prompt, p.image});

  const auto providers = make_providers(cfg);
  auto base = cfg.search;
  base.guidance = guidance_from_string(a.guidance);
  const auto scorer = make_scorer(base.guidance, a.checkpoint, providers);

  SweepMetric metric;
  if (providers.world) {
    metric = [&](const SweepItem& item, const SearchTrace& t) {
      return providers.world->response_return(item.image.value, t.sentences, providers.env_seed);
    };
  }
  const auto table =
      sweep_step_size(items, sizes, a.temperature, base, scorer.get(), *providers.policy, metric, {rules_for(cfg)});

  fs::create_directories(c.out);
  write_file(fs::path(c.out) / "sweep.json", json(table).dump(2) + "\n");
  write_file(fs::path(c.out) / "sweep.txt", render_sweep_text(table));
  write_manifest(c.out, "sweep", cfg.hash(), {"sweep.json", "sweep.txt"});
  out << render_sweep_text(table);

  std::size_t ok = 0;
  for (const auto& r : table.rows) {
    ok += r.succeeded;
    for (const auto& f : r.failures) err << "size " << r.step_size << " item " << f.item << " failed: " << f.error << "\n";
  }
  if (metric) {
    bool monotone = true;
    for (std::size_t i = 1; i < table.rows.size(); ++i)
      if (table.rows[i].mean_metric && table.rows[i - 1].mean_metric &&
          *table.rows[i].mean_metric < *table.rows[i - 1].mean_metric)
        monotone = false;
    err << "sim return non-decreasing in step size: " << (monotone ? "yes" : "no") << "\n";
  }
  if (ok == 0) {
    err << "every sweep cell failed\n";
    return 3;
  }
  return 0;
}

struct EvalArgs {
  std::string captions;
  std::optional<std::string> annotations;
  std::optional<std::string> lexicon;
  std::vector<std::string> sweeps;
};

int cmd_evaluate(const Common& c, const EvalArgs& a, std::ostream& out) {
  auto cfg = load_config(c);
  cfg.finalize();
  const fs::path lexicon_path =
      a.lexicon ? fs::path(*a.lexicon) : cfg.lexicon.value_or(fs::path(VGS_ASSET_DIR) / "lexicon_coco.json");
  const auto lexicon = ObjectLexicon::load(lexicon_path);
  if (!a.annotations && !cfg.annotations) throw ConfigError("evaluate needs --annotations");
  const auto annotations = load_annotations(a.annotations ? fs::path(*a.annotations) : *cfg.annotations, lexicon);
  std::vector<Caption> captions;
  try {
    captions = load_captions(a.captions);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  if (captions.empty()) throw ConfigError("no captions");

  ReportInputs inputs;
  inputs.chair = chair_scores(captions, annotations, lexicon);
  for (const auto& s : a.sweeps) {
    try {
      inputs.sweeps.push_back(json::parse(read_file(s)).get<SweepTable>());
    } catch (const json::exception& e) {
      throw ConfigError(s + ": not a sweep table: " + e.what());
    }
  }
  inputs.config_hash = cfg.hash();
  render_report(inputs, c.out);
  write_manifest(c.out, "evaluate", inputs.config_hash, {"report.json", "report.txt"});
  out << report_text(inputs);
  return 0;
}

int cmd_export_sft(const Common& c, const std::string& traces_dir, std::ostream& out, std::ostream& err) {
  auto cfg = load_config(c);
  cfg.finalize();
  const auto traces = read_trace_dir(traces_dir);
  fs::create_directories(c.out);
  const auto result = export_sft(traces, fs::path(c.out) / "sft.jsonl");
  write_manifest(c.out, "export-sft", cfg.hash(), {"sft.jsonl"});
  for (auto i : result.skipped) err << "skipped trace " << i << ": empty response\n";
  out << "wrote " << result.written << " records, skipped " << result.skipped.size() << "\n";
  return 0;
}

struct SimulateArgs {
  std::optional<std::string> suite;
};

int cmd_simulate(const Common& c, const SimulateArgs& a, std::ostream& out) {
  auto cfg = load_config(c);
  if (a.suite) cfg.sim.suite = *a.suite;
  cfg.finalize();
  const auto world = make_sim_world(cfg);

  bool all = true;
  auto verdict = [&](const std::string& name, bool ok) {
    out << name << ": " << (ok ? "PASS" : "FAIL") << "\n";
    all = all && ok;
  };

  double residual = 0.0;
  for (std::size_t k = 0; k < world->size(); ++k) {
    const auto& mdp = world->mdp(k);
    const auto policy = sim::softmax_policy(mdp, 1.0);
    residual = std::max(residual, sim::bellman_residual(mdp, sim::dp_values(mdp), nullptr));
    residual = std::max(residual, sim::bellman_residual(mdp, sim::dp_values(mdp, &policy), &policy));
  }

  if (cfg.sim.suite == "trap" || cfg.sim.suite == "canonical-trap") {
    bool separated = true;
    for (std::size_t k = 0; k < world->size(); ++k) {
      const auto& mdp = world->mdp(k);
      const auto q = sim::action_values(mdp, sim::dp_values(mdp));
      std::vector<double> rewards;
      for (const auto& act : mdp.states[mdp.start].actions) rewards.push_back(act.reward);
      const auto myopic = first_argmax(rewards);
      const auto optimal = first_argmax(q[mdp.start]);
      out << world->image_id(k) << ": myopic action " << myopic << " return " << fmt(q[mdp.start][myopic])
          << ", value-optimal action " << optimal << " return " << fmt(q[mdp.start][optimal]) << "\n";
      separated = separated && myopic != optimal;
    }
    verdict("myopic ≠ value-optimal", separated);
  } else if (cfg.sim.suite == "chain") {
    const auto v = sim::dp_values(world->mdp(0));
    out << "values " << fmt(v[0]) << " " << fmt(v[1]) << " " << fmt(v[2]) << "\n";
    verdict("chain values (0.81, 0.9, 1.0)",
            std::abs(v[0] - 0.81) < 1e-12 && std::abs(v[1] - 0.9) < 1e-12 && std::abs(v[2] - 1.0) < 1e-12);
  } else {
    bool within = true;
    for (std::size_t k = 0; k < world->size(); ++k) {
      const auto& mdp = world->mdp(k);
      const auto policy = sim::softmax_policy(mdp, 1.0);
      const double exact = sim::dp_values(mdp, &policy)[mdp.start];
      Rng rng(mix(cfg.seed, k));
      const std::size_t n = 10'000;
      double sum = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = sim::sample_episode(mdp, policy, mdp.start, rng).discounted_return;
        sum += r;
        sq += r * r;
      }
      const double mean = sum / n;
      const double se = std::sqrt(std::max(0.0, sq / n - mean * mean) / n);
      within = within && std::abs(mean - exact) <= 3.0 * se + 1e-12;
    }
    verdict("Monte Carlo returns within 3 standard errors of dp_values", within);
  }
  out << "Bellman residual " << residual << "\n";
  verdict("Bellman residual < 1e-10", residual < 1e-10);

  const auto providers = make_providers(cfg);
  ProcessRewardModel prm(providers.embedder);
  double reward_error = 0.0;
  for (std::size_t k = 0; k < world->size(); ++k)
    for (const auto& st : world->mdp(k).states)
      for (const auto& act : st.actions)
        reward_error = std::max(reward_error,
                                std::abs(prm.score(act.token, ImageRef::sim(world->image_id(k))).value - act.reward));
  verdict("reward model reproduces sim rewards within 1e-6", reward_error < 1e-6);

  if (!c.out.empty()) {
    fs::create_directories(c.out);
    json mdps = json::array();
    for (std::size_t k = 0; k < world->size(); ++k) mdps.push_back({{"image", world->image_id(k)}, {"mdp", world->mdp(k)}});
    write_file(fs::path(c.out) / "mdp.json", mdps.dump(2) + "\n");
    save_checkpoint(sim::dp_value_head(*world, *providers.embedder), fs::path(c.out) / "dp_value_head.json");
    write_manifest(c.out, "simulate", cfg.hash(), {"mdp.json", "dp_value_head.json"});
  }
  return all ? 0 : kPropertyFailed;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return 4;
  if (dynamic_cast<const ProviderError*>(&e) || dynamic_cast<const DegeneratePolicyError*>(&e)) return 3;
  if (dynamic_cast<const Error*>(&e)) return 2;
  return 1;
}

}  // namespace

// --- RunConfig --------------------------------------------------------------

RunConfig RunConfig::load(const std::optional<fs::path>& path) {
  if (!path) return from_json(json::object(), {});
  json j;
  try {
    j = json::parse(read_file(*path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path->string() + ": malformed JSON: " + e.what());
  }
  return from_json(j, path->parent_path());
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base) {
  RunConfig cfg;
  try {
    require_known_keys(j, "top level", {"seed", "provider", "search", "bon", "train", "data", "eval"});
    cfg.seed = j.value("seed", std::uint64_t{0});

    if (j.contains("provider")) {
      const auto& p = j.at("provider");
      require_known_keys(p, "provider", {"kind", "sim", "policy", "embedding", "judge"});
      cfg.provider_kind = p.value("kind", std::string("sim"));
      if (p.contains("sim")) {
        const auto& s = p.at("sim");
        require_known_keys(s, "provider.sim", {"suite", "images", "seed", "mdp_file", "extra_dims"});
        cfg.sim.suite = s.value("suite", cfg.sim.suite);
        cfg.sim.images = s.value("images", cfg.sim.images);
        if (s.contains("seed")) cfg.sim.seed = s.at("seed").get<std::uint64_t>();
        if (s.contains("mdp_file")) cfg.sim.mdp_file = resolve(base, s.at("mdp_file").get<std::string>());
        cfg.sim.extra_dims = s.value("extra_dims", cfg.sim.extra_dims);
      }
      if (p.contains("policy")) cfg.policy = parse_http(p.at("policy"), "provider.policy", false);
      if (p.contains("embedding")) cfg.embedding = parse_http(p.at("embedding"), "provider.embedding", true);
      if (p.contains("judge")) cfg.judge = parse_http(p.at("judge"), "provider.judge", false);
    }

    if (j.contains("search")) {
      require_known_keys(j.at("search"), "search",
                         {"temperatures", "samples_per_temperature", "include_greedy", "max_steps", "guidance",
                          "max_in_flight", "max_new_units"});
      cfg.search = j.at("search").get<SearchConfig>();
    }
    if (j.contains("bon")) {
      const auto& b = j.at("bon");
      require_known_keys(b, "bon", {"n", "temperatures", "max_in_flight", "max_new_units"});
      cfg.bon.n = b.value("n", cfg.bon.n);
      cfg.bon.temperatures = b.value("temperatures", cfg.bon.temperatures);
      cfg.bon.max_in_flight = b.value("max_in_flight", cfg.bon.max_in_flight);
      cfg.bon.max_new_units = b.value("max_new_units", cfg.bon.max_new_units);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      require_known_keys(t, "train",
                         {"gamma", "learning_rate", "batch_size", "epochs", "shuffle_seed", "optimizer", "architecture",
                          "hidden_dim"});
      cfg.train.gamma = t.value("gamma", cfg.train.gamma);
      cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.epochs = t.value("epochs", cfg.train.epochs);
      cfg.train.shuffle_seed = t.value("shuffle_seed", cfg.train.shuffle_seed);
      if (t.contains("optimizer")) cfg.train.optimizer = optimizer_from_string(t.at("optimizer").get<std::string>());
      if (t.contains("architecture"))
        cfg.architecture = architecture_from_string(t.at("architecture").get<std::string>());
      cfg.hidden_dim = t.value("hidden_dim", cfg.hidden_dim);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      require_known_keys(d, "data",
                         {"responses_per_pair", "temperatures", "max_new_units", "max_in_flight", "abbreviations_file"});
      cfg.data.responses_per_pair = d.value("responses_per_pair", cfg.data.responses_per_pair);
      cfg.data.temperatures = d.value("temperatures", cfg.data.temperatures);
      cfg.data.max_new_units = d.value("max_new_units", cfg.data.max_new_units);
      cfg.data.max_in_flight = d.value("max_in_flight", cfg.data.max_in_flight);
      if (d.contains("abbreviations_file"))
        cfg.abbreviations_file = resolve(base, d.at("abbreviations_file").get<std::string>());
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      require_known_keys(e, "eval", {"lexicon", "annotations", "rubric"});
      if (e.contains("lexicon")) cfg.lexicon = resolve(base, e.at("lexicon").get<std::string>());
      if (e.contains("annotations")) cfg.annotations = resolve(base, e.at("annotations").get<std::string>());
      if (e.contains("rubric")) cfg.rubric = resolve(base, e.at("rubric").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return cfg;
}

void RunConfig::finalize() {
  search.seed = mix(seed, std::string_view("search"));
  bon.seed = mix(seed, std::string_view("bon"));
  data.seed = seed;
  if (!sim.seed) sim.seed = seed;

  if (provider_kind != "sim" && provider_kind != "http")
    throw ConfigError("provider kind must be 'sim' or 'http', got '" + provider_kind + "'");
  if (provider_kind == "http") {
    if (!policy) throw ConfigError("http provider needs a provider.policy section");
    if (!embedding) throw ConfigError("http provider needs a provider.embedding section");
    policy->provider.validate();
    embedding->provider.validate();
    if (embedding->dim == 0) throw ConfigError("provider.embedding.dim must be positive");
  } else {
    static const std::vector<std::string> suites = {"trap", "canonical-trap", "chain", "random"};
    if (std::find(suites.begin(), suites.end(), sim.suite) == suites.end())
      throw ConfigError("unknown sim suite '" + sim.suite + "' (expected trap, canonical-trap, chain or random)");
    if (sim.images == 0) throw ConfigError("provider.sim.images must be positive");
  }
  if (judge) judge->provider.validate();
  search.validate();
  bon.validate();
  train.validate();
  data.validate();
  for (const auto* p : {&sim.mdp_file, &abbreviations_file, &lexicon, &annotations, &rubric})
    if (*p && !fs::exists(**p)) throw ConfigError("configured path does not exist: " + (*p)->string());
}

json RunConfig::to_json() const {
  json provider{{"kind", provider_kind}};
  if (provider_kind == "sim") {
    json s{{"suite", sim.suite}, {"images", sim.images}, {"extra_dims", sim.extra_dims}};
    if (sim.seed) s["seed"] = *sim.seed;
    if (sim.mdp_file) s["mdp_file"] = sha256_file(*sim.mdp_file);  // content, not location
    provider["sim"] = s;
  }
  if (policy) provider["policy"] = http_json(*policy);
  if (embedding) provider["embedding"] = http_json(*embedding);
  if (judge) provider["judge"] = http_json(*judge);

  json j{{"seed", seed},
         {"provider", provider},
         {"search", search},
         {"bon",
          {{"n", bon.n},
           {"temperatures", bon.temperatures},
           {"max_in_flight", bon.max_in_flight},
           {"max_new_units", bon.max_new_units}}},
         {"train",
          {{"gamma", train.gamma},
           {"learning_rate", train.learning_rate},
           {"batch_size", train.batch_size},
           {"epochs", train.epochs},
           {"shuffle_seed", train.shuffle_seed},
           {"optimizer", to_string(train.optimizer)},
           {"architecture", to_string(architecture)},
           {"hidden_dim", hidden_dim}}},
         {"data",
          {{"responses_per_pair", data.responses_per_pair},
           {"temperatures", data.temperatures},
           {"max_new_units", data.max_new_units},
           {"max_in_flight", data.max_in_flight}}}};
  if (abbreviations_file) j["data"]["abbreviations_sha256"] = sha256_file(*abbreviations_file);
  return j;
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

std::shared_ptr<sim::SimWorld> make_sim_world(const RunConfig& cfg) {
  auto world = std::make_shared<sim::SimWorld>();
  const std::uint64_t seed = cfg.sim.seed.value_or(cfg.seed);
  if (cfg.sim.mdp_file) {
    json j;
    try {
      j = json::parse(read_file(*cfg.sim.mdp_file));
      if (j.is_object()) j = json::array({j});
      for (std::size_t k = 0; k < j.size(); ++k) {
        const auto& e = j[k];
        if (e.contains("mdp"))
          world->add(e.value("image", "img-" + std::to_string(k)), e.at("mdp").get<sim::SimMDP>());
        else
          world->add("img-" + std::to_string(k), e.get<sim::SimMDP>());
      }
    } catch (const json::exception& e) {
      throw ConfigError(cfg.sim.mdp_file->string() + ": not a sim MDP file: " + e.what());
    }
    return world;
  }
  for (std::size_t k = 0; k < cfg.sim.images; ++k) {
    const auto id = "img-" + std::to_string(k);
    const auto s = mix(seed, k);
    if (cfg.sim.suite == "trap")
      world->add(id, sim::make_trap_mdp(s).mdp);
    else if (cfg.sim.suite == "canonical-trap")
      world->add(id, sim::make_canonical_trap().mdp);
    else if (cfg.sim.suite == "chain")
      world->add(id, sim::make_chain_mdp());
    else
      world->add(id, sim::make_random_mdp(s));
  }
  return world;
}

Providers make_providers(const RunConfig& cfg) {
  Providers p;
  if (cfg.provider_kind == "sim") {
    auto world = make_sim_world(cfg);
    auto sp = sim::sim_as_providers(world, cfg.seed, cfg.sim.extra_dims);
    p.policy = sp.policy;
    p.embedder = std::make_shared<CachingEmbeddingProvider>(sp.embedder);
    p.world = world;
    p.env_seed = sp.policy->env_seed();
    return p;
  }
  p.policy = std::make_shared<HttpPolicyProvider>(with_secret(*cfg.policy));
  p.embedder = std::make_shared<CachingEmbeddingProvider>(
      std::make_shared<HttpEmbeddingProvider>(with_secret(*cfg.embedding), cfg.embedding->dim));
  return p;
}

void write_manifest(const fs::path& out_dir, const std::string& command, const std::string& config_hash,
                    const std::vector<fs::path>& artifacts) {
  json list = json::array();
  for (const auto& a : artifacts) {
    const auto full = out_dir / a;
    list.push_back({{"path", a.generic_string()}, {"sha256", sha256_file(full)}, {"bytes", fs::file_size(full)}});
  }
  write_file(out_dir / "manifest.json",
             json{{"command", command}, {"config_sha256", config_hash}, {"artifacts", list}}.dump(2) + "\n");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Value-guided inference-time search toolkit", "vgs"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool out_required) {
    sub->add_option("--config", common.config, "JSON run configuration");
    sub->add_option("--seed", common.seed, "global seed (overrides the config)");
    auto* o = sub->add_option("--out", common.out, "output directory");
    if (out_required) o->required();
  };

  BuildArgs build;
  auto* build_cmd = app.add_subcommand("build-dataset", "generate responses and write TD triplets");
  add_common(build_cmd, true);
  build_cmd->add_option("--images", build.images, "file with one image per line (path, URL or sim:<id>)")->required();
  build_cmd->add_option("--prompts", build.prompts, "file with one prompt per line")->required();
  build_cmd->add_option("--responses-per-pair", build.responses_per_pair);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train-value", "train a value head on a triplet file");
  add_common(train_cmd, true);
  train_cmd->add_option("--data", tr.data, "triplet JSONL")->required();
  train_cmd->add_option("--gamma", tr.gamma);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--batch-size", tr.batch_size);
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--shuffle-seed", tr.shuffle_seed);
  train_cmd->add_option("--optimizer", tr.optimizer, "plain-sgd | adaptive-moment");
  train_cmd->add_option("--architecture", tr.architecture, "tabular | linear | one-hidden-layer");
  train_cmd->add_option("--hidden-dim", tr.hidden_dim);

  SearchArgs sr;
  auto* search_cmd = app.add_subcommand("search", "decode one response");
  add_common(search_cmd, true);
  search_cmd->add_option("--prompt", sr.prompt)->required();
  search_cmd->add_option("--image", sr.image)->required();
  search_cmd->add_option("--guidance", sr.guidance)->check(CLI::IsMember({"value", "prm", "greedy", "bon"}));
  search_cmd->add_option("--checkpoint", sr.checkpoint);
  search_cmd->add_option("--n", sr.n, "best-of-n response count");
  search_cmd->add_option("--selector", sr.selector, "mean-prm | judge");
  search_cmd->add_flag("--record-timing", sr.record_timing, "include wall-clock times in the trace");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "vary samples per step at a fixed temperature");
  add_common(sweep_cmd, true);
  sweep_cmd->add_option("--sizes", sw.sizes);
  sweep_cmd->add_option("--temperature", sw.temperature);
  sweep_cmd->add_option("--guidance", sw.guidance)->check(CLI::IsMember({"value", "prm"}));
  sweep_cmd->add_option("--checkpoint", sw.checkpoint);
  sweep_cmd->add_option("--prompt", sw.prompt);
  sweep_cmd->add_option("--image", sw.image);
  sweep_cmd->add_option("--prompts", sw.prompts_file);
  sweep_cmd->add_option("--images", sw.images_file);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "CHAIR metrics and report");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--captions", ev.captions, "JSON array of {image_id, caption} or SFT JSONL")->required();
  eval_cmd->add_option("--annotations", ev.annotations);
  eval_cmd->add_option("--lexicon", ev.lexicon);
  eval_cmd->add_option("--sweep", ev.sweeps, "sweep.json files to include");

  std::string traces_dir;
  auto* export_cmd = app.add_subcommand("export-sft", "collect search traces into SFT JSONL");
  add_common(export_cmd, true);
  export_cmd->add_option("--traces-dir", traces_dir)->required();

  SimulateArgs sim_args;
  auto* sim_cmd = app.add_subcommand("simulate", "run a sim oracle suite");
  add_common(sim_cmd, false);
  sim_cmd->add_option("--suite", sim_args.suite)->check(CLI::IsMember({"trap", "canonical-trap", "chain", "random"}));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*build_cmd) return cmd_build_dataset(common, build, out);
    if (*train_cmd) return cmd_train_value(common, tr, out);
    if (*search_cmd) return cmd_search(common, sr, out);
    if (*sweep_cmd) return cmd_sweep(common, sw, out, err);
    if (*eval_cmd) return cmd_evaluate(common, ev, out);
    if (*export_cmd) return cmd_export_sft(common, traces_dir, out, err);
    if (*sim_cmd) return cmd_simulate(common, sim_args, out);
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << " (batch " << e.batch_index() << ")\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 2;
}

}  // namespace vgs
