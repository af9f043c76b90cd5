// Acceptance suite: one PASS/FAIL line per primary criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "../support.hpp"
#include "vgs/cli.hpp"
#include "vgs/data.hpp"
#include "vgs/eval.hpp"
#include "vgs/reward.hpp"
#include "vgs/search.hpp"
#include "vgs/simlab.hpp"
#include "vgs/value.hpp"

namespace {

using namespace vgs;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

const std::string kPrompt = "Describe this image in detail.";

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// --- TD convergence -----------------------------------------------------------

Outcome td_convergence() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t worst_seed = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto mdp = sim::make_random_mdp(seed);
    if (mdp.states.size() > 20) return {false, "MDP " + std::to_string(seed) + " has more than 20 states"};
    const auto providers = sim::sim_as_providers(mdp, seed);
    const auto& world = *providers.world;
    ProcessRewardModel prm(providers.embedder);

    sim::ExploreOptions explore;
    explore.episodes = 200'000;  // sampling error, not optimisation, dominates below this
    explore.seed = seed;
    const auto samples = sim::exploratory_samples(world, 0, prm, explore);

    TrainConfig cfg;
    cfg.gamma = 0.9;
    cfg.optimizer = Optimizer::plain_sgd;
    cfg.learning_rate = 0.005;
    cfg.batch_size = 64;
    cfg.epochs = 20;
    cfg.shuffle_seed = seed;
    const auto head = train(ValueHead::tabular(2 * providers.embedder->dim()), samples, cfg).head;

    const auto& m = world.mdp(0);
    const auto policy = sim::softmax_policy(m, 1.0);
    const auto q = sim::action_values(m, sim::dp_values(m, &policy));
    const auto image = ImageRef::sim(world.image_id(0));
    for (std::size_t s = 0; s < m.states.size(); ++s) {
      for (std::size_t a = 0; a < m.states[s].actions.size(); ++a) {
        const auto f = featurize(m.states[s].actions[a].token, image, *providers.embedder);
        if (!head.slot(f)) return {false, "token never visited in MDP " + std::to_string(seed)};
        const double err = std::abs(head.predict(f) - q[s][a]);
        if (err > worst) {
          worst = err;
          worst_seed = seed;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-2 && secs < 30.0, "sup-norm error " + num(worst) + " (MDP " + std::to_string(worst_seed) +
                                            "), tolerance 1e-2; " + num(secs, 3) + " s (limit 30 s)"};
}

// --- Myopic-trap separation -----------------------------------------------------

SearchConfig separation_search_config(std::uint64_t seed) {
  SearchConfig cfg;
  cfg.samples_per_temperature = 4;
  cfg.seed = seed;
  cfg.max_in_flight = 1;
  return cfg;
}

/// Tabular head trained through the full data pipeline on one sim world.
ValueHead pipeline_head(const sim::SimProviders& p, std::uint64_t seed, double gamma, std::size_t pairs_per_image) {
  auto prm = std::make_shared<ProcessRewardModel>(p.embedder);
  std::vector<ImageRef> images;
  for (std::size_t k = 0; k < p.world->size(); ++k)
    for (std::size_t i = 0; i < pairs_per_image; ++i) images.push_back(ImageRef::sim(p.world->image_id(k)));
  BuildOptions opts;
  opts.seed = seed;
  opts.max_in_flight = 1;
  const auto built = build_triplets(build_pairs(images, {kPrompt}, seed), *p.policy, *prm, opts);
  const auto samples = to_td_samples(built.records, *p.embedder);
  TrainConfig cfg;
  cfg.gamma = gamma;
  cfg.optimizer = Optimizer::plain_sgd;
  cfg.learning_rate = 0.5;
  cfg.batch_size = 64;
  cfg.epochs = 200;
  cfg.shuffle_seed = seed;
  return train(ValueHead::tabular(2 * p.embedder->dim()), samples, cfg).head;
}

double search_return(const sim::SimProviders& p, const SearchConfig& cfg, StepScorer& scorer) {
  const auto trace = guided_search(kPrompt, ImageRef::sim("img-0"), cfg, &scorer, *p.policy);
  return p.world->response_return("img-0", trace.sentences, p.policy->env_seed());
}

Outcome separation() {
  const auto t0 = Clock::now();
  std::size_t td_wins = 0, dp_wins = 0;
  const std::size_t n = 100;
  for (std::uint64_t seed = 0; seed < n; ++seed) {
    const auto trap = sim::make_trap_mdp(seed);
    const auto p = sim::sim_as_providers(trap.mdp, seed);
    auto prm = std::make_shared<ProcessRewardModel>(p.embedder);
    PrmScorer prm_scorer(prm);

    auto cfg = separation_search_config(seed);
    cfg.guidance = Guidance::prm;
    const double r_prm = search_return(p, cfg, prm_scorer);

    cfg.guidance = Guidance::value;
    ValueScorer td(std::make_shared<const ValueHead>(pipeline_head(p, seed, 0.9, 20)), p.embedder);
    ValueScorer dp(std::make_shared<const ValueHead>(sim::dp_value_head(*p.world, *p.embedder)), p.embedder);
    if (search_return(p, cfg, td) > r_prm) ++td_wins;
    if (search_return(p, cfg, dp) > r_prm) ++dp_wins;
  }
  const double secs = seconds_since(t0);
  return {td_wins * 100 >= 90 * n && dp_wins == n && secs < 60.0,
          "TD head " + std::to_string(td_wins) + "/100 (need >= 90), DP table " + std::to_string(dp_wins) +
              "/100 (need 100); " + num(secs, 3) + " s (limit 60 s)"};
}

// --- Myopic equivalence -----------------------------------------------------

Outcome myopic_equivalence() {
  std::size_t steps = 0;
  double fit = 0.0;
  for (std::uint64_t run = 0; run < 50; ++run) {
    const std::uint64_t seed = 1000 + run;
    const auto p = sim::sim_as_providers(sim::make_random_mdp(seed), seed);
    auto prm = std::make_shared<ProcessRewardModel>(p.embedder);

    sim::ExploreOptions explore;
    explore.episodes = 2000;
    explore.seed = seed;
    const auto samples = sim::exploratory_samples(*p.world, 0, *prm, explore);
    TrainConfig tc;
    tc.gamma = 0.0;
    tc.optimizer = Optimizer::plain_sgd;
    tc.learning_rate = 0.5;
    tc.batch_size = 256;
    tc.epochs = 400;
    tc.shuffle_seed = seed;
    auto head = std::make_shared<const ValueHead>(train(ValueHead::tabular(2 * p.embedder->dim()), samples, tc).head);

    const auto& m = p.world->mdp(0);
    for (const auto& st : m.states) {
      for (const auto& act : st.actions) {
        const auto f = featurize(act.token, ImageRef::sim("img-0"), *p.embedder);
        if (!head->slot(f)) return {false, "run " + std::to_string(run) + ": token " + act.token + " never trained"};
        fit = std::max(fit, std::abs(head->predict(f) - prm->score(act.token, ImageRef::sim("img-0")).value));
      }
    }

    SearchConfig cfg;
    cfg.seed = seed;
    cfg.max_in_flight = 1;
    cfg.guidance = Guidance::prm;
    PrmScorer ps(prm);
    const auto a = guided_search(kPrompt, ImageRef::sim("img-0"), cfg, &ps, *p.policy);
    cfg.guidance = Guidance::value;
    ValueScorer vs(head, p.embedder);
    const auto b = guided_search(kPrompt, ImageRef::sim("img-0"), cfg, &vs, *p.policy);
    if (a.steps.size() != b.steps.size())
      return {false, "run " + std::to_string(run) + ": step counts differ"};
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
      if (a.sentences[i] != b.sentences[i])
        return {false, "run " + std::to_string(run) + " step " + std::to_string(i) + ": '" + a.sentences[i] +
                           "' vs '" + b.sentences[i] + "'"};
      ++steps;
    }
  }
  return {true, "50 runs, " + std::to_string(steps) + " steps identical; max |V - r| " + num(fit)};
}

// --- gradients and overfitting ----------------------------------------------

TDSample random_sample(Rng& rng, std::size_t dim, bool terminal) {
  TDSample s;
  for (std::size_t i = 0; i < dim; ++i) s.current.push_back(rng.normal());
  s.reward = rng.uniform(-1.0, 1.0);
  if (!terminal) {
    s.next.emplace();
    for (std::size_t i = 0; i < dim; ++i) s.next->push_back(rng.normal());
  }
  return s;
}

Outcome gradient_check_criterion() {
  Rng rng(42);
  double worst = 0.0;
  const std::size_t dim = 16;
  for (int arch = 0; arch < 2; ++arch) {
    for (std::size_t i = 0; i < 100; ++i) {
      const auto head =
          arch == 0 ? ValueHead::linear(dim, 100 + i) : ValueHead::one_hidden_layer(dim, 32, 100 + i);
      const auto sample = random_sample(rng, dim, i % 2 == 0);
      worst = std::max(worst, gradient_check(head, sample, 0.9).max_relative_error);
    }
  }
  return {worst < 1e-4, "max relative error " + num(worst) + " over 2 x 100 samples (limit 1e-4)"};
}

Outcome overfit() {
  Rng rng(7);
  double worst = 0.0;
  std::string where;
  for (int arch = 0; arch < 2; ++arch) {
    for (bool terminal : {true, false}) {
      const auto sample = random_sample(rng, 16, terminal);
      auto head = arch == 0 ? ValueHead::linear(16, 3) : ValueHead::one_hidden_layer(16, 32, 3);
      TrainConfig cfg;
      cfg.gamma = 0.9;
      cfg.learning_rate = 1e-2;
      cfg.optimizer = Optimizer::plain_sgd;
      cfg.batch_size = 1;
      cfg.epochs = 5000;  // one step per epoch
      const auto trained = train(std::move(head), std::span(&sample, 1), cfg).head;
      const double target = td_target(sample.reward, sample.next ? trained.predict(*sample.next) : 0.0,
                                      sample.terminal(), cfg.gamma);
      const double loss = std::pow(target - trained.predict(sample.current), 2);
      if (loss >= worst) {
        worst = loss;
        where = std::string(arch == 0 ? "linear" : "one-hidden-layer") + (terminal ? "/terminal" : "/bootstrapped");
      }
    }
  }
  return {worst < 1e-6, "worst final loss " + num(worst) + " (" + where + ") after 5000 steps at lr 1e-2 (limit 1e-6)"};
}

// --- CHAIR --------------------------------------------------------------------

Outcome chair_exactness() {
  const auto lex = ObjectLexicon::load(testing::asset("lexicon_toy.json"));
  const AnnotationSet truth = {{"a", {"dog", "car"}}, {"b", {"cat", "tree", "bench"}}};
  const std::vector<Caption> fixture = {
      {"a", "A dog and a car near two bicycles and a frisbee."},  // 4 mentioned, 2 hallucinated
      {"b", "A kitten sits under a tree beside a bench."},        // 3 mentioned, 0 hallucinated
  };
  const auto report = chair_scores(fixture, truth, lex);
  const bool fixture_ok =
      std::abs(report.chair_i - 2.0 / 7.0) < 1e-9 && std::abs(report.chair_s - 0.5) < 1e-9;

  if (!testing::plural_generation_safe(lex)) return {false, "toy lexicon breaks the caption generator's plural rule"};
  Rng rng(2024);
  std::size_t mismatches = 0;
  const auto& canon = lex.canonical();
  const std::vector<std::string> objs(canon.begin(), canon.end());
  for (int corpus = 0; corpus < 10; ++corpus) {
    std::vector<Caption> caps;
    AnnotationSet ann;
    std::vector<std::set<std::string>> mentioned, gt;
    const std::size_t n = 5 + rng.index(20);
    for (std::size_t i = 0; i < n; ++i) {
      const auto g = testing::generate_caption(lex, rng);
      std::set<std::string> t;
      for (const auto& o : objs)
        if (rng.uniform() < 0.4) t.insert(o);
      const auto id = "img" + std::to_string(i);
      caps.push_back({id, g.text});
      ann[id] = t;
      mentioned.push_back(g.objects);
      gt.push_back(t);
    }
    const auto r = chair_scores(caps, ann, lex);
    const auto [s, ci] = testing::brute_force_chair(mentioned, gt);
    if (r.chair_s != s || r.chair_i != ci) ++mismatches;
    for (std::size_t i = 0; i < n; ++i)
      if (r.per_caption[i].mentioned != mentioned[i]) ++mismatches;
  }
  return {fixture_ok && mismatches == 0, "fixture CHAIR_I " + num(report.chair_i, 12) + " CHAIR_S " +
                                             num(report.chair_s, 12) + "; randomized corpora mismatches " +
                                             std::to_string(mismatches) + "/10"};
}

// --- triplet chaining ---------------------------------------------------------

Outcome triplet_chaining() {
  auto world = std::make_shared<sim::SimWorld>();
  for (std::size_t k = 0; k < 8; ++k) world->add("img-" + std::to_string(k), sim::make_random_mdp(500 + k));
  const auto p = sim::sim_as_providers(world, 77);
  ProcessRewardModel prm(p.embedder);

  std::vector<ImageRef> images;
  for (std::size_t i = 0; i < 40; ++i) images.push_back(ImageRef::sim("img-" + std::to_string(i % 8)));
  BuildOptions opts;
  opts.responses_per_pair = 5;
  opts.seed = 77;
  const auto built = build_triplets(build_pairs(images, {kPrompt, "What is in the picture?"}, 77), *p.policy, prm, opts);

  std::set<std::pair<std::string, std::size_t>> responses;
  for (const auto& r : built.records) responses.insert({r.pair_id, r.response_index});
  const auto bad = testing::chain_violations(built.records);

  // Fresh provider and reward model: nothing cached from the build.
  ProcessRewardModel fresh(std::make_shared<sim::SimEmbeddingProvider>(world, 77));
  double worst = 0.0;
  for (const auto& r : built.records) worst = std::max(worst, std::abs(r.reward - fresh.score(r.current, r.image).value));

  return {responses.size() == 200 && bad.empty() && worst <= 1e-9 && built.failures.empty(),
          std::to_string(responses.size()) + " responses, " + std::to_string(built.records.size()) + " records, " +
              std::to_string(bad.size()) + " chain violations, max reward deviation " + num(worst)};
}

// --- candidate count ------------------------------------------------------------

Outcome candidate_count() {
  std::size_t checked = 0, wrong = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto mdp = seed % 2 ? sim::make_trap_mdp(seed).mdp : sim::make_random_mdp(seed);
    const auto p = sim::sim_as_providers(mdp, seed);
    PrmScorer scorer(std::make_shared<ProcessRewardModel>(p.embedder));
    SearchConfig cfg;  // [0.1, 0.3, 0.5, 0.7, 0.9] x K=1 + greedy
    cfg.guidance = Guidance::prm;
    cfg.seed = seed;
    const auto trace = guided_search(kPrompt, ImageRef::sim("img-0"), cfg, &scorer, *p.policy);
    for (const auto& s : trace.steps) {
      ++checked;
      if (s.candidates.size() + s.dropped_empty != 6 || s.candidates.size() != 6) ++wrong;
    }
  }
  return {checked > 0 && wrong == 0,
          std::to_string(checked) + " committed steps over 40 runs, " + std::to_string(wrong) + " without 6 candidates"};
}

// --- CLI determinism --------------------------------------------------------------

Outcome determinism() {
  const auto dir = testing::temp_dir("determinism");
  testing::write_text(dir / "config.json", R"({
  "seed": 11,
  "provider": {"kind": "sim", "sim": {"suite": "trap", "images": 3}},
  "train": {"gamma": 0.9, "learning_rate": 0.5, "batch_size": 64, "epochs": 30, "optimizer": "plain-sgd",
            "architecture": "tabular", "shuffle_seed": 5},
  "data": {"responses_per_pair": 5}
})");
  testing::write_text(dir / "images.txt", "sim:img-0\nsim:img-1\nsim:img-2\nsim:img-0\n");
  testing::write_text(dir / "prompts.txt", kPrompt + "\nWhat is happening here?\n");

  auto run = [&](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (code != 0) throw std::runtime_error("vgs " + args[0] + " exited " + std::to_string(code) + ": " + err.str());
  };
  const std::string cfg = (dir / "config.json").string();
  std::vector<std::string> diffs;
  std::size_t compared = 0;
  try {
    for (const char* r : {"r1", "r2"}) {
      const auto o = dir / r;
      run({"build-dataset", "--config", cfg, "--images", (dir / "images.txt").string(), "--prompts",
           (dir / "prompts.txt").string(), "--out", (o / "data").string()});
      run({"train-value", "--config", cfg, "--data", (o / "data" / "triplets.jsonl").string(), "--out",
           (o / "train").string()});
      run({"search", "--config", cfg, "--prompt", kPrompt, "--image", "sim:img-1", "--guidance", "value",
           "--checkpoint", (o / "train" / "value_head.json").string(), "--out", (o / "search").string()});
    }
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
  for (const auto& rel : {"data/triplets.jsonl", "data/summary.json", "data/manifest.json", "train/value_head.json",
                          "train/loss_curve.json", "train/manifest.json", "search/trace.json", "search/manifest.json"}) {
    ++compared;
    const auto a = testing::read_text(dir / "r1" / rel);
    const auto b = testing::read_text(dir / "r2" / rel);
    if (a.empty() || a != b) diffs.push_back(rel);
  }
  fs::remove_all(dir);
  std::string detail = std::to_string(compared - diffs.size()) + "/" + std::to_string(compared) + " files identical";
  for (const auto& d : diffs) detail += "; differs: " + d;
  return {diffs.empty(), detail};
}

// --- round trips --------------------------------------------------------------------

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

Outcome round_trips() {
  const auto dir = testing::temp_dir("roundtrip");
  Rng rng(99);
  std::vector<std::string> failures;

  // Triplets with awkward strings and full-precision doubles.
  const std::vector<std::string> words = {"A dog.", "Quote \" inside.", "Tab\tand newline\n.", "Ünïcödé ✓.",
                                          "back\\slash.", "emoji 🐕."};
  std::vector<TripletRecord> recs;
  for (std::size_t i = 0; i < 1000; ++i) {
    TripletRecord r;
    r.pair_id = "p" + std::to_string(i / 10);
    r.image = i % 3 == 0 ? ImageRef::sim("img-" + std::to_string(i % 7))
              : i % 3 == 1 ? ImageRef::file("/data/coco/" + std::to_string(i) + ".jpg")
                           : ImageRef::url("https://example.org/" + std::to_string(i) + ".png");
    r.response_index = i % 5;
    r.step_index = i % 4;
    r.current = words[rng.index(words.size())] + std::to_string(i);
    r.terminal = rng.uniform() < 0.3;
    if (!r.terminal) r.next = words[rng.index(words.size())];
    r.reward = rng.uniform(-1.0, 1.0) * (i % 11 == 0 ? 1e-300 : 1.0);
    if (i % 4) r.temperature = rng.uniform(0.01, 2.0);
    recs.push_back(std::move(r));
  }
  write_jsonl(recs, dir / "t.jsonl");
  const auto back = read_jsonl<TripletRecord>(dir / "t.jsonl");
  bool exact = back.size() == recs.size();
  for (std::size_t i = 0; exact && i < recs.size(); ++i)
    exact = back[i] == recs[i] && same_bits(back[i].reward, recs[i].reward) &&
            (!recs[i].temperature || same_bits(*back[i].temperature, *recs[i].temperature));
  if (!exact) failures.push_back("triplet JSONL round trip");

  std::vector<SftRecord> sft = {{ImageRef::sim("img-0"), kPrompt, "w0s0a1. w0s2a0.", "value-search"},
                                {ImageRef::file("x.jpg"), "p", "r\n2", "bon"}};
  write_jsonl(sft, dir / "s.jsonl");
  if (read_jsonl<SftRecord>(dir / "s.jsonl") != sft) failures.push_back("SFT JSONL round trip");

  write_jsonl(std::vector<TripletRecord>{}, dir / "empty.jsonl");
  if (fs::file_size(dir / "empty.jsonl") != 0 || !read_jsonl<TripletRecord>(dir / "empty.jsonl").empty())
    failures.push_back("empty list round trip");

  // Corrupt line 7 (header is line 1).
  {
    auto text = testing::read_text(dir / "t.jsonl");
    std::size_t pos = 0;
    for (int line = 1; line < 7; ++line) pos = text.find('\n', pos) + 1;
    text.insert(pos + 5, "@@");
    testing::write_text(dir / "bad.jsonl", text);
    try {
      read_jsonl<TripletRecord>(dir / "bad.jsonl");
      failures.push_back("corrupt line accepted");
    } catch (const ParseError& e) {
      if (e.line() != 7 || std::string(e.what()).find("line 7") == std::string::npos)
        failures.push_back(std::string("corrupt line misreported: ") + e.what());
    }
  }
  // Version mismatch.
  {
    auto text = testing::read_text(dir / "t.jsonl");
    text.replace(text.find("\"version\":1"), 11, "\"version\":9");
    testing::write_text(dir / "v9.jsonl", text);
    try {
      read_jsonl<TripletRecord>(dir / "v9.jsonl");
      failures.push_back("future schema version accepted");
    } catch (const SchemaVersionError&) {
    }
  }

  // Checkpoints.
  std::vector<ValueHead> heads = {ValueHead::linear(12, 1), ValueHead::one_hidden_layer(12, 8, 2),
                                  ValueHead::tabular(12, 0.25)};
  for (int k = 0; k < 5; ++k) {
    std::vector<double> f;
    for (int i = 0; i < 12; ++i) f.push_back(rng.normal());
    heads[2].set_value(f, rng.uniform(-1.0, 1.0));
  }
  heads[0].set_trained_gamma(0.0);
  for (auto& h : heads) {
    for (auto& p : h.parameters()) p += rng.normal() * 1e-3;
    const auto path = dir / ("ck_" + std::string(to_string(h.architecture())) + ".json");
    save_checkpoint(h, path);
    const auto back_head = load_checkpoint(path);
    bool same = back_head.architecture() == h.architecture() && back_head.parameters().size() == h.parameters().size() &&
                back_head.trained_gamma() == h.trained_gamma();
    for (std::size_t i = 0; same && i < h.parameters().size(); ++i)
      same = same_bits(back_head.parameters()[i], h.parameters()[i]);
    std::vector<std::vector<double>> probes(h.table_keys().begin(), h.table_keys().end());
    for (int k = 0; k < 5; ++k) {
      probes.emplace_back();
      for (int i = 0; i < 12; ++i) probes.back().push_back(rng.normal());
    }
    for (const auto& f : probes) same = same && same_bits(back_head.predict(f), h.predict(f));
    if (!same) failures.push_back(std::string("checkpoint round trip (") + std::string(to_string(h.architecture())) + ")");

    auto text = testing::read_text(path);
    testing::write_text(dir / "trunc.json", text.substr(0, text.size() / 2));
    try {
      load_checkpoint(dir / "trunc.json");
      failures.push_back("truncated checkpoint accepted");
    } catch (const ParseError&) {
    }
  }
  fs::remove_all(dir);
  std::string detail = failures.empty() ? "1000 triplets, SFT, empty file, 3 checkpoint kinds bit-exact; corrupt "
                                          "line 7 and truncated checkpoints rejected"
                                        : "";
  for (const auto& f : failures) detail += (detail.empty() ? "" : "; ") + f;
  return {failures.empty(), detail};
}

// --- sweep monotonicity ---------------------------------------------------------------

Outcome sweep_monotonicity() {
  const std::vector<std::size_t> sizes = {1, 2, 4, 8};
  std::vector<double> total(sizes.size(), 0.0);
  std::size_t failed_cells = 0;
  const std::size_t n = 100;
  for (std::uint64_t seed = 0; seed < n; ++seed) {
    const auto p = sim::sim_as_providers(sim::make_trap_mdp(seed).mdp, seed);
    ValueScorer scorer(std::make_shared<const ValueHead>(sim::dp_value_head(*p.world, *p.embedder)), p.embedder);
    SearchConfig base;
    base.guidance = Guidance::value;
    base.include_greedy = false;
    base.seed = seed;
    base.max_in_flight = 1;
    const SweepMetric metric = [&](const SweepItem& item, const SearchTrace& t) {
      return p.world->response_return(item.image.value, t.sentences, p.policy->env_seed());
    };
    const auto table =
        sweep_step_size({{kPrompt, ImageRef::sim("img-0")}}, sizes, 0.5, base, &scorer, *p.policy, metric);
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      failed_cells += table.rows[i].failures.size();
      if (table.rows[i].mean_metric) total[i] += *table.rows[i].mean_metric;
    }
  }
  bool monotone = failed_cells == 0;
  std::string detail = "mean return by size:";
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    detail += " " + std::to_string(sizes[i]) + "->" + num(total[i] / n, 5);
    if (i > 0 && total[i] < total[i - 1]) monotone = false;
  }
  return {monotone, detail + " over 100 traps"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"TD-convergence", td_convergence},
      {"Myopic-trap separation", separation},
      {"Myopic-equivalence", myopic_equivalence},
      {"TD gradient check", gradient_check_criterion},
      {"Overfit sanity", overfit},
      {"CHAIR exactness", chair_exactness},
      {"Triplet-chaining", triplet_chaining},
      {"Candidate-count law", candidate_count},
      {"Determinism", determinism},
      {"Round-trips", round_trips},
      {"Sweep monotonicity", sweep_monotonicity},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    failed += o.pass ? 0 : 1;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
