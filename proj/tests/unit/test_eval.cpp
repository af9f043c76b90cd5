#include <doctest.h>

#include "../support.hpp"
#include "vgs/eval.hpp"

using namespace vgs;

namespace {

ObjectLexicon toy() { return ObjectLexicon::load(testing::asset("lexicon_toy.json")); }

std::set<std::string> objs(std::initializer_list<const char*> xs) { return {xs.begin(), xs.end()}; }

}  // namespace

TEST_CASE("extract_objects") {
  const auto lex = toy();
  CHECK(extract_objects("Two dogs chase a car.", lex) == objs({"dog", "car"}));
  CHECK(extract_objects("A hot dog stand.", lex) == objs({"hot-dog"}));
  CHECK(extract_objects("A hot-dog vendor.", lex) == objs({"hot-dog"}));
  CHECK(extract_objects("", lex).empty());
  CHECK(extract_objects("Nothing recognisable here!", lex).empty());
  CHECK(extract_objects("Three women ride bikes; a puppy watches.", lex) == objs({"person", "bicycle", "dog"}));
  // Phrases never span punctuation.
  CHECK(extract_objects("It was hot, dog days.", lex) == objs({"dog"}));
  CHECK(extract_objects("CATS and Kittens", lex) == objs({"cat"}));
}

TEST_CASE("tokenize_segments") {
  const auto segs = tokenize_segments("A man's hot-dog, then: the END");
  REQUIRE(segs.size() == 3);
  CHECK(segs[0] == std::vector<std::string>{"a", "man's", "hot-dog"});
  CHECK(segs[1] == std::vector<std::string>{"then"});
  CHECK(segs[2] == std::vector<std::string>{"the", "end"});
}

TEST_CASE("lexicon construction") {
  CHECK_THROWS_AS(ObjectLexicon({"dog"}, {{"puppy", "hound"}}), ConfigError);
  CHECK_THROWS_AS(ObjectLexicon({"Dog"}, {}), ConfigError);
  const auto lex = toy();
  const auto back = ObjectLexicon::from_document(lex.to_document());
  CHECK(back.canonical() == lex.canonical());
  CHECK(back.synonyms() == lex.synonyms());
  CHECK(lex.lookup({"hot", "dogs"}) == std::optional<std::string>("hot-dog"));
  CHECK_FALSE(lex.lookup({"hot"}).has_value());

  const auto coco = ObjectLexicon::load(testing::asset("lexicon_coco.json"));
  CHECK(coco.canonical().size() == 80);
  CHECK(coco.canonical().count("traffic light"));
  CHECK(extract_objects("Two traffic lights above a fire hydrant.", coco) == objs({"traffic light", "fire hydrant"}));
  CHECK(testing::plural_generation_safe(lex));
}

TEST_CASE("chair fixture") {
  const auto lex = toy();
  const AnnotationSet truth = {{"a", {"dog", "car"}}, {"b", {"cat", "tree", "bench"}}};
  const std::vector<Caption> caps = {
      {"a", "A dog and a car near two bicycles and a frisbee."},
      {"b", "A kitten sits under a tree beside a bench."},
  };
  const auto r = chair_scores(caps, truth, lex);
  CHECK(r.chair_i == doctest::Approx(2.0 / 7.0).epsilon(1e-12));
  CHECK(r.chair_s == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.mentions == 7);
  CHECK(r.hallucinated_mentions == 2);
  REQUIRE(r.per_caption.size() == 2);
  CHECK(r.per_caption[0].hallucinated == objs({"bicycle", "frisbee"}));
  CHECK(r.per_caption[1].hallucinated.empty());

  nlohmann::json j = r;
  const auto back = j.get<ChairReport>();
  CHECK(back.chair_i == r.chair_i);
  CHECK(back.per_caption[0].mentioned == r.per_caption[0].mentioned);

  try {
    chair_scores({{"zz", "A dog."}, {"yy", "A cat."}}, truth, lex);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("yy, zz") != std::string::npos);
  }
  CHECK_THROWS_AS(chair_scores({}, truth, lex), ConfigError);
}

TEST_CASE("chair invariants on random corpora") {
  const auto lex = toy();
  Rng rng(77);
  const std::vector<std::string> all(lex.canonical().begin(), lex.canonical().end());
  for (int corpus = 0; corpus < 50; ++corpus) {
    std::vector<Caption> caps;
    AnnotationSet ann, perfect;
    std::vector<std::set<std::string>> mentioned, truth;
    for (std::size_t i = 0; i < 1 + rng.index(15); ++i) {
      const auto g = testing::generate_caption(lex, rng);
      std::set<std::string> t;
      for (const auto& o : all)
        if (rng.uniform() < 0.5) t.insert(o);
      const auto id = "i" + std::to_string(i);
      caps.push_back({id, g.text});
      ann[id] = t;
      perfect[id] = g.objects;
      mentioned.push_back(g.objects);
      truth.push_back(t);
    }
    const auto r = chair_scores(caps, ann, lex);
    CHECK(r.chair_s >= 0.0);
    CHECK(r.chair_s <= 1.0);
    CHECK(r.chair_i >= 0.0);
    CHECK(r.chair_i <= 1.0);
    const auto [s, i] = testing::brute_force_chair(mentioned, truth);
    CHECK(r.chair_s == s);
    CHECK(r.chair_i == i);
    // Annotating exactly what was said leaves nothing hallucinated.
    const auto clean = chair_scores(caps, perfect, lex);
    CHECK(clean.chair_s == 0.0);
    CHECK(clean.chair_i == 0.0);
  }
}

TEST_CASE("annotation and caption files") {
  const auto lex = toy();
  const auto dir = testing::temp_dir("eval");
  testing::write_text(dir / "ann.json", R"({"a": ["dog"], "b": []})");
  const auto ann = load_annotations(dir / "ann.json", lex);
  CHECK(ann.at("a") == objs({"dog"}));
  CHECK(ann.at("b").empty());
  testing::write_text(dir / "bad.json", R"({"a": ["puppy"]})");
  CHECK_THROWS_AS(load_annotations(dir / "bad.json", lex), ConfigError);

  testing::write_text(dir / "caps.json", R"([{"image_id": "a", "caption": "A dog."}])");
  const auto caps = load_captions(dir / "caps.json");
  REQUIRE(caps.size() == 1);
  CHECK(caps[0].caption == "A dog.");
  testing::write_text(dir / "caps_bad.json", R"([{"image": "a"}])");
  CHECK_THROWS_AS(load_captions(dir / "caps_bad.json"), ConfigError);

  write_jsonl(std::vector<SftRecord>{{ImageRef::sim("a"), "p", "A car.", "greedy"}}, dir / "sft.jsonl");
  const auto sft = load_captions(dir / "sft.jsonl");
  REQUIRE(sft.size() == 1);
  CHECK(sft[0].image_id == "a");
  CHECK(sft[0].caption == "A car.");
}

TEST_CASE("parse_verdict") {
  CHECK(parse_verdict("Response1 is better") == 1);
  CHECK(parse_verdict("Response2 is better.") == 2);
  CHECK(parse_verdict("  Tie\n") == 0);
  CHECK(parse_verdict("'Tie'") == 0);
  CHECK(parse_verdict("After review, Response2 is better overall.") == 2);
  CHECK_FALSE(parse_verdict("Response1 is better than Response2 is better").has_value());
  CHECK_FALSE(parse_verdict("It's a tie").has_value());
  CHECK_FALSE(parse_verdict("").has_value());
  CHECK_FALSE(parse_verdict("response1 is better").has_value());
}

TEST_CASE("pairwise judge maps verdicts back through the shown order") {
  const auto rubric = load_rubric(testing::asset("judge_rubric.txt"));
  CHECK(fill_rubric("A: {} B: {}", "x", "y") == "A: x B: y");
  bool saw_swapped = false, saw_plain = false;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    // A judge that always prefers the response containing "GOOD".
    JudgeFn judge = [](const std::string& prompt, const ImageRef&) {
      const auto r1 = prompt.find("Response1: ");
      const auto r2 = prompt.find("Response2: ");
      const bool first_good = prompt.substr(r1, r2 - r1).find("GOOD") != std::string::npos;
      return std::string(first_good ? "Response1 is better" : "Response2 is better");
    };
    const auto a = pairwise_judge("GOOD caption", "plain caption", ImageRef::sim("x"), judge, rubric, seed);
    CHECK(a.verdict == Verdict::a_wins);
    const auto b = pairwise_judge("plain caption", "GOOD caption", ImageRef::sim("x"), judge, rubric, seed);
    CHECK(b.verdict == Verdict::b_wins);
    CHECK(a.swapped == b.swapped);
    (a.swapped ? saw_swapped : saw_plain) = true;

    const auto tie = pairwise_judge("x", "y", ImageRef::sim("x"), [](auto&&...) { return std::string("Tie"); },
                                    rubric, seed);
    CHECK(tie.verdict == Verdict::tie);
    const auto junk = pairwise_judge("x", "y", ImageRef::sim("x"), [](auto&&...) { return std::string("hmm"); },
                                     rubric, seed);
    CHECK(junk.verdict == Verdict::invalid);
    CHECK(junk.reply == "hmm");
  }
  CHECK(saw_swapped);
  CHECK(saw_plain);
  CHECK_THROWS_AS(pairwise_judge("x", "y", ImageRef::sim("x"), JudgeFn{}, rubric, 0), CapabilityDisabledError);
}

TEST_CASE("win rates") {
  std::vector<Verdict> v;
  v.insert(v.end(), 6, Verdict::a_wins);
  v.insert(v.end(), 1, Verdict::tie);
  v.insert(v.end(), 3, Verdict::b_wins);
  v.insert(v.end(), 2, Verdict::invalid);
  const auto w = win_rate(v);
  CHECK(w.win == doctest::Approx(60.0));
  CHECK(w.tie == doctest::Approx(10.0));
  CHECK(w.loss == doctest::Approx(30.0));
  CHECK(w.valid == 10);
  CHECK(w.invalid == 2);
  CHECK(w.win + w.tie + w.loss == doctest::Approx(100.0));

  const auto ties = win_rate(std::vector<Verdict>(4, Verdict::tie));
  CHECK(ties.tie == 100.0);
  CHECK(ties.win == 0.0);
  CHECK_THROWS_AS(win_rate(std::vector<Verdict>(3, Verdict::invalid)), Error);
  CHECK_THROWS_AS(win_rate({}), Error);
  CHECK(to_string(Verdict::a_wins) != to_string(Verdict::b_wins));
}

TEST_CASE("judge tournament picks the judge's favourite") {
  JudgeFn judge = [](const std::string& prompt, const ImageRef&) {
    // Longer caption wins.
    const auto r1 = prompt.find("Response1: ") + 11;
    const auto r2 = prompt.find("Response2: ");
    const auto len1 = r2 - r1 - 1;
    const auto len2 = prompt.size() - (r2 + 11);
    if (len1 == len2) return std::string("Tie");
    return std::string(len1 > len2 ? "Response1 is better" : "Response2 is better");
  };
  JudgeTournamentSelector sel(judge, "Response1: {}\nResponse2: {}", 5);
  const std::vector<std::vector<std::string>> responses = {{"A dog."}, {"A dog on grass."}, {"A dog runs on grass fast."},
                                                           {"Dog."}};
  const auto s = sel.select("p", ImageRef::sim("x"), responses);
  CHECK(s.chosen == 2);
  CHECK(s.scores.size() == 4);
  CHECK_THROWS_AS(sel.select("p", ImageRef::sim("x"), {}), ConfigError);
}

TEST_CASE("http judge needs a configuration") {
  CHECK_THROWS_AS(http_judge(std::nullopt), CapabilityDisabledError);
}

TEST_CASE("report round trip") {
  ReportInputs in;
  in.config_hash = "abc123";
  ChairReport c;
  c.chair_s = 0.5;
  c.chair_i = 0.25;
  c.captions = 2;
  c.hallucinated_captions = 1;
  c.mentions = 4;
  c.hallucinated_mentions = 1;
  in.chair = c;
  SweepTable t;
  t.guidance = "value";
  for (std::size_t k : {1, 2, 4, 8}) {
    SweepRow row;
    row.step_size = k;
    row.succeeded = 3;
    row.mean_steps = 2.0;
    row.mean_chosen_score = 0.1 * static_cast<double>(k);
    t.rows.push_back(row);
  }
  in.sweeps.push_back(t);
  in.win_rates.push_back({"value vs greedy", win_rate({Verdict::a_wins, Verdict::tie})});

  const auto dir = testing::temp_dir("report");
  const auto paths = render_report(in, dir);
  REQUIRE(paths.size() == 2);
  const auto j = nlohmann::json::parse(testing::read_text(paths[0]));
  CHECK(j == report_json(in));
  CHECK(j["format"] == "vgs.report");
  CHECK(j["config_hash"] == "abc123");
  CHECK(j["chair"].get<ChairReport>().chair_i == 0.25);
  const auto sweep = j["sweeps"][0].get<SweepTable>();
  REQUIRE(sweep.rows.size() == 4);
  for (std::size_t i = 1; i < 4; ++i) CHECK(sweep.rows[i - 1].step_size < sweep.rows[i].step_size);
  CHECK(j["win_rates"][0]["label"] == "value vs greedy");
  CHECK(j["win_rates"][0].get<WinRate>().win == 50.0);

  const auto text = testing::read_text(paths[1]);
  CHECK(text.find("CHAIR_S") != std::string::npos);
  CHECK(text.find("value vs greedy") != std::string::npos);
  CHECK_THROWS_AS(report_json(ReportInputs{}), ConfigError);
}
