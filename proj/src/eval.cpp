#include "vgs/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include <spdlog/spdlog.h>

#include "vgs/data.hpp"
#include "vgs/rng.hpp"
#include "vgs/segmenter.hpp"

namespace vgs {

namespace {

using json = nlohmann::json;

bool word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

std::string join_words(const std::vector<std::string>& words, std::size_t from, std::size_t to) {
  std::string out;
  for (std::size_t i = from; i < to; ++i) {
    if (i > from) out += ' ';
    out += words[i];
  }
  return out;
}

/// Lexicon entries must tokenize into exactly one segment.
std::string phrase_key(const std::string& phrase) {
  const auto segs = tokenize_segments(phrase);
  if (segs.size() != 1) throw ConfigError("lexicon phrase '" + phrase + "' must be one punctuation-free phrase");
  return join_words(segs[0], 0, segs[0].size());
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json parse_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
}

}  // namespace

std::vector<std::vector<std::string>> tokenize_segments(std::string_view text) {
  std::vector<std::vector<std::string>> segments(1);
  std::string word;
  auto flush_word = [&] {
    if (!word.empty()) segments.back().push_back(std::move(word));
    word.clear();
  };
  auto flush_segment = [&] {
    flush_word();
    if (!segments.back().empty()) segments.emplace_back();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (word_byte(c)) {
      word += static_cast<char>(std::tolower(c));
    } else if ((c == '-' || c == '\'') && !word.empty() && i + 1 < text.size() &&
               word_byte(static_cast<unsigned char>(text[i + 1]))) {
      word += static_cast<char>(c);
    } else if (std::isspace(c)) {
      flush_word();
    } else {
      flush_segment();
    }
  }
  flush_word();
  if (segments.back().empty()) segments.pop_back();
  return segments;
}

ObjectLexicon::ObjectLexicon(std::set<std::string> canonical, std::map<std::string, std::string> synonyms,
                             std::vector<PluralRule> plural_rules)
    : canonical_(std::move(canonical)), synonyms_(std::move(synonyms)), plural_rules_(std::move(plural_rules)) {
  if (canonical_.empty()) throw ConfigError("lexicon has no canonical objects");
  for (const auto& c : canonical_) {
    if (std::any_of(c.begin(), c.end(), [](unsigned char ch) { return std::isupper(ch); }))
      throw ConfigError("canonical object '" + c + "' must be lowercase");
    phrases_[phrase_key(c)] = c;
  }
  for (const auto& [phrase, target] : synonyms_) {
    if (!canonical_.count(target))
      throw ConfigError("synonym '" + phrase + "' maps to unknown object '" + target + "'");
    const auto key = phrase_key(phrase);
    if (auto it = phrases_.find(key); it != phrases_.end() && it->second != target)
      throw ConfigError("phrase '" + phrase + "' maps to both '" + it->second + "' and '" + target + "'");
    phrases_[key] = target;
  }
  for (const auto& [key, _] : phrases_)
    longest_ = std::max<std::size_t>(longest_, std::count(key.begin(), key.end(), ' ') + 1);
  for (const auto& r : plural_rules_)
    if (r.suffix.empty()) throw ConfigError("plural rule with an empty suffix");
}

std::vector<PluralRule> ObjectLexicon::default_plural_rules() {
  return {{"ies", "y"}, {"ves", "f"}, {"ves", "fe"}, {"es", ""}, {"s", ""}};
}

ObjectLexicon ObjectLexicon::from_document(const json& j) {
  try {
    auto canonical = j.at("objects").get<std::set<std::string>>();
    auto synonyms = j.value("synonyms", std::map<std::string, std::string>{});
    if (!j.contains("plural_rules")) return ObjectLexicon(std::move(canonical), std::move(synonyms));
    std::vector<PluralRule> rules;
    for (const auto& r : j.at("plural_rules"))
      rules.push_back({r.at("suffix").get<std::string>(), r.at("replacement").get<std::string>()});
    return ObjectLexicon(std::move(canonical), std::move(synonyms), std::move(rules));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed lexicon: ") + e.what());
  }
}

ObjectLexicon ObjectLexicon::load(const std::filesystem::path& path) { return from_document(parse_file(path)); }

json ObjectLexicon::to_document() const {
  json rules = json::array();
  for (const auto& r : plural_rules_) rules.push_back({{"suffix", r.suffix}, {"replacement", r.replacement}});
  return {{"objects", canonical_}, {"synonyms", synonyms_}, {"plural_rules", rules}};
}

std::optional<std::string> ObjectLexicon::lookup(const std::vector<std::string>& words) const {
  if (words.empty()) return std::nullopt;
  const auto key = join_words(words, 0, words.size());
  if (auto it = phrases_.find(key); it != phrases_.end()) return it->second;
  const auto& last = words.back();
  const auto head = key.substr(0, key.size() - last.size());
  for (const auto& r : plural_rules_) {
    if (last.size() <= r.suffix.size() || !last.ends_with(r.suffix)) continue;
    const auto singular = head + last.substr(0, last.size() - r.suffix.size()) + r.replacement;
    if (auto it = phrases_.find(singular); it != phrases_.end()) return it->second;
  }
  return std::nullopt;
}

std::set<std::string> extract_objects(std::string_view caption, const ObjectLexicon& lexicon) {
  std::set<std::string> found;
  for (const auto& words : tokenize_segments(caption)) {
    std::size_t i = 0;
    while (i < words.size()) {
      std::size_t matched = 0;
      for (std::size_t len = std::min(lexicon.longest_phrase(), words.size() - i); len >= 1; --len) {
        const std::vector<std::string> window(words.begin() + static_cast<std::ptrdiff_t>(i),
                                              words.begin() + static_cast<std::ptrdiff_t>(i + len));
        if (auto obj = lexicon.lookup(window)) {
          found.insert(*obj);
          matched = len;
          break;
        }
      }
      i += matched ? matched : 1;
    }
  }
  return found;
}

AnnotationSet load_annotations(const std::filesystem::path& path, const ObjectLexicon& lexicon) {
  const auto j = parse_file(path);
  if (!j.is_object()) throw ConfigError(path.string() + ": annotations must be an object of image-id -> objects");
  AnnotationSet out;
  for (const auto& [id, objs] : j.items()) {
    if (!objs.is_array()) throw ConfigError(path.string() + ": objects of '" + id + "' must be an array");
    auto& set = out[id];
    for (const auto& o : objs) {
      if (!o.is_string()) throw ConfigError(path.string() + ": non-string object for '" + id + "'");
      const auto name = o.get<std::string>();
      if (!lexicon.canonical().count(name))
        throw ConfigError(path.string() + ": '" + name + "' (image '" + id + "') is not a canonical object");
      set.insert(name);
    }
  }
  return out;
}

std::vector<Caption> load_captions(const std::filesystem::path& path) {
  std::vector<Caption> out;
  if (path.extension() == ".jsonl") {
    for (const auto& r : read_jsonl<SftRecord>(path)) out.push_back({r.image.value, r.response});
    return out;
  }
  const auto j = parse_file(path);
  if (!j.is_array()) throw ConfigError(path.string() + ": captions must be a JSON array");
  try {
    for (const auto& c : j) out.push_back({c.at("image_id").get<std::string>(), c.at("caption").get<std::string>()});
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": malformed caption entry: " + e.what());
  }
  return out;
}

ChairReport chair_scores(const std::vector<Caption>& captions, const AnnotationSet& annotations,
                         const ObjectLexicon& lexicon) {
  if (captions.empty()) throw ConfigError("no captions");
  std::set<std::string> unknown;
  for (const auto& c : captions)
    if (!annotations.count(c.image_id)) unknown.insert(c.image_id);
  if (!unknown.empty()) {
    std::string list;
    for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
    throw ConfigError("captions reference unannotated image ids: " + list);
  }

  ChairReport r;
  for (const auto& c : captions) {
    CaptionChair cc;
    cc.image_id = c.image_id;
    cc.mentioned = extract_objects(c.caption, lexicon);
    const auto& truth = annotations.at(c.image_id);
    for (const auto& m : cc.mentioned)
      if (!truth.count(m)) cc.hallucinated.insert(m);
    r.mentions += cc.mentioned.size();
    r.hallucinated_mentions += cc.hallucinated.size();
    if (!cc.hallucinated.empty()) ++r.hallucinated_captions;
    r.per_caption.push_back(std::move(cc));
  }
  r.captions = captions.size();
  r.chair_s = static_cast<double>(r.hallucinated_captions) / static_cast<double>(r.captions);
  r.chair_i = r.mentions ? static_cast<double>(r.hallucinated_mentions) / static_cast<double>(r.mentions) : 0.0;
  return r;
}

void to_json(json& j, const ChairReport& r) {
  json per = json::array();
  for (const auto& c : r.per_caption)
    per.push_back({{"image_id", c.image_id}, {"mentioned", c.mentioned}, {"hallucinated", c.hallucinated}});
  j = json{{"chair_s", r.chair_s},
           {"chair_i", r.chair_i},
           {"captions", r.captions},
           {"hallucinated_captions", r.hallucinated_captions},
           {"mentions", r.mentions},
           {"hallucinated_mentions", r.hallucinated_mentions},
           {"per_caption", per}};
}

void from_json(const json& j, ChairReport& r) {
  r = {};
  r.chair_s = j.at("chair_s").get<double>();
  r.chair_i = j.at("chair_i").get<double>();
  r.captions = j.at("captions").get<std::size_t>();
  r.hallucinated_captions = j.at("hallucinated_captions").get<std::size_t>();
  r.mentions = j.at("mentions").get<std::size_t>();
  r.hallucinated_mentions = j.at("hallucinated_mentions").get<std::size_t>();
  for (const auto& c : j.at("per_caption"))
    r.per_caption.push_back({c.at("image_id").get<std::string>(), c.at("mentioned").get<std::set<std::string>>(),
                             c.at("hallucinated").get<std::set<std::string>>()});
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::a_wins:
      return "a-wins";
    case Verdict::b_wins:
      return "b-wins";
    case Verdict::tie:
      return "tie";
    case Verdict::invalid:
      return "invalid";
  }
  return "invalid";
}

std::string fill_rubric(std::string_view rubric, std::string_view response1, std::string_view response2) {
  std::string out(rubric);
  for (auto r : {response1, response2}) {
    const auto at = out.find("{}");
    if (at == std::string::npos) throw ConfigError("judge rubric needs two '{}' placeholders");
    out.replace(at, 2, r);
  }
  return out;
}

std::string load_rubric(const std::filesystem::path& path) {
  auto text = read_file(path);
  fill_rubric(text, "", "");  // validates the placeholders
  return text;
}

std::optional<int> parse_verdict(std::string_view reply) {
  auto t = trim(reply);
  while (!t.empty() && (t.back() == '.' || t.back() == '\'' || t.back() == '"')) t.remove_suffix(1);
  while (!t.empty() && (t.front() == '\'' || t.front() == '"')) t.remove_prefix(1);
  if (t == "Tie") return 0;
  const bool one = reply.find("Response1 is better") != std::string_view::npos;
  const bool two = reply.find("Response2 is better") != std::string_view::npos;
  if (one != two) return one ? 1 : 2;
  return std::nullopt;
}

JudgeRecord pairwise_judge(const std::string& a, const std::string& b, const ImageRef& image, const JudgeFn& judge,
                           std::string_view rubric, std::uint64_t seed) {
  if (!judge) throw CapabilityDisabledError("no judge configured");
  JudgeRecord rec;
  rec.seed = seed;
  rec.swapped = (mix(seed, std::string_view("judge-order")) & 1U) != 0;
  const auto prompt = rec.swapped ? fill_rubric(rubric, b, a) : fill_rubric(rubric, a, b);
  rec.reply = judge(prompt, image);
  const auto v = parse_verdict(rec.reply);
  if (!v) {
    spdlog::warn("judge reply has no verdict; recorded as invalid: {}", rec.reply.substr(0, 120));
    rec.verdict = Verdict::invalid;
  } else if (*v == 0) {
    rec.verdict = Verdict::tie;
  } else {
    const bool first_shown_wins = *v == 1;
    rec.verdict = first_shown_wins != rec.swapped ? Verdict::a_wins : Verdict::b_wins;
  }
  return rec;
}

JudgeFn http_judge(const std::optional<ProviderConfig>& cfg) {
  if (!cfg) throw CapabilityDisabledError("judge endpoint not configured");
  cfg->validate();
  return [cfg = *cfg](const std::string& prompt, const ImageRef& image) {
    json content = json::array({{{"type", "text"}, {"text", prompt}}});
    if (image.kind != ImageRef::Kind::sim_id)
      content.push_back({{"type", "image_url"}, {"image_url", {{"url", detail::image_payload(image)}}}});
    const json body{{"model", cfg.model_id},
                    {"messages", json::array({{{"role", "user"}, {"content", content}}})},
                    {"temperature", 0.0},
                    {"max_tokens", 32}};
    const json res = detail::post_json(cfg, "/chat/completions", body);
    try {
      const auto& c = res.at("choices").at(0).at("message").at("content");
      return c.is_null() ? std::string() : c.get<std::string>();
    } catch (const json::exception& e) {
      throw ProtocolError(std::string("judge response missing choices[0].message.content: ") + e.what());
    }
  };
}

void to_json(json& j, const WinRate& w) {
  j = json{{"win", w.win}, {"tie", w.tie}, {"loss", w.loss}, {"valid", w.valid}, {"invalid", w.invalid}};
}

void from_json(const json& j, WinRate& w) {
  w.win = j.at("win").get<double>();
  w.tie = j.at("tie").get<double>();
  w.loss = j.at("loss").get<double>();
  w.valid = j.at("valid").get<std::size_t>();
  w.invalid = j.at("invalid").get<std::size_t>();
}

WinRate win_rate(const std::vector<Verdict>& outcomes) {
  WinRate w;
  std::size_t wins = 0, ties = 0, losses = 0;
  for (auto v : outcomes) {
    switch (v) {
      case Verdict::a_wins:
        ++wins;
        break;
      case Verdict::tie:
        ++ties;
        break;
      case Verdict::b_wins:
        ++losses;
        break;
      case Verdict::invalid:
        ++w.invalid;
        break;
    }
  }
  w.valid = wins + ties + losses;
  if (w.valid == 0) throw Error("win rate: no valid judge outcomes");
  const double n = static_cast<double>(w.valid);
  w.win = 100.0 * static_cast<double>(wins) / n;
  w.tie = 100.0 * static_cast<double>(ties) / n;
  w.loss = 100.0 * static_cast<double>(losses) / n;
  return w;
}

ResponseSelector::Selection JudgeTournamentSelector::select(const std::string&, const ImageRef& image,
                                                            const std::vector<std::vector<std::string>>& responses) {
  if (responses.empty()) throw ConfigError("nothing to select from");
  auto text = [&](std::size_t i) {
    std::string s;
    for (const auto& x : responses[i]) s += (s.empty() ? "" : " ") + x;
    return s;
  };
  Selection sel;
  sel.scores.assign(responses.size(), 0.0);
  std::size_t champion = 0;
  for (std::size_t i = 1; i < responses.size(); ++i) {
    const auto rec = pairwise_judge(text(champion), text(i), image, judge_, rubric_, mix(seed_, i));
    if (rec.verdict == Verdict::b_wins) {
      champion = i;
      sel.scores[i] += 1.0;
    } else if (rec.verdict == Verdict::a_wins) {
      sel.scores[champion] += 1.0;
    }
  }
  sel.chosen = champion;
  return sel;
}

json report_json(const ReportInputs& in) {
  if (!in.chair && in.sweeps.empty() && in.win_rates.empty()) throw ConfigError("report has no sections");
  json j{{"format", "vgs.report"}, {"version", 1}, {"config_hash", in.config_hash}};
  if (in.chair) j["chair"] = *in.chair;
  if (!in.sweeps.empty()) j["sweeps"] = in.sweeps;
  if (!in.win_rates.empty()) {
    json rows = json::array();
    for (const auto& [label, w] : in.win_rates) {
      json r = w;
      r["label"] = label;
      rows.push_back(std::move(r));
    }
    j["win_rates"] = rows;
  }
  return j;
}

std::string report_text(const ReportInputs& in) {
  if (!in.chair && in.sweeps.empty() && in.win_rates.empty()) throw ConfigError("report has no sections");
  std::ostringstream out;
  out << "config " << (in.config_hash.empty() ? "-" : in.config_hash) << "\n";
  if (in.chair) {
    const auto& c = *in.chair;
    out << "\n[chair]\n";
    out << "CHAIR_S  " << num(c.chair_s) << "  (" << c.hallucinated_captions << "/" << c.captions << " captions)\n";
    out << "CHAIR_I  " << num(c.chair_i) << "  (" << c.hallucinated_mentions << "/" << c.mentions << " mentions)\n";
  }
  for (const auto& s : in.sweeps) {
    SweepTable sorted = s;
    std::sort(sorted.rows.begin(), sorted.rows.end(),
              [](const SweepRow& a, const SweepRow& b) { return a.step_size < b.step_size; });
    out << "\n[sweep]\n" << render_sweep_text(sorted);
  }
  if (!in.win_rates.empty()) {
    out << "\n[win-rate]\nlabel\twin%\ttie%\tloss%\tvalid\tinvalid\n";
    for (const auto& [label, w] : in.win_rates)
      out << label << '\t' << pct(w.win) << '\t' << pct(w.tie) << '\t' << pct(w.loss) << '\t' << w.valid << '\t'
          << w.invalid << "\n";
  }
  return out.str();
}

std::vector<std::filesystem::path> render_report(const ReportInputs& in, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto json_path = dir / "report.json";
  const auto text_path = dir / "report.txt";
  const auto j = report_json(in);
  const auto text = report_text(in);
  for (const auto& [path, body] : {std::pair{json_path, j.dump(2) + "\n"}, std::pair{text_path, text}}) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << body)) throw IoError("cannot write " + path.string());
  }
  return {json_path, text_path};
}

}  // namespace vgs
