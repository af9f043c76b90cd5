#include "vgs/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "vgs/parallel.hpp"
#include "vgs/rng.hpp"

namespace vgs {

namespace {

using json = nlohmann::json;

std::string pair_id_for(std::size_t i, std::size_t n) {
  const std::size_t width = std::max<std::size_t>(4, std::to_string(n).size());
  std::string digits = std::to_string(i);
  return "p" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

}  // namespace

std::vector<PromptImagePair> build_pairs(const std::vector<ImageRef>& images, const std::vector<std::string>& prompts,
                                         std::uint64_t seed) {
  if (images.empty()) throw ConfigError("build_pairs: no images");
  if (prompts.empty()) throw ConfigError("build_pairs: no prompts");
  Rng rng(mix(seed, std::string_view("pairs")));
  std::vector<PromptImagePair> pairs;
  pairs.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    images[i].validate();
    pairs.push_back({pair_id_for(i, images.size()), prompts[rng.index(prompts.size())], images[i]});
  }
  return pairs;
}

void to_json(json& j, const TripletRecord& r) {
  j = json{{"pair_id", r.pair_id},
           {"image", r.image},
           {"response_index", r.response_index},
           {"step_index", r.step_index},
           {"current", r.current},
           {"next", r.next ? json(*r.next) : json(nullptr)},
           {"terminal", r.terminal},
           {"reward", r.reward},
           {"greedy", !r.temperature.has_value()},
           {"temperature", r.temperature ? json(*r.temperature) : json(nullptr)}};
}

void from_json(const json& j, TripletRecord& r) {
  r = {};
  r.pair_id = j.at("pair_id").get<std::string>();
  r.image = j.at("image").get<ImageRef>();
  r.response_index = j.at("response_index").get<std::size_t>();
  r.step_index = j.at("step_index").get<std::size_t>();
  r.current = j.at("current").get<std::string>();
  if (!j.at("next").is_null()) r.next = j.at("next").get<std::string>();
  r.terminal = j.at("terminal").get<bool>();
  r.reward = j.at("reward").get<double>();
  const bool greedy = j.at("greedy").get<bool>();
  if (!j.at("temperature").is_null()) r.temperature = j.at("temperature").get<double>();
  if (greedy == r.temperature.has_value()) throw ConfigError("greedy flag and temperature disagree");
  if (r.terminal == r.next.has_value()) throw ConfigError("terminal flag and next sentence disagree");
  if (r.current.empty()) throw ConfigError("empty current sentence");
  if (!(r.reward >= -1.0 && r.reward <= 1.0)) throw ConfigError("reward outside [-1, 1]");
}

void to_json(json& j, const SftRecord& r) {
  j = json{{"image", r.image}, {"prompt", r.prompt}, {"response", r.response}, {"source_method", r.source_method}};
}

void from_json(const json& j, SftRecord& r) {
  r.image = j.at("image").get<ImageRef>();
  r.prompt = j.at("prompt").get<std::string>();
  r.response = j.at("response").get<std::string>();
  r.source_method = j.at("source_method").get<std::string>();
  static const std::set<std::string> methods = {"value-search", "prm-search", "greedy", "bon"};
  if (r.response.empty()) throw ConfigError("empty response");
  if (!methods.count(r.source_method)) throw ConfigError("unknown source_method '" + r.source_method + "'");
}

namespace detail {

void write_jsonl_lines(const std::vector<json>& rows, std::string_view schema, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  if (!rows.empty()) {
    out << json{{"schema", schema}, {"version", kJsonlVersion}}.dump() << '\n';
    for (const auto& r : rows) out << r.dump() << '\n';
  }
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::pair<std::size_t, json>> read_jsonl_lines(std::string_view schema, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::pair<std::size_t, json>> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw ParseError("blank line", lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    if (!j.is_object()) throw ParseError("expected a JSON object", lineno);
    if (!header) {
      if (!j.contains("schema") || !j.contains("version")) throw ParseError("missing schema header", lineno);
      if (j.at("schema") != schema)
        throw SchemaVersionError("schema '" + j.at("schema").dump() + "', expected '" + std::string(schema) + "'", lineno);
      if (j.at("version") != kJsonlVersion)
        throw SchemaVersionError("unsupported version " + j.at("version").dump() + " (this build reads " +
                                     std::to_string(kJsonlVersion) + ")",
                                 lineno);
      header = true;
      continue;
    }
    rows.emplace_back(lineno, std::move(j));
  }
  if (in.bad()) throw IoError("read failed for " + path.string());
  return rows;
}

}  // namespace detail

void BuildOptions::validate() const {
  if (responses_per_pair < 1) throw ConfigError("responses_per_pair must be >= 1");
  if (responses_per_pair > 1 && temperatures.empty())
    throw ConfigError("temperature list is empty but sampled responses were requested");
  for (double t : temperatures)
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("data temperatures must be positive");
  if (max_new_units < 1) throw ConfigError("max_new_units must be >= 1");
  rules.validate();
}

BuildResult build_triplets(const std::vector<PromptImagePair>& pairs, PolicyProvider& policy, ProcessRewardModel& prm,
                           const BuildOptions& options) {
  options.validate();
  if (pairs.empty()) throw ConfigError("build_triplets: no pairs");

  std::vector<std::vector<TripletRecord>> per_pair(pairs.size());
  std::vector<std::optional<std::string>> errors(pairs.size());
  parallel_for(pairs.size(), options.max_in_flight, [&](std::size_t p) {
    const auto& pair = pairs[p];
    std::vector<TripletRecord> records;
    try {
      for (std::size_t r = 0; r < options.responses_per_pair; ++r) {
        GenerationRequest req;
        req.prompt = pair.prompt;
        req.image = pair.image;
        req.greedy = r == 0;
        if (r > 0) req.temperature = options.temperatures[(r - 1) % options.temperatures.size()];
        req.max_new_units = options.max_new_units;
        req.seed = mix(mix(mix(options.seed, std::string_view("response")), std::string_view(pair.pair_id)), r);

        std::vector<std::string> sentences;
        for (const auto& s : split_sentences(policy.generate_continuation(req), options.rules))
          if (auto t = trim(s); !t.empty()) sentences.emplace_back(t);

        for (std::size_t k = 0; k < sentences.size(); ++k) {
          TripletRecord rec;
          rec.pair_id = pair.pair_id;
          rec.image = pair.image;
          rec.response_index = r;
          rec.step_index = k;
          rec.current = sentences[k];
          rec.terminal = k + 1 == sentences.size();
          if (!rec.terminal) rec.next = sentences[k + 1];
          rec.reward = prm.score(rec.current, pair.image).value;
          if (!req.greedy) rec.temperature = req.temperature;
          records.push_back(std::move(rec));
        }
      }
      per_pair[p] = std::move(records);
    } catch (const Error& e) {
      errors[p] = e.what();
    }
  });

  BuildResult result;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    if (errors[p]) {
      spdlog::warn("pair {} skipped: {}", pairs[p].pair_id, *errors[p]);
      result.failures.push_back({pairs[p].pair_id, *errors[p]});
      continue;
    }
    for (auto& r : per_pair[p]) result.records.push_back(std::move(r));
  }
  if (result.failures.size() == pairs.size())
    throw ProviderError("every pair failed; first error: " + result.failures.front().error);
  return result;
}

std::vector<TDSample> to_td_samples(const std::vector<TripletRecord>& records, EmbeddingProvider& embedder) {
  std::vector<TDSample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    TDSample s;
    s.current = featurize(r.current, r.image, embedder);
    s.reward = r.reward;
    if (r.next) s.next = featurize(*r.next, r.image, embedder);
    out.push_back(std::move(s));
  }
  return out;
}

ExportResult export_sft(const std::vector<SearchTrace>& traces, const std::filesystem::path& path) {
  ExportResult result;
  std::vector<SftRecord> records;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    if (trim(t.final_response).empty()) {
      spdlog::warn("trace {} has an empty response; skipped", i);
      result.skipped.push_back(i);
      continue;
    }
    records.push_back({t.image, t.prompt, t.final_response, t.method});
  }
  write_jsonl(records, path);
  result.written = records.size();
  return result;
}

std::vector<SearchTrace> read_trace_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError("trace directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json" && entry.path().filename() != "manifest.json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<SearchTrace> traces;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw IoError("cannot read " + f.string());
    try {
      traces.push_back(json::parse(in).get<SearchTrace>());
    } catch (const json::exception& e) {
      throw ParseError(f.string() + ": not a search trace: " + e.what(), 0);
    }
  }
  return traces;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (auto t = trim(line); !t.empty()) lines.emplace_back(t);
  return lines;
}

}  // namespace vgs
