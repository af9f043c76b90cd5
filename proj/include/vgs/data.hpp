#pragma once

// TD training data and SFT export. Every file is JSON Lines: a header line
// {"schema": ..., "version": 1} followed by one record per line. An empty
// record list is written as an empty file (no header) and reads back empty.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vgs/backends.hpp"
#include "vgs/reward.hpp"
#include "vgs/search.hpp"
#include "vgs/segmenter.hpp"
#include "vgs/value.hpp"

namespace vgs {

inline constexpr int kJsonlVersion = 1;

struct PromptImagePair {
  std::string pair_id;
  std::string prompt;
  ImageRef image;
};

/// One pair per image with a prompt drawn uniformly from `prompts`.
std::vector<PromptImagePair> build_pairs(const std::vector<ImageRef>& images, const std::vector<std::string>& prompts,
                                         std::uint64_t seed);

struct TripletRecord {
  std::string pair_id;
  ImageRef image;
  std::size_t response_index = 0;
  std::size_t step_index = 0;
  std::string current;
  std::optional<std::string> next;  ///< absent on the terminal record
  bool terminal = true;
  double reward = 0.0;
  std::optional<double> temperature;  ///< absent for greedy responses

  friend bool operator==(const TripletRecord&, const TripletRecord&) = default;
};

struct SftRecord {
  ImageRef image;
  std::string prompt;
  std::string response;
  std::string source_method;  ///< value-search | prm-search | greedy | bon

  friend bool operator==(const SftRecord&, const SftRecord&) = default;
};

void to_json(nlohmann::json& j, const TripletRecord& r);
void from_json(const nlohmann::json& j, TripletRecord& r);
void to_json(nlohmann::json& j, const SftRecord& r);
void from_json(const nlohmann::json& j, SftRecord& r);

template <class T>
struct JsonlSchema;
template <>
struct JsonlSchema<TripletRecord> {
  static constexpr std::string_view name = "vgs.triplet";
};
template <>
struct JsonlSchema<SftRecord> {
  static constexpr std::string_view name = "vgs.sft";
};

namespace detail {
void write_jsonl_lines(const std::vector<nlohmann::json>& rows, std::string_view schema,
                       const std::filesystem::path& path);
/// Parsed records (header stripped); line numbers are physical 1-based lines.
std::vector<std::pair<std::size_t, nlohmann::json>> read_jsonl_lines(std::string_view schema,
                                                                     const std::filesystem::path& path);
}  // namespace detail

template <class T>
void write_jsonl(const std::vector<T>& records, const std::filesystem::path& path) {
  std::vector<nlohmann::json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.emplace_back(r);
  detail::write_jsonl_lines(rows, JsonlSchema<T>::name, path);
}

/// Throws ParseError naming the line on malformed input and
/// SchemaVersionError on a schema or version mismatch.
template <class T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
  std::vector<T> out;
  for (auto& [line, j] : detail::read_jsonl_lines(JsonlSchema<T>::name, path)) {
    try {
      out.push_back(j.template get<T>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad ") + std::string(JsonlSchema<T>::name) + " record: " + e.what(), line);
    } catch (const ConfigError& e) {
      throw ParseError(std::string("bad ") + std::string(JsonlSchema<T>::name) + " record: " + e.what(), line);
    }
  }
  return out;
}

struct BuildOptions {
  std::size_t responses_per_pair = 5;
  std::vector<double> temperatures = {0.1, 0.3, 0.5, 0.7, 0.9};
  std::uint64_t seed = 0;
  int max_new_units = 256;
  std::size_t max_in_flight = 6;
  SegmentationRules rules;

  void validate() const;
};

struct BuildFailure {
  std::string pair_id;
  std::string error;
};

struct BuildResult {
  std::vector<TripletRecord> records;  ///< ordered by pair, response, step
  std::vector<BuildFailure> failures;
};

/// Response 0 of each pair is greedy; response r > 0 is sampled at
/// temperatures[(r - 1) % |temperatures|]. Pairs whose generation or scoring
/// fails are logged and skipped; throws ProviderError if every pair fails.
BuildResult build_triplets(const std::vector<PromptImagePair>& pairs, PolicyProvider& policy, ProcessRewardModel& prm,
                           const BuildOptions& options);

/// Features for both sides of every record. Records sharing a sentence share
/// embedding calls when `embedder` caches.
std::vector<TDSample> to_td_samples(const std::vector<TripletRecord>& records, EmbeddingProvider& embedder);

struct ExportResult {
  std::size_t written = 0;
  std::vector<std::size_t> skipped;  ///< indices of traces with empty responses
};

ExportResult export_sft(const std::vector<SearchTrace>& traces, const std::filesystem::path& path);

/// Reads every *.json file of a directory (sorted by file name) as a trace.
std::vector<SearchTrace> read_trace_dir(const std::filesystem::path& dir);

/// Non-empty, trimmed lines of a text file; throws ConfigError naming the path.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace vgs
