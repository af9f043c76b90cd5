#pragma once

// Object-hallucination metrics, the optional pairwise judge, and reports.
//
//   CHAIR_S = captions with at least one hallucinated object / captions
//   CHAIR_I = hallucinated mentions / all mentions   (summed over the corpus)

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vgs/backends.hpp"
#include "vgs/search.hpp"

namespace vgs {

struct PluralRule {
  std::string suffix;
  std::string replacement;
};

class ObjectLexicon {
 public:
  /// `synonyms` maps a phrase to a canonical object. Canonical objects match
  /// themselves. Throws ConfigError on a dangling synonym or a non-lowercase
  /// canonical name.
  ObjectLexicon(std::set<std::string> canonical, std::map<std::string, std::string> synonyms,
                std::vector<PluralRule> plural_rules = default_plural_rules());

  static std::vector<PluralRule> default_plural_rules();
  static ObjectLexicon load(const std::filesystem::path& path);
  static ObjectLexicon from_document(const nlohmann::json& j);
  nlohmann::json to_document() const;

  const std::set<std::string>& canonical() const { return canonical_; }
  const std::map<std::string, std::string>& synonyms() const { return synonyms_; }

  /// Canonical object for a tokenized phrase, trying the plural rules on its
  /// last word; nullopt if the phrase is not in the lexicon.
  std::optional<std::string> lookup(const std::vector<std::string>& words) const;
  std::size_t longest_phrase() const { return longest_; }

 private:
  std::set<std::string> canonical_;
  std::map<std::string, std::string> synonyms_;
  std::vector<PluralRule> plural_rules_;
  std::map<std::string, std::string> phrases_;  ///< space-joined words -> canonical
  std::size_t longest_ = 1;
};

/// Lowercased word runs, split at punctuation. Internal hyphens and
/// apostrophes stay inside words.
std::vector<std::vector<std::string>> tokenize_segments(std::string_view text);

/// Longest-match-first phrase matching within punctuation-free segments.
std::set<std::string> extract_objects(std::string_view caption, const ObjectLexicon& lexicon);

using AnnotationSet = std::map<std::string, std::set<std::string>>;

/// {"image-id": ["object", ...]}; every object must be canonical.
AnnotationSet load_annotations(const std::filesystem::path& path, const ObjectLexicon& lexicon);

struct Caption {
  std::string image_id;
  std::string caption;
};

/// A JSON array of {"image_id", "caption"} objects, or an SFT JSONL file
/// (image value used as the id).
std::vector<Caption> load_captions(const std::filesystem::path& path);

struct CaptionChair {
  std::string image_id;
  std::set<std::string> mentioned;
  std::set<std::string> hallucinated;
};

struct ChairReport {
  double chair_s = 0.0;
  double chair_i = 0.0;
  std::size_t captions = 0;
  std::size_t hallucinated_captions = 0;
  std::size_t mentions = 0;
  std::size_t hallucinated_mentions = 0;
  std::vector<CaptionChair> per_caption;
};

void to_json(nlohmann::json& j, const ChairReport& r);
void from_json(const nlohmann::json& j, ChairReport& r);

/// Throws ConfigError listing every image id missing from `annotations`.
ChairReport chair_scores(const std::vector<Caption>& captions, const AnnotationSet& annotations,
                         const ObjectLexicon& lexicon);

enum class Verdict { a_wins, b_wins, tie, invalid };

std::string_view to_string(Verdict v);

struct JudgeRecord {
  Verdict verdict = Verdict::invalid;
  bool swapped = false;  ///< true when response b was shown as Response1
  std::uint64_t seed = 0;
  std::string reply;
};

/// Sends a filled rubric (and the image) to a judge and returns its reply.
using JudgeFn = std::function<std::string(const std::string& prompt, const ImageRef& image)>;

/// Replaces the first two "{}" placeholders with the responses.
std::string fill_rubric(std::string_view rubric, std::string_view response1, std::string_view response2);
std::string load_rubric(const std::filesystem::path& path);

/// 1 for "Response1 is better", 2 for "Response2 is better", 0 for "Tie";
/// nullopt otherwise. "Tie" must be the whole (trimmed) reply; the other two
/// may be embedded in prose as long as exactly one of them occurs.
std::optional<int> parse_verdict(std::string_view reply);

/// Shows (a, b) or (b, a) depending on `seed` and maps the verdict back.
JudgeRecord pairwise_judge(const std::string& a, const std::string& b, const ImageRef& image, const JudgeFn& judge,
                           std::string_view rubric, std::uint64_t seed);

/// Chat-completion judge; throws CapabilityDisabledError when cfg is absent.
JudgeFn http_judge(const std::optional<ProviderConfig>& cfg);

struct WinRate {
  double win = 0.0;
  double tie = 0.0;
  double loss = 0.0;
  std::size_t valid = 0;
  std::size_t invalid = 0;
};

void to_json(nlohmann::json& j, const WinRate& w);
void from_json(const nlohmann::json& j, WinRate& w);

/// Percentages over valid outcomes; throws Error if none is valid.
WinRate win_rate(const std::vector<Verdict>& outcomes);

/// Best-of-N selector that keeps a running champion and lets each response
/// challenge it once; scores are matches won.
class JudgeTournamentSelector final : public ResponseSelector {
 public:
  JudgeTournamentSelector(JudgeFn judge, std::string rubric, std::uint64_t seed)
      : judge_(std::move(judge)), rubric_(std::move(rubric)), seed_(seed) {}
  std::string name() const override { return "external-judge"; }
  Selection select(const std::string& prompt, const ImageRef& image,
                   const std::vector<std::vector<std::string>>& responses) override;

 private:
  JudgeFn judge_;
  std::string rubric_;
  std::uint64_t seed_;
};

struct ReportInputs {
  std::optional<ChairReport> chair;
  std::vector<SweepTable> sweeps;
  std::vector<std::pair<std::string, WinRate>> win_rates;  ///< label -> rates
  std::string config_hash;
};

nlohmann::json report_json(const ReportInputs& in);
std::string report_text(const ReportInputs& in);

/// Writes report.json and report.txt into `dir`; returns their paths.
std::vector<std::filesystem::path> render_report(const ReportInputs& in, const std::filesystem::path& dir);

}  // namespace vgs
