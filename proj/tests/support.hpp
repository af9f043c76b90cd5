#pragma once

// Shared fixtures and independent oracles for the unit and acceptance tests.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "vgs/data.hpp"
#include "vgs/eval.hpp"
#include "vgs/rng.hpp"
#include "vgs/search.hpp"
#include "vgs/simlab.hpp"

namespace vgs::testing {

inline std::filesystem::path asset(const std::string& name) { return std::filesystem::path(VGS_TEST_ASSET_DIR) / name; }

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  static std::uint64_t counter = 0;
  const auto dir = fs::temp_directory_path() /
                   ("vgs-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Violations of the triplet chaining rules, as readable strings.
inline std::vector<std::string> chain_violations(const std::vector<TripletRecord>& records) {
  std::map<std::pair<std::string, std::size_t>, std::vector<const TripletRecord*>> groups;
  for (const auto& r : records) groups[{r.pair_id, r.response_index}].push_back(&r);
  std::vector<std::string> bad;
  for (const auto& [key, recs] : groups) {
    const auto where = key.first + "/" + std::to_string(key.second);
    std::size_t terminals = 0;
    for (std::size_t k = 0; k < recs.size(); ++k) {
      if (recs[k]->step_index != k) bad.push_back(where + ": step index not consecutive");
      if (recs[k]->terminal) ++terminals;
      if (recs[k]->terminal != (k + 1 == recs.size())) bad.push_back(where + ": terminal record is not last");
      if (k + 1 < recs.size() && recs[k]->next != recs[k + 1]->current) bad.push_back(where + ": next != current");
      if (recs[k]->terminal == recs[k]->next.has_value()) bad.push_back(where + ": terminal flag vs next");
    }
    if (terminals != 1) bad.push_back(where + ": " + std::to_string(terminals) + " terminal records");
  }
  return bad;
}

/// A caption whose object mentions are known by construction. Objects are
/// written as their canonical name, a synonym, or a plural, each in its own
/// comma-separated clause so that no two mentions can merge into a phrase.
struct GeneratedCaption {
  std::string text;
  std::set<std::string> objects;
};

inline GeneratedCaption generate_caption(const ObjectLexicon& lex, Rng& rng) {
  static const std::vector<std::string> fillers = {"there is", "we can see", "next to it", "in the scene",
                                                   "a photo of", "nearby stands", "on the left"};
  std::vector<std::string> canon(lex.canonical().begin(), lex.canonical().end());
  std::vector<std::pair<std::string, std::string>> syn(lex.synonyms().begin(), lex.synonyms().end());
  GeneratedCaption g;
  const std::size_t mentions = rng.index(5);
  for (std::size_t m = 0; m < mentions; ++m) {
    std::string phrase;
    std::string obj;
    if (!syn.empty() && rng.uniform() < 0.3) {
      const auto& [p, o] = syn[rng.index(syn.size())];
      phrase = p;
      obj = o;
    } else {
      obj = canon[rng.index(canon.size())];
      phrase = obj;
      // Plural of a single-word object whose plain "+s" form is unambiguous.
      if (phrase.find(' ') == std::string::npos && !phrase.ends_with("s") && rng.uniform() < 0.4) phrase += "s";
    }
    g.objects.insert(obj);
    g.text += fillers[rng.index(fillers.size())] + " " + phrase + ", ";
  }
  g.text += "and nothing else.";
  return g;
}

/// CHAIR computed directly from known mentions.
inline std::pair<double, double> brute_force_chair(const std::vector<std::set<std::string>>& mentioned,
                                                   const std::vector<std::set<std::string>>& truth) {
  std::size_t hall_caps = 0, hall = 0, total = 0;
  for (std::size_t i = 0; i < mentioned.size(); ++i) {
    std::size_t h = 0;
    for (const auto& o : mentioned[i]) h += truth[i].count(o) ? 0 : 1;
    hall += h;
    total += mentioned[i].size();
    hall_caps += h > 0 ? 1 : 0;
  }
  return {static_cast<double>(hall_caps) / static_cast<double>(mentioned.size()),
          total ? static_cast<double>(hall) / static_cast<double>(total) : 0.0};
}

/// Cross-checks that plural generation above is safe for a lexicon: the
/// "+s" form of every single-word canonical object must not itself be a
/// lexicon phrase for another object.
inline bool plural_generation_safe(const ObjectLexicon& lex) {
  for (const auto& c : lex.canonical()) {
    if (c.find(' ') != std::string::npos || c.ends_with("s")) continue;
    const auto hit = lex.lookup({c + "s"});
    if (!hit || *hit != c) return false;
  }
  return true;
}

}  // namespace vgs::testing
