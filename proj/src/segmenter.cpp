#include "vgs/segmenter.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "vgs/error.hpp"

namespace vgs {

namespace {

struct Span {
  std::size_t begin;
  std::size_t end;
};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

std::size_t skip_space(std::string_view text, std::size_t i) {
  while (i < text.size() && is_space(text[i])) ++i;
  return i;
}

bool is_abbreviation(std::string_view text, std::size_t word_floor, std::size_t dot, const SegmentationRules& rules) {
  std::size_t begin = dot;
  while (begin > word_floor && !is_space(text[begin - 1])) --begin;
  while (begin < dot && (text[begin] == '(' || text[begin] == '"' || text[begin] == '\'')) ++begin;
  const auto word = text.substr(begin, dot - begin + 1);
  return std::any_of(rules.abbreviations.begin(), rules.abbreviations.end(),
                     [&](const std::string& a) { return iequals(a, word); });
}

std::vector<Span> raw_spans(std::string_view text, const SegmentationRules& rules) {
  std::vector<Span> spans;
  const auto is_term = [&](char c) { return rules.terminators.find(c) != std::string::npos; };

  std::size_t start = skip_space(text, 0);
  std::size_t i = start;
  while (i < text.size()) {
    if (!is_term(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_term(text[j])) ++j;
    while (j < text.size() && (text[j] == '"' || text[j] == '\'' || text[j] == ')')) ++j;

    // Split only on terminator + whitespace/end; a following digit (3.50)
    // or any other glued character keeps the sentence going.
    const bool boundary = j == text.size() || is_space(text[j]);
    const bool single_dot = j - i == 1 && text[i] == '.';
    if (boundary && !(single_dot && is_abbreviation(text, start, i, rules))) {
      spans.push_back({start, j});
      start = skip_space(text, j);
      i = start;
      continue;
    }
    i = j;
  }
  if (start < text.size()) {
    std::size_t end = text.size();
    while (end > start && is_space(text[end - 1])) --end;
    if (end > start) spans.push_back({start, end});
  }
  return spans;
}

std::vector<Span> spans(std::string_view text, const SegmentationRules& rules) {
  auto raw = raw_spans(text, rules);
  if (rules.min_sentence_chars <= 1 || raw.size() < 2) return raw;

  std::vector<Span> merged;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    Span cur = raw[k];
    while (cur.end - cur.begin < rules.min_sentence_chars && k + 1 < raw.size()) cur.end = raw[++k].end;
    merged.push_back(cur);
  }
  if (merged.size() > 1 && merged.back().end - merged.back().begin < rules.min_sentence_chars) {
    merged[merged.size() - 2].end = merged.back().end;
    merged.pop_back();
  }
  return merged;
}

}  // namespace

void SegmentationRules::validate() const {
  if (terminators.empty()) throw ConfigError("segmentation needs at least one terminator");
  if (min_sentence_chars < 1) throw ConfigError("min_sentence_chars must be >= 1");
  for (const auto& a : abbreviations)
    if (a.empty() || a.back() != '.') throw ConfigError("abbreviation '" + a + "' must end with '.'");
}

SegmentationRules SegmentationRules::with_abbreviations_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read abbreviation file '" + path.string() + "'");
  SegmentationRules rules;
  rules.abbreviations.clear();
  std::string line;
  while (std::getline(in, line)) {
    const auto entry = trim(line);
    if (entry.empty() || entry.front() == '#') continue;
    rules.abbreviations.emplace_back(entry);
  }
  rules.validate();
  return rules;
}

std::string_view trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_sentences(std::string_view text, const SegmentationRules& rules) {
  std::vector<std::string> out;
  for (const auto& sp : spans(text, rules)) out.emplace_back(text.substr(sp.begin, sp.end - sp.begin));
  return out;
}

std::pair<std::string, std::string> first_sentence(std::string_view text, const SegmentationRules& rules) {
  const auto sp = spans(text, rules);
  if (sp.empty()) return {"", ""};
  const auto& first = sp.front();
  const auto rest = text.substr(skip_space(text, first.end));
  return {std::string(text.substr(first.begin, first.end - first.begin)), std::string(rest)};
}

bool is_terminal(std::string_view continuation) { return trim(continuation).empty(); }

}  // namespace vgs
