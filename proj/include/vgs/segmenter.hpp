#pragma once

// Rule-based sentence segmentation. A step of the decoding MDP is exactly one
// sentence as returned by split_sentences().

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vgs {

struct SegmentationRules {
  std::string terminators = ".!?";
  /// Matched case-insensitively against the word that ends at a terminator.
  std::vector<std::string> abbreviations = {"Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "St.", "Jr.", "Sr.",
                                            "vs.", "e.g.", "i.e.", "etc.", "approx.", "No."};
  /// Shorter sentences are merged into their neighbour.
  std::size_t min_sentence_chars = 1;

  void validate() const;

  /// Replaces the abbreviation list with the entries of a plain-text file
  /// (one per line; blank lines and lines starting with '#' are skipped).
  static SegmentationRules with_abbreviations_file(const std::filesystem::path& path);
};

std::vector<std::string> split_sentences(std::string_view text, const SegmentationRules& rules = {});

/// First sentence and the remaining text (leading whitespace stripped).
/// An unterminated fragment counts as a sentence.
std::pair<std::string, std::string> first_sentence(std::string_view text, const SegmentationRules& rules = {});

/// True iff the continuation is empty or whitespace only (EOS-only step).
bool is_terminal(std::string_view continuation);

std::string_view trim(std::string_view s);

}  // namespace vgs
