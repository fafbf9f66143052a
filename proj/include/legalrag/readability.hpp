#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace legalrag {

struct DaleChallResult {
    std::size_t words = 0;
    std::size_t difficult_words = 0;
    std::size_t sentences = 0;
    double percent_difficult = 0.0;  // PDW
    double avg_sentence_length = 0.0;  // ASL
    double score = 0.0;
};

/// The bundled Dale-Chall familiar-word list (lowercase).
const std::unordered_set<std::string>& dale_chall_familiar_words();

/// Words as counted by the readability formula: whitespace tokens with outer
/// punctuation stripped, lowercased, keeping only tokens with a letter.
std::vector<std::string> readability_words(std::string_view text);

/// Sentence count using .!? terminators, ignoring periods of known
/// abbreviations ("Inc.", "No.", "v.", ...) and single-letter initials.
std::size_t count_sentences(std::string_view text);

/// score = 0.1579 * PDW + 0.0496 * ASL (+ 3.6365 when PDW > 5).
/// Throws std::invalid_argument when the text has no words.
DaleChallResult dale_chall_details(std::string_view text);
double dale_chall(std::string_view text);

}  // namespace legalrag
