#include "legalrag/readability.hpp"

#include <array>
#include <cctype>
#include <sstream>
#include <stdexcept>

#include "legalrag/resources.hpp"
#include "legalrag/text.hpp"

namespace legalrag {

const std::unordered_set<std::string>& dale_chall_familiar_words() {
    static const std::unordered_set<std::string> words = [] {
        std::unordered_set<std::string> set;
        std::istringstream in{std::string(resources::dale_chall_word_list())};
        std::string line;
        while (std::getline(in, line)) {
            line = to_lower_ascii(trim(line));
            while (!line.empty() && line.back() == '.') line.pop_back();
            if (!line.empty()) set.insert(line);
        }
        return set;
    }();
    return words;
}

namespace {

bool is_letter(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

std::string strip_outer_punct(std::string_view tok) {
    std::size_t b = 0, e = tok.size();
    const auto keep = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || (c & 0x80); };
    while (b < e && !keep(tok[b])) ++b;
    while (e > b && !keep(tok[e - 1])) --e;
    return std::string(tok.substr(b, e - b));
}

constexpr std::array kAbbreviations{"inc", "no", "v", "vs", "ltd", "corp", "co", "mr", "mrs", "ms",
                                    "dr", "st", "jr", "sr", "llc", "l.l.c", "e.g", "i.e", "u.s", "n.a",
                                    "art", "sec", "para", "cl", "fig", "approx", "dept"};

bool is_abbreviation(std::string_view token_with_period) {
    // token ends in '.', e.g. "Inc." or "U.S."
    std::string core = to_lower_ascii(token_with_period.substr(0, token_with_period.size() - 1));
    while (!core.empty() && !std::isalnum(static_cast<unsigned char>(core.front()))) core.erase(core.begin());
    if (core.size() == 1 && is_letter(core[0])) return true;  // initial, e.g. "J."
    for (const char* a : kAbbreviations) {
        if (core == a) return true;
    }
    return false;
}

}  // namespace

std::vector<std::string> readability_words(std::string_view text) {
    std::vector<std::string> out;
    for (const auto& tok : split_whitespace(text)) {
        std::string w = to_lower_ascii(strip_outer_punct(tok));
        bool has_letter = false;
        for (const char c : w) has_letter = has_letter || is_letter(c);
        if (has_letter) out.push_back(std::move(w));
    }
    return out;
}

std::size_t count_sentences(std::string_view text) {
    std::size_t sentences = 0;
    bool words_since_break = false;
    for (const auto& tok : split_whitespace(text)) {
        bool has_letter_or_digit = false;
        for (const char c : tok) has_letter_or_digit = has_letter_or_digit || std::isalnum(static_cast<unsigned char>(c));
        if (has_letter_or_digit) words_since_break = true;

        std::size_t e = tok.size();
        while (e > 0 && (tok[e - 1] == '"' || tok[e - 1] == '\'' || tok[e - 1] == ')' || tok[e - 1] == ']')) --e;
        if (e == 0) continue;
        const char last = tok[e - 1];
        bool terminal = last == '!' || last == '?';
        if (last == '.') terminal = !is_abbreviation(std::string_view(tok).substr(0, e));
        if (terminal && words_since_break) {
            ++sentences;
            words_since_break = false;
        }
    }
    if (words_since_break) ++sentences;
    return sentences;
}

DaleChallResult dale_chall_details(std::string_view text) {
    DaleChallResult r;
    const auto words = readability_words(text);
    if (words.empty()) throw std::invalid_argument("readability needs at least one word");
    const auto& familiar = dale_chall_familiar_words();
    r.words = words.size();
    for (const auto& w : words) r.difficult_words += familiar.count(w) == 0 ? 1 : 0;
    r.sentences = std::max<std::size_t>(count_sentences(text), 1);
    r.percent_difficult = 100.0 * static_cast<double>(r.difficult_words) / static_cast<double>(r.words);
    r.avg_sentence_length = static_cast<double>(r.words) / static_cast<double>(r.sentences);
    r.score = 0.1579 * r.percent_difficult + 0.0496 * r.avg_sentence_length;
    if (r.percent_difficult > 5.0) r.score += 3.6365;
    return r;
}

double dale_chall(std::string_view text) { return dale_chall_details(text).score; }

}  // namespace legalrag
