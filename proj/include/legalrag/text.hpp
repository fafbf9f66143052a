#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace legalrag {

/// Half-open character interval [start, end) over Unicode scalar values.
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t length() const noexcept { return end > start ? end - start : 0; }
    bool empty() const noexcept { return end <= start; }
    friend bool operator==(const Span&, const Span&) = default;
    friend auto operator<=>(const Span&, const Span&) = default;
};

/// Number of characters shared by two half-open intervals.
std::size_t span_overlap(Span a, Span b) noexcept;

/// Merges overlapping or touching spans; output is sorted and disjoint.
std::vector<Span> union_spans(std::vector<Span> spans);

bool is_valid_utf8(std::string_view bytes) noexcept;

/// Byte offset of every code point, plus a trailing entry equal to bytes.size().
/// Input must be valid UTF-8.
std::vector<std::uint32_t> utf8_offsets(std::string_view utf8);

std::u32string decode_utf8(std::string_view utf8);
void append_utf8(std::string& out, char32_t cp);

std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);

/// Lowercased alphanumeric runs. Bytes >= 0x80 count as word characters so
/// non-ASCII words survive intact.
std::vector<std::string> word_tokens(std::string_view s);

/// Sentences split after '.', '!' or '?' followed by whitespace, and at line
/// breaks. Pieces are trimmed; empty pieces are dropped.
std::vector<std::string> split_sentences(std::string_view s);

std::size_t utf8_length(std::string_view s) noexcept;

std::uint64_t fnv1a64(std::string_view data) noexcept;
std::string sha256_hex(std::string_view data);

/// Replaces every occurrence of `from` in `s`.
std::string replace_all(std::string s, std::string_view from, std::string_view to);

}  // namespace legalrag
