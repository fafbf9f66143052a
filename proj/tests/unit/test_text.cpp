#include <doctest.h>

#include <random>

#include "legalrag/text.hpp"

using namespace legalrag;

TEST_CASE("span_overlap on half-open intervals") {
    CHECK(span_overlap({0, 10}, {0, 10}) == 10);
    CHECK(span_overlap({0, 10}, {10, 20}) == 0);
    CHECK(span_overlap({0, 10}, {5, 25}) == 5);
    CHECK(span_overlap({5, 25}, {0, 10}) == 5);
    CHECK(span_overlap({3, 3}, {0, 10}) == 0);
}

TEST_CASE("union_spans merges overlapping and touching spans") {
    const auto u = union_spans({{20, 30}, {0, 10}, {5, 12}, {12, 15}, {40, 40}});
    REQUIRE(u.size() == 2);
    CHECK(u[0] == Span{0, 15});
    CHECK(u[1] == Span{20, 30});
    CHECK(union_spans({}).empty());
}

TEST_CASE("union_spans covers exactly the characters of its inputs") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Span> spans;
        std::vector<bool> covered(60, false);
        for (int i = 0; i < 4; ++i) {
            const std::size_t a = rng() % 60, b = rng() % 60;
            const Span s{std::min(a, b), std::max(a, b)};
            spans.push_back(s);
            for (std::size_t c = s.start; c < s.end; ++c) covered[c] = true;
        }
        const auto u = union_spans(spans);
        std::vector<bool> got(60, false);
        for (std::size_t i = 0; i < u.size(); ++i) {
            if (i > 0) CHECK(u[i - 1].end < u[i].start);
            for (std::size_t c = u[i].start; c < u[i].end; ++c) got[c] = true;
        }
        CHECK(got == covered);
    }
}

TEST_CASE("utf8 helpers count code points") {
    const std::string s = "a\xC3\xA9\xE2\x82\xAC";  // a, e-acute, euro sign
    CHECK(is_valid_utf8(s));
    CHECK_FALSE(is_valid_utf8("\xC3"));
    CHECK_FALSE(is_valid_utf8("\xFF"));
    CHECK(utf8_length(s) == 3);
    const auto offs = utf8_offsets(s);
    CHECK(offs == std::vector<std::uint32_t>{0, 1, 3, 6});
    const auto cps = decode_utf8(s);
    REQUIRE(cps.size() == 3);
    CHECK(cps[2] == U'€');
    std::string back;
    for (char32_t c : cps) append_utf8(back, c);
    CHECK(back == s);
}

TEST_CASE("tokenizers") {
    CHECK(word_tokens("Hello, World! x2") == std::vector<std::string>{"hello", "world", "x2"});
    CHECK(split_whitespace("  a \t b\n") == std::vector<std::string>{"a", "b"});
    CHECK(trim("  x y ") == "x y");
    CHECK(to_lower_ascii("AbC") == "abc");
    CHECK(split_sentences("One. Two? Three!\nFour") == std::vector<std::string>{"One.", "Two?", "Three!", "Four"});
    CHECK(split_sentences("  ").empty());
}

TEST_CASE("hashing") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(replace_all("a.b.c", ".", "::") == "a::b::c");
}
