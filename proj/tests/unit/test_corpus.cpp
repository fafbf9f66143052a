#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <set>

#include "legalrag/corpus.hpp"
#include "legalrag/errors.hpp"
#include "legalrag/log.hpp"
#include "synthetic.hpp"

using namespace legalrag;
using legalrag::testing::TempDir;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

QAPair qa(const std::string& id, const std::string& domain, std::vector<std::string> docs) {
    QAPair q;
    q.id = id;
    q.query = "query " + id;
    q.domain = domain;
    for (auto& d : docs) q.snippets.push_back({d, {0, 1}, "x"});
    return q;
}

// Smallest number of distinct documents over every per-domain choice (exhaustive).
std::size_t optimum_docs(const std::vector<QAPair>& pairs, std::size_t per_domain) {
    std::map<std::string, std::vector<std::size_t>> by_domain;
    for (std::size_t i = 0; i < pairs.size(); ++i) by_domain[pairs[i].domain].push_back(i);
    std::vector<std::vector<std::size_t>> domains;
    for (auto& [_, v] : by_domain) domains.push_back(v);
    std::size_t best = SIZE_MAX;
    std::vector<std::size_t> chosen;
    std::function<void(std::size_t)> rec = [&](std::size_t d) {
        if (d == domains.size()) {
            std::set<std::string> docs;
            for (auto i : chosen) {
                for (auto& s : pairs[i].snippets) docs.insert(s.doc_id);
            }
            best = std::min(best, docs.size());
            return;
        }
        const auto& items = domains[d];
        const std::size_t n = items.size();
        for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
            if (static_cast<std::size_t>(__builtin_popcount(mask)) != per_domain) continue;
            const auto before = chosen.size();
            for (std::size_t b = 0; b < n; ++b) {
                if (mask & (1u << b)) chosen.push_back(items[b]);
            }
            rec(d + 1);
            chosen.resize(before);
        }
    };
    rec(0);
    return best;
}

}  // namespace

TEST_CASE("load_corpus assigns relative ids in lexicographic order") {
    TempDir dir;
    write_file(dir.path() / "b" / "c.txt", "hi");
    write_file(dir.path() / "a.txt", "hello");
    const Corpus c = load_corpus(dir.path());
    REQUIRE(c.size() == 2);
    CHECK(c.documents()[0].id() == "a.txt");
    CHECK(c.documents()[1].id() == "b/c.txt");
    CHECK(c.documents()[0].char_len() == 5);
    CHECK(c.documents()[1].char_len() == 2);
}

TEST_CASE("load_corpus on an empty directory warns and returns nothing") {
    TempDir dir;
    WarningCapture capture;
    CHECK(load_corpus(dir.path()).empty());
    CHECK_FALSE(capture.messages().empty());
}

TEST_CASE("load_corpus names a file that is not valid text") {
    TempDir dir;
    write_file(dir.path() / "bad.txt", std::string("ok\xFF\xFE", 4));
    try {
        load_corpus(dir.path());
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(std::string(e.what()).find("bad.txt") != std::string::npos);
    }
}

TEST_CASE("character spans use code points, not bytes") {
    const Document d("u.txt", "caf\xC3\xA9 bar");
    CHECK(d.char_len() == 8);
    CHECK(d.slice({3, 4}) == "\xC3\xA9");
    CHECK(d.slice({5, 8}) == "bar");
    CHECK_THROWS_AS(d.slice({5, 9}), IntegrityError);
}

TEST_CASE("duplicate doc ids are rejected") {
    std::vector<Document> docs;
    docs.emplace_back("a.txt", "x");
    docs.emplace_back("a.txt", "y");
    CHECK_THROWS_AS(Corpus(std::move(docs)), IntegrityError);
}

TEST_CASE("load_benchmark validates quotes against the corpus") {
    std::vector<Document> docs;
    docs.emplace_back("a.txt", "hello");
    const Corpus corpus(std::move(docs));
    const json ok{{"tests", {{{"query", "q"}, {"snippets", {{{"file_path", "a.txt"}, {"span", {0, 5}}, {"answer", "hello"}}}}}}}};
    const auto pairs = parse_benchmark(ok, corpus);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].snippets[0].quote == "hello");

    const json bad_quote{{"tests", {{{"query", "q"}, {"snippets", {{{"file_path", "a.txt"}, {"span", {0, 5}}, {"answer", "world"}}}}}}}};
    try {
        parse_benchmark(bad_quote, corpus);
        FAIL("expected IntegrityError");
    } catch (const IntegrityError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("world") != std::string::npos);
        CHECK(msg.find("hello") != std::string::npos);
    }

    const json out_of_bounds{{"tests", {{{"query", "q"}, {"snippets", {{{"file_path", "a.txt"}, {"span", {2, 9}}}}}}}}};
    CHECK_THROWS_AS(parse_benchmark(out_of_bounds, corpus), IntegrityError);
    const json unknown_doc{{"tests", {{{"query", "q"}, {"snippets", {{{"file_path", "z.txt"}, {"span", {0, 1}}}}}}}}};
    CHECK_THROWS_AS(parse_benchmark(unknown_doc, corpus), IntegrityError);
}

TEST_CASE("benchmark round trip keeps every snippet quote equal to its span") {
    const auto set = legalrag::testing::make_synthetic();
    TempDir dir;
    save_benchmark(dir.path() / "b.json", set.qa);
    const auto back = load_benchmark(dir.path() / "b.json", set.corpus);
    REQUIRE(back.size() == set.qa.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].query == set.qa[i].query);
        CHECK(back[i].domain == set.qa[i].domain);
        for (const auto& s : back[i].snippets) CHECK(set.corpus.find(s.doc_id)->slice(s.span) == s.quote);
    }
}

TEST_CASE("canonical_domain maps benchmark folder names") {
    CHECK(canonical_domain("contractnli") == "ContractNLI");
    CHECK(canonical_domain("cuad") == "CUAD");
    CHECK(canonical_domain("maud") == "MAUD");
    CHECK(canonical_domain("privacy_qa") == "PrivacyQA");
    CHECK(canonical_domain("custom") == "custom");
}

TEST_CASE("sample_mini forced and doc-minimal choices") {
    SUBCASE("single pair") {
        const auto s = sample_mini({qa("1", "D", {"A"})}, 1, 1);
        CHECK(s.qa_pairs.size() == 1);
        CHECK(s.selected_docs == std::set<std::string>{"A"});
    }
    SUBCASE("prefers pairs sharing a document") {
        const std::vector<QAPair> pairs{qa("1", "D", {"A"}), qa("2", "D", {"A"}), qa("3", "D", {"B"})};
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto s = sample_mini(pairs, 2, seed);
            CHECK(s.selected_docs == std::set<std::string>{"A"});
            CHECK(s.per_domain_count.at("D") == 2);
        }
    }
    SUBCASE("insufficient pairs names the domain") {
        try {
            sample_mini({qa("1", "CUAD", {"A"})}, 2, 1);
            FAIL("expected SamplingError");
        } catch (const SamplingError& e) {
            CHECK(std::string(e.what()).find("CUAD") != std::string::npos);
        }
    }
}

TEST_CASE("sample_mini is deterministic and within one document of the optimum") {
    std::mt19937 rng(5);
    const std::vector<std::string> doc_names{"A", "B", "C", "D", "E", "F"};
    for (int trial = 0; trial < 150; ++trial) {
        std::vector<QAPair> pairs;
        const std::size_t n = 4 + rng() % 7;  // 4..10 pairs
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::string> docs{doc_names[rng() % doc_names.size()]};
            if (rng() % 3 == 0) docs.push_back(doc_names[rng() % doc_names.size()]);
            pairs.push_back(qa(std::to_string(i), i % 2 == 0 ? "X" : "Y", docs));
        }
        const std::size_t per_domain = 1 + rng() % 2;
        const auto a = sample_mini(pairs, per_domain, trial);
        const auto b = sample_mini(pairs, per_domain, trial);
        std::vector<std::string> ids_a, ids_b;
        for (auto& p : a.qa_pairs) ids_a.push_back(p.id);
        for (auto& p : b.qa_pairs) ids_b.push_back(p.id);
        CHECK(ids_a == ids_b);
        CHECK(a.per_domain_count.at("X") == per_domain);
        CHECK(a.per_domain_count.at("Y") == per_domain);
        for (auto& p : a.qa_pairs) {
            for (auto& s : p.snippets) CHECK(a.selected_docs.count(s.doc_id) == 1);
        }
        CHECK(a.selected_docs.size() <= optimum_docs(pairs, per_domain) + 1);
    }
}
