#include <doctest.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <set>
#include <sstream>

#include "legalrag/errors.hpp"
#include "legalrag/retrieval_eval.hpp"
#include "synthetic.hpp"

using namespace legalrag;
using legalrag::testing::TempDir;

namespace {

ScoredChunk sc(const std::string& doc, std::size_t s, std::size_t e, std::size_t rank = 1) {
    const Span span{s, e};
    return ScoredChunk{Chunk{doc, span, std::string(e - s, 'x'), make_chunk_id(doc, span)}, 0.0, rank};
}

GroundTruthSnippet gt(const std::string& doc, std::size_t s, std::size_t e) {
    return GroundTruthSnippet{doc, {s, e}, std::string(e - s, 'x')};
}

// Per-character membership oracle.
std::pair<double, std::optional<double>> oracle(const std::vector<ScoredChunk>& r, const std::vector<GroundTruthSnippet>& t) {
    std::set<std::pair<std::string, std::size_t>> truth, got;
    for (const auto& g : t) {
        for (std::size_t c = g.span.start; c < g.span.end; ++c) truth.insert({g.doc_id, c});
    }
    double hit = 0, len = 0;
    for (const auto& s : r) {
        for (std::size_t c = s.chunk.span.start; c < s.chunk.span.end; ++c) {
            len += 1;
            if (truth.count({s.chunk.doc_id, c})) hit += 1;
            got.insert({s.chunk.doc_id, c});
        }
    }
    double covered = 0;
    for (const auto& c : truth) covered += got.count(c) ? 1 : 0;
    const double p = len > 0 ? hit / len : 0.0;
    if (truth.empty()) return {p, std::nullopt};
    return {p, covered / static_cast<double>(truth.size())};
}

}  // namespace

TEST_CASE("precision and recall worked examples") {
    CHECK(precision_at_k(std::vector{sc("a", 0, 10)}, std::vector{gt("a", 0, 10)}, 1) == 1.0);
    CHECK(precision_at_k(std::vector{sc("b", 0, 10)}, std::vector{gt("a", 0, 10)}, 1) == 0.0);
    CHECK(precision_at_k(std::vector{sc("a", 0, 100), sc("a", 100, 200, 2)}, std::vector{gt("a", 50, 150)}, 2) == 0.5);
    CHECK(recall_at_k(std::vector{sc("a", 0, 25), sc("a", 20, 60, 2)}, std::vector{gt("a", 0, 100)}, 2) == 0.6);
    CHECK(recall_at_k(std::vector{sc("a", 0, 100)}, std::vector{gt("a", 10, 20), gt("a", 50, 60)}, 1) == 1.0);
    CHECK(recall_at_k(std::vector{sc("b", 0, 100)}, std::vector{gt("a", 10, 20)}, 1) == 0.0);
    CHECK_FALSE(recall_at_k(std::vector{sc("a", 0, 10)}, std::vector{gt("a", 5, 5)}, 1));
    CHECK(precision_at_k(std::vector<ScoredChunk>{}, std::vector{gt("a", 0, 10)}, 5) == 0.0);
}

TEST_CASE("overlapping truth spans are not double counted") {
    const std::vector truth{gt("a", 0, 50), gt("a", 25, 75)};
    CHECK(precision_at_k(std::vector{sc("a", 0, 100)}, truth, 1) == 0.75);
    CHECK(recall_at_k(std::vector{sc("a", 0, 50)}, truth, 1) == doctest::Approx(50.0 / 75.0));
}

TEST_CASE("span metrics equal a per-character oracle on random instances") {
    std::mt19937 rng(2024);
    const std::vector<std::string> docs{"a", "b"};
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<ScoredChunk> r;
        std::vector<GroundTruthSnippet> t;
        const std::size_t nr = 1 + rng() % 5, nt = 1 + rng() % 3;
        for (std::size_t i = 0; i < nr; ++i) {
            const std::size_t s = rng() % 100, e = s + 1 + rng() % (100 - s);
            r.push_back(sc(docs[rng() % 2], s, e, i + 1));
        }
        for (std::size_t i = 0; i < nt; ++i) {
            const std::size_t s = rng() % 100, e = s + 1 + rng() % (100 - s);
            t.push_back(gt(docs[rng() % 2], s, e));
        }
        for (std::size_t k = 1; k <= nr; ++k) {
            const std::vector<ScoredChunk> prefix(r.begin(), r.begin() + static_cast<long>(k));
            const auto [p, rec] = oracle(prefix, t);
            CHECK(precision_at_k(r, t, k) == p);
            CHECK(recall_at_k(r, t, k) == rec);
        }
    }
}

TEST_CASE("evaluate_run macro-averages per domain and lists missing queries") {
    std::vector<QAPair> bench(2);
    bench[0] = {"q1", "x", {gt("a", 0, 10)}, "D1"};
    bench[1] = {"q2", "y", {gt("a", 0, 10)}, "D2"};
    RetrievalRun run;
    run.variant = {"rcts", "hashed", "cosine", "unranked", "off"};
    run.queries = {{"q1", {sc("a", 0, 10)}}, {"q2", {sc("b", 0, 10)}}};
    const std::vector<std::size_t> ks{1};
    const PRCurve c = evaluate_run(run, bench, ks);
    CHECK(c.overall[0].recall == 0.5);
    CHECK(c.overall[0].precision == 0.5);
    CHECK(c.by_domain.at("D1")[0].recall == 1.0);
    CHECK(c.by_domain.at("D2")[0].recall == 0.0);
    CHECK(c.short_lists == 0);

    run.queries.pop_back();
    try {
        evaluate_run(run, bench, ks);
        FAIL("expected IntegrityError");
    } catch (const IntegrityError& e) {
        CHECK(std::string(e.what()).find("q2") != std::string::npos);
    }
}

TEST_CASE("short lists are scored as returned and counted") {
    std::vector<QAPair> bench{{"q1", "x", {gt("a", 0, 10)}, "D"}};
    RetrievalRun run;
    run.queries = {{"q1", {sc("a", 0, 10)}}};
    const std::vector<std::size_t> ks{1, 5};
    const PRCurve c = evaluate_run(run, bench, ks);
    CHECK(c.short_lists == 1);
    CHECK(c.overall[1].recall == 1.0);
}

TEST_CASE("parse_ks") {
    CHECK(parse_ks("1-5") == std::vector<std::size_t>{1, 2, 3, 4, 5});
    CHECK(parse_ks("1,3,5,10") == std::vector<std::size_t>{1, 3, 5, 10});
    CHECK(parse_ks("1-3,10,5") == std::vector<std::size_t>{1, 2, 3, 5, 10});
    CHECK(parse_ks("1-50").size() == 50);
    CHECK(parse_ks("1-300").size() == 300);
    CHECK_THROWS_AS(parse_ks(""), ValidationError);
    CHECK_THROWS_AS(parse_ks("0"), ValidationError);
    CHECK_THROWS_AS(parse_ks("5-2"), ValidationError);
    CHECK_THROWS_AS(parse_ks("a"), ValidationError);
}

TEST_CASE("recall is non-decreasing in k on the synthetic corpus") {
    const auto set = legalrag::testing::make_synthetic();
    const HashedNgramEmbedder e;
    const VectorIndex idx = build_index(set.corpus, ChunkingConfig{}, e);
    for (const auto& qa : set.qa) {
        const auto r = cosine_search(idx, e.embed_one(qa.query), 50);
        double prev = 0.0;
        for (std::size_t k = 1; k <= 50; ++k) {
            const double rec = *recall_at_k(r, qa.snippets, k);
            CHECK(rec >= prev);
            prev = rec;
        }
    }
}

TEST_CASE("run files and reports") {
    RetrievalRun run;
    run.variant = {"rcts", "hashed", "cosine", "unranked", "off"};
    run.depth = 2;
    run.queries = {{"q1", {sc("a", 0, 10), sc("a", 10, 20, 2)}}};
    TempDir dir;
    save_run(run, dir.path() / "r.json");
    const RetrievalRun back = load_run(dir.path() / "r.json");
    CHECK(back.variant == run.variant);
    CHECK(back.depth == 2);
    REQUIRE(back.queries.size() == 1);
    CHECK(back.queries[0].results[1].chunk.chunk_id == "a:10-20");

    std::vector<QAPair> bench{{"q1", "x", {gt("a", 5, 15)}, "D"}};
    const std::vector<std::size_t> ks{1, 2};
    RetrievalRun reranked = run;
    reranked.variant.ranking = "reranked";
    const std::vector<PRCurve> curves{evaluate_run(run, bench, ks), evaluate_run(reranked, bench, ks)};
    write_pr_csv(curves, dir.path() / "pr.csv");
    std::ifstream in(dir.path() / "pr.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "chunking,backend,similarity,ranking,translation,domain,k,precision,recall,queries");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 2 * 2 * 2);  // variants x {overall, D} x ks

    write_ranked_comparison_csv(curves, dir.path() / "cmp.csv");
    std::ifstream cmp(dir.path() / "cmp.csv");
    std::getline(cmp, header);
    CHECK(header.find("unranked") != std::string::npos);
    CHECK(header.find("reranked") != std::string::npos);
    CHECK(pr_summary(curves)["variants"].size() == 2);
}

TEST_CASE("text_similarity_check") {
    const HashedNgramEmbedder e;
    const GroundTruthSnippet snippet{"a", {0, 11}, "notice days"};
    const ScoredChunk same{Chunk{"a", {0, 11}, "notice days", "a:0-11"}, 1.0, 1};
    CHECK(text_similarity_check(std::vector{same}, std::vector{snippet}, e) == doctest::Approx(1.0));
    CHECK(text_similarity_check(std::vector<ScoredChunk>{}, std::vector{snippet}, e) == 0.0);
}
