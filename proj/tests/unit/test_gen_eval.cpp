#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "legalrag/errors.hpp"
#include "legalrag/gen_eval.hpp"
#include "legalrag/log.hpp"
#include "synthetic.hpp"

using namespace legalrag;
using legalrag::testing::TempDir;
using nlohmann::json;

namespace {

GenerationRecord record(const std::string& question, const std::string& response, std::vector<std::string> contexts) {
    GenerationRecord r;
    r.record_id = "r-" + question;
    r.query_id = "q1";
    r.question = r.query = question;
    r.template_name = "baseline";
    r.model = "mock";
    r.k = contexts.size();
    r.response = response;
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        r.contexts.push_back({"c" + std::to_string(i), "d.txt", {i * 100, i * 100 + contexts[i].size()}, contexts[i], 1.0, i + 1});
    }
    return r;
}

/// Judge that always returns a fixed reply.
class FixedJudge final : public LLMClient {
public:
    explicit FixedJudge(std::string reply) : reply_(std::move(reply)) {}
    std::string model_name() const override { return "fixed"; }
    ChatResult complete(const std::vector<ChatMessage>&) const override {
        ++calls;
        return {reply_, "", reply_};
    }
    mutable int calls = 0;

private:
    std::string reply_;
};

class DownJudge final : public LLMClient {
public:
    std::string model_name() const override { return "down"; }
    ChatResult complete(const std::vector<ChatMessage>&) const override { throw TransportError("judge down", 3); }
};

// Independent ROUGE oracle: clipped n-gram recall and LCS recall.
double oracle_ngram(const std::vector<std::string>& a, const std::vector<std::string>& r, std::size_t n) {
    if (r.size() < n) return 0.0;
    std::map<std::vector<std::string>, int> ref, ans;
    for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref[{r.begin() + long(i), r.begin() + long(i + n)}];
    for (std::size_t i = 0; i + n <= a.size(); ++i) ++ans[{a.begin() + long(i), a.begin() + long(i + n)}];
    double hit = 0;
    for (const auto& [g, c] : ref) hit += std::min(c, ans.count(g) ? ans[g] : 0);
    return hit / double(r.size() - n + 1);
}

double oracle_lcs(const std::vector<std::string>& a, const std::vector<std::string>& r) {
    if (r.empty()) return 0.0;
    std::vector<std::vector<int>> t(a.size() + 1, std::vector<int>(r.size() + 1, 0));
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= r.size(); ++j) {
            t[i][j] = a[i - 1] == r[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
        }
    }
    return double(t[a.size()][r.size()]) / double(r.size());
}

TokenEmbeddings tokens(std::vector<std::string> words, std::vector<std::vector<float>> vecs) {
    TokenEmbeddings t;
    t.tokens = std::move(words);
    for (const auto& v : vecs) t.vectors.append_row(v);
    return t;
}

}  // namespace

TEST_CASE("answer relevancy is the mean cosine, zeroed when non-committal") {
    const HashedNgramEmbedder e;
    const std::string q = "What is the notice period?";
    const auto rec = record(q, "The notice period is 30 days.", {"The notice period is 30 days."});

    const MockJudge same(MockJudge::Overrides{std::vector<std::string>{q, q, q}, false});
    const auto r = answer_relevancy(rec, same, e, 3);
    CHECK(r.mean_cosine == doctest::Approx(1.0));
    CHECK(r.final_score == doctest::Approx(1.0));
    CHECK(r.cosine_scores.size() == 3);

    const MockJudge evasive(MockJudge::Overrides{std::vector<std::string>{q, q, q}, true});
    const auto nc = answer_relevancy(rec, evasive, e, 3);
    CHECK(nc.non_committal);
    CHECK(nc.mean_cosine == doctest::Approx(1.0));
    CHECK(nc.final_score == 0.0);

    const MockJudge heuristic;
    const auto h = answer_relevancy(rec, heuristic, e, 5);
    CHECK(h.generated_questions.size() == 5);
    double mean = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        const double c = cosine(e.embed_one(q), e.embed_one(h.generated_questions[i]));
        CHECK(h.cosine_scores[i] == doctest::Approx(c));
        mean += c / 5;
    }
    CHECK(h.mean_cosine == doctest::Approx(mean));
    CHECK(h.final_score == h.mean_cosine);

    const auto idk = answer_relevancy(record(q, "I don't know.", {"x"}), heuristic, e, 3);
    CHECK(idk.non_committal);
    CHECK(idk.final_score == 0.0);
}

TEST_CASE("answer relevancy retries a wrong question count once, then flags it") {
    const HashedNgramEmbedder e;
    const auto rec = record("q?", "Answer.", {"Answer."});
    FixedJudge two(R"({"questions": ["a?", "b?"], "noncommittal": 0})");
    const auto r = answer_relevancy(rec, two, e, 3);
    CHECK(two.calls == 2);
    CHECK(r.count_mismatch);
    CHECK(r.cosine_scores.size() == 2);

    FixedJudge garbage("not json at all");
    CHECK_THROWS_AS(answer_relevancy(rec, garbage, e, 3), ParseError);
    CHECK(garbage.calls == 2);

    GenerationRecord failed = rec;
    failed.failed = true;
    CHECK_THROWS_AS(answer_relevancy(failed, MockJudge(), e, 3), std::invalid_argument);
}

TEST_CASE("faithfulness") {
    const MockJudge judge;
    const std::string ctx = "The Agreement shall expire and terminate automatically on July 22, 2019.";
    const auto verbatim = faithfulness(record("q", ctx, {ctx}), judge);
    CHECK(verbatim.claims.size() == 1);
    CHECK(verbatim.score == 1.0);

    const auto mixed = faithfulness(record("q", ctx + " Renewal happens on March 3, 2031.", {ctx}), judge);
    REQUIRE(mixed.claims.size() == 2);
    CHECK(mixed.supported == std::vector<bool>{true, false});
    CHECK(mixed.score == 0.5);
    CHECK_FALSE(mixed.transcripts.empty());

    CHECK_THROWS_AS(faithfulness(record("q", "", {ctx}), judge), std::invalid_argument);

    FixedJudge bad(R"({"claims": ["one claim"], "verdicts": "nonsense"})");
    const auto flagged = faithfulness(record("q", "one claim", {ctx}), bad);
    CHECK(flagged.parse_flag);
    CHECK(flagged.score == 0.0);
}

TEST_CASE("ROUGE fixture") {
    const auto s = rouge_recall("a b x", "a b c d");
    CHECK(s.rouge1_recall == 0.5);
    CHECK(s.rouge2_recall == 1.0 / 3.0);
    CHECK(s.rougeL_recall == 0.5);
    CHECK(s.rouge_recall_avg == (0.5 + 1.0 / 3.0 + 0.5) / 3.0);

    const auto same = rouge_recall("The Notice, period.", "the notice period");
    CHECK(same.rouge1_recall == 1.0);
    CHECK(same.rouge2_recall == 1.0);
    CHECK(same.rougeL_recall == 1.0);
    CHECK(same.rouge_recall_avg == 1.0);

    const auto disjoint = rouge_recall("x y z", "a b c");
    CHECK(disjoint.rouge_recall_avg == 0.0);

    const auto one = rouge_recall("a", "a");
    CHECK(one.rouge2_recall == 0.0);
    CHECK_FALSE(one.flags.empty());

    CHECK(rouge_tokens("Hello, World! it's") == std::vector<std::string>{"hello", "world", "it", "s"});
}

TEST_CASE("ROUGE equals a brute-force oracle on short texts") {
    std::mt19937 rng(99);
    const std::vector<std::string> vocab{"a", "b", "c", "d", "e"};
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::string> a, r;
        std::string as, rs;
        for (std::size_t i = 0, n = 1 + rng() % 20; i < n; ++i) {
            a.push_back(vocab[rng() % vocab.size()]);
            as += a.back() + " ";
        }
        for (std::size_t i = 0, n = 1 + rng() % 20; i < n; ++i) {
            r.push_back(vocab[rng() % vocab.size()]);
            rs += r.back() + " ";
        }
        const auto s = rouge_recall(as, rs);
        CHECK(s.rouge1_recall == oracle_ngram(a, r, 1));
        CHECK(s.rouge2_recall == oracle_ngram(a, r, 2));
        CHECK(s.rougeL_recall == oracle_lcs(a, r));
        CHECK(lcs_length(a, r) == static_cast<std::size_t>(std::lround(oracle_lcs(a, r) * double(r.size()))));
    }
}

TEST_CASE("BERTScore") {
    const HashedTokenEmbedder t;
    const auto same = bertscore_f1("notice period thirty days", "notice period thirty days", t);
    CHECK(same.f1 == doctest::Approx(1.0));
    CHECK(same.precision == doctest::Approx(1.0));

    const auto orth = bertscore(tokens({"x"}, {{1, 0}}), tokens({"y"}, {{0, 1}}));
    CHECK(orth.f1 == 0.0);
    const auto neg = bertscore(tokens({"x"}, {{1, 0}}), tokens({"y"}, {{-1, 0}}));
    CHECK(neg.f1 == 0.0);

    std::mt19937 rng(1);
    std::uniform_real_distribution<float> u(-1, 1);
    for (int trial = 0; trial < 50; ++trial) {
        TokenEmbeddings a, b;
        for (std::size_t i = 0, n = 1 + rng() % 6; i < n; ++i) {
            a.tokens.push_back("t");
            const std::vector<float> v{u(rng), u(rng), u(rng)};
            a.vectors.append_row(v);
        }
        for (std::size_t i = 0, n = 1 + rng() % 6; i < n; ++i) {
            b.tokens.push_back("t");
            const std::vector<float> v{u(rng), u(rng), u(rng)};
            b.vectors.append_row(v);
        }
        const auto ab = bertscore(a, b), ba = bertscore(b, a);
        CHECK(std::abs(ab.precision - ba.recall) < 1e-9);
        CHECK(std::abs(ab.f1 - ba.f1) < 1e-9);
        CHECK(ab.f1 >= 0.0);
        CHECK(ab.f1 <= 1.0 + 1e-9);
    }
    const auto r1 = bertscore_f1("the cat", "a dog", t), r2 = bertscore_f1("the cat", "a dog", t);
    CHECK(r1.f1 == r2.f1);
}

TEST_CASE("score_records without a judge still computes lexical metrics") {
    const HashedNgramEmbedder e;
    const HashedTokenEmbedder t;
    std::vector<GenerationRecord> recs{record("q", "notice period", {"notice period is 30 days"})};
    WarningCapture capture;
    const auto scored = score_records(recs, nullptr, e, &t);
    REQUIRE(scored.size() == 1);
    CHECK(scored[0].relevancy.empty());
    CHECK_FALSE(scored[0].faithfulness);
    REQUIRE(scored[0].rouge);
    CHECK(scored[0].rouge->rouge1_recall == doctest::Approx(2.0 / 5.0));
    CHECK(scored[0].bert);
    bool skipped = false;
    for (const auto& f : scored[0].flags) skipped |= f.find("skipped") != std::string::npos;
    CHECK(skipped);

    const DownJudge down;
    const auto scored_down = score_records(recs, &down, e, &t);
    CHECK(scored_down[0].relevancy.empty());
    CHECK(scored_down[0].rouge);
}

TEST_CASE("score_records uses gold references when asked") {
    const HashedNgramEmbedder e;
    std::vector<GenerationRecord> recs{record("q", "thirty days", {"unrelated context"})};
    EvalOptions o;
    o.reference = ReferenceMode::gold;
    const auto scored = score_records(recs, nullptr, e, nullptr, {{"q1", "thirty days"}}, o);
    REQUIRE(scored[0].rouge);
    CHECK(scored[0].rouge->rouge_recall_avg == 1.0);
    CHECK_FALSE(scored[0].bert);
}

TEST_CASE("aggregation means, non-committal rates and column set") {
    const HashedNgramEmbedder e;
    const HashedTokenEmbedder t;
    std::vector<GenerationRecord> recs;
    const std::string ctx = "The notice period is 30 days.";
    for (std::size_t k : {1, 3}) {
        auto a = record("What is the notice period?", ctx, {ctx});
        a.k = k;
        a.record_id = "a" + std::to_string(k);
        auto b = record("What is the notice period?", "I don't know.", {ctx});
        b.k = k;
        b.record_id = "b" + std::to_string(k);
        auto f = b;
        f.failed = true;
        f.record_id = "f" + std::to_string(k);
        recs.insert(recs.end(), {a, b, f});
    }
    const MockJudge judge;
    const auto scored = score_records(recs, &judge, e, &t);
    const auto table = aggregate_metrics(scored, {"template", "model", "k"});
    REQUIRE(table.rows.size() == 2);
    CHECK(table.rows[0].group.at("k") == "1");
    CHECK(table.rows[1].group.at("k") == "3");
    for (const char* col : {"answer_relevancy_n3", "answer_relevancy_n3_no_multiplier", "answer_relevancy_n5",
                            "answer_relevancy_n5_no_multiplier", "faithfulness", "rouge_recall", "bertscore_f1"}) {
        CHECK(std::find(table.metric_columns.begin(), table.metric_columns.end(), col) != table.metric_columns.end());
    }
    const auto& row = table.rows[0];
    CHECK(row.records == 3);
    CHECK(row.failed == 1);
    CHECK(row.non_committal == 1);
    CHECK(row.non_committal_rate == 0.5);
    const auto& s0 = scored[0].relevancy.at(3);
    const auto& s1 = scored[1].relevancy.at(3);
    CHECK(row.metrics.at("answer_relevancy_n3").mean == doctest::Approx((s0.final_score + s1.final_score) / 2));
    CHECK(row.metrics.at("answer_relevancy_n3").count == 2);
    CHECK(row.metrics.at("answer_relevancy_n3_no_multiplier").mean ==
          doctest::Approx((s0.mean_cosine + s1.mean_cosine) / 2));
    for (const auto& [name, m] : row.metrics) {
        CHECK(m.mean >= -1e-12);
        CHECK(m.mean <= 1.0 + 1e-12);
    }

    TempDir dir;
    write_metric_csv(table, dir.path() / "m.csv");
    std::ifstream in(dir.path() / "m.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header.starts_with("template,model,k,records,failed"));
    CHECK(metric_table_json(table)["rows"].size() == 2);
    write_scored_records(dir.path() / "s.jsonl", scored);
    std::ifstream s(dir.path() / "s.jsonl");
    std::size_t lines = 0;
    for (std::string line; std::getline(s, line);) {
        ++lines;
        CHECK(json::parse(line).contains("record_id"));
    }
    CHECK(lines == scored.size());
}

TEST_CASE("a group made only of failed records is omitted") {
    const HashedNgramEmbedder e;
    auto f = record("q", "x", {"x"});
    f.failed = true;
    WarningCapture capture;
    const auto scored = score_records(std::vector{f}, nullptr, e, nullptr);
    CHECK(aggregate_metrics(scored, {"k"}).rows.empty());
    CHECK_FALSE(capture.messages().empty());
}
