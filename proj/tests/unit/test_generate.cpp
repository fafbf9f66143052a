#include <doctest.h>

#include <atomic>
#include <fstream>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <thread>

#include "legalrag/errors.hpp"
#include "legalrag/generate.hpp"
#include "synthetic.hpp"

using namespace legalrag;
using legalrag::testing::TempDir;
using nlohmann::json;

namespace {

Chunk chunk(const std::string& doc, std::size_t start, const std::string& text) {
    const Span s{start, start + text.size()};
    return Chunk{doc, s, text, make_chunk_id(doc, s)};
}

std::vector<ScoredChunk> ranked(const std::vector<Chunk>& chunks) {
    std::vector<ScoredChunk> out;
    for (std::size_t i = 0; i < chunks.size(); ++i) out.push_back({chunks[i], 1.0 - 0.01 * double(i), i + 1});
    return out;
}

/// Fails the first `failures` calls with a retryable transport error.
class FlakyClient final : public LLMClient {
public:
    explicit FlakyClient(int failures) : failures_(failures) {}
    std::string model_name() const override { return "flaky"; }
    ChatResult complete(const std::vector<ChatMessage>&) const override {
        if (calls_++ < failures_) throw TransportError("connection reset", 1);
        return {"ok", "{}", "{}"};
    }
    int calls() const { return calls_; }

private:
    int failures_;
    mutable std::atomic<int> calls_{0};
};

GenerationOptions fast(int attempts) {
    GenerationOptions o;
    o.max_attempts = attempts;
    o.initial_backoff = std::chrono::milliseconds(1);
    return o;
}

}  // namespace

TEST_CASE("render_slots") {
    CHECK(render_slots("Q: {question}", {{"question", "why"}}) == "Q: why");
    CHECK(render_slots("{{literal}} {x}", {{"x", "1"}}) == "{literal} 1");
    CHECK(render_slots("a\n{audience}\nb", {{"audience", ""}}) == "a\nb");
    CHECK_THROWS_AS(render_slots("{missing}", {}), TemplateError);
    CHECK_THROWS_AS(render_slots("{open", {}), TemplateError);
    CHECK_THROWS_AS(render_slots("close}", {}), TemplateError);
    CHECK(template_slots("{b} {a} {{c}} {a}") == std::vector<std::string>{"a", "b"});
}

TEST_CASE("bundled templates load and hash deterministically") {
    for (const char* name : {"baseline", "cot", "custom_legal"}) {
        const PromptTemplate t = load_prompt_template(name);
        CHECK(t.name == name);
        CHECK_FALSE(t.system_text.empty());
        CHECK(t.hash() == load_prompt_template(name).hash());
        CHECK(t.hash().size() == 64);
    }
    CHECK(load_prompt_template("baseline").hash() != load_prompt_template("cot").hash());
    for (const char* name : {"relevancy_questions", "claim_decomposition", "claim_verdicts", "rewrite"}) {
        CHECK_NOTHROW(load_judge_template(name));
    }
    CHECK_THROWS(load_prompt_template("nope"));
    CHECK_THROWS_AS(parse_template("x", "[user]\nonly user"), TemplateError);
}

TEST_CASE("template directory overrides the bundled text") {
    TempDir dir;
    std::filesystem::create_directories(dir.path() / "prompts");
    std::ofstream(dir.path() / "prompts" / "baseline.txt") << "[system]\nS {audience}\n[user]\n{contexts}\n{question}\n";
    const PromptTemplate t = load_prompt_template("baseline", dir.path());
    CHECK(t.system_text.starts_with("S "));
    CHECK(t.hash() != load_prompt_template("baseline").hash());
    std::ofstream(dir.path() / "prompts" / "cot.txt") << "[system]\n{bogus}\n[user]\n{contexts}{question}{audience}\n";
    CHECK_THROWS_AS(load_prompt_template("cot", dir.path()), TemplateError);
}

TEST_CASE("render_prompt includes contexts verbatim and the audience directive") {
    const std::vector<Chunk> ctx{chunk("a.txt", 0, "First clause text."), chunk("a.txt", 100, "Second clause."),
                                 chunk("b.txt", 5, "Third one.")};
    const PromptTemplate base = load_prompt_template("baseline");
    const auto none = render_prompt(base, "What is the term?", ctx, Audience::none);
    for (const auto& c : ctx) CHECK(none.user.find(c.text) != std::string::npos);
    CHECK(none.user.find("What is the term?") != std::string::npos);
    CHECK(none.user.find("[2] a.txt, characters 100-114") != std::string::npos);
    CHECK(none.system.find(base.non_expert_directive) == std::string::npos);
    CHECK(none.system.find(base.expert_directive) == std::string::npos);

    const auto lay = render_prompt(base, "q", ctx, Audience::non_expert);
    CHECK(lay.system.find("plain language") != std::string::npos);
    const auto pro = render_prompt(base, "q", ctx, Audience::expert);
    CHECK(pro.system.find("strong legal grounding") != std::string::npos);

    const auto empty = render_prompt(base, "q", std::vector<Chunk>{}, Audience::none);
    CHECK(empty.user.find(base.no_context_text) != std::string::npos);

    CHECK(render_prompt(base, "q", ctx, Audience::expert).user == pro.user);
    const auto msgs = pro.messages();
    REQUIRE(msgs.size() == 2);
    CHECK(msgs[0].role == "system");
    CHECK(msgs[1].role == "user");

    const auto custom = render_prompt(load_prompt_template("custom_legal"), "q", ctx, Audience::none);
    CHECK(custom.system.find("clause identifier") != std::string::npos);
}

TEST_CASE("format_contexts and parse_context_blocks round trip") {
    const std::vector<Chunk> ctx{chunk("a.txt", 0, "one\ntwo"), chunk("b.txt", 3, "three")};
    const std::string f = format_contexts(ctx);
    CHECK(f.starts_with("[1] a.txt, characters 0-7\n\"\"\"\none\ntwo\n\"\"\""));
    CHECK(parse_context_blocks("Context:\n" + f + "\n\nQuestion: x") == std::vector<std::string>{"one\ntwo", "three"});
}

TEST_CASE("mock LLM modes") {
    const std::vector<Chunk> ctx{
        chunk("m.txt", 0, "The Company may assign this Agreement to an affiliate."),
        chunk("m.txt", 60,
              "This Agreement is effective from July 22, 2014. The Agreement shall expire and terminate automatically "
              "without further notice on July 22, 2019.")};
    const PromptTemplate tpl = load_prompt_template("custom_legal");
    const auto p = render_prompt(tpl, "What is the expiration date of this contract?", ctx, Audience::non_expert);

    const MockLLM extractive;
    const auto answer = extractive.complete(p.messages()).content;
    CHECK(answer.find("July 22, 2019") != std::string::npos);
    CHECK(answer.find("expire") != std::string::npos);

    const MockLLM echo("mock-echo", MockLLM::Mode::echo_first_context);
    CHECK(echo.complete(p.messages()).content == ctx[0].text);

    const auto unrelated = render_prompt(tpl, "Zebra quantum?", ctx, Audience::none);
    CHECK(extractive.complete(unrelated.messages()).content == "I don't know.");

    CHECK(rewrite_query(extractive, "What is the term?") == "What is the term?");
}

TEST_CASE("generate_answer records provenance and respects k") {
    const std::vector<Chunk> chunks{chunk("a.txt", 0, "Alpha clause."), chunk("a.txt", 20, "Beta clause."),
                                    chunk("b.txt", 0, "Gamma clause.")};
    GenerationInput in;
    in.query_id = "q1";
    in.query = in.question = "What does the beta clause say?";
    in.k = 2;
    in.candidates = ranked(chunks);
    const MockLLM echo("mock-echo", MockLLM::Mode::echo_first_context);
    const PromptTemplate tpl = load_prompt_template("baseline");
    const auto rec = generate_answer(echo, tpl, in);
    CHECK_FALSE(rec.failed);
    CHECK(rec.response == "Alpha clause.");
    REQUIRE(rec.contexts.size() == 2);
    CHECK(rec.contexts[1].chunk_id == chunks[1].chunk_id);
    CHECK(rec.contexts[1].text == chunks[1].text);
    CHECK(rec.template_hash == tpl.hash());
    CHECK(rec.model == "mock-echo");
    CHECK(rec.record_id == "q1|baseline|mock-echo|k2|fixed|none");
    CHECK(rec.user_prompt.find("Beta clause.") != std::string::npos);
    CHECK(rec.user_prompt.find("Gamma clause.") == std::string::npos);

    in.k = 5;
    const auto short_rec = generate_answer(echo, tpl, in);
    CHECK(short_rec.contexts.size() == 3);
    CHECK_FALSE(short_rec.warnings.empty());
}

TEST_CASE("context budget truncates from the tail with a flag") {
    const std::vector<Chunk> chunks{chunk("a.txt", 0, std::string(40, 'a')), chunk("a.txt", 40, std::string(40, 'b')),
                                    chunk("a.txt", 80, std::string(40, 'c'))};
    GenerationInput in;
    in.query_id = "q";
    in.question = "q";
    in.k = 3;
    in.candidates = ranked(chunks);
    GenerationOptions opts;
    opts.max_context_chars = 90;
    const auto rec = generate_answer(MockLLM(), load_prompt_template("baseline"), in, opts);
    CHECK(rec.truncated);
    CHECK(rec.dropped_contexts == 1);
    REQUIRE(rec.contexts.size() == 2);
    CHECK(rec.contexts[0].text == chunks[0].text);
    opts.max_context_chars = 10;
    const auto one = generate_answer(MockLLM(), load_prompt_template("baseline"), in, opts);
    CHECK(one.contexts.size() == 1);
}

TEST_CASE("transport failures are retried, then recorded as failed") {
    GenerationInput in;
    in.query_id = "q";
    in.question = "q";
    in.k = 1;
    in.candidates = ranked({chunk("a.txt", 0, "text")});
    const PromptTemplate tpl = load_prompt_template("baseline");

    const FlakyClient recovers(2);
    const auto ok = generate_answer(recovers, tpl, in, fast(3));
    CHECK_FALSE(ok.failed);
    CHECK(ok.attempts == 3);

    const FlakyClient dead(4);
    const auto failed = generate_answer(dead, tpl, in, fast(3));
    CHECK(failed.failed);
    CHECK(failed.error.find("connection reset") != std::string::npos);
    CHECK(dead.calls() == 3);
}

TEST_CASE("run_matrix produces the full product in a fixed order") {
    std::vector<GenerationInput> inputs;
    for (int q = 0; q < 10; ++q) {
        GenerationInput in;
        in.query_id = "q" + std::to_string(q);
        in.question = "question " + std::to_string(q);
        in.k = q % 2 ? 10 : 5;
        std::vector<Chunk> chunks;
        for (std::size_t i = 0; i < 12; ++i) chunks.push_back(chunk("d.txt", i * 10, "clause " + std::to_string(i)));
        in.candidates = ranked(chunks);
        inputs.push_back(std::move(in));
    }
    const std::vector<PromptTemplate> templates{load_prompt_template("baseline"), load_prompt_template("custom_legal")};
    const MockLLM llm;
    const std::vector<const LLMClient*> clients{&llm};
    const std::vector<std::size_t> ks{1, 3, 5, 10};
    MatrixOptions opts;
    opts.max_in_flight = 4;
    const auto records = run_matrix(inputs, templates, clients, ks, opts);
    REQUIRE(records.size() == 80);
    CHECK(records[0].record_id == "q0|baseline|mock-extractive|k1|fixed|none");
    CHECK(records[3].k == 10);
    CHECK(records[4].template_name == "custom_legal");
    CHECK(records[8].query_id == "q1");
    for (const auto& r : records) CHECK(r.contexts.size() == r.k);

    opts.max_in_flight = 1;
    const auto serial = run_matrix(inputs, templates, clients, ks, opts);
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(serial[i].record_id == records[i].record_id);
        CHECK(serial[i].user_prompt == records[i].user_prompt);
    }

    opts.adaptive = true;
    const auto adaptive = run_matrix(inputs, templates, clients, ks, opts);
    REQUIRE(adaptive.size() == 20);
    CHECK(adaptive[0].k == 5);
    CHECK(adaptive[2].k == 10);
    CHECK(adaptive[0].k_mode == "adaptive");

    const auto summary = failure_summary(records);
    CHECK(summary.size() == 8);
    CHECK(summary.at("baseline|mock-extractive|1").total == 10);
    CHECK(summary.at("baseline|mock-extractive|1").failed == 0);
}

TEST_CASE("generation records round trip through JSONL") {
    GenerationInput in;
    in.query_id = "q";
    in.question = "q?";
    in.analysis = json{{"chosen_k", 5}};
    in.audience = Audience::expert;
    in.k = 1;
    in.k_mode = "adaptive";
    in.candidates = ranked({chunk("a.txt", 0, "text \"quoted\"\nline")});
    const auto rec = generate_answer(MockLLM(), load_prompt_template("cot"), in);
    TempDir dir;
    write_records(dir.path() / "r.jsonl", std::vector{rec, rec});
    const auto back = read_records(dir.path() / "r.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(json(back[0]) == json(rec));
    CHECK(back[0].audience == Audience::expert);
}

TEST_CASE("HTTP chat client") {
    httplib::Server server;
    json seen;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen = json::parse(req.body);
        if (seen["messages"][1]["content"] == "bad") {
            res.set_content(R"({"unexpected": true})", "application/json");
            return;
        }
        res.set_content(R"({"choices": [{"message": {"role": "assistant", "content": "Answer [1]."}}]})",
                        "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    DecodingParams d;
    d.temperature = 0.0;
    d.max_tokens = 64;
    const HttpChatClient client(Endpoint{"http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions", "", 5},
                                "gpt-test", d);
    const auto r = client.complete({{"system", "s"}, {"user", "u"}});
    CHECK(r.content == "Answer [1].");
    CHECK(seen["model"] == "gpt-test");
    CHECK(seen["temperature"] == 0.0);
    CHECK(seen["max_tokens"] == 64);
    CHECK(json::parse(r.raw_request)["messages"].size() == 2);
    CHECK(r.raw_response.find("Answer [1].") != std::string::npos);
    try {
        client.complete({{"system", "s"}, {"user", "bad"}});
        FAIL("expected TransportError");
    } catch (const TransportError& e) {
        CHECK_FALSE(e.retryable());
    }
    server.stop();
    t.join();
}

TEST_CASE("rate limiter spaces calls") {
    RateLimiter limiter(1200.0);  // one call every 50 ms
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < 3; ++i) limiter.acquire();
    CHECK(std::chrono::steady_clock::now() - start >= std::chrono::milliseconds(95));
}
