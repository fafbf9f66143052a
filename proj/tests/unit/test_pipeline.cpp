#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "legalrag/errors.hpp"
#include "legalrag/pipeline.hpp"
#include "legalrag/retrieval_eval.hpp"
#include "synthetic.hpp"

using namespace legalrag;
using legalrag::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Workspace {
    TempDir dir{"legalrag-pipeline"};
    PipelineConfig config;

    explicit Workspace(std::size_t queries = 20) {
        const auto set = legalrag::testing::make_synthetic({.docs = 8, .doc_chars = 1500, .queries = queries});
        legalrag::testing::write_synthetic(set, dir.path());
        config.corpus = dir.path() / "corpus";
        config.benchmark = dir.path() / "benchmark.json";
        config.output_dir = dir.path() / "out";
        config.generation_ks = {1, 3};
        config.question_counts = {3};
        config.extended_ks = "";
    }
};

std::vector<std::string> manifest_paths(const fs::path& run) {
    std::vector<std::string> out;
    const json manifest = read_manifest(run);
    for (const auto& a : manifest["artifacts"]) out.push_back(a["path"]);
    return out;
}

int run_cli(const std::string& args) {
    const int rc = std::system((std::string(LEGALRAG_CLI) + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("run directories are numbered, locked and described by a manifest") {
    Workspace ws;
    fs::path first, second;
    {
        RunContext run(ws.config, "probe");
        first = run.dir();
        CHECK(fs::exists(first / ".lock"));
        std::ofstream(first / "a.txt") << "x";
        fs::create_directories(first / "sub");
        std::ofstream(first / "sub" / "b.txt") << "y";
        { auto t = run.stage("work"); }
        run.finish();
    }
    CHECK_FALSE(fs::exists(first / ".lock"));
    const json m = read_manifest(first);
    CHECK(m["status"] == "ok");
    CHECK(m["config_digest"] == ws.config.digest());
    const auto listed = manifest_paths(first);
    CHECK(listed == std::vector<std::string>{"a.txt", "sub/b.txt"});
    CHECK(m["stage_timings"][0]["stage"] == "work");
    CHECK(first.filename().string().starts_with("0001-probe-"));

    {
        RunContext run(ws.config, "probe");
        second = run.dir();
    }  // abandoned without finish()
    CHECK(second.filename().string().starts_with("0002-probe-"));
    CHECK(read_manifest(second)["status"] == "failed");
    CHECK(latest_run(ws.config.output_dir, "probe") == first);
    CHECK_FALSE(latest_run(ws.config.output_dir, "other"));
}

TEST_CASE("index builds one file per chunking and backend, then reports up-to-date") {
    Workspace ws;
    ChunkingConfig naive;
    naive.strategy = ChunkStrategy::naive;
    ws.config.chunkings = {naive, ChunkingConfig{}};
    auto second_backend = ServiceConfig::of("hashed-char3-d64", "hashed");
    second_backend.dim = 64;
    ws.config.embedding_backends.push_back(second_backend);
    std::ostringstream out;
    const fs::path run = cmd_index(ws.config, out);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(ws.config.output_dir / "index")) files += e.path().extension() == ".json";
    CHECK(files == 4);
    CHECK(read_manifest(run)["external_artifacts"].size() == 8);

    std::ostringstream again;
    const fs::path run2 = cmd_index(ws.config, again);
    CHECK(again.str().find("up-to-date") != std::string::npos);
    CHECK(read_manifest(run2)["external_artifacts"].empty());
}

TEST_CASE("index fails fast on a missing corpus") {
    Workspace ws;
    ws.config.corpus = ws.dir.path() / "nowhere";
    auto remote = ServiceConfig::of("remote", "http");
    remote.url = "http://127.0.0.1:1/v1/embeddings";
    ws.config.embedding_backends = {remote};
    std::ostringstream out;
    CHECK_THROWS_AS(cmd_index(ws.config, out), ValidationError);
    CHECK_FALSE(fs::exists(ws.config.output_dir / "runs"));
}

TEST_CASE("unreachable embedding service fails before chunking") {
    Workspace ws;
    auto remote = ServiceConfig::of("remote", "http");
    remote.url = "http://127.0.0.1:1/v1/embeddings";
    remote.max_attempts = 1;
    remote.timeout_seconds = 1;
    ws.config.embedding_backends = {remote};
    std::ostringstream out;
    CHECK_THROWS_AS(cmd_index(ws.config, out), TransportError);
    CHECK_FALSE(fs::exists(ws.config.output_dir / "index"));
}

TEST_CASE("retrieve with translation restricts results to the matched file") {
    Workspace ws;
    ws.config.similarities = {"cosine", "bm25"};
    ws.config.translation = {"off", "on"};
    ws.config.rerank = true;
    std::ostringstream out;
    CHECK_THROWS_AS(cmd_retrieve(ws.config, out), ValidationError);  // no index yet
    cmd_index(ws.config, out);
    const fs::path run = cmd_retrieve(ws.config, out);
    std::size_t runs = 0;
    for (const auto& e : fs::directory_iterator(run / "runs")) runs += e.path().extension() == ".json";
    CHECK(runs == 8);  // {cosine, bm25} x {off, on} x {unranked, reranked}

    std::map<std::string, std::optional<std::string>> matched;
    std::ifstream analysis(run / "analysis.jsonl");
    for (std::string line; std::getline(analysis, line);) {
        const json j = json::parse(line);
        matched[j["query_id"]] = j["analysis"]["matched_doc"].is_null()
                                     ? std::nullopt
                                     : std::optional<std::string>(j["analysis"]["matched_doc"].get<std::string>());
    }
    const RetrievalRun scoped = load_run(run / "runs" / "rcts_hashed-char3-d256_cosine_unranked_on.json");
    CHECK(scoped.depth == 50);
    for (const auto& q : scoped.queries) {
        if (!matched.at(q.query_id)) continue;
        for (const auto& r : q.results) CHECK(r.chunk.doc_id == *matched.at(q.query_id));
    }
    const RetrievalRun open = load_run(run / "runs" / "rcts_lexical_bm25_unranked_off.json");
    std::set<std::string> docs;
    for (const auto& r : open.queries.front().results) docs.insert(r.chunk.doc_id);
    CHECK(docs.size() > 1);
    const json hist = json::parse(std::ifstream(run / "match_histogram.json"));
    CHECK(hist["histogram"]["+1"].get<int>() + hist["histogram"]["-1"].get<int>() + hist["histogram"]["0"].get<int>() == 20);

    // Evaluation refuses a benchmark that changed after retrieval.
    const fs::path reports = cmd_eval_retrieval(ws.config, out, run) / "reports";
    CHECK(fs::exists(reports / "pr_curves.csv"));
    CHECK(fs::exists(reports / "ranked_vs_unranked.csv"));
    CHECK(fs::exists(reports / "text_similarity.csv"));
    CHECK(json::parse(std::ifstream(reports / "pr_summary.json")).contains("best_variant"));
    std::ofstream(ws.config.benchmark, std::ios::app) << " ";
    CHECK_THROWS_AS(cmd_eval_retrieval(ws.config, out, run), ProvenanceError);
}

TEST_CASE("retrieval refuses a benchmark whose quotes do not match the corpus") {
    Workspace ws;
    std::ostringstream out;
    cmd_index(ws.config, out);
    json bench = json::parse(std::ifstream(ws.config.benchmark));
    bench["tests"][0]["snippets"][0]["answer"] = "tampered";
    std::ofstream(ws.config.benchmark) << bench.dump();
    CHECK_THROWS_AS(cmd_retrieve(ws.config, out), IntegrityError);
}

TEST_CASE("extended curve is produced only when retrieval was deep enough") {
    Workspace ws;
    ws.config.extended_ks = "1-60";
    ws.config.depth = 60;
    std::ostringstream out;
    cmd_index(ws.config, out);
    cmd_retrieve(ws.config, out);
    const fs::path reports = cmd_eval_retrieval(ws.config, out) / "reports";
    CHECK(fs::exists(reports / "pr_curve_extended.csv"));

    ws.config.depth = 50;
    cmd_retrieve(ws.config, out);
    std::ostringstream notice;
    const fs::path shallow = cmd_eval_retrieval(ws.config, notice) / "reports";
    CHECK_FALSE(fs::exists(shallow / "pr_curve_extended.csv"));
    CHECK(notice.str().find("extended curve skipped") != std::string::npos);
}

TEST_CASE("generate and eval-generation over fixed and adaptive modes") {
    Workspace ws(8);
    ws.config.templates = {"baseline", "custom_legal"};
    ws.config.generation_modes = {"fixed", "adaptive"};
    std::ostringstream out;
    CHECK_THROWS_AS(cmd_eval_generation(ws.config, out), ValidationError);  // nothing generated yet
    cmd_index(ws.config, out);
    const fs::path gen = cmd_generate(ws.config, out);
    const auto records = read_records(gen / "records.jsonl");
    CHECK(records.size() == 8 * 2 * 2 + 8 * 2);
    for (const auto& r : records) {
        CHECK_FALSE(r.failed);
        if (r.k_mode == "adaptive") {
            CHECK(r.audience != Audience::none);
            CHECK(r.k == r.analysis["chosen_k"].get<std::size_t>());
        }
    }
    const json summary = json::parse(std::ifstream(gen / "generation_summary.json"));
    CHECK(summary["failed"] == 0);

    const fs::path eval = cmd_eval_generation(ws.config, out);
    const fs::path reports = eval / "reports";
    for (const char* f : {"scored_records.jsonl", "metrics_by_template_model_k.csv", "metrics_by_mode.csv", "metrics.json"}) {
        CHECK(fs::exists(reports / f));
    }
    const json metrics = json::parse(std::ifstream(reports / "metrics.json"));
    CHECK(metrics["by_template_model_k"]["rows"].size() == 4);
    const auto paths = manifest_paths(eval);
    CHECK(std::find(paths.begin(), paths.end(), "reports/metrics.json") != paths.end());

    // An empty records file is rejected.
    std::ofstream(gen / "records.jsonl", std::ios::trunc).flush();
    CHECK_THROWS_AS(cmd_eval_generation(ws.config, out, gen), ValidationError);
}

TEST_CASE("sample-mini feeds later commands") {
    Workspace ws(40);
    ws.config.per_domain = 5;
    std::ostringstream out;
    const fs::path mini = cmd_sample_mini(ws.config, out);
    const json s = json::parse(std::ifstream(mini / "sample_summary.json"));
    CHECK(s["qa_pairs"] == 20);
    ws.config.use_mini = true;
    const auto inputs = resolve_inputs(ws.config);
    CHECK(inputs.corpus == mini / "corpus");
    const Corpus c = load_corpus(inputs.corpus);
    CHECK(load_benchmark(inputs.benchmark, c).size() == 20);
    CHECK(c.size() == s["documents"].get<std::size_t>());

    ws.config.per_domain = 50;
    ws.config.use_mini = false;
    CHECK_THROWS_AS(cmd_sample_mini(ws.config, out), SamplingError);
}

TEST_CASE("ask prints the answer with its provenance") {
    Workspace ws;
    std::ostringstream out;
    cmd_index(ws.config, out);
    const json bench = json::parse(std::ifstream(ws.config.benchmark));
    const std::string query = bench["tests"][0]["query"];
    std::ostringstream answer;
    const AskResult r = cmd_ask(ws.config, query, "ContractNLI", answer);
    CHECK_FALSE(r.generation_failed);
    const std::string text = answer.str();
    CHECK(text.find("Matched file: " + bench["tests"][0]["snippets"][0]["file_path"].get<std::string>()) != std::string::npos);
    CHECK(text.find("Expertise: ") != std::string::npos);
    CHECK(text.find("Specificity: ") != std::string::npos);
    CHECK(text.find("K: ") != std::string::npos);
    CHECK(text.find("Answer: ") != std::string::npos);
    CHECK(text.find("Sources: ") != std::string::npos);

    std::ostringstream unmatched;
    cmd_ask(ws.config, "what is the renewal period?", "", unmatched);
    CHECK(unmatched.str().find("searched the whole corpus") != std::string::npos);

    auto down = ServiceConfig::of("remote-llm", "http");
    down.url = "http://127.0.0.1:1/v1/chat/completions";
    down.timeout_seconds = 1;
    ws.config.models = {down};
    ws.config.generation_attempts = 1;
    std::ostringstream failed;
    const AskResult f = cmd_ask(ws.config, query, "", failed);
    CHECK(f.generation_failed);
    CHECK(failed.str().find("Generation failed") != std::string::npos);
    CHECK(failed.str().find("Retrieved chunks") != std::string::npos);
}

TEST_CASE("command-line exit codes") {
    Workspace ws;
    const fs::path cfg = ws.dir.path() / "cfg.json";
    std::ofstream(cfg) << json{{"corpus", "corpus"}, {"benchmark", "benchmark.json"}}.dump();
    const std::string base = "--config " + cfg.string() + " --out " + (ws.dir.path() / "cli-out").string();
    CHECK(run_cli(base + " index") == 0);
    CHECK(run_cli(base + " retrieve --depth 60") == 0);
    CHECK(run_cli(base + " eval-retrieval --ks 1-20") == 0);
    CHECK(run_cli(base + " eval-retrieval --ks 0") == 1);
    CHECK(run_cli(base + " bogus-command") == 1);
    CHECK(run_cli("--config " + (ws.dir.path() / "missing.json").string() + " index") == 1);

    std::ofstream(ws.dir.path() / "down.json")
        << json{{"corpus", "corpus"},
                {"generation", {{"models", {{{"name", "remote"}, {"kind", "http"}, {"url", "http://127.0.0.1:1/v1/chat"},
                                              {"timeout_seconds", 1}}}},
                                {"max_attempts", 1}}}}
               .dump();
    CHECK(run_cli("--config " + (ws.dir.path() / "down.json").string() + " --out " +
                  (ws.dir.path() / "cli-out").string() + " ask \"What is the renewal period?\"") == 2);
}
