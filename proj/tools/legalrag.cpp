// Command-line front end: legalrag <command> --config PATH [--out DIR] [--seed N]
#include <CLI11.hpp>
#include <iostream>
#include <spdlog/spdlog.h>

#include "legalrag/errors.hpp"
#include "legalrag/pipeline.hpp"

namespace fs = std::filesystem;
using namespace legalrag;

namespace {

enum ExitCode { ok = 0, validation = 1, runtime = 2 };

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Legal retrieval-augmented generation pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    bool verbose = false;
    app.add_option("--config", config_path, "Pipeline configuration (JSON)")->required();
    app.add_option("--out", out_dir, "Output directory (overrides the config)");
    app.add_option("--seed", seed, "Random seed (overrides the config)");
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    auto* sample = app.add_subcommand("sample-mini", "Draw a balanced, document-minimal benchmark subset");
    std::optional<std::size_t> per_domain;
    sample->add_option("--per-domain", per_domain, "QA pairs per domain");

    auto* index = app.add_subcommand("index", "Chunk and embed the corpus");

    auto* retrieve = app.add_subcommand("retrieve", "Run every configured retrieval variant");
    std::optional<std::size_t> depth;
    retrieve->add_option("--depth", depth, "Candidates kept per query");

    auto* eval_ret = app.add_subcommand("eval-retrieval", "Precision/recall curves for a retrieve run");
    std::optional<std::string> source_run;
    std::optional<std::string> ks;
    eval_ret->add_option("--run", source_run, "Retrieve run directory (default: latest)");
    eval_ret->add_option("--ks", ks, "k values, e.g. 1-50 or 1,3,5");

    auto* generate = app.add_subcommand("generate", "Generate answers over the template x model x k matrix");
    bool rewrite = false;
    generate->add_flag("--rewrite", rewrite, "Rewrite queries with the first model before retrieval");

    auto* eval_gen = app.add_subcommand("eval-generation", "Score a generate run");
    eval_gen->add_option("--run", source_run, "Generate run directory (default: latest)");

    auto* ask = app.add_subcommand("ask", "Answer one query end to end");
    std::string query;
    std::string domain;
    ask->add_option("query", query, "Question text")->required();
    ask->add_option("--domain", domain, "Domain label for threshold lookup");
    ask->add_flag("--rewrite", rewrite, "Rewrite the query first");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : validation;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

    try {
        PipelineConfig config = load_config(config_path);
        if (out_dir) config.output_dir = *out_dir;
        if (seed) config.seed = *seed;
        if (per_domain) config.per_domain = *per_domain;
        if (depth) config.depth = *depth;
        if (ks) config.eval_ks = *ks;
        if (rewrite) config.rewrite = true;
        const std::optional<fs::path> run = source_run ? std::optional<fs::path>(*source_run) : std::nullopt;

        if (*sample) {
            cmd_sample_mini(config, std::cout);
        } else if (*index) {
            cmd_index(config, std::cout);
        } else if (*retrieve) {
            cmd_retrieve(config, std::cout);
        } else if (*eval_ret) {
            cmd_eval_retrieval(config, std::cout, run);
        } else if (*generate) {
            cmd_generate(config, std::cout);
        } else if (*eval_gen) {
            cmd_eval_generation(config, std::cout, run);
        } else if (*ask) {
            const AskResult r = cmd_ask(config, query, domain, std::cout);
            if (r.generation_failed) return runtime;
        }
        return ok;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return validation;
    } catch (const ProvenanceError& e) {
        std::cerr << "provenance error: " << e.what() << "\n";
        return validation;
    } catch (const IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return validation;
    } catch (const SamplingError& e) {
        std::cerr << "sampling error: " << e.what() << "\n";
        return validation;
    } catch (const std::exception& e) {
        std::cerr << "failed: " << e.what() << "\n";
        return runtime;
    }
}
