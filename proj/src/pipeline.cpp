#include "legalrag/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <unistd.h>

#include "legalrag/errors.hpp"
#include "legalrag/gen_eval.hpp"
#include "legalrag/generate.hpp"
#include "legalrag/retrieval_eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace legalrag {

namespace {

std::string utc_timestamp(bool compact) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, compact ? "%Y%m%dT%H%M%SZ" : "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw LoadError("cannot write '" + tmp.string() + "'");
        out << text;
        if (!out) throw LoadError("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) {
    write_text_atomic(path, j.dump(2) + "\n");
}

// "0007-eval-retrieval-20261016T101500Z" -> (7, "eval-retrieval")
std::optional<std::pair<unsigned long, std::string>> parse_run_name(const std::string& name) {
    static const std::regex re(R"(^(\d{4,})-(.+)-(\d{8}T\d{6}Z)$)");
    std::smatch m;
    if (!std::regex_match(name, m, re)) return std::nullopt;
    return std::make_pair(std::stoul(m[1].str()), m[2].str());
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (const char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
    return out;
}

}  // namespace

RunContext::RunContext(const PipelineConfig& config, const std::string& command)
    : command_(command),
      config_digest_(config.digest()),
      config_json_(config_to_json(config)),
      started_at_(utc_timestamp(false)),
      warnings_(std::make_unique<WarningCapture>()) {
    const fs::path runs = config.output_dir / "runs";
    fs::create_directories(runs);
    unsigned long next = 1;
    for (const auto& entry : fs::directory_iterator(runs)) {
        if (const auto parsed = parse_run_name(entry.path().filename().string())) next = std::max(next, parsed->first + 1);
    }
    const std::string stamp = utc_timestamp(true);
    for (;; ++next) {
        char num[16];
        std::snprintf(num, sizeof num, "%04lu", next);
        dir_ = runs / (std::string(num) + "-" + command + "-" + stamp);
        if (fs::create_directory(dir_)) break;
    }
    lock_ = dir_ / ".lock";
    FILE* f = std::fopen(lock_.c_str(), "wx");
    if (f == nullptr) throw Error("run directory '" + dir_.string() + "' is locked by another process");
    std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
    std::fclose(f);
}

RunContext::~RunContext() {
    if (!finished_) {
        try {
            write_manifest("failed");
        } catch (...) {
            // The failure that got us here is more useful than this one.
        }
    }
    std::error_code ec;
    fs::remove(lock_, ec);
}

RunContext::StageTimer::StageTimer(RunContext& run, std::string name)
    : run_(run), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}

RunContext::StageTimer::~StageTimer() {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    run_.stage_seconds_.emplace_back(name_, s);
}

void RunContext::add_input(const std::string& role, const fs::path& path, const std::string& digest) {
    inputs_[role] = {{"path", fs::absolute(path).lexically_normal().generic_string()}, {"digest", digest}};
}

void RunContext::add_external_artifact(const fs::path& path) {
    external_.push_back(fs::absolute(path).lexically_normal());
}

void RunContext::add_variant(const json& labels) {
    variants_.push_back(labels);
}

void RunContext::set_field(const std::string& key, json value) {
    extra_[key] = std::move(value);
}

void RunContext::finish() {
    write_manifest("ok");
    finished_ = true;
    std::error_code ec;
    fs::remove(lock_, ec);
}

void RunContext::write_manifest(const std::string& status) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir_)) {
        if (!entry.is_regular_file()) continue;
        const auto name = entry.path().filename().string();
        if (name == "manifest.json" || name == ".lock" || name.ends_with(".tmp")) continue;
        files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    json artifacts = json::array();
    for (const auto& f : files) {
        artifacts.push_back({{"path", fs::relative(f, dir_).generic_string()},
                             {"sha256", file_sha256(f)},
                             {"bytes", fs::file_size(f)}});
    }
    json external = json::array();
    for (const auto& f : external_) {
        external.push_back({{"path", f.generic_string()},
                            {"sha256", fs::exists(f) ? file_sha256(f) : std::string()},
                            {"bytes", fs::exists(f) ? fs::file_size(f) : 0}});
    }
    json stages = json::array();
    for (const auto& [name, s] : stage_seconds_) stages.push_back({{"stage", name}, {"seconds", s}});

    json manifest{{"run_id", dir_.filename().string()},
                  {"command", command_},
                  {"status", status},
                  {"config_digest", config_digest_},
                  {"config", config_json_},
                  {"started_at", started_at_},
                  {"finished_at", utc_timestamp(false)},
                  {"stage_timings", std::move(stages)},
                  {"inputs", inputs_},
                  {"variants", variants_},
                  {"artifacts", std::move(artifacts)},
                  {"external_artifacts", std::move(external)},
                  {"warnings", warnings_ ? warnings_->messages() : std::vector<std::string>{}}};
    for (const auto& [k, v] : extra_.items()) manifest[k] = v;
    write_json(dir_ / "manifest.json", manifest);
}

std::optional<fs::path> latest_run(const fs::path& output_dir, const std::string& command) {
    const fs::path runs = output_dir / "runs";
    if (!fs::is_directory(runs)) return std::nullopt;
    std::optional<std::pair<unsigned long, fs::path>> best;
    for (const auto& entry : fs::directory_iterator(runs)) {
        const auto parsed = parse_run_name(entry.path().filename().string());
        if (!parsed || parsed->second != command) continue;
        if (!fs::exists(entry.path() / "manifest.json")) continue;
        try {
            if (read_manifest(entry.path()).value("status", std::string()) != "ok") continue;
        } catch (const Error&) {
            continue;
        }
        if (!best || parsed->first > best->first) best = std::make_pair(parsed->first, entry.path());
    }
    if (!best) return std::nullopt;
    return best->second;
}

json read_manifest(const fs::path& run_dir) {
    std::ifstream in(run_dir / "manifest.json", std::ios::binary);
    if (!in) throw ValidationError("'" + run_dir.string() + "' has no manifest.json");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("manifest in '" + run_dir.string() + "': " + e.what());
    }
}

std::string corpus_digest(const Corpus& corpus) {
    std::string all;
    for (const auto& d : corpus.documents()) {
        all += d.id();
        all += '\0';
        all += sha256_hex(d.text());
        all += '\n';
    }
    return sha256_hex(all);
}

std::string file_sha256(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

ResolvedInputs resolve_inputs(const PipelineConfig& config) {
    if (!config.use_mini) return {config.corpus, config.benchmark};
    const auto run = latest_run(config.output_dir, "sample-mini");
    if (!run) throw ValidationError("use_mini is set but no sample-mini run exists under '" + config.output_dir.string() + "'");
    return {*run / "corpus", *run / "benchmark_mini.json"};
}

IndexLocation locate_index(const PipelineConfig& config, const std::string& corpus_digest,
                           const ChunkingConfig& chunking, const ServiceConfig& backend) {
    const json key{{"corpus", corpus_digest},
                   {"chunking", chunking},
                   {"backend",
                    {{"name", backend.name}, {"kind", backend.kind}, {"dim", backend.dim}, {"model", backend.model},
                     {"url", backend.url}}}};
    const std::string digest = sha256_hex(key.dump());
    const fs::path path = config.output_dir / "index" /
                          (chunking_label(chunking) + "__" + sanitize(backend.name) + "__" + digest.substr(0, 16) + ".json");
    return {path, digest};
}

const ChunkingConfig& find_chunking(const PipelineConfig& config, const std::string& label) {
    for (const auto& c : config.chunkings) {
        if (chunking_label(c) == label) return c;
    }
    throw ValidationError("chunking '" + label + "' is not configured");
}

Retriever::Retriever(const PipelineConfig& config, const Corpus& corpus, const std::string& corpus_digest,
                     const ChunkingConfig& chunking, const std::string& backend_name, const std::string& similarity)
    : similarity_(similarity) {
    if (similarity == "bm25") {
        bm25_.emplace(chunk_corpus(corpus, chunking));
        return;
    }
    if (similarity != "cosine") throw ValidationError("unknown similarity '" + similarity + "'");
    const ServiceConfig& svc = find_backend(config, backend_name);
    backend_ = make_embedding_backend(svc);
    const auto loc = locate_index(config, corpus_digest, chunking, svc);
    if (!fs::exists(loc.path)) {
        throw ValidationError("no " + chunking_label(chunking) + "/" + svc.name +
                              " index for this corpus; run the index command first");
    }
    if (read_index_digest(loc.path) != loc.digest) {
        throw ProvenanceError("index '" + loc.path.string() + "' was not built from this corpus and configuration");
    }
    index_ = load_index(loc.path, svc.name);
    if (index_->chunking != chunking) throw ProvenanceError("index '" + loc.path.string() + "' has a different chunking");
}

std::string Retriever::backend_label() const {
    return similarity_ == "bm25" ? "lexical" : backend_->name();
}

std::vector<std::vector<ScoredChunk>> Retriever::search(const std::vector<std::string>& queries, std::size_t n,
                                                        const std::vector<std::optional<std::string>>& scopes) const {
    std::vector<std::vector<ScoredChunk>> out(queries.size());
    const auto scope_of = [&](std::size_t i) { return i < scopes.size() ? scopes[i] : std::nullopt; };
    if (bm25_) {
        for (std::size_t i = 0; i < queries.size(); ++i) out[i] = bm25_->search(queries[i], n, scope_of(i));
        return out;
    }
    if (queries.empty()) return out;
    const Matrix q = embed_batch(*backend_, queries);
    for (std::size_t i = 0; i < queries.size(); ++i) out[i] = cosine_search(*index_, q.row(i), n, scope_of(i));
    return out;
}

std::unique_ptr<QueryTranslator> make_translator(const PipelineConfig& config, const Corpus& corpus) {
    TranslatorOptions opts;
    opts.extractor = extractor_mode_from_string(config.extractor);
    opts.thresholds = config.thresholds;
    opts.k_policy = config.k_policy;
    return std::make_unique<QueryTranslator>(corpus, make_embedding_backend(find_backend(config, config.match_backend)),
                                             opts, make_specificity(config.specificity),
                                             make_entity_extractor(config.entity));
}

namespace {

struct LoadedInputs {
    ResolvedInputs paths;
    Corpus corpus;
    std::string corpus_digest;
    std::vector<QAPair> benchmark;
};

LoadedInputs load_inputs(const PipelineConfig& config, RunContext& run, bool need_benchmark) {
    LoadedInputs in;
    in.paths = resolve_inputs(config);
    if (!fs::is_directory(in.paths.corpus)) throw ValidationError("corpus directory '" + in.paths.corpus.string() + "' not found");
    in.corpus = load_corpus(in.paths.corpus);
    if (in.corpus.empty()) throw ValidationError("corpus '" + in.paths.corpus.string() + "' has no documents");
    in.corpus_digest = corpus_digest(in.corpus);
    run.add_input("corpus", in.paths.corpus, in.corpus_digest);
    if (need_benchmark) {
        if (in.paths.benchmark.empty() || !fs::is_regular_file(in.paths.benchmark)) {
            throw ValidationError("benchmark file '" + in.paths.benchmark.string() + "' not found");
        }
        in.benchmark = load_benchmark(in.paths.benchmark, in.corpus);
        if (in.benchmark.empty()) throw ValidationError("benchmark '" + in.paths.benchmark.string() + "' has no queries");
        run.add_input("benchmark", in.paths.benchmark, file_sha256(in.paths.benchmark));
    }
    return in;
}

// Re-loads the inputs an upstream run recorded, refusing if they changed since.
LoadedInputs load_upstream_inputs(const json& manifest, RunContext& run) {
    LoadedInputs in;
    const auto& inputs = manifest.at("inputs");
    in.paths.corpus = inputs.at("corpus").at("path").get<std::string>();
    in.corpus = load_corpus(in.paths.corpus);
    in.corpus_digest = corpus_digest(in.corpus);
    if (in.corpus_digest != inputs["corpus"]["digest"].get<std::string>()) {
        throw ProvenanceError("corpus '" + in.paths.corpus.string() + "' changed since the upstream run");
    }
    run.add_input("corpus", in.paths.corpus, in.corpus_digest);
    if (inputs.contains("benchmark")) {
        in.paths.benchmark = inputs["benchmark"]["path"].get<std::string>();
        const std::string digest = file_sha256(in.paths.benchmark);
        if (digest != inputs["benchmark"]["digest"].get<std::string>()) {
            throw ProvenanceError("benchmark '" + in.paths.benchmark.string() + "' changed since the upstream run");
        }
        in.benchmark = load_benchmark(in.paths.benchmark, in.corpus);
        run.add_input("benchmark", in.paths.benchmark, digest);
    }
    return in;
}

std::optional<std::string> gold_doc(const QAPair& qa) {
    if (qa.snippets.empty()) return std::nullopt;
    return qa.snippets.front().doc_id;
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

fs::path cmd_sample_mini(const PipelineConfig& config, std::ostream& out) {
    PipelineConfig cfg = config;
    cfg.use_mini = false;
    cfg.validate(true);
    if (cfg.benchmark.empty()) throw ValidationError("sample-mini needs a benchmark file");
    RunContext run(cfg, "sample-mini");
    LoadedInputs in;
    {
        auto t = run.stage("load");
        in = load_inputs(cfg, run, true);
    }
    BenchmarkSubset subset;
    {
        auto t = run.stage("sample");
        subset = sample_mini(in.benchmark, cfg.per_domain, cfg.seed);
    }
    {
        auto t = run.stage("write");
        for (const auto& doc_id : subset.selected_docs) {
            const Document* doc = in.corpus.find(doc_id);
            const fs::path dest = run.dir() / "corpus" / fs::path(doc_id);
            fs::create_directories(dest.parent_path());
            std::ofstream f(dest, std::ios::binary | std::ios::trunc);
            f << doc->text();
        }
        save_benchmark(run.dir() / "benchmark_mini.json", subset.qa_pairs);
        json summary{{"seed", cfg.seed},
                     {"per_domain", cfg.per_domain},
                     {"qa_pairs", subset.qa_pairs.size()},
                     {"documents", subset.selected_docs.size()},
                     {"per_domain_count", subset.per_domain_count}};
        write_json(run.dir() / "sample_summary.json", summary);
    }
    out << "sampled " << subset.qa_pairs.size() << " QA pairs over " << subset.selected_docs.size() << " documents";
    for (const auto& [d, n] : subset.per_domain_count) out << " | " << d << ": " << n;
    out << "\n";
    run.finish();
    out << "run: " << run.dir().string() << "\n";
    return run.dir();
}

fs::path cmd_index(const PipelineConfig& config, std::ostream& out) {
    config.validate(true);
    RunContext run(config, "index");
    LoadedInputs in;
    {
        auto t = run.stage("load");
        in = load_inputs(config, run, false);
    }
    // Remote backends are probed before any chunking work starts.
    std::vector<std::shared_ptr<const EmbeddingBackend>> backends;
    {
        auto t = run.stage("probe");
        for (const auto& svc : config.embedding_backends) {
            auto b = make_embedding_backend(svc);
            if (svc.kind == "http") {
                const std::vector<std::string> probe{"probe"};
                b->embed(probe);
            }
            backends.push_back(std::move(b));
        }
    }
    json entries = json::array();
    {
        auto t = run.stage("build");
        for (const auto& chunking : config.chunkings) {
            for (std::size_t bi = 0; bi < config.embedding_backends.size(); ++bi) {
                const auto& svc = config.embedding_backends[bi];
                const auto loc = locate_index(config, in.corpus_digest, chunking, svc);
                std::string status = "built";
                std::size_t n_chunks = 0;
                if (fs::exists(loc.path) && read_index_digest(loc.path) == loc.digest) {
                    status = "up-to-date";
                    out << chunking_label(chunking) << " / " << svc.name << ": up-to-date (" << loc.path.string() << ")\n";
                } else {
                    fs::create_directories(loc.path.parent_path());
                    const VectorIndex index = build_index(in.corpus, chunking, *backends[bi], config.embed_batch_size,
                                                          config.embed_in_flight);
                    n_chunks = index.chunks.size();
                    save_index(index, loc.path, loc.digest);
                    run.add_external_artifact(loc.path);
                    run.add_external_artifact(loc.path.string() + ".digest");
                    out << chunking_label(chunking) << " / " << svc.name << ": built " << n_chunks << " chunks ("
                        << loc.path.string() << ")\n";
                }
                entries.push_back({{"chunking", chunking_label(chunking)},
                                   {"backend", svc.name},
                                   {"path", fs::absolute(loc.path).lexically_normal().generic_string()},
                                   {"digest", loc.digest},
                                   {"status", status}});
            }
        }
    }
    write_json(run.dir() / "indexes.json", json{{"indexes", entries}});
    run.finish();
    out << "run: " << run.dir().string() << "\n";
    return run.dir();
}

fs::path cmd_retrieve(const PipelineConfig& config, std::ostream& out) {
    config.validate(true);
    RunContext run(config, "retrieve");
    LoadedInputs in;
    {
        auto t = run.stage("load");
        in = load_inputs(config, run, true);
    }

    std::vector<std::string> queries;
    for (const auto& qa : in.benchmark) queries.push_back(qa.query);

    const bool any_translation = std::count(config.translation.begin(), config.translation.end(), "on") > 0;
    std::vector<std::optional<std::string>> scopes(in.benchmark.size());
    if (any_translation) {
        auto t = run.stage("translate");
        const auto translator = make_translator(config, in.corpus);
        std::ofstream analysis(run.dir() / "analysis.jsonl", std::ios::binary | std::ios::trunc);
        std::map<std::string, std::size_t> histogram{{"+1", 0}, {"-1", 0}, {"0", 0}};
        for (std::size_t i = 0; i < in.benchmark.size(); ++i) {
            const auto& qa = in.benchmark[i];
            const QueryAnalysis a = translator->analyze(qa.query, qa.domain, gold_doc(qa));
            scopes[i] = a.matched_doc;
            const int score = a.match_score.value_or(0);
            ++histogram[score > 0 ? "+1" : (score < 0 ? "-1" : "0")];
            analysis << json{{"query_id", qa.id}, {"domain", qa.domain}, {"analysis", a}}.dump() << '\n';
        }
        write_json(run.dir() / "match_histogram.json", json{{"histogram", histogram}, {"queries", in.benchmark.size()}});
    }

    const auto reranker = config.rerank ? make_reranker(config) : nullptr;
    fs::create_directories(run.dir() / "runs");
    std::size_t variants = 0;
    {
        auto t = run.stage("search");
        for (const auto& chunking : config.chunkings) {
            for (const auto& similarity : config.similarities) {
                std::vector<std::string> backend_names;
                if (similarity == "bm25") {
                    backend_names.push_back({});
                } else {
                    for (const auto& b : config.embedding_backends) backend_names.push_back(b.name);
                }
                for (const auto& backend_name : backend_names) {
                    const Retriever retriever(config, in.corpus, in.corpus_digest, chunking, backend_name, similarity);
                    for (const auto& translation : config.translation) {
                        const bool on = translation == "on";
                        const auto lists = retriever.search(queries, config.depth,
                                                            on ? scopes : std::vector<std::optional<std::string>>{});
                        std::vector<std::string> rankings{"unranked"};
                        if (reranker) rankings.push_back("reranked");
                        for (const auto& ranking : rankings) {
                            RetrievalRun rr;
                            rr.variant = VariantLabels{chunking_label(chunking), retriever.backend_label(), similarity,
                                                       ranking, translation};
                            rr.depth = config.depth;
                            WarningCapture capture;
                            for (std::size_t i = 0; i < in.benchmark.size(); ++i) {
                                QueryResult qr{in.benchmark[i].id, lists[i]};
                                if (ranking == "reranked" && !qr.results.empty()) {
                                    auto outcome = rerank(*reranker, queries[i], qr.results);
                                    qr.results = std::move(outcome.results);
                                }
                                rr.queries.push_back(std::move(qr));
                            }
                            rr.warnings = capture.messages();
                            save_run(rr, run.dir() / "runs" / (rr.variant.key() + ".json"));
                            run.add_variant(rr.variant);
                            ++variants;
                            out << rr.variant.key() << ": " << rr.queries.size() << " queries, depth " << rr.depth << "\n";
                        }
                    }
                }
            }
        }
    }
    run.set_field("depth", config.depth);
    run.finish();
    out << variants << " retrieval runs written; run: " << run.dir().string() << "\n";
    return run.dir();
}

fs::path cmd_eval_retrieval(const PipelineConfig& config, std::ostream& out, const std::optional<fs::path>& retrieve_run) {
    config.validate(false);
    const auto source = retrieve_run ? retrieve_run : latest_run(config.output_dir, "retrieve");
    if (!source) throw ValidationError("no retrieve run found; run the retrieve command first");
    const json upstream = read_manifest(*source);
    if (upstream.value("command", std::string()) != "retrieve") {
        throw ValidationError("'" + source->string() + "' is not a retrieve run");
    }

    RunContext run(config, "eval-retrieval");
    run.set_field("source_run", fs::absolute(*source).lexically_normal().generic_string());
    LoadedInputs in;
    {
        auto t = run.stage("load");
        in = load_upstream_inputs(upstream, run);
    }
    const auto ks = parse_ks(config.eval_ks);
    std::vector<RetrievalRun> runs;
    for (const auto& f : sorted_files(*source / "runs", ".json")) runs.push_back(load_run(f));
    if (runs.empty()) throw ValidationError("'" + source->string() + "' holds no retrieval runs");

    std::vector<PRCurve> curves;
    {
        auto t = run.stage("evaluate");
        for (const auto& r : runs) {
            curves.push_back(evaluate_run(r, in.benchmark, ks));
            run.add_variant(r.variant);
        }
    }
    const fs::path reports = run.dir() / "reports";
    fs::create_directories(reports);
    write_pr_csv(curves, reports / "pr_curves.csv");
    write_ranked_comparison_csv(curves, reports / "ranked_vs_unranked.csv");
    json summary = pr_summary(curves);

    // Best variant: highest overall recall at the largest k, ties by key.
    std::size_t best = 0;
    for (std::size_t i = 1; i < curves.size(); ++i) {
        const double a = curves[i].overall.back().recall, b = curves[best].overall.back().recall;
        if (a > b || (a == b && curves[i].variant.key() < curves[best].variant.key())) best = i;
    }
    summary["best_variant"] = curves[best].variant.key();
    if (!config.extended_ks.empty()) {
        const auto ext = parse_ks(config.extended_ks);
        if (runs[best].depth >= ext.back()) {
            const PRCurve extended = evaluate_run(runs[best], in.benchmark, ext);
            write_pr_csv(std::span<const PRCurve>(&extended, 1), reports / "pr_curve_extended.csv");
            summary["extended"] = {{"variant", curves[best].variant.key()}, {"max_k", ext.back()}};
        } else {
            summary["extended"] = {{"variant", curves[best].variant.key()},
                                   {"skipped", "retrieval depth " + std::to_string(runs[best].depth) + " < " +
                                                   std::to_string(ext.back())}};
            out << "extended curve skipped: retrieve with depth >= " << ext.back() << " to produce it\n";
        }
    }

    {
        auto t = run.stage("text_similarity");
        const std::size_t k = std::min<std::size_t>(10, ks.back());
        const auto backend = make_embedding_backend(find_backend(config, config.match_backend));
        std::unordered_map<std::string, const QAPair*> by_id;
        for (const auto& qa : in.benchmark) by_id.emplace(qa.id, &qa);
        std::ofstream csv(reports / "text_similarity.csv", std::ios::binary | std::ios::trunc);
        csv << "chunking,backend,similarity,ranking,translation,k,text_similarity\n";
        for (const auto& r : runs) {
            double total = 0.0;
            std::size_t n = 0;
            for (const auto& q : r.queries) {
                const auto it = by_id.find(q.query_id);
                if (it == by_id.end()) continue;
                const auto top = std::span<const ScoredChunk>(q.results).first(std::min(k, q.results.size()));
                total += text_similarity_check(top, it->second->snippets, *backend);
                ++n;
            }
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", n ? total / static_cast<double>(n) : 0.0);
            const auto& v = r.variant;
            csv << v.chunking << ',' << v.backend << ',' << v.similarity << ',' << v.ranking << ',' << v.translation
                << ',' << k << ',' << buf << '\n';
        }
    }
    write_json(reports / "pr_summary.json", summary);

    for (const auto& c : curves) {
        const auto at = [&](std::size_t k) -> const PRPoint* {
            for (std::size_t i = 0; i < c.ks.size(); ++i) {
                if (c.ks[i] == k) return &c.overall[i];
            }
            return nullptr;
        };
        out << c.variant.key();
        for (const std::size_t k : {1, 5, 10, 50}) {
            if (const auto* p = at(k)) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "  P@%zu=%.4f R@%zu=%.4f", k, p->precision, k, p->recall);
                out << buf;
            }
        }
        out << "\n";
    }
    run.finish();
    out << "reports: " << reports.string() << "\n";
    return run.dir();
}

namespace {

std::vector<std::shared_ptr<const LLMClient>> make_models(const PipelineConfig& config) {
    std::vector<std::shared_ptr<const LLMClient>> out;
    // Generation retries are owned by generate_answer, so HTTP clients make one attempt per call.
    for (const auto& m : config.models) out.push_back(make_llm(m, 1));
    return out;
}

Audience audience_for(const QueryAnalysis& a) {
    return a.expertise == Expertise::expert ? Audience::expert : Audience::non_expert;
}

}  // namespace

fs::path cmd_generate(const PipelineConfig& config, std::ostream& out) {
    config.validate(true);
    RunContext run(config, "generate");
    LoadedInputs in;
    {
        auto t = run.stage("load");
        in = load_inputs(config, run, true);
    }
    const auto& variant = config.generation_variant;
    const ChunkingConfig& chunking = find_chunking(config, variant.chunking);
    const Retriever retriever(config, in.corpus, in.corpus_digest, chunking, variant.backend, variant.similarity);
    const auto translator = make_translator(config, in.corpus);
    const auto models = make_models(config);

    std::vector<std::string> queries;
    std::vector<QueryAnalysis> analyses;
    std::vector<std::optional<std::string>> scopes;
    {
        auto t = run.stage("translate");
        for (const auto& qa : in.benchmark) {
            std::string q = qa.query;
            if (config.rewrite) q = rewrite_query(*models.front(), q, config.template_dir);
            QueryAnalysis a = translator->analyze(q, qa.domain, gold_doc(qa));
            scopes.push_back(variant.translation == "on" ? a.matched_doc : std::nullopt);
            queries.push_back(std::move(q));
            analyses.push_back(std::move(a));
        }
    }

    std::size_t depth = *std::max_element(config.generation_ks.begin(), config.generation_ks.end());
    for (const auto& a : analyses) depth = std::max(depth, a.chosen_k);
    std::vector<std::vector<ScoredChunk>> lists;
    {
        auto t = run.stage("retrieve");
        lists = retriever.search(queries, depth, scopes);
    }

    std::vector<PromptTemplate> templates;
    for (const auto& name : config.templates) templates.push_back(load_prompt_template(name, config.template_dir));
    std::vector<const LLMClient*> clients;
    for (const auto& m : models) clients.push_back(m.get());

    MatrixOptions mopts;
    mopts.max_in_flight = config.max_in_flight;
    mopts.generation.max_attempts = config.generation_attempts;
    mopts.generation.max_context_chars = config.max_context_chars;

    std::vector<GenerationRecord> records;
    {
        auto t = run.stage("generate");
        for (const auto& mode : config.generation_modes) {
            const bool adaptive = mode == "adaptive";
            std::vector<GenerationInput> inputs;
            for (std::size_t i = 0; i < in.benchmark.size(); ++i) {
                GenerationInput gi;
                gi.query_id = in.benchmark[i].id;
                gi.query = in.benchmark[i].query;
                gi.question = queries[i];
                gi.domain = in.benchmark[i].domain;
                gi.analysis = analyses[i];
                gi.audience = adaptive ? audience_for(analyses[i]) : Audience::none;
                gi.k = analyses[i].chosen_k;
                gi.candidates = lists[i];
                inputs.push_back(std::move(gi));
            }
            mopts.adaptive = adaptive;
            auto part = run_matrix(inputs, templates, clients, config.generation_ks, mopts);
            records.insert(records.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
        }
    }
    write_records(run.dir() / "records.jsonl", records);

    const auto failures = failure_summary(records);
    json cells = json::object();
    std::size_t failed = 0;
    for (const auto& [cell, f] : failures) {
        cells[cell] = {{"records", f.total}, {"failed", f.failed}};
        failed += f.failed;
    }
    json tpl_hashes = json::object();
    for (const auto& t : templates) tpl_hashes[t.name] = t.hash();
    write_json(run.dir() / "generation_summary.json",
               json{{"records", records.size()},
                    {"failed", failed},
                    {"cells", std::move(cells)},
                    {"template_hashes", std::move(tpl_hashes)},
                    {"variant",
                     {{"chunking", variant.chunking},
                      {"backend", retriever.backend_label()},
                      {"similarity", variant.similarity},
                      {"translation", variant.translation}}}});
    run.finish();
    out << records.size() << " generation records (" << failed << " failed); run: " << run.dir().string() << "\n";
    return run.dir();
}

fs::path cmd_eval_generation(const PipelineConfig& config, std::ostream& out, const std::optional<fs::path>& generate_run) {
    config.validate(false);
    const auto source = generate_run ? generate_run : latest_run(config.output_dir, "generate");
    if (!source) throw ValidationError("no generate run found; run the generate command first");
    const fs::path records_path = *source / "records.jsonl";
    if (!fs::exists(records_path)) throw ValidationError("'" + source->string() + "' has no records.jsonl");
    const auto records = read_records(records_path);
    if (records.empty()) throw ValidationError("'" + records_path.string() + "' holds no generation records");

    RunContext run(config, "eval-generation");
    run.set_field("source_run", fs::absolute(*source).lexically_normal().generic_string());
    run.add_input("records", records_path, file_sha256(records_path));

    std::map<std::string, std::string> gold;
    const ReferenceMode reference = reference_mode_from_string(config.reference);
    if (reference == ReferenceMode::gold) {
        const LoadedInputs in = load_upstream_inputs(read_manifest(*source), run);
        for (const auto& qa : in.benchmark) {
            std::string text;
            for (const auto& s : qa.snippets) text += (text.empty() ? "" : "\n") + s.quote;
            gold[qa.id] = text;
        }
    }

    const auto judge = make_judge(config.judge);
    const auto backend = make_embedding_backend(find_backend(config, config.judge_backend));
    const auto token_backend = make_token_backend(config.token_backend);
    EvalOptions opts;
    opts.question_counts = config.question_counts;
    opts.reference = reference;
    opts.max_in_flight = config.max_in_flight;
    opts.template_dir = config.template_dir;

    std::vector<ScoredRecord> scored;
    {
        auto t = run.stage("score");
        scored = score_records(records, judge.get(), *backend, token_backend.get(), gold, opts);
    }
    const fs::path reports = run.dir() / "reports";
    fs::create_directories(reports);
    write_scored_records(reports / "scored_records.jsonl", scored);

    std::vector<ScoredRecord> fixed;
    bool has_adaptive = false;
    for (const auto& s : scored) {
        if (s.k_mode == "fixed") fixed.push_back(s);
        else has_adaptive = true;
    }
    const MetricTable by_k = aggregate_metrics(fixed.empty() ? scored : fixed, {"template", "model", "k"});
    write_metric_csv(by_k, reports / "metrics_by_template_model_k.csv");
    json metrics{{"by_template_model_k", metric_table_json(by_k)}, {"reference", to_string(reference)},
                 {"judge", judge ? judge->model_name() : "none"}};
    if (has_adaptive) {
        const MetricTable by_mode = aggregate_metrics(scored, {"template", "model", "k_mode"});
        write_metric_csv(by_mode, reports / "metrics_by_mode.csv");
        metrics["by_mode"] = metric_table_json(by_mode);
        std::vector<ScoredRecord> adaptive;
        for (const auto& s : scored) {
            if (s.k_mode == "adaptive") adaptive.push_back(s);
        }
        const MetricTable by_audience = aggregate_metrics(adaptive, {"template", "model", "audience"});
        write_metric_csv(by_audience, reports / "metrics_adaptive_by_audience.csv");
        metrics["adaptive_by_audience"] = metric_table_json(by_audience);
    }
    write_json(reports / "metrics.json", metrics);

    for (const auto& row : by_k.rows) {
        out << row.group.at("template") << " / " << row.group.at("model") << " / k=" << row.group.at("k");
        for (const char* col : {"faithfulness", "answer_relevancy_n3", "bertscore_f1", "rouge_recall"}) {
            const auto it = row.metrics.find(col);
            if (it == row.metrics.end() || it->second.count == 0) continue;
            char buf[64];
            std::snprintf(buf, sizeof buf, "  %s=%.4f", col, it->second.mean);
            out << buf;
        }
        out << "\n";
    }
    run.finish();
    out << "reports: " << reports.string() << "\n";
    return run.dir();
}

AskResult cmd_ask(const PipelineConfig& config, const std::string& query, const std::string& domain, std::ostream& out) {
    config.validate(true);
    if (trim(query).empty()) throw ValidationError("ask needs a non-empty query");
    RunContext run(config, "ask");
    LoadedInputs in;
    {
        auto t = run.stage("load");
        in = load_inputs(config, run, false);
    }
    const auto& variant = config.generation_variant;
    const ChunkingConfig& chunking = find_chunking(config, variant.chunking);
    const Retriever retriever(config, in.corpus, in.corpus_digest, chunking, variant.backend, variant.similarity);
    const auto models = make_models(config);

    std::string q = query;
    if (config.rewrite) q = rewrite_query(*models.front(), q, config.template_dir);
    const QueryAnalysis analysis = make_translator(config, in.corpus)->analyze(q, domain);
    const std::optional<std::string> scope = variant.translation == "on" ? analysis.matched_doc : std::nullopt;
    const auto lists = retriever.search({q}, analysis.chosen_k, {scope});

    GenerationInput gi;
    gi.query_id = "ask";
    gi.query = query;
    gi.question = q;
    gi.domain = domain;
    gi.analysis = analysis;
    gi.audience = audience_for(analysis);
    gi.k = analysis.chosen_k;
    gi.k_mode = "adaptive";
    gi.candidates = lists.front();
    GenerationOptions gopts;
    gopts.max_attempts = config.generation_attempts;
    gopts.max_context_chars = config.max_context_chars;
    const PromptTemplate tpl = load_prompt_template(config.templates.front(), config.template_dir);
    const GenerationRecord rec = generate_answer(*models.front(), tpl, gi, gopts);
    write_records(run.dir() / "record.jsonl", std::span<const GenerationRecord>(&rec, 1));

    if (analysis.matched_doc) {
        out << "Matched file: " << *analysis.matched_doc << " (similarity " << analysis.match_similarity << ")\n";
    } else {
        out << "No document matched the reference; searched the whole corpus.\n";
    }
    out << "Expertise: " << to_string(analysis.expertise) << " (Dale-Chall " << analysis.readability << ")\n";
    out << "Specificity: " << to_string(analysis.specificity) << "\n";
    out << "K: " << analysis.chosen_k << "\n";
    if (rec.failed) {
        out << "Generation failed: " << rec.error << "\nRetrieved chunks:\n";
        for (const auto& c : rec.contexts) out << "  [" << c.rank << "] " << c.chunk_id << "\n";
    } else {
        out << "Answer: " << rec.response << "\nSources:";
        for (const auto& c : rec.contexts) out << " " << c.chunk_id;
        out << "\n";
    }
    run.finish();
    return AskResult{run.dir(), rec.failed};
}

}  // namespace legalrag
