#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "legalrag/config.hpp"
#include "legalrag/corpus.hpp"
#include "legalrag/index.hpp"
#include "legalrag/log.hpp"

namespace legalrag {

/// One command invocation: an exclusive, append-only directory
/// <output_dir>/runs/NNNN-<command>-<UTC timestamp>/ with a lock file while
/// running and manifest.json once finished.
class RunContext {
public:
    RunContext(const PipelineConfig& config, const std::string& command);
    ~RunContext();
    RunContext(const RunContext&) = delete;
    RunContext& operator=(const RunContext&) = delete;

    const std::filesystem::path& dir() const noexcept { return dir_; }
    const std::string& command() const noexcept { return command_; }

    class StageTimer {
    public:
        StageTimer(RunContext& run, std::string name);
        ~StageTimer();

    private:
        RunContext& run_;
        std::string name_;
        std::chrono::steady_clock::time_point start_;
    };
    StageTimer stage(std::string name) { return StageTimer(*this, std::move(name)); }

    /// Upstream artifact this run read; digests are checked by downstream commands.
    void add_input(const std::string& role, const std::filesystem::path& path, const std::string& digest);
    /// A file written outside the run directory (shared index cache).
    void add_external_artifact(const std::filesystem::path& path);
    void add_variant(const nlohmann::json& labels);
    void set_field(const std::string& key, nlohmann::json value);

    /// Writes manifest.json atomically and releases the lock.
    void finish();

private:
    void write_manifest(const std::string& status);

    std::string command_;
    std::string config_digest_;
    nlohmann::json config_json_;
    std::filesystem::path dir_;
    std::filesystem::path lock_;
    std::string started_at_;
    std::vector<std::pair<std::string, double>> stage_seconds_;
    nlohmann::json inputs_ = nlohmann::json::object();
    std::vector<std::filesystem::path> external_;
    nlohmann::json variants_ = nlohmann::json::array();
    nlohmann::json extra_ = nlohmann::json::object();
    std::unique_ptr<WarningCapture> warnings_;
    bool finished_ = false;
};

/// Most recent successful run of `command`, if any.
std::optional<std::filesystem::path> latest_run(const std::filesystem::path& output_dir, const std::string& command);

nlohmann::json read_manifest(const std::filesystem::path& run_dir);

/// SHA-256 over the sorted (doc_id, text) pairs.
std::string corpus_digest(const Corpus& corpus);
std::string file_sha256(const std::filesystem::path& path);

struct ResolvedInputs {
    std::filesystem::path corpus;
    std::filesystem::path benchmark;  // may be empty when no benchmark is configured
};

/// Config paths, or the latest sample-mini run when use_mini is set.
ResolvedInputs resolve_inputs(const PipelineConfig& config);

struct IndexLocation {
    std::filesystem::path path;
    std::string digest;
};

/// Content-addressed cache entry for (corpus, chunking, backend).
IndexLocation locate_index(const PipelineConfig& config, const std::string& corpus_digest,
                           const ChunkingConfig& chunking, const ServiceConfig& backend);

const ChunkingConfig& find_chunking(const PipelineConfig& config, const std::string& label);

/// First-stage search over one (chunking, backend, similarity) combination.
class Retriever {
public:
    Retriever(const PipelineConfig& config, const Corpus& corpus, const std::string& corpus_digest,
              const ChunkingConfig& chunking, const std::string& backend_name, const std::string& similarity);

    /// One ranked list per query; scopes (when given) align with queries.
    std::vector<std::vector<ScoredChunk>> search(const std::vector<std::string>& queries, std::size_t n,
                                                 const std::vector<std::optional<std::string>>& scopes) const;

    std::string backend_label() const;

private:
    std::string similarity_;
    std::shared_ptr<const EmbeddingBackend> backend_;
    std::optional<VectorIndex> index_;
    std::optional<Bm25Index> bm25_;
};

std::unique_ptr<QueryTranslator> make_translator(const PipelineConfig& config, const Corpus& corpus);

/// Commands. Each returns its run directory and prints a short report to `out`.
std::filesystem::path cmd_sample_mini(const PipelineConfig& config, std::ostream& out);
std::filesystem::path cmd_index(const PipelineConfig& config, std::ostream& out);
std::filesystem::path cmd_retrieve(const PipelineConfig& config, std::ostream& out);
std::filesystem::path cmd_eval_retrieval(const PipelineConfig& config, std::ostream& out,
                                         const std::optional<std::filesystem::path>& retrieve_run = std::nullopt);
std::filesystem::path cmd_generate(const PipelineConfig& config, std::ostream& out);
std::filesystem::path cmd_eval_generation(const PipelineConfig& config, std::ostream& out,
                                          const std::optional<std::filesystem::path>& generate_run = std::nullopt);

struct AskResult {
    std::filesystem::path run_dir;
    bool generation_failed = false;
};
AskResult cmd_ask(const PipelineConfig& config, const std::string& query, const std::string& domain, std::ostream& out);

}  // namespace legalrag
