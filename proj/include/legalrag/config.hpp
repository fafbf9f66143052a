#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "legalrag/chunker.hpp"
#include "legalrag/embedding.hpp"
#include "legalrag/generate.hpp"
#include "legalrag/query.hpp"
#include "legalrag/rerank.hpp"

namespace legalrag {

/// A pluggable service: an offline implementation ("hashed", "mock", "heuristic",
/// "embedding", "identity") or a remote one ("http").
struct ServiceConfig {
    std::string name;
    std::string kind;
    std::string url;
    std::string model;
    std::string api_key_env;  // token is read from this variable, never from the file
    std::string backend;      // embedding backend used by an "embedding" reranker
    int timeout_seconds = 60;
    std::size_t dim = 256;
    int max_attempts = 3;
    double requests_per_minute = 0.0;
    DecodingParams decoding;

    static ServiceConfig of(std::string name, std::string kind) {
        ServiceConfig s;
        s.name = std::move(name);
        s.kind = std::move(kind);
        return s;
    }

    Endpoint endpoint() const;
    RetryPolicy retry() const;
};

void to_json(nlohmann::json& j, const ServiceConfig& s);
/// `defaults` supplies fields the JSON omits.
ServiceConfig service_from_json(const nlohmann::json& j, const ServiceConfig& defaults);

/// Which index and search path generation and `ask` retrieve from.
struct GenerationVariant {
    std::string chunking = "rcts";
    std::string backend;  // empty: first embedding backend
    std::string similarity = "cosine";
    std::string translation = "on";
};

struct PipelineConfig {
    std::filesystem::path corpus;
    std::filesystem::path benchmark;
    std::filesystem::path output_dir = "out";
    std::uint64_t seed = 42;

    std::size_t per_domain = 194;
    /// Read corpus and benchmark from the latest sample-mini run.
    bool use_mini = false;

    std::vector<ChunkingConfig> chunkings{ChunkingConfig{}};
    std::vector<ServiceConfig> embedding_backends{ServiceConfig::of("hashed-char3-d256", "hashed")};
    std::size_t embed_batch_size = 32;
    std::size_t embed_in_flight = 1;

    std::vector<std::string> similarities{"cosine"};
    std::size_t depth = 50;
    bool rerank = false;
    ServiceConfig reranker = ServiceConfig::of("embedding-reranker", "embedding");
    std::vector<std::string> translation{"off"};

    std::string extractor = "auto";
    ThresholdTable thresholds;
    KPolicy k_policy;
    ServiceConfig specificity = ServiceConfig::of("heuristic", "heuristic");
    ServiceConfig entity = ServiceConfig::of("heuristic", "heuristic");
    std::string match_backend;  // empty: first embedding backend
    bool rewrite = false;

    std::string eval_ks = "1-50";
    std::string extended_ks = "1-300";

    std::vector<std::string> templates{"custom_legal"};
    std::optional<std::filesystem::path> template_dir;
    std::vector<ServiceConfig> models{ServiceConfig::of("mock-extractive", "mock")};
    std::vector<std::size_t> generation_ks{1, 3, 5, 10};
    /// "fixed": every k in generation_ks, no audience directive.
    /// "adaptive": chosen_k per query plus the expertise audience directive.
    std::vector<std::string> generation_modes{"fixed"};
    GenerationVariant generation_variant;
    std::size_t max_in_flight = 4;
    int generation_attempts = 3;
    std::size_t max_context_chars = 0;

    ServiceConfig judge = ServiceConfig::of("mock-judge", "mock");
    std::string judge_backend;  // embedding backend for answer relevancy; empty: first
    ServiceConfig token_backend = ServiceConfig::of("hashed-token", "hashed");
    std::vector<std::size_t> question_counts{3, 5};
    std::string reference = "contexts";

    /// Throws ValidationError naming every problem. With `check_inputs`, the
    /// corpus and benchmark paths must exist (skipped under use_mini).
    void validate(bool check_inputs) const;

    /// SHA-256 of the canonical JSON form, output_dir excluded.
    std::string digest() const;
};

nlohmann::json config_to_json(const PipelineConfig& c);
/// Relative paths resolve against `base_dir`.
PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
/// Throws ValidationError for unreadable or malformed files.
PipelineConfig load_config(const std::filesystem::path& path);

/// "rcts" or "naive", suffixed with "-<max_chars>" when max_chars is not 500.
std::string chunking_label(const ChunkingConfig& c);

/// Instantiates configured services. Throws ValidationError on unknown kinds.
std::shared_ptr<const EmbeddingBackend> make_embedding_backend(const ServiceConfig& s);
std::shared_ptr<const TokenEmbeddingBackend> make_token_backend(const ServiceConfig& s);  // null for kind "none"
std::shared_ptr<const LLMClient> make_llm(const ServiceConfig& s, int max_attempts_override = 0);
/// kind "mock" yields the offline MockJudge; "none" yields null.
std::shared_ptr<const LLMClient> make_judge(const ServiceConfig& s);
std::shared_ptr<const SpecificityClassifier> make_specificity(const ServiceConfig& s);
std::shared_ptr<const EntityExtractor> make_entity_extractor(const ServiceConfig& s);
std::shared_ptr<const Reranker> make_reranker(const PipelineConfig& c);

const ServiceConfig& find_backend(const PipelineConfig& c, const std::string& name);

}  // namespace legalrag
