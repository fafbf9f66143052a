#pragma once

#include <filesystem>
#include <map>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "legalrag/corpus.hpp"
#include "legalrag/embedding.hpp"
#include "legalrag/index.hpp"

namespace legalrag {

struct DocSpan {
    std::string doc_id;
    Span span;
};

std::vector<DocSpan> doc_spans(std::span<const ScoredChunk> retrieved);
std::vector<DocSpan> doc_spans(std::span<const GroundTruthSnippet> truth);

/// Sum over retrieved spans of their overlap with the per-document union of
/// truth spans, divided by the summed retrieved length. 0 for no retrieved spans.
double span_precision(std::span<const DocSpan> retrieved, std::span<const DocSpan> truth);

/// Truth characters covered by the union of retrieved spans, divided by the
/// size of the truth union. nullopt when the truth has zero length.
std::optional<double> span_recall(std::span<const DocSpan> retrieved, std::span<const DocSpan> truth);

/// Metrics over the first min(k, size) retrieved chunks.
double precision_at_k(std::span<const ScoredChunk> retrieved, std::span<const GroundTruthSnippet> truth,
                      std::size_t k);
std::optional<double> recall_at_k(std::span<const ScoredChunk> retrieved, std::span<const GroundTruthSnippet> truth,
                                  std::size_t k);

/// Which retrieval configuration produced a run.
struct VariantLabels {
    std::string chunking;
    std::string backend;
    std::string similarity;   // cosine | bm25
    std::string ranking;      // unranked | reranked
    std::string translation;  // on | off

    std::string key() const;  // "chunking_backend_similarity_ranking_translation"
    friend bool operator==(const VariantLabels&, const VariantLabels&) = default;
    friend auto operator<=>(const VariantLabels&, const VariantLabels&) = default;
};

void to_json(nlohmann::json& j, const VariantLabels& v);
void from_json(const nlohmann::json& j, VariantLabels& v);

struct QueryResult {
    std::string query_id;
    std::vector<ScoredChunk> results;
};

struct RetrievalRun {
    VariantLabels variant;
    std::size_t depth = 50;
    std::vector<QueryResult> queries;
    std::vector<std::string> warnings;
};

void save_run(const RetrievalRun& run, const std::filesystem::path& path);
RetrievalRun load_run(const std::filesystem::path& path);

struct PRPoint {
    double precision = 0.0;
    double recall = 0.0;
    std::size_t queries = 0;  // queries averaged (excludes zero-length truth)
};

struct PRCurve {
    VariantLabels variant;
    std::vector<std::size_t> ks;
    std::vector<PRPoint> overall;                         // aligned with ks
    std::map<std::string, std::vector<PRPoint>> by_domain;  // aligned with ks
    std::size_t excluded_queries = 0;
    std::size_t short_lists = 0;  // queries with fewer results than max(ks)
};

/// Macro-averages precision/recall per domain and overall for each k.
/// Throws IntegrityError listing benchmark queries missing from the run.
PRCurve evaluate_run(const RetrievalRun& run, const std::vector<QAPair>& benchmark, std::span<const std::size_t> ks);

/// "1-50", "1,3,5,10" or a mix such as "1-10,20,50".
std::vector<std::size_t> parse_ks(const std::string& spec);

/// One row per (variant, domain, k); domain "overall" holds the aggregate.
void write_pr_csv(std::span<const PRCurve> curves, const std::filesystem::path& path);
nlohmann::json pr_summary(std::span<const PRCurve> curves);

/// Unranked vs reranked precision/recall columns side by side for matching variants.
void write_ranked_comparison_csv(std::span<const PRCurve> curves, const std::filesystem::path& path);

/// Mean over truth snippets of the best cosine similarity between the snippet
/// and any retrieved chunk text. 0 for an empty retrieved list.
double text_similarity_check(std::span<const ScoredChunk> retrieved, std::span<const GroundTruthSnippet> truth,
                             const EmbeddingBackend& backend);

}  // namespace legalrag
