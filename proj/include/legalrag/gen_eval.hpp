#pragma once

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "legalrag/embedding.hpp"
#include "legalrag/generate.hpp"

namespace legalrag {

struct RelevancyResult {
    std::size_t n_questions = 3;
    std::vector<std::string> generated_questions;
    std::vector<double> cosine_scores;
    double mean_cosine = 0.0;
    bool non_committal = false;
    double final_score = 0.0;  // mean_cosine, or 0 when non_committal
    bool count_mismatch = false;
    nlohmann::json transcripts = nlohmann::json::array();
};

/// Asks the judge for `n_questions` questions answered by the record's response
/// plus a non-committal verdict, then averages the cosine between each question
/// and the record's question. A wrong question count is retried once; after
/// that the available questions are scored and count_mismatch is set.
/// Throws ParseError when the judge never returns usable JSON or no questions,
/// and std::invalid_argument for a failed or empty record.
RelevancyResult answer_relevancy(const GenerationRecord& record, const LLMClient& judge,
                                 const EmbeddingBackend& backend, std::size_t n_questions = 3,
                                 const std::optional<std::filesystem::path>& template_dir = std::nullopt);

struct FaithfulnessResult {
    std::vector<std::string> claims;
    std::vector<bool> supported;
    std::vector<bool> parse_failed;  // verdict missing after the retry
    double score = 0.0;
    bool parse_flag = false;
    nlohmann::json transcripts = nlohmann::json::array();
};

/// Decomposes the response into claims, then asks for one verdict per claim
/// given only the record's contexts. score = supported / claims.
/// Throws std::invalid_argument for a failed or empty record.
FaithfulnessResult faithfulness(const GenerationRecord& record, const LLMClient& judge,
                                const std::optional<std::filesystem::path>& template_dir = std::nullopt);

/// Lowercase, ASCII punctuation replaced by spaces, whitespace split.
std::vector<std::string> rouge_tokens(std::string_view text);

struct RougeScores {
    double rouge1_recall = 0.0;
    double rouge2_recall = 0.0;
    double rougeL_recall = 0.0;
    double rouge_recall_avg = 0.0;
    std::vector<std::string> flags;
};

/// N-gram recall with clipped counts for n = 1, 2 and LCS recall; avg is the mean
/// of the three. A component whose reference has fewer than n tokens is 0 and flagged.
RougeScores rouge_recall(std::string_view answer, std::string_view reference);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct BertScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Greedy matching: P averages, over answer tokens, the best cosine against any
/// reference token (negative similarities count as 0); R swaps the roles.
/// Texts without tokens score 0.
BertScore bertscore(const TokenEmbeddings& answer, const TokenEmbeddings& reference);
BertScore bertscore_f1(const std::string& answer, const std::string& reference, const TokenEmbeddingBackend& backend);

enum class ReferenceMode { contexts, gold };
std::string to_string(ReferenceMode m);
ReferenceMode reference_mode_from_string(const std::string& s);

struct ScoredRecord {
    std::string record_id;
    std::string query_id;
    std::string domain;
    std::string template_name;
    std::string model;
    std::size_t k = 0;
    std::string k_mode;
    std::string audience;
    bool failed = false;  // generation failed; excluded from every metric
    std::map<std::size_t, RelevancyResult> relevancy;  // keyed by question count
    std::optional<FaithfulnessResult> faithfulness;
    std::optional<RougeScores> rouge;
    std::optional<BertScore> bert;
    std::vector<std::string> flags;
};

void to_json(nlohmann::json& j, const ScoredRecord& s);

struct EvalOptions {
    std::vector<std::size_t> question_counts{3, 5};
    ReferenceMode reference = ReferenceMode::contexts;
    std::size_t max_in_flight = 4;
    std::optional<std::filesystem::path> template_dir;
};

/// Scores every record. A null judge or a judge/backend transport failure marks
/// the LLM-judge metrics as skipped; lexical metrics are still computed.
/// `gold` maps query_id to reference text for ReferenceMode::gold.
std::vector<ScoredRecord> score_records(std::span<const GenerationRecord> records, const LLMClient* judge,
                                        const EmbeddingBackend& backend, const TokenEmbeddingBackend* token_backend,
                                        const std::map<std::string, std::string>& gold = {},
                                        const EvalOptions& options = {});

void write_scored_records(const std::filesystem::path& path, std::span<const ScoredRecord> scored);

/// Mean with its sample count; count 0 means no value.
struct MetricMean {
    double mean = 0.0;
    std::size_t count = 0;
};

struct MetricRow {
    std::map<std::string, std::string> group;  // dimension -> value
    std::size_t records = 0;
    std::size_t failed = 0;
    std::size_t non_committal = 0;
    double non_committal_rate = 0.0;  // over records with an N=3 relevancy result
    std::map<std::string, MetricMean> metrics;
};

struct MetricTable {
    std::vector<std::string> group_by;
    std::vector<std::string> metric_columns;
    std::vector<MetricRow> rows;  // sorted by group values
};

/// Dimensions: template, model, k, k_mode, audience, domain.
/// Groups with no scored record are omitted with a warning.
MetricTable aggregate_metrics(std::span<const ScoredRecord> scored, const std::vector<std::string>& group_by);

void write_metric_csv(const MetricTable& table, const std::filesystem::path& path);
nlohmann::json metric_table_json(const MetricTable& table);

}  // namespace legalrag
