#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "legalrag/chunker.hpp"
#include "legalrag/http.hpp"
#include "legalrag/index.hpp"

namespace legalrag {

enum class Audience { none, expert, non_expert };
std::string to_string(Audience a);
Audience audience_from_string(const std::string& s);

/// Replaces {name} slots from `values`; "{{" and "}}" produce literal braces.
/// A line holding nothing but a slot whose value is empty is dropped.
/// Throws TemplateError on unknown slots or unbalanced braces.
std::string render_slots(const std::string& text, const std::map<std::string, std::string>& values);

/// Slot names referenced by a template text.
std::vector<std::string> template_slots(const std::string& text);

struct PromptTemplate {
    std::string name;
    std::string system_text;
    std::string user_text;
    std::string expert_directive;
    std::string non_expert_directive;
    std::string no_context_text;

    /// SHA-256 over every text that can reach a rendered prompt.
    std::string hash() const;
};

/// Splits "[system]" / "[user]" sections. Throws TemplateError when a section is missing.
PromptTemplate parse_template(const std::string& name, const std::string& text);

/// Generation template ("baseline", "cot", "custom_legal"). Files under
/// `dir`/prompts and `dir`/audience override the built-in texts.
PromptTemplate load_prompt_template(const std::string& name,
                                    const std::optional<std::filesystem::path>& dir = std::nullopt);

/// Judge template ("relevancy_questions", "claim_decomposition", "claim_verdicts", "rewrite").
PromptTemplate load_judge_template(const std::string& name,
                                   const std::optional<std::filesystem::path>& dir = std::nullopt);

/// Numbered, quote-delimited context blocks:
///   [1] doc/path.txt, characters 0-500
///   """
///   text
///   """
std::string format_contexts(std::span<const Chunk> contexts);

struct ChatMessage {
    std::string role;
    std::string content;
    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct RenderedPrompt {
    std::string system;
    std::string user;
    std::vector<ChatMessage> messages() const;
};

RenderedPrompt render_prompt(const PromptTemplate& tpl, const std::string& question, std::span<const Chunk> contexts,
                             Audience audience);

/// Renders an arbitrary template against a slot map (judge prompts).
RenderedPrompt render_with(const PromptTemplate& tpl, const std::map<std::string, std::string>& values);

struct DecodingParams {
    double temperature = 0.0;
    int max_tokens = 512;
};

struct ChatResult {
    std::string content;
    std::string raw_request;
    std::string raw_response;
};

class LLMClient {
public:
    virtual ~LLMClient() = default;
    virtual std::string model_name() const = 0;
    virtual DecodingParams decoding() const { return {}; }
    /// Throws TransportError on failure.
    virtual ChatResult complete(const std::vector<ChatMessage>& messages) const = 0;
};

/// Spaces calls at least 60/requests_per_minute seconds apart across threads.
class RateLimiter {
public:
    explicit RateLimiter(double requests_per_minute = 0.0);
    void acquire();

private:
    std::chrono::nanoseconds interval_{0};
    std::mutex mutex_;
    std::chrono::steady_clock::time_point next_{};
};

/// OpenAI-compatible chat completions: POST {"model","messages","temperature","max_tokens"}
/// -> choices[0].message.content.
class HttpChatClient final : public LLMClient {
public:
    HttpChatClient(Endpoint endpoint, std::string model, DecodingParams decoding = {}, RetryPolicy retry = {},
                   double requests_per_minute = 0.0);
    std::string model_name() const override { return model_; }
    DecodingParams decoding() const override { return decoding_; }
    ChatResult complete(const std::vector<ChatMessage>& messages) const override;

private:
    Endpoint endpoint_;
    std::string model_;
    DecodingParams decoding_;
    RetryPolicy retry_;
    mutable RateLimiter limiter_;
};

/// Context blocks recovered from a prompt rendered with format_contexts.
std::vector<std::string> parse_context_blocks(const std::string& prompt);

/// Offline stand-in for a chat model.
/// extractive: answers with the context sentence sharing the most question
/// terms, or "I don't know." when nothing overlaps.
/// echo_first_context: answers with the first context verbatim.
/// Also serves the "rewrite" judge task by returning the question unchanged.
class MockLLM final : public LLMClient {
public:
    enum class Mode { extractive, echo_first_context };
    explicit MockLLM(std::string model = "mock-extractive", Mode mode = Mode::extractive)
        : model_(std::move(model)), mode_(mode) {}
    std::string model_name() const override { return model_; }
    ChatResult complete(const std::vector<ChatMessage>& messages) const override;

private:
    std::string model_;
    Mode mode_;
};

/// Offline LLM judge that understands the bundled judge templates.
/// Generated questions restate the answer; claims are answer sentences; a claim
/// is supported when all of its content words occur in the contexts.
class MockJudge final : public LLMClient {
public:
    struct Overrides {
        std::optional<std::vector<std::string>> questions;
        std::optional<bool> noncommittal;
    };
    explicit MockJudge(Overrides overrides = {}) : overrides_(std::move(overrides)) {}
    std::string model_name() const override { return "mock-judge"; }
    ChatResult complete(const std::vector<ChatMessage>& messages) const override;

private:
    Overrides overrides_;
};

/// Rewrites a query through `client` with the "rewrite" judge template.
std::string rewrite_query(const LLMClient& client, const std::string& query,
                          const std::optional<std::filesystem::path>& template_dir = std::nullopt);

struct ContextRef {
    std::string chunk_id;
    std::string doc_id;
    Span span;
    std::string text;
    double score = 0.0;
    std::size_t rank = 0;
};

struct GenerationRecord {
    std::string record_id;
    std::string query_id;
    std::string query;
    std::string question;
    std::string domain;
    nlohmann::json analysis;  // QueryAnalysis snapshot, null when absent
    std::string template_name;
    std::string template_hash;
    std::string model;
    DecodingParams decoding;
    std::size_t k = 0;
    std::string k_mode = "fixed";  // fixed | adaptive
    Audience audience = Audience::none;
    std::vector<ContextRef> contexts;
    bool truncated = false;
    std::size_t dropped_contexts = 0;
    std::string system_prompt;
    std::string user_prompt;
    std::string raw_request;
    std::string raw_response;
    std::string response;
    bool failed = false;
    std::string error;
    int attempts = 0;
    double latency_ms = 0.0;
    std::vector<std::string> warnings;
};

void to_json(nlohmann::json& j, const GenerationRecord& r);
void from_json(const nlohmann::json& j, GenerationRecord& r);

void write_records(const std::filesystem::path& path, std::span<const GenerationRecord> records);
std::vector<GenerationRecord> read_records(const std::filesystem::path& path);

struct GenerationInput {
    std::string query_id;
    std::string query;
    std::string question;  // text placed in the prompt
    std::string domain;
    nlohmann::json analysis;
    Audience audience = Audience::none;
    std::size_t k = 5;
    std::string k_mode = "fixed";
    std::vector<ScoredChunk> candidates;  // ranked; the first k are used
};

struct GenerationOptions {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{200};
    /// Context character budget; 0 disables truncation.
    std::size_t max_context_chars = 0;
};

/// Never throws for transport problems: exhausted retries yield a failed record.
GenerationRecord generate_answer(const LLMClient& client, const PromptTemplate& tpl, const GenerationInput& input,
                                 const GenerationOptions& options = {});

struct MatrixOptions {
    GenerationOptions generation;
    /// Use each input's own k instead of the ks list.
    bool adaptive = false;
    std::size_t max_in_flight = 4;
};

/// One record per (query, template, client, k) in that nesting order,
/// independent of thread scheduling.
std::vector<GenerationRecord> run_matrix(std::span<const GenerationInput> inputs,
                                         std::span<const PromptTemplate> templates,
                                         std::span<const LLMClient* const> clients, std::span<const std::size_t> ks,
                                         const MatrixOptions& options = {});

struct CellFailures {
    std::size_t total = 0;
    std::size_t failed = 0;
};

/// Keyed by "template|model|k".
std::map<std::string, CellFailures> failure_summary(std::span<const GenerationRecord> records);

}  // namespace legalrag
