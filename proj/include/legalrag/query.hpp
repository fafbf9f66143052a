#pragma once

#include <map>
#include <memory>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "legalrag/corpus.hpp"
#include "legalrag/embedding.hpp"
#include "legalrag/http.hpp"

namespace legalrag {

enum class Expertise { expert, non_expert };
enum class Specificity { vague, verbose };

std::string to_string(Expertise e);
std::string to_string(Specificity s);
Expertise expertise_from_string(const std::string& s);
Specificity specificity_from_string(const std::string& s);

/// Readability at or above this Dale-Chall score marks an expert query.
inline constexpr double kExpertReadabilityThreshold = 8.0;
Expertise expertise_for_readability(double dale_chall_score) noexcept;

/// Bundled English stopword list, plus the "consider" lead-in used by structured queries.
const std::unordered_set<std::string>& default_stopwords();

struct Extraction {
    std::optional<std::string> doc_reference;
    std::string question;
};

/// Splits at the first semicolon: the left side, minus stopwords, is the document
/// reference; the trimmed right side is the question. No semicolon: no reference.
Extraction simple_extract(const std::string& query,
                          const std::unordered_set<std::string>& stopwords = default_stopwords());

/// Longest run of capitalised tokens, joined through connective words
/// ("between", "and", "of", ...). Sentence-initial words only count when they
/// carry inner capitals ("CopAcc", "NDA").
std::optional<std::string> heuristic_entity_reference(const std::string& query);

class EntityExtractor {
public:
    virtual ~EntityExtractor() = default;
    virtual std::string name() const = 0;
    virtual std::optional<std::string> extract(const std::string& query) const = 0;
};

class HeuristicEntityExtractor final : public EntityExtractor {
public:
    std::string name() const override { return "heuristic"; }
    std::optional<std::string> extract(const std::string& query) const override {
        return heuristic_entity_reference(query);
    }
};

/// Remote NER: POST {"text"} -> {"entities": [{"text", "label"}] | ["..."]}; the
/// longest entity wins. Falls back to the heuristic (with a warning) on failure.
class HttpEntityExtractor final : public EntityExtractor {
public:
    HttpEntityExtractor(Endpoint endpoint, RetryPolicy retry = {}) : endpoint_(std::move(endpoint)), retry_(retry) {}
    std::string name() const override { return "http-ner"; }
    std::optional<std::string> extract(const std::string& query) const override;

private:
    Endpoint endpoint_;
    RetryPolicy retry_;
};

inline std::optional<std::string> entity_extract(const std::string& query) {
    return heuristic_entity_reference(query);
}

/// Similarity threshold per benchmark domain.
struct ThresholdTable {
    std::map<std::string, double> by_domain{{"ContractNLI", 0.30}, {"CUAD", 0.55}, {"MAUD", 0.38}, {"PrivacyQA", 0.30}};
    double default_threshold = 0.30;

    double threshold_for(const std::string& domain) const;
    /// Throws ValidationError when any threshold lies outside [0, 1].
    void validate() const;
};

void to_json(nlohmann::json& j, const ThresholdTable& t);
void from_json(const nlohmann::json& j, ThresholdTable& t);

/// Text a file is matched against: doc_id with '/', '\\' and '_' turned into
/// spaces and the extension removed.
std::string file_descriptor(const std::string& doc_id);

struct FileMatch {
    std::optional<std::string> matched_doc;
    double similarity = 0.0;  // best cosine, reported even without a match
    std::string best_doc;     // argmax file regardless of threshold
};

/// Embeds every file descriptor once and matches references against them.
class FileMatcher {
public:
    FileMatcher(const Corpus& corpus, std::shared_ptr<const EmbeddingBackend> backend);
    FileMatch match(const std::string& doc_reference, double threshold) const;

private:
    std::vector<std::string> doc_ids_;
    Matrix descriptors_;
    std::shared_ptr<const EmbeddingBackend> backend_;
};

FileMatch match_file(const std::string& doc_reference, const Corpus& corpus, const EmbeddingBackend& backend,
                     double threshold);

/// +1 correct file, -1 wrong file, 0 no match.
int score_match(const std::optional<std::string>& matched_doc, const std::string& gold_doc) noexcept;

struct SpecificityDecision {
    Specificity label = Specificity::vague;
    std::string source;   // classifier that produced the label
    std::string warning;  // set when a remote classifier fell back
};

class SpecificityClassifier {
public:
    virtual ~SpecificityClassifier() = default;
    virtual std::string name() const = 0;
    virtual SpecificityDecision classify(const std::string& query, bool has_reference) const = 0;
};

/// Clause delimiters: ',', ';', ':' plus every sentence terminator.
std::size_t count_clause_delimiters(const std::string& text);

/// verbose when word count >= verbose_min_words, or when the query carries a
/// matched document reference and at least min_clause_delimiters delimiters.
class HeuristicSpecificityClassifier final : public SpecificityClassifier {
public:
    explicit HeuristicSpecificityClassifier(std::size_t verbose_min_words = 25, std::size_t min_clause_delimiters = 2)
        : min_words_(verbose_min_words), min_delims_(min_clause_delimiters) {}
    std::string name() const override { return "heuristic"; }
    SpecificityDecision classify(const std::string& query, bool has_reference) const override;

private:
    std::size_t min_words_;
    std::size_t min_delims_;
};

/// Trained classifier behind HTTP: POST {"text"} -> {"label": "vague"|"verbose"}.
/// The remote label wins whenever the call succeeds.
class HttpSpecificityClassifier final : public SpecificityClassifier {
public:
    HttpSpecificityClassifier(Endpoint endpoint, HeuristicSpecificityClassifier fallback = HeuristicSpecificityClassifier(),
                              RetryPolicy retry = {})
        : endpoint_(std::move(endpoint)), fallback_(fallback), retry_(retry) {}
    std::string name() const override { return "http"; }
    SpecificityDecision classify(const std::string& query, bool has_reference) const override;

private:
    Endpoint endpoint_;
    HeuristicSpecificityClassifier fallback_;
    RetryPolicy retry_;
};

/// Retrieval depth for every (expertise, specificity) cell.
struct KPolicy {
    std::size_t expert_vague = 15;
    std::size_t expert_verbose = 10;
    std::size_t non_expert_vague = 10;
    std::size_t non_expert_verbose = 5;

    static KPolicy from_bases(std::size_t non_expert, std::size_t expert, std::size_t vague_bonus,
                              std::size_t verbose_bonus = 0);
    void validate() const;
};

void to_json(nlohmann::json& j, const KPolicy& p);
/// Accepts either explicit cells or {"non_expert", "expert", "vague_bonus", "verbose_bonus"}.
void from_json(const nlohmann::json& j, KPolicy& p);

std::size_t choose_k(Expertise expertise, Specificity specificity, const KPolicy& policy) noexcept;

struct QueryAnalysis {
    std::string original;
    std::string question;
    std::optional<std::string> doc_reference;
    std::optional<std::string> matched_doc;
    double match_similarity = 0.0;
    std::optional<int> match_score;  // evaluation mode only
    std::string extractor;           // "simple", "entity" or "none"
    Expertise expertise = Expertise::non_expert;
    double readability = 0.0;
    Specificity specificity = Specificity::vague;
    std::string specificity_source;
    std::size_t chosen_k = 1;
    std::vector<std::string> warnings;
};

void to_json(nlohmann::json& j, const QueryAnalysis& a);
void from_json(const nlohmann::json& j, QueryAnalysis& a);

enum class ExtractorMode { simple, entity, automatic };
ExtractorMode extractor_mode_from_string(const std::string& s);

struct TranslatorOptions {
    ExtractorMode extractor = ExtractorMode::automatic;
    ThresholdTable thresholds;
    KPolicy k_policy;
};

/// Query translation: reference extraction, file matching, expertise and
/// specificity classification, and the resulting retrieval depth.
class QueryTranslator {
public:
    QueryTranslator(const Corpus& corpus, std::shared_ptr<const EmbeddingBackend> match_backend,
                    TranslatorOptions options = {},
                    std::shared_ptr<const SpecificityClassifier> specificity = nullptr,
                    std::shared_ptr<const EntityExtractor> entities = nullptr);

    /// `domain` selects the match threshold; `gold_doc` (evaluation mode) fills match_score.
    QueryAnalysis analyze(const std::string& query, const std::string& domain = {},
                          const std::optional<std::string>& gold_doc = std::nullopt) const;

    const TranslatorOptions& options() const noexcept { return options_; }

private:
    FileMatcher matcher_;
    TranslatorOptions options_;
    std::shared_ptr<const SpecificityClassifier> specificity_;
    std::shared_ptr<const EntityExtractor> entities_;
};

}  // namespace legalrag
