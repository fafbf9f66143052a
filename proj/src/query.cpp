#include "legalrag/query.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>

#include "legalrag/errors.hpp"
#include "legalrag/log.hpp"
#include "legalrag/readability.hpp"
#include "legalrag/text.hpp"

using nlohmann::json;

namespace legalrag {

std::string to_string(Expertise e) { return e == Expertise::expert ? "expert" : "non_expert"; }
std::string to_string(Specificity s) { return s == Specificity::vague ? "vague" : "verbose"; }

Expertise expertise_from_string(const std::string& s) {
    if (s == "expert") return Expertise::expert;
    if (s == "non_expert") return Expertise::non_expert;
    throw ValidationError("unknown expertise label '" + s + "'");
}

Specificity specificity_from_string(const std::string& s) {
    if (s == "vague") return Specificity::vague;
    if (s == "verbose") return Specificity::verbose;
    throw ValidationError("unknown specificity label '" + s + "'");
}

Expertise expertise_for_readability(double dale_chall_score) noexcept {
    return dale_chall_score >= kExpertReadabilityThreshold ? Expertise::expert : Expertise::non_expert;
}

const std::unordered_set<std::string>& default_stopwords() {
    static const std::unordered_set<std::string> words{
        "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "your", "yours", "yourself",
        "yourselves", "he", "him", "his", "himself", "she", "her", "hers", "herself", "it", "its", "itself",
        "they", "them", "their", "theirs", "themselves", "what", "which", "who", "whom", "this", "that", "these",
        "those", "am", "is", "are", "was", "were", "be", "been", "being", "have", "has", "had", "having", "do",
        "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or", "because", "as", "until", "while",
        "of", "at", "by", "for", "with", "about", "against", "between", "into", "through", "during", "before",
        "after", "above", "below", "to", "from", "up", "down", "in", "out", "on", "off", "over", "under",
        "again", "further", "then", "once", "here", "there", "when", "where", "why", "how", "all", "any", "both",
        "each", "few", "more", "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so",
        "than", "too", "very", "s", "t", "can", "will", "just", "don", "should", "now", "consider"};
    return words;
}

namespace {

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }

// Strips punctuation that never belongs to a name.
std::string strip_token(std::string_view tok) {
    std::size_t b = 0, e = tok.size();
    const auto junk_lead = [](char c) { return c == '(' || c == '"' || c == '\'' || c == '[' || c == '`'; };
    const auto junk_tail = [](char c) {
        return c == ',' || c == ';' || c == ':' || c == '?' || c == '!' || c == ')' || c == '"' || c == ']' ||
               c == '`';
    };
    while (b < e && junk_lead(tok[b])) ++b;
    while (e > b && junk_tail(tok[e - 1])) --e;
    return std::string(tok.substr(b, e - b));
}

}  // namespace

Extraction simple_extract(const std::string& query, const std::unordered_set<std::string>& stopwords) {
    Extraction out;
    const auto semi = query.find(';');
    if (semi == std::string::npos) {
        out.question = query;
        return out;
    }
    out.question = trim(std::string_view(query).substr(semi + 1));
    std::vector<std::string> kept;
    for (const auto& tok : split_whitespace(std::string_view(query).substr(0, semi))) {
        const std::string core = strip_token(tok);
        if (core.empty()) continue;
        const auto words = word_tokens(core);
        const bool stop = words.size() == 1 && stopwords.count(words.front()) != 0;
        if (!stop) kept.push_back(core);
    }
    if (!kept.empty()) {
        std::string ref = kept.front();
        for (std::size_t i = 1; i < kept.size(); ++i) ref += " " + kept[i];
        out.doc_reference = std::move(ref);
    }
    return out;
}

namespace {

bool is_abbrev_token(const std::string& core) {
    static const std::unordered_set<std::string> abbrevs{"inc.", "ltd.", "corp.", "co.", "llc.", "l.l.c.", "no.",
                                                         "plc.", "s.a.", "n.a.", "u.s.", "lp.", "l.p.", "st.",
                                                         "jr.", "sr.", "v.", "vs."};
    const std::string lower = to_lower_ascii(core);
    if (abbrevs.count(lower) != 0) return true;
    return core.size() == 2 && is_upper(core[0]) && core[1] == '.';
}

struct NameToken {
    std::string core;
    bool entity = false;
    bool connective = false;
    bool breaks_after = false;  // run may not continue past this token
};

}  // namespace

std::optional<std::string> heuristic_entity_reference(const std::string& query) {
    static const std::unordered_set<std::string> connectives{"between", "and", "of", "&", "the", "for",
                                                             "de",      "du",  "la", "von", "van", "und"};
    std::vector<NameToken> toks;
    bool sentence_start = true;
    for (const auto& raw : split_whitespace(query)) {
        NameToken t;
        std::string core = strip_token(raw);
        const char last_raw = raw.back();
        bool sentence_end = last_raw == '?' || last_raw == '!' || last_raw == ';' || last_raw == ':';
        t.breaks_after = sentence_end || last_raw == ',' || last_raw == ')' || last_raw == '"';
        if (!core.empty() && core.back() == '.' && !is_abbrev_token(core)) {
            while (!core.empty() && core.back() == '.') core.pop_back();
            sentence_end = true;
            t.breaks_after = true;
        }
        t.core = core;
        if (!core.empty()) {
            const bool cap = is_upper(core.front());
            const bool inner_caps = std::any_of(core.begin() + 1, core.end(), [](char c) { return is_upper(c); });
            t.entity = cap && (!sentence_start || inner_caps);
            t.connective = !t.entity && connectives.count(to_lower_ascii(core)) != 0;
        }
        toks.push_back(std::move(t));
        sentence_start = sentence_end;
    }

    std::size_t best_begin = 0, best_len = 0, best_tokens = 0;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (!toks[i].entity) continue;
        std::size_t end = i + 1;  // exclusive end of the confirmed run
        std::size_t j = i;
        while (!toks[j].breaks_after && j + 1 < toks.size()) {
            std::size_t k = j + 1;
            while (k < toks.size() && toks[k].connective && !toks[k].breaks_after && k - j <= 2) ++k;
            if (k < toks.size() && toks[k].entity && k - j <= 3) {
                j = k;
                end = k + 1;
            } else {
                break;
            }
        }
        std::size_t n_entity = 0;
        for (std::size_t k = i; k < end; ++k) n_entity += toks[k].entity ? 1 : 0;
        if (end - i > best_len) {
            best_begin = i;
            best_len = end - i;
            best_tokens = n_entity;
        }
        i = end - 1;
    }
    if (best_len == 0 || best_tokens == 0) return std::nullopt;
    std::string out = toks[best_begin].core;
    for (std::size_t k = best_begin + 1; k < best_begin + best_len; ++k) out += " " + toks[k].core;
    return out;
}

std::optional<std::string> HttpEntityExtractor::extract(const std::string& query) const {
    try {
        const json res = post_json(endpoint_, json{{"text", query}}, retry_);
        std::optional<std::string> best;
        for (const auto& e : res.at("entities")) {
            const std::string text = e.is_string() ? e.get<std::string>() : e.at("text").get<std::string>();
            if (!best || text.size() > best->size()) best = text;
        }
        return best;
    } catch (const std::exception& e) {
        warn(std::string("remote entity extractor failed (") + e.what() + "); using heuristic");
        return heuristic_entity_reference(query);
    }
}

double ThresholdTable::threshold_for(const std::string& domain) const {
    const auto it = by_domain.find(domain);
    return it == by_domain.end() ? default_threshold : it->second;
}

void ThresholdTable::validate() const {
    const auto bad = [](double t) { return !(t >= 0.0 && t <= 1.0); };
    if (bad(default_threshold)) throw ValidationError("default match threshold must lie in [0, 1]");
    for (const auto& [domain, t] : by_domain) {
        if (bad(t)) throw ValidationError("match threshold for '" + domain + "' must lie in [0, 1]");
    }
}

void to_json(json& j, const ThresholdTable& t) {
    j = json{{"default", t.default_threshold}, {"by_domain", t.by_domain}};
}

void from_json(const json& j, ThresholdTable& t) {
    t = ThresholdTable{};
    if (j.contains("default")) t.default_threshold = j.at("default").get<double>();
    if (j.contains("by_domain")) t.by_domain = j.at("by_domain").get<std::map<std::string, double>>();
}

std::string file_descriptor(const std::string& doc_id) {
    std::string s = doc_id;
    const auto slash = s.find_last_of("/\\");
    const auto dot = s.find_last_of('.');
    if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) s.resize(dot);
    for (auto& c : s) {
        if (c == '/' || c == '\\' || c == '_') c = ' ';
    }
    return trim(s);
}

FileMatcher::FileMatcher(const Corpus& corpus, std::shared_ptr<const EmbeddingBackend> backend)
    : backend_(std::move(backend)) {
    std::vector<std::string> descriptors;
    for (const auto& d : corpus.documents()) {
        doc_ids_.push_back(d.id());
        descriptors.push_back(file_descriptor(d.id()));
    }
    if (!descriptors.empty()) descriptors_ = embed_batch(*backend_, descriptors);
}

FileMatch FileMatcher::match(const std::string& doc_reference, double threshold) const {
    FileMatch out;
    if (trim(doc_reference).empty() || doc_ids_.empty()) return out;
    const std::vector<std::string> input{doc_reference};
    const Matrix ref = embed_batch(*backend_, input);
    double best = -2.0;
    for (std::size_t i = 0; i < doc_ids_.size(); ++i) {
        const double sim = cosine(ref.row(0), descriptors_.row(i));
        if (sim > best) {
            best = sim;
            out.best_doc = doc_ids_[i];
        }
    }
    out.similarity = best;
    if (best >= threshold) out.matched_doc = out.best_doc;
    return out;
}

FileMatch match_file(const std::string& doc_reference, const Corpus& corpus, const EmbeddingBackend& backend,
                     double threshold) {
    if (corpus.empty()) throw std::invalid_argument("match_file needs a non-empty corpus");
    // non-owning alias; the matcher does not outlive this call
    const FileMatcher matcher(corpus, std::shared_ptr<const EmbeddingBackend>(&backend, [](const auto*) {}));
    return matcher.match(doc_reference, threshold);
}

int score_match(const std::optional<std::string>& matched_doc, const std::string& gold_doc) noexcept {
    if (!matched_doc) return 0;
    return *matched_doc == gold_doc ? 1 : -1;
}

std::size_t count_clause_delimiters(const std::string& text) {
    std::size_t n = 0;
    for (const char c : text) n += (c == ',' || c == ';' || c == ':') ? 1 : 0;
    return n + count_sentences(text);
}

SpecificityDecision HeuristicSpecificityClassifier::classify(const std::string& query, bool has_reference) const {
    const std::size_t words = split_whitespace(query).size();
    const bool verbose = words >= min_words_ || (has_reference && count_clause_delimiters(query) >= min_delims_);
    return SpecificityDecision{verbose ? Specificity::verbose : Specificity::vague, name(), {}};
}

SpecificityDecision HttpSpecificityClassifier::classify(const std::string& query, bool has_reference) const {
    try {
        const json res = post_json(endpoint_, json{{"text", query}}, retry_);
        return SpecificityDecision{specificity_from_string(res.at("label").get<std::string>()), name(), {}};
    } catch (const std::exception& e) {
        auto decision = fallback_.classify(query, has_reference);
        decision.warning = std::string("remote specificity classifier failed (") + e.what() + "); used heuristic";
        warn(decision.warning);
        return decision;
    }
}

KPolicy KPolicy::from_bases(std::size_t non_expert, std::size_t expert, std::size_t vague_bonus,
                            std::size_t verbose_bonus) {
    return KPolicy{expert + vague_bonus, expert + verbose_bonus, non_expert + vague_bonus,
                   non_expert + verbose_bonus};
}

void KPolicy::validate() const {
    if (expert_vague < 1 || expert_verbose < 1 || non_expert_vague < 1 || non_expert_verbose < 1) {
        throw ValidationError("every K policy cell must be >= 1");
    }
}

void to_json(json& j, const KPolicy& p) {
    j = json{{"expert_vague", p.expert_vague},
             {"expert_verbose", p.expert_verbose},
             {"non_expert_vague", p.non_expert_vague},
             {"non_expert_verbose", p.non_expert_verbose}};
}

void from_json(const json& j, KPolicy& p) {
    if (j.contains("expert_vague") || j.contains("non_expert_verbose")) {
        p.expert_vague = j.at("expert_vague").get<std::size_t>();
        p.expert_verbose = j.at("expert_verbose").get<std::size_t>();
        p.non_expert_vague = j.at("non_expert_vague").get<std::size_t>();
        p.non_expert_verbose = j.at("non_expert_verbose").get<std::size_t>();
    } else {
        p = KPolicy::from_bases(j.value("non_expert", std::size_t{5}), j.value("expert", std::size_t{10}),
                                j.value("vague_bonus", std::size_t{5}), j.value("verbose_bonus", std::size_t{0}));
    }
    p.validate();
}

std::size_t choose_k(Expertise expertise, Specificity specificity, const KPolicy& policy) noexcept {
    if (expertise == Expertise::expert) {
        return specificity == Specificity::vague ? policy.expert_vague : policy.expert_verbose;
    }
    return specificity == Specificity::vague ? policy.non_expert_vague : policy.non_expert_verbose;
}

void to_json(json& j, const QueryAnalysis& a) {
    j = json{{"original", a.original},
             {"question", a.question},
             {"doc_reference", a.doc_reference ? json(*a.doc_reference) : json(nullptr)},
             {"matched_doc", a.matched_doc ? json(*a.matched_doc) : json(nullptr)},
             {"match_similarity", a.match_similarity},
             {"match_score", a.match_score ? json(*a.match_score) : json(nullptr)},
             {"extractor", a.extractor},
             {"expertise", to_string(a.expertise)},
             {"readability", a.readability},
             {"specificity", to_string(a.specificity)},
             {"specificity_source", a.specificity_source},
             {"chosen_k", a.chosen_k},
             {"warnings", a.warnings}};
}

void from_json(const json& j, QueryAnalysis& a) {
    const auto opt_str = [&](const char* key) -> std::optional<std::string> {
        if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
        return j.at(key).get<std::string>();
    };
    a.original = j.at("original").get<std::string>();
    a.question = j.at("question").get<std::string>();
    a.doc_reference = opt_str("doc_reference");
    a.matched_doc = opt_str("matched_doc");
    a.match_similarity = j.value("match_similarity", 0.0);
    a.match_score = j.contains("match_score") && !j["match_score"].is_null()
                        ? std::optional<int>(j["match_score"].get<int>())
                        : std::nullopt;
    a.extractor = j.value("extractor", std::string("none"));
    a.expertise = expertise_from_string(j.at("expertise").get<std::string>());
    a.readability = j.value("readability", 0.0);
    a.specificity = specificity_from_string(j.at("specificity").get<std::string>());
    a.specificity_source = j.value("specificity_source", std::string());
    a.chosen_k = j.at("chosen_k").get<std::size_t>();
    a.warnings = j.value("warnings", std::vector<std::string>{});
}

ExtractorMode extractor_mode_from_string(const std::string& s) {
    if (s == "simple") return ExtractorMode::simple;
    if (s == "entity") return ExtractorMode::entity;
    if (s == "auto") return ExtractorMode::automatic;
    throw ValidationError("unknown extractor '" + s + "' (expected simple, entity or auto)");
}

QueryTranslator::QueryTranslator(const Corpus& corpus, std::shared_ptr<const EmbeddingBackend> match_backend,
                                 TranslatorOptions options, std::shared_ptr<const SpecificityClassifier> specificity,
                                 std::shared_ptr<const EntityExtractor> entities)
    : matcher_(corpus, std::move(match_backend)),
      options_(std::move(options)),
      specificity_(specificity ? std::move(specificity) : std::make_shared<HeuristicSpecificityClassifier>()),
      entities_(entities ? std::move(entities) : std::make_shared<HeuristicEntityExtractor>()) {
    options_.thresholds.validate();
    options_.k_policy.validate();
}

QueryAnalysis QueryTranslator::analyze(const std::string& query, const std::string& domain,
                                       const std::optional<std::string>& gold_doc) const {
    QueryAnalysis a;
    a.original = query;
    const bool use_simple = options_.extractor == ExtractorMode::simple ||
                            (options_.extractor == ExtractorMode::automatic && query.find(';') != std::string::npos);
    if (use_simple) {
        const auto ex = simple_extract(query);
        a.question = ex.question;
        a.doc_reference = ex.doc_reference;
        a.extractor = "simple";
    } else {
        a.question = query;
        a.doc_reference = entities_->extract(query);
        a.extractor = "entity";
    }

    if (a.doc_reference) {
        const auto m = matcher_.match(*a.doc_reference, options_.thresholds.threshold_for(domain));
        a.matched_doc = m.matched_doc;
        a.match_similarity = m.similarity;
    }
    if (gold_doc) a.match_score = score_match(a.matched_doc, *gold_doc);

    // Readability is judged on the question side; the document title would dominate otherwise.
    const std::string& readable = readability_words(a.question).empty() ? a.original : a.question;
    if (readability_words(readable).empty()) {
        a.warnings.push_back("query has no words; treated as non_expert");
        a.readability = 0.0;
    } else {
        a.readability = dale_chall(readable);
    }
    a.expertise = expertise_for_readability(a.readability);

    const auto spec = specificity_->classify(query, a.matched_doc.has_value());
    a.specificity = spec.label;
    a.specificity_source = spec.source;
    if (!spec.warning.empty()) a.warnings.push_back(spec.warning);

    a.chosen_k = choose_k(a.expertise, a.specificity, options_.k_policy);
    return a;
}

}  // namespace legalrag
