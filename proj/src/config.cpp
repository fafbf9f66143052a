#include "legalrag/config.hpp"

#include <fstream>
#include <set>

#include "legalrag/errors.hpp"
#include "legalrag/gen_eval.hpp"
#include "legalrag/retrieval_eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace legalrag {

Endpoint ServiceConfig::endpoint() const {
    return Endpoint{url, api_key_env.empty() ? std::string() : token_from_env(api_key_env), timeout_seconds};
}

RetryPolicy ServiceConfig::retry() const {
    RetryPolicy r;
    r.max_attempts = std::max(1, max_attempts);
    return r;
}

void to_json(json& j, const ServiceConfig& s) {
    j = json{{"name", s.name},
             {"kind", s.kind},
             {"url", s.url},
             {"model", s.model},
             {"api_key_env", s.api_key_env},
             {"backend", s.backend},
             {"timeout_seconds", s.timeout_seconds},
             {"dim", s.dim},
             {"max_attempts", s.max_attempts},
             {"requests_per_minute", s.requests_per_minute},
             {"temperature", s.decoding.temperature},
             {"max_tokens", s.decoding.max_tokens}};
}

ServiceConfig service_from_json(const json& j, const ServiceConfig& defaults) {
    if (!j.is_object()) throw ValidationError("service entries must be objects");
    ServiceConfig s = defaults;
    s.name = j.value("name", s.name);
    s.kind = j.value("kind", s.kind);
    s.url = j.value("url", s.url);
    s.model = j.value("model", s.model);
    s.api_key_env = j.value("api_key_env", s.api_key_env);
    s.backend = j.value("backend", s.backend);
    s.timeout_seconds = j.value("timeout_seconds", s.timeout_seconds);
    s.dim = j.value("dim", s.dim);
    s.max_attempts = j.value("max_attempts", s.max_attempts);
    s.requests_per_minute = j.value("requests_per_minute", s.requests_per_minute);
    s.decoding.temperature = j.value("temperature", s.decoding.temperature);
    s.decoding.max_tokens = j.value("max_tokens", s.decoding.max_tokens);
    if (s.name.empty()) s.name = s.kind == "http" ? s.model : s.kind;
    return s;
}

std::string chunking_label(const ChunkingConfig& c) {
    std::string label = to_string(c.strategy);
    if (c.max_chars != 500) label += "-" + std::to_string(c.max_chars);
    return label;
}

json config_to_json(const PipelineConfig& c) {
    json chunkings = json::array();
    for (const auto& ch : c.chunkings) chunkings.push_back(ch);
    return json{
        {"corpus", c.corpus.generic_string()},
        {"benchmark", c.benchmark.generic_string()},
        {"output_dir", c.output_dir.generic_string()},
        {"seed", c.seed},
        {"sampling", {{"per_domain", c.per_domain}, {"use_mini", c.use_mini}}},
        {"chunking", std::move(chunkings)},
        {"embedding_backends", c.embedding_backends},
        {"embedding", {{"batch_size", c.embed_batch_size}, {"max_in_flight", c.embed_in_flight}}},
        {"retrieval",
         {{"similarities", c.similarities},
          {"depth", c.depth},
          {"rerank", c.rerank},
          {"reranker", c.reranker},
          {"translation", c.translation}}},
        {"query_translation",
         {{"extractor", c.extractor},
          {"thresholds", c.thresholds},
          {"k_policy", c.k_policy},
          {"specificity", c.specificity},
          {"entity", c.entity},
          {"match_backend", c.match_backend},
          {"rewrite", c.rewrite}}},
        {"evaluation", {{"ks", c.eval_ks}, {"extended_ks", c.extended_ks}}},
        {"generation",
         {{"templates", c.templates},
          {"template_dir", c.template_dir ? json(c.template_dir->generic_string()) : json(nullptr)},
          {"models", c.models},
          {"ks", c.generation_ks},
          {"modes", c.generation_modes},
          {"variant",
           {{"chunking", c.generation_variant.chunking},
            {"backend", c.generation_variant.backend},
            {"similarity", c.generation_variant.similarity},
            {"translation", c.generation_variant.translation}}},
          {"max_in_flight", c.max_in_flight},
          {"max_attempts", c.generation_attempts},
          {"max_context_chars", c.max_context_chars}}},
        {"gen_eval",
         {{"judge", c.judge},
          {"judge_backend", c.judge_backend},
          {"token_backend", c.token_backend},
          {"question_counts", c.question_counts},
          {"reference", c.reference}}}};
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return {};
    const fs::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

template <typename T>
void read_opt(const json& obj, const char* key, T& out) {
    if (obj.contains(key) && !obj[key].is_null()) out = obj[key].get<T>();
}

}  // namespace

PipelineConfig config_from_json(const json& j, const fs::path& base_dir) {
    PipelineConfig c;
    try {
        if (!j.is_object()) throw ValidationError("configuration must be a JSON object");
        if (j.contains("corpus")) c.corpus = resolve(base_dir, j["corpus"].get<std::string>());
        if (j.contains("benchmark")) c.benchmark = resolve(base_dir, j["benchmark"].get<std::string>());
        if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j["output_dir"].get<std::string>());
        else c.output_dir = resolve(base_dir, "out");
        read_opt(j, "seed", c.seed);
        if (const auto it = j.find("sampling"); it != j.end()) {
            read_opt(*it, "per_domain", c.per_domain);
            read_opt(*it, "use_mini", c.use_mini);
        }
        if (const auto it = j.find("chunking"); it != j.end()) {
            c.chunkings.clear();
            for (const auto& ch : *it) c.chunkings.push_back(ch.get<ChunkingConfig>());
        }
        if (const auto it = j.find("embedding_backends"); it != j.end()) {
            c.embedding_backends.clear();
            for (const auto& b : *it) c.embedding_backends.push_back(service_from_json(b, ServiceConfig::of("", "hashed")));
        }
        if (const auto it = j.find("embedding"); it != j.end()) {
            read_opt(*it, "batch_size", c.embed_batch_size);
            read_opt(*it, "max_in_flight", c.embed_in_flight);
        }
        if (const auto it = j.find("retrieval"); it != j.end()) {
            read_opt(*it, "similarities", c.similarities);
            read_opt(*it, "depth", c.depth);
            read_opt(*it, "rerank", c.rerank);
            if (it->contains("reranker")) c.reranker = service_from_json((*it)["reranker"], c.reranker);
            read_opt(*it, "translation", c.translation);
        }
        if (const auto it = j.find("query_translation"); it != j.end()) {
            read_opt(*it, "extractor", c.extractor);
            read_opt(*it, "thresholds", c.thresholds);
            read_opt(*it, "k_policy", c.k_policy);
            if (it->contains("specificity")) c.specificity = service_from_json((*it)["specificity"], c.specificity);
            if (it->contains("entity")) c.entity = service_from_json((*it)["entity"], c.entity);
            read_opt(*it, "match_backend", c.match_backend);
            read_opt(*it, "rewrite", c.rewrite);
        }
        if (const auto it = j.find("evaluation"); it != j.end()) {
            read_opt(*it, "ks", c.eval_ks);
            read_opt(*it, "extended_ks", c.extended_ks);
        }
        if (const auto it = j.find("generation"); it != j.end()) {
            read_opt(*it, "templates", c.templates);
            if (it->contains("template_dir") && !(*it)["template_dir"].is_null()) {
                c.template_dir = resolve(base_dir, (*it)["template_dir"].get<std::string>());
            }
            if (it->contains("models")) {
                c.models.clear();
                for (const auto& m : (*it)["models"]) c.models.push_back(service_from_json(m, ServiceConfig::of("", "mock")));
            }
            read_opt(*it, "ks", c.generation_ks);
            read_opt(*it, "modes", c.generation_modes);
            if (const auto v = it->find("variant"); v != it->end()) {
                read_opt(*v, "chunking", c.generation_variant.chunking);
                read_opt(*v, "backend", c.generation_variant.backend);
                read_opt(*v, "similarity", c.generation_variant.similarity);
                read_opt(*v, "translation", c.generation_variant.translation);
            }
            read_opt(*it, "max_in_flight", c.max_in_flight);
            read_opt(*it, "max_attempts", c.generation_attempts);
            read_opt(*it, "max_context_chars", c.max_context_chars);
        }
        if (const auto it = j.find("gen_eval"); it != j.end()) {
            if (it->contains("judge")) c.judge = service_from_json((*it)["judge"], c.judge);
            read_opt(*it, "judge_backend", c.judge_backend);
            if (it->contains("token_backend")) c.token_backend = service_from_json((*it)["token_backend"], c.token_backend);
            read_opt(*it, "question_counts", c.question_counts);
            read_opt(*it, "reference", c.reference);
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("configuration: ") + e.what());
    }
    return c;
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read configuration '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("configuration '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j, fs::absolute(path).parent_path());
}

namespace {

void check_service(const ServiceConfig& s, const std::set<std::string>& offline_kinds, const std::string& role,
                   std::vector<std::string>& problems) {
    if (s.kind == "http") {
        if (s.url.rfind("http://", 0) != 0 && s.url.rfind("https://", 0) != 0) {
            problems.push_back(role + " '" + s.name + "': http services need an http(s):// url");
        }
    } else if (!offline_kinds.count(s.kind)) {
        std::string kinds;
        for (const auto& k : offline_kinds) kinds += k + ", ";
        problems.push_back(role + " '" + s.name + "': unknown kind '" + s.kind + "' (expected " + kinds + "http)");
    }
    if (s.max_attempts < 1) problems.push_back(role + " '" + s.name + "': max_attempts must be >= 1");
}

}  // namespace

void PipelineConfig::validate(bool check_inputs) const {
    std::vector<std::string> problems;
    const auto guard = [&](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            problems.push_back(e.what());
        }
    };

    if (check_inputs && !use_mini) {
        if (corpus.empty() || !fs::is_directory(corpus)) problems.push_back("corpus directory '" + corpus.string() + "' not found");
        if (!benchmark.empty() && !fs::is_regular_file(benchmark)) {
            problems.push_back("benchmark file '" + benchmark.string() + "' not found");
        }
    }
    if (per_domain == 0) problems.push_back("sampling.per_domain must be >= 1");

    if (chunkings.empty()) problems.push_back("at least one chunking configuration is required");
    std::set<std::string> labels;
    for (const auto& ch : chunkings) {
        guard([&] { ch.validate(); });
        if (!labels.insert(chunking_label(ch)).second) problems.push_back("duplicate chunking '" + chunking_label(ch) + "'");
    }
    if (embedding_backends.empty()) problems.push_back("at least one embedding backend is required");
    std::set<std::string> backend_names;
    for (const auto& b : embedding_backends) {
        check_service(b, {"hashed"}, "embedding backend", problems);
        if (!backend_names.insert(b.name).second) problems.push_back("duplicate embedding backend '" + b.name + "'");
        if (b.kind == "hashed" && b.dim == 0) problems.push_back("embedding backend '" + b.name + "': dim must be >= 1");
    }
    const auto known_backend = [&](const std::string& name, const std::string& role) {
        if (!name.empty() && !backend_names.count(name)) problems.push_back(role + " refers to unknown backend '" + name + "'");
    };
    known_backend(match_backend, "query_translation.match_backend");
    known_backend(judge_backend, "gen_eval.judge_backend");
    known_backend(generation_variant.backend, "generation.variant.backend");
    if (embed_batch_size == 0 || embed_in_flight == 0) problems.push_back("embedding batch size and in-flight limit must be >= 1");

    for (const auto& s : similarities) {
        if (s != "cosine" && s != "bm25") problems.push_back("unknown similarity '" + s + "'");
    }
    if (similarities.empty()) problems.push_back("retrieval.similarities must not be empty");
    if (depth == 0) problems.push_back("retrieval.depth must be >= 1");
    check_service(reranker, {"embedding", "identity"}, "reranker", problems);
    if (reranker.kind == "embedding") known_backend(reranker.backend, "reranker.backend");
    for (const auto& t : translation) {
        if (t != "on" && t != "off") problems.push_back("retrieval.translation entries must be 'on' or 'off', got '" + t + "'");
    }
    if (translation.empty()) problems.push_back("retrieval.translation must not be empty");

    guard([&] { extractor_mode_from_string(extractor); });
    guard([&] { thresholds.validate(); });
    guard([&] { k_policy.validate(); });
    check_service(specificity, {"heuristic"}, "specificity classifier", problems);
    check_service(entity, {"heuristic"}, "entity extractor", problems);

    guard([&] {
        const auto ks = parse_ks(eval_ks);
        if (ks.back() > depth) {
            problems.push_back("evaluation.ks reaches " + std::to_string(ks.back()) + " but retrieval.depth is " +
                               std::to_string(depth));
        }
    });
    if (!extended_ks.empty()) guard([&] { parse_ks(extended_ks); });

    if (templates.empty()) problems.push_back("generation.templates must not be empty");
    for (const auto& t : templates) guard([&] { load_prompt_template(t, template_dir); });
    if (models.empty()) problems.push_back("generation.models must not be empty");
    for (const auto& m : models) check_service(m, {"mock", "echo"}, "model", problems);
    if (generation_ks.empty()) problems.push_back("generation.ks must not be empty");
    for (const auto k : generation_ks) {
        if (k == 0) problems.push_back("generation.ks values must be >= 1");
    }
    for (const auto& m : generation_modes) {
        if (m != "fixed" && m != "adaptive") problems.push_back("unknown generation mode '" + m + "'");
    }
    if (!labels.count(generation_variant.chunking)) {
        problems.push_back("generation.variant.chunking '" + generation_variant.chunking + "' is not configured");
    }
    if (generation_variant.similarity != "cosine" && generation_variant.similarity != "bm25") {
        problems.push_back("generation.variant.similarity must be cosine or bm25");
    }
    if (generation_variant.translation != "on" && generation_variant.translation != "off") {
        problems.push_back("generation.variant.translation must be on or off");
    }
    if (max_in_flight == 0) problems.push_back("generation.max_in_flight must be >= 1");
    if (generation_attempts < 1) problems.push_back("generation.max_attempts must be >= 1");

    check_service(judge, {"mock", "none"}, "judge", problems);
    check_service(token_backend, {"hashed", "none"}, "token backend", problems);
    if (question_counts.empty()) problems.push_back("gen_eval.question_counts must not be empty");
    for (const auto n : question_counts) {
        if (n == 0) problems.push_back("gen_eval.question_counts values must be >= 1");
    }
    guard([&] { reference_mode_from_string(reference); });

    if (!problems.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ValidationError(msg);
    }
}

std::string PipelineConfig::digest() const {
    json j = config_to_json(*this);
    j.erase("output_dir");
    return sha256_hex(j.dump());
}

std::shared_ptr<const EmbeddingBackend> make_embedding_backend(const ServiceConfig& s) {
    if (s.kind == "hashed") return std::make_shared<HashedNgramEmbedder>(s.dim, 3, s.name);
    if (s.kind == "http") return std::make_shared<HttpEmbeddingBackend>(s.name, s.endpoint(), s.model, 0, s.retry());
    throw ValidationError("unknown embedding backend kind '" + s.kind + "'");
}

std::shared_ptr<const TokenEmbeddingBackend> make_token_backend(const ServiceConfig& s) {
    if (s.kind == "hashed") return std::make_shared<HashedTokenEmbedder>(s.dim);
    if (s.kind == "http") return std::make_shared<HttpTokenEmbedder>(s.name, s.endpoint(), s.model, s.retry());
    if (s.kind == "none") return nullptr;
    throw ValidationError("unknown token backend kind '" + s.kind + "'");
}

std::shared_ptr<const LLMClient> make_llm(const ServiceConfig& s, int max_attempts_override) {
    if (s.kind == "mock") return std::make_shared<MockLLM>(s.name, MockLLM::Mode::extractive);
    if (s.kind == "echo") return std::make_shared<MockLLM>(s.name, MockLLM::Mode::echo_first_context);
    if (s.kind == "none") return nullptr;
    if (s.kind == "http") {
        RetryPolicy retry = s.retry();
        if (max_attempts_override > 0) retry.max_attempts = max_attempts_override;
        return std::make_shared<HttpChatClient>(s.endpoint(), s.model, s.decoding, retry, s.requests_per_minute);
    }
    throw ValidationError("unknown model kind '" + s.kind + "'");
}

std::shared_ptr<const LLMClient> make_judge(const ServiceConfig& s) {
    if (s.kind == "mock") return std::make_shared<MockJudge>();
    return make_llm(s);
}

std::shared_ptr<const SpecificityClassifier> make_specificity(const ServiceConfig& s) {
    if (s.kind == "heuristic") return std::make_shared<HeuristicSpecificityClassifier>();
    if (s.kind == "http") return std::make_shared<HttpSpecificityClassifier>(s.endpoint(), HeuristicSpecificityClassifier(), s.retry());
    throw ValidationError("unknown specificity classifier kind '" + s.kind + "'");
}

std::shared_ptr<const EntityExtractor> make_entity_extractor(const ServiceConfig& s) {
    if (s.kind == "heuristic") return std::make_shared<HeuristicEntityExtractor>();
    if (s.kind == "http") return std::make_shared<HttpEntityExtractor>(s.endpoint(), s.retry());
    throw ValidationError("unknown entity extractor kind '" + s.kind + "'");
}

const ServiceConfig& find_backend(const PipelineConfig& c, const std::string& name) {
    if (c.embedding_backends.empty()) throw ValidationError("no embedding backends configured");
    if (name.empty()) return c.embedding_backends.front();
    for (const auto& b : c.embedding_backends) {
        if (b.name == name) return b;
    }
    throw ValidationError("unknown embedding backend '" + name + "'");
}

std::shared_ptr<const Reranker> make_reranker(const PipelineConfig& c) {
    const auto& r = c.reranker;
    if (r.kind == "identity") return std::make_shared<IdentityReranker>();
    if (r.kind == "embedding") return std::make_shared<EmbeddingReranker>(make_embedding_backend(find_backend(c, r.backend)));
    if (r.kind == "http") return std::make_shared<HttpReranker>(r.name, r.endpoint(), r.model, r.retry());
    throw ValidationError("unknown reranker kind '" + r.kind + "'");
}

}  // namespace legalrag
