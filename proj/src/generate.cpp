#include "legalrag/generate.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "legalrag/errors.hpp"
#include "legalrag/log.hpp"
#include "legalrag/query.hpp"
#include "legalrag/resources.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace legalrag {

std::string to_string(Audience a) {
    switch (a) {
        case Audience::expert: return "expert";
        case Audience::non_expert: return "non_expert";
        case Audience::none: break;
    }
    return "none";
}

Audience audience_from_string(const std::string& s) {
    if (s == "expert") return Audience::expert;
    if (s == "non_expert") return Audience::non_expert;
    if (s == "none") return Audience::none;
    throw ValidationError("unknown audience '" + s + "'");
}

namespace {

bool is_slot_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

// Calls on_slot(name) for each slot and on_text(piece) for literal text.
template <typename OnText, typename OnSlot>
void scan_template(const std::string& line, OnText on_text, OnSlot on_slot) {
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (c == '{') {
            if (i + 1 < line.size() && line[i + 1] == '{') {
                on_text("{");
                ++i;
                continue;
            }
            const auto close = line.find('}', i + 1);
            if (close == std::string::npos) throw TemplateError("unterminated slot in template line: " + line);
            const std::string name = line.substr(i + 1, close - i - 1);
            if (name.empty() || !std::all_of(name.begin(), name.end(), is_slot_char)) {
                throw TemplateError("malformed slot '{" + name + "}'");
            }
            on_slot(name);
            i = close;
        } else if (c == '}') {
            if (i + 1 < line.size() && line[i + 1] == '}') {
                on_text("}");
                ++i;
                continue;
            }
            throw TemplateError("unbalanced '}' in template line: " + line);
        } else {
            on_text(std::string_view(&line[i], 1));
        }
    }
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (true) {
        const auto nl = text.find('\n', start);
        if (nl == std::string::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

std::string strip_newlines(const std::string& s) {
    const auto b = s.find_first_not_of("\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of("\r\n \t");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string render_slots(const std::string& text, const std::map<std::string, std::string>& values) {
    std::string out;
    const auto lines = split_lines(text);
    for (std::size_t li = 0; li < lines.size(); ++li) {
        const std::string& line = lines[li];
        const std::string t = trim(line);
        if (t.size() > 2 && t.front() == '{' && t.back() == '}' && t[1] != '{' &&
            t.find('{', 1) == std::string::npos) {
            const auto it = values.find(t.substr(1, t.size() - 2));
            if (it != values.end() && it->second.empty()) continue;
        }
        scan_template(
            line, [&](std::string_view piece) { out += piece; },
            [&](const std::string& name) {
                const auto it = values.find(name);
                if (it == values.end()) throw TemplateError("unknown slot '{" + name + "}'");
                out += it->second;
            });
        if (li + 1 < lines.size()) out += '\n';
    }
    return out;
}

std::vector<std::string> template_slots(const std::string& text) {
    std::set<std::string> names;
    for (const auto& line : split_lines(text)) {
        scan_template(line, [](std::string_view) {}, [&](const std::string& n) { names.insert(n); });
    }
    return {names.begin(), names.end()};
}

std::string PromptTemplate::hash() const {
    std::string all;
    for (const auto* part : {&name, &system_text, &user_text, &expert_directive, &non_expert_directive,
                             &no_context_text}) {
        all += *part;
        all += '\0';
    }
    return sha256_hex(all);
}

PromptTemplate parse_template(const std::string& name, const std::string& text) {
    PromptTemplate tpl;
    tpl.name = name;
    std::string* current = nullptr;
    bool seen_system = false, seen_user = false;
    for (const auto& line : split_lines(text)) {
        const std::string t = trim(line);
        if (t == "[system]") {
            current = &tpl.system_text;
            seen_system = true;
            continue;
        }
        if (t == "[user]") {
            current = &tpl.user_text;
            seen_user = true;
            continue;
        }
        if (current == nullptr) {
            if (!t.empty()) throw TemplateError("template '" + name + "': text before the first section");
            continue;
        }
        *current += line;
        *current += '\n';
    }
    if (!seen_system || !seen_user) {
        throw TemplateError("template '" + name + "' needs both [system] and [user] sections");
    }
    tpl.system_text = strip_newlines(tpl.system_text);
    tpl.user_text = strip_newlines(tpl.user_text);
    return tpl;
}

namespace {

std::string resource_text(const std::string& rel, const std::optional<fs::path>& dir) {
    if (dir) {
        const fs::path p = *dir / rel;
        if (fs::exists(p)) {
            std::ifstream in(p, std::ios::binary);
            if (!in) throw LoadError("cannot read template '" + p.string() + "'");
            std::ostringstream ss;
            ss << in.rdbuf();
            return ss.str();
        }
    }
    if (const auto builtin = resources::template_text(rel)) return std::string(*builtin);
    throw TemplateError("no template named '" + rel + "'");
}

}  // namespace

PromptTemplate load_prompt_template(const std::string& name, const std::optional<fs::path>& dir) {
    PromptTemplate tpl = parse_template(name, resource_text("prompts/" + name + ".txt", dir));
    tpl.expert_directive = strip_newlines(resource_text("audience/expert.txt", dir));
    tpl.non_expert_directive = strip_newlines(resource_text("audience/non_expert.txt", dir));
    tpl.no_context_text = strip_newlines(resource_text("prompts/no_context.txt", dir));
    static const std::set<std::string> allowed{"question", "contexts", "audience"};
    for (const auto* text : {&tpl.system_text, &tpl.user_text}) {
        for (const auto& slot : template_slots(*text)) {
            if (!allowed.count(slot)) throw TemplateError("template '" + name + "' uses unknown slot '{" + slot + "}'");
        }
    }
    if (template_slots(tpl.user_text + tpl.system_text) != std::vector<std::string>{"audience", "contexts", "question"}) {
        throw TemplateError("template '" + name + "' must use {question}, {contexts} and {audience}");
    }
    return tpl;
}

PromptTemplate load_judge_template(const std::string& name, const std::optional<fs::path>& dir) {
    const std::string rel = name == "rewrite" ? "prompts/rewrite.txt" : "judge/" + name + ".txt";
    return parse_template(name, resource_text(rel, dir));
}

std::string format_contexts(std::span<const Chunk> contexts) {
    std::string out;
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        if (i > 0) out += "\n\n";
        const auto& c = contexts[i];
        out += "[" + std::to_string(i + 1) + "] " + c.doc_id + ", characters " + std::to_string(c.span.start) + "-" +
               std::to_string(c.span.end) + "\n\"\"\"\n" + c.text + "\n\"\"\"";
    }
    return out;
}

std::vector<ChatMessage> RenderedPrompt::messages() const {
    std::vector<ChatMessage> m;
    if (!system.empty()) m.push_back({"system", system});
    m.push_back({"user", user});
    return m;
}

RenderedPrompt render_with(const PromptTemplate& tpl, const std::map<std::string, std::string>& values) {
    return RenderedPrompt{render_slots(tpl.system_text, values), render_slots(tpl.user_text, values)};
}

RenderedPrompt render_prompt(const PromptTemplate& tpl, const std::string& question, std::span<const Chunk> contexts,
                             Audience audience) {
    std::string directive;
    if (audience == Audience::expert) directive = tpl.expert_directive;
    if (audience == Audience::non_expert) directive = tpl.non_expert_directive;
    const std::map<std::string, std::string> values{
        {"question", question},
        {"contexts", contexts.empty() ? tpl.no_context_text : format_contexts(contexts)},
        {"audience", directive}};
    return render_with(tpl, values);
}

RateLimiter::RateLimiter(double requests_per_minute) {
    if (requests_per_minute > 0) {
        interval_ = std::chrono::nanoseconds(static_cast<long long>(60e9 / requests_per_minute));
    }
}

void RateLimiter::acquire() {
    if (interval_.count() == 0) return;
    std::lock_guard lock(mutex_);
    const auto now = std::chrono::steady_clock::now();
    if (next_ > now) std::this_thread::sleep_until(next_);
    next_ = std::max(now, next_) + interval_;
}

HttpChatClient::HttpChatClient(Endpoint endpoint, std::string model, DecodingParams decoding, RetryPolicy retry,
                               double requests_per_minute)
    : endpoint_(std::move(endpoint)),
      model_(std::move(model)),
      decoding_(decoding),
      retry_(retry),
      limiter_(requests_per_minute) {}

ChatResult HttpChatClient::complete(const std::vector<ChatMessage>& messages) const {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    const json body{{"model", model_},
                    {"messages", std::move(msgs)},
                    {"temperature", decoding_.temperature},
                    {"max_tokens", decoding_.max_tokens}};
    limiter_.acquire();
    ChatResult result;
    result.raw_request = body.dump();
    result.raw_response = post_json_raw(endpoint_, body, retry_);
    try {
        const json res = json::parse(result.raw_response);
        result.content = res.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw TransportError("malformed chat completion response: " + std::string(e.what()), 1, false);
    }
    return result;
}

std::vector<std::string> parse_context_blocks(const std::string& prompt) {
    std::vector<std::string> blocks;
    bool inside = false;
    std::string current;
    for (const auto& line : split_lines(prompt)) {
        if (trim(line) == "\"\"\"") {
            if (inside) {
                if (!current.empty()) current.pop_back();
                blocks.push_back(current);
                current.clear();
            }
            inside = !inside;
            continue;
        }
        if (inside) current += line + '\n';
    }
    return blocks;
}

namespace {

const ChatMessage* find_role(const std::vector<ChatMessage>& messages, const std::string& role) {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->role == role) return &*it;
    }
    return nullptr;
}

std::string judge_task(const std::vector<ChatMessage>& messages) {
    static const std::regex task_re(R"(Task:\s*([a-z_]+))");
    for (const auto& m : messages) {
        std::smatch match;
        if (std::regex_search(m.content, match, task_re)) return match[1].str();
    }
    return {};
}

std::string stem(const std::string& token) {
    return token.size() > 5 ? token.substr(0, 5) : token;
}

std::set<std::string> content_stems(std::string_view text) {
    std::set<std::string> out;
    const auto& stop = default_stopwords();
    for (const auto& t : word_tokens(text)) {
        if (!stop.count(t)) out.insert(stem(t));
    }
    return out;
}

// Text following the last line that starts with `label`, up to the end.
std::string after_label(const std::string& text, const std::string& label) {
    const auto pos = text.rfind("\n" + label);
    const auto start = pos == std::string::npos ? (text.rfind(label, 0) == 0 ? 0 : std::string::npos) : pos + 1;
    if (start == std::string::npos) return {};
    return trim(std::string_view(text).substr(start + label.size()));
}

ChatResult mock_result(const std::vector<ChatMessage>& messages, std::string content) {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    ChatResult r;
    r.raw_request = json{{"messages", std::move(msgs)}}.dump();
    r.raw_response = json{{"content", content}}.dump();
    r.content = std::move(content);
    return r;
}

bool looks_noncommittal(const std::string& answer) {
    const std::string a = to_lower_ascii(answer);
    for (const char* cue : {"i don't know", "i do not know", "not sure", "cannot determine", "can't determine",
                            "do not contain", "does not contain", "no information", "unable to answer"}) {
        if (a.find(cue) != std::string::npos) return true;
    }
    return trim(a).empty();
}

}  // namespace

ChatResult MockLLM::complete(const std::vector<ChatMessage>& messages) const {
    const ChatMessage* user = find_role(messages, "user");
    if (user == nullptr) throw TransportError("mock LLM: no user message", 1, false);
    if (judge_task(messages) == "rewrite") return mock_result(messages, trim(user->content));

    const auto blocks = parse_context_blocks(user->content);
    if (mode_ == Mode::echo_first_context) {
        return mock_result(messages, blocks.empty() ? "I don't know." : blocks.front());
    }

    std::string question;
    for (const auto& line : split_lines(user->content)) {
        if (line.rfind("Question:", 0) == 0) question = trim(line.substr(9));
    }
    if (question.empty()) question = user->content;
    const auto q = content_stems(question);

    std::string best;
    std::size_t best_hits = 0;
    for (const auto& block : blocks) {
        for (const auto& sentence : split_sentences(block)) {
            std::size_t hits = 0;
            for (const auto& s : content_stems(sentence)) hits += q.count(s);
            if (hits > best_hits) {
                best_hits = hits;
                best = sentence;
            }
        }
    }
    return mock_result(messages, best_hits == 0 ? "I don't know." : best);
}

ChatResult MockJudge::complete(const std::vector<ChatMessage>& messages) const {
    const ChatMessage* user = find_role(messages, "user");
    if (user == nullptr) throw TransportError("mock judge: no user message", 1, false);
    const std::string task = judge_task(messages);
    const std::string& text = user->content;

    if (task == "relevancy_questions") {
        static const std::regex n_re(R"(exactly\s+(\d+))");
        std::smatch m;
        const std::size_t n = std::regex_search(text, m, n_re) ? std::stoul(m[1].str()) : 3;
        const std::string answer = after_label(text, "Answer:");
        std::vector<std::string> questions;
        if (overrides_.questions) {
            questions = *overrides_.questions;
        } else {
            std::string body = answer;
            while (!body.empty() && std::string(".!?").find(body.back()) != std::string::npos) body.pop_back();
            for (std::size_t i = 0; i < n; ++i) questions.push_back("What does the document say about " + body + "?");
        }
        const bool nc = overrides_.noncommittal.value_or(looks_noncommittal(answer));
        return mock_result(messages, json{{"questions", questions}, {"noncommittal", nc ? 1 : 0}}.dump());
    }
    if (task == "claim_decomposition") {
        return mock_result(messages, json{{"claims", split_sentences(after_label(text, "Answer:"))}}.dump());
    }
    if (task == "claim_verdicts") {
        std::set<std::string> context_words;
        for (const auto& block : parse_context_blocks(text)) {
            for (auto& w : word_tokens(block)) context_words.insert(std::move(w));
        }
        static const std::regex claim_re(R"(^(\d+)\.\s+(.*)$)");
        json verdicts = json::array();
        for (const auto& line : split_lines(after_label(text, "Claims:"))) {
            std::smatch m;
            if (!std::regex_match(line, m, claim_re)) continue;
            bool supported = true;
            const auto& stop = default_stopwords();
            for (const auto& w : word_tokens(m[2].str())) {
                if (!stop.count(w) && !context_words.count(w)) supported = false;
            }
            verdicts.push_back({{"claim", std::stoi(m[1].str())}, {"verdict", supported ? 1 : 0}});
        }
        return mock_result(messages, json{{"verdicts", std::move(verdicts)}}.dump());
    }
    if (task == "rewrite") return mock_result(messages, trim(text));
    throw TransportError("mock judge: unrecognised task '" + task + "'", 1, false);
}

std::string rewrite_query(const LLMClient& client, const std::string& query,
                          const std::optional<fs::path>& template_dir) {
    const auto tpl = load_judge_template("rewrite", template_dir);
    const auto prompt = render_with(tpl, {{"query", query}});
    const std::string out = trim(client.complete(prompt.messages()).content);
    return out.empty() ? query : out;
}

void to_json(json& j, const GenerationRecord& r) {
    json contexts = json::array();
    for (const auto& c : r.contexts) {
        contexts.push_back({{"chunk_id", c.chunk_id},
                            {"doc_id", c.doc_id},
                            {"span", {c.span.start, c.span.end}},
                            {"text", c.text},
                            {"score", c.score},
                            {"rank", c.rank}});
    }
    j = json{{"record_id", r.record_id},
             {"query_id", r.query_id},
             {"query", r.query},
             {"question", r.question},
             {"domain", r.domain},
             {"analysis", r.analysis},
             {"template", r.template_name},
             {"template_hash", r.template_hash},
             {"model", r.model},
             {"decoding", {{"temperature", r.decoding.temperature}, {"max_tokens", r.decoding.max_tokens}}},
             {"k", r.k},
             {"k_mode", r.k_mode},
             {"audience", to_string(r.audience)},
             {"contexts", std::move(contexts)},
             {"truncated", r.truncated},
             {"dropped_contexts", r.dropped_contexts},
             {"system_prompt", r.system_prompt},
             {"user_prompt", r.user_prompt},
             {"raw_request", r.raw_request},
             {"raw_response", r.raw_response},
             {"response", r.response},
             {"failed", r.failed},
             {"error", r.error},
             {"attempts", r.attempts},
             {"latency_ms", r.latency_ms},
             {"warnings", r.warnings}};
}

void from_json(const json& j, GenerationRecord& r) {
    r.record_id = j.at("record_id").get<std::string>();
    r.query_id = j.at("query_id").get<std::string>();
    r.query = j.value("query", std::string());
    r.question = j.value("question", std::string());
    r.domain = j.value("domain", std::string());
    r.analysis = j.value("analysis", json());
    r.template_name = j.at("template").get<std::string>();
    r.template_hash = j.value("template_hash", std::string());
    r.model = j.at("model").get<std::string>();
    if (j.contains("decoding")) {
        r.decoding.temperature = j["decoding"].value("temperature", 0.0);
        r.decoding.max_tokens = j["decoding"].value("max_tokens", 512);
    }
    r.k = j.at("k").get<std::size_t>();
    r.k_mode = j.value("k_mode", std::string("fixed"));
    r.audience = audience_from_string(j.value("audience", std::string("none")));
    r.contexts.clear();
    for (const auto& c : j.at("contexts")) {
        ContextRef ref;
        ref.chunk_id = c.at("chunk_id").get<std::string>();
        ref.doc_id = c.at("doc_id").get<std::string>();
        ref.span = Span{c.at("span").at(0).get<std::size_t>(), c.at("span").at(1).get<std::size_t>()};
        ref.text = c.at("text").get<std::string>();
        ref.score = c.value("score", 0.0);
        ref.rank = c.value("rank", std::size_t{0});
        r.contexts.push_back(std::move(ref));
    }
    r.truncated = j.value("truncated", false);
    r.dropped_contexts = j.value("dropped_contexts", std::size_t{0});
    r.system_prompt = j.value("system_prompt", std::string());
    r.user_prompt = j.value("user_prompt", std::string());
    r.raw_request = j.value("raw_request", std::string());
    r.raw_response = j.value("raw_response", std::string());
    r.response = j.at("response").get<std::string>();
    r.failed = j.value("failed", false);
    r.error = j.value("error", std::string());
    r.attempts = j.value("attempts", 0);
    r.latency_ms = j.value("latency_ms", 0.0);
    r.warnings = j.value("warnings", std::vector<std::string>{});
}

void write_records(const fs::path& path, std::span<const GenerationRecord> records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    for (const auto& r : records) out << json(r).dump() << '\n';
}

std::vector<GenerationRecord> read_records(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot read '" + path.string() + "'");
    std::vector<GenerationRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            out.push_back(json::parse(line).get<GenerationRecord>());
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

GenerationRecord generate_answer(const LLMClient& client, const PromptTemplate& tpl, const GenerationInput& input,
                                 const GenerationOptions& options) {
    GenerationRecord rec;
    rec.query_id = input.query_id;
    rec.query = input.query;
    rec.question = input.question.empty() ? input.query : input.question;
    rec.domain = input.domain;
    rec.analysis = input.analysis;
    rec.template_name = tpl.name;
    rec.template_hash = tpl.hash();
    rec.model = client.model_name();
    rec.decoding = client.decoding();
    rec.k = input.k;
    rec.k_mode = input.k_mode;
    rec.audience = input.audience;
    rec.record_id = rec.query_id + "|" + rec.template_name + "|" + rec.model + "|k" + std::to_string(rec.k) + "|" +
                    rec.k_mode + "|" + to_string(rec.audience);

    const std::size_t take = std::min(input.k, input.candidates.size());
    if (take < input.k) {
        rec.warnings.push_back("only " + std::to_string(take) + " contexts available for k=" + std::to_string(input.k));
    }
    std::vector<Chunk> used;
    std::size_t budget_used = 0;
    for (std::size_t i = 0; i < take; ++i) {
        const auto& sc = input.candidates[i];
        const std::size_t len = utf8_length(sc.chunk.text);
        if (options.max_context_chars > 0 && !used.empty() && budget_used + len > options.max_context_chars) {
            rec.truncated = true;
            rec.dropped_contexts = take - i;
            rec.warnings.push_back("context budget reached; dropped " + std::to_string(rec.dropped_contexts) +
                                   " lowest-ranked contexts");
            break;
        }
        budget_used += len;
        used.push_back(sc.chunk);
        rec.contexts.push_back(ContextRef{sc.chunk.chunk_id, sc.chunk.doc_id, sc.chunk.span, sc.chunk.text, sc.score,
                                          sc.rank});
    }

    const RenderedPrompt prompt = render_prompt(tpl, rec.question, used, input.audience);
    rec.system_prompt = prompt.system;
    rec.user_prompt = prompt.user;

    auto backoff = options.initial_backoff;
    const auto start = std::chrono::steady_clock::now();
    const int limit = std::max(1, options.max_attempts);
    for (int attempt = 1; attempt <= limit; ++attempt) {
        rec.attempts = attempt;
        try {
            ChatResult res = client.complete(prompt.messages());
            rec.response = std::move(res.content);
            rec.raw_request = std::move(res.raw_request);
            rec.raw_response = std::move(res.raw_response);
            rec.failed = false;
            rec.error.clear();
            break;
        } catch (const TransportError& e) {
            rec.failed = true;
            rec.error = e.what();
            if (!e.retryable() || attempt == limit) break;
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        } catch (const Error& e) {
            rec.failed = true;
            rec.error = e.what();
            break;
        }
    }
    rec.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (rec.failed) warn("generation failed for '" + rec.record_id + "': " + rec.error);
    return rec;
}

std::vector<GenerationRecord> run_matrix(std::span<const GenerationInput> inputs,
                                         std::span<const PromptTemplate> templates,
                                         std::span<const LLMClient* const> clients, std::span<const std::size_t> ks,
                                         const MatrixOptions& options) {
    struct Job {
        const GenerationInput* input;
        const PromptTemplate* tpl;
        const LLMClient* client;
        std::size_t k;
    };
    std::vector<Job> jobs;
    for (const auto& in : inputs) {
        for (const auto& tpl : templates) {
            for (const auto* client : clients) {
                if (options.adaptive) {
                    jobs.push_back({&in, &tpl, client, in.k});
                } else {
                    for (const auto k : ks) jobs.push_back({&in, &tpl, client, k});
                }
            }
        }
    }

    std::vector<GenerationRecord> records(jobs.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            GenerationInput in = *jobs[i].input;
            in.k = jobs[i].k;
            in.k_mode = options.adaptive ? "adaptive" : "fixed";
            records[i] = generate_answer(*jobs[i].client, *jobs[i].tpl, in, options.generation);
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(options.max_in_flight, 1, std::max<std::size_t>(1, jobs.size()));
    std::vector<std::thread> threads;
    for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    return records;
}

std::map<std::string, CellFailures> failure_summary(std::span<const GenerationRecord> records) {
    std::map<std::string, CellFailures> out;
    for (const auto& r : records) {
        auto& cell = out[r.template_name + "|" + r.model + "|" + std::to_string(r.k)];
        ++cell.total;
        if (r.failed) ++cell.failed;
    }
    return out;
}

}  // namespace legalrag
