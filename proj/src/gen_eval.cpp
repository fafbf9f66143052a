#include "legalrag/gen_eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <set>
#include <thread>

#include "legalrag/errors.hpp"
#include "legalrag/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace legalrag {

namespace {

// Judges often wrap JSON in prose or code fences.
std::optional<json> extract_json(const std::string& content) {
    const auto b = content.find('{');
    const auto e = content.rfind('}');
    if (b == std::string::npos || e == std::string::npos || e < b) return std::nullopt;
    try {
        return json::parse(content.substr(b, e - b + 1));
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

json transcript(const std::string& stage, const RenderedPrompt& prompt, const std::string& response) {
    return json{{"stage", stage}, {"system", prompt.system}, {"user", prompt.user}, {"response", response}};
}

void require_answer(const GenerationRecord& record) {
    if (record.failed) throw std::invalid_argument("record '" + record.record_id + "' has no response (generation failed)");
    if (trim(record.response).empty()) throw std::invalid_argument("record '" + record.record_id + "' has an empty response");
}

}  // namespace

RelevancyResult answer_relevancy(const GenerationRecord& record, const LLMClient& judge,
                                 const EmbeddingBackend& backend, std::size_t n_questions,
                                 const std::optional<fs::path>& template_dir) {
    require_answer(record);
    if (n_questions == 0) throw std::invalid_argument("n_questions must be >= 1");
    const auto tpl = load_judge_template("relevancy_questions", template_dir);
    const auto prompt = render_with(tpl, {{"n", std::to_string(n_questions)}, {"answer", record.response}});

    RelevancyResult result;
    result.n_questions = n_questions;
    std::optional<json> parsed;
    for (int attempt = 0; attempt < 2; ++attempt) {
        const ChatResult res = judge.complete(prompt.messages());
        result.transcripts.push_back(transcript("relevancy_questions", prompt, res.content));
        auto j = extract_json(res.content);
        if (!j || !j->contains("questions") || !(*j)["questions"].is_array()) continue;
        parsed = std::move(j);
        if ((*parsed)["questions"].size() == n_questions) break;
    }
    if (!parsed) throw ParseError("judge returned no usable question list for '" + record.record_id + "'");

    for (const auto& q : (*parsed)["questions"]) {
        if (q.is_string() && !trim(q.get<std::string>()).empty()) result.generated_questions.push_back(q.get<std::string>());
    }
    if (result.generated_questions.size() > n_questions) result.generated_questions.resize(n_questions);
    result.count_mismatch = result.generated_questions.size() != n_questions;
    if (result.generated_questions.empty()) throw ParseError("judge generated no questions for '" + record.record_id + "'");

    const auto& nc = (*parsed).value("noncommittal", json(0));
    result.non_committal = nc.is_boolean() ? nc.get<bool>() : (nc.is_number() && nc.get<double>() != 0.0);

    std::vector<std::string> texts{record.question.empty() ? record.query : record.question};
    texts.insert(texts.end(), result.generated_questions.begin(), result.generated_questions.end());
    const Matrix m = backend.embed(texts);
    if (m.rows() != texts.size()) throw IntegrityError("embedding backend returned the wrong number of rows");
    double sum = 0.0;
    for (std::size_t i = 1; i < m.rows(); ++i) {
        const double c = cosine(m.row(i), m.row(0));
        result.cosine_scores.push_back(c);
        sum += c;
    }
    result.mean_cosine = sum / static_cast<double>(result.cosine_scores.size());
    result.final_score = result.non_committal ? 0.0 : result.mean_cosine;
    return result;
}

FaithfulnessResult faithfulness(const GenerationRecord& record, const LLMClient& judge,
                                const std::optional<fs::path>& template_dir) {
    require_answer(record);
    FaithfulnessResult result;

    const auto decompose = load_judge_template("claim_decomposition", template_dir);
    const auto p1 = render_with(decompose, {{"question", record.question}, {"answer", record.response}});
    std::optional<std::vector<std::string>> claims;
    for (int attempt = 0; attempt < 2 && !claims; ++attempt) {
        const ChatResult res = judge.complete(p1.messages());
        result.transcripts.push_back(transcript("claim_decomposition", p1, res.content));
        const auto j = extract_json(res.content);
        if (!j || !j->contains("claims") || !(*j)["claims"].is_array()) continue;
        std::vector<std::string> list;
        for (const auto& c : (*j)["claims"]) {
            if (c.is_string() && !trim(c.get<std::string>()).empty()) list.push_back(trim(c.get<std::string>()));
        }
        claims = std::move(list);
    }
    if (!claims) {
        result.parse_flag = true;
        claims = std::vector<std::string>{};
    }
    // A non-empty answer always carries at least one claim: itself.
    if (claims->empty()) claims->push_back(trim(record.response));
    result.claims = *claims;

    std::vector<Chunk> ctx;
    for (const auto& c : record.contexts) ctx.push_back(Chunk{c.doc_id, c.span, c.text, c.chunk_id});
    std::string numbered;
    for (std::size_t i = 0; i < result.claims.size(); ++i) {
        numbered += std::to_string(i + 1) + ". " + result.claims[i] + "\n";
    }
    const auto verdict_tpl = load_judge_template("claim_verdicts", template_dir);
    const auto p2 = render_with(verdict_tpl, {{"contexts", ctx.empty() ? "(none)" : format_contexts(ctx)},
                                              {"claims", trim(numbered)}});

    std::vector<std::optional<bool>> verdicts(result.claims.size());
    for (int attempt = 0; attempt < 2; ++attempt) {
        const ChatResult res = judge.complete(p2.messages());
        result.transcripts.push_back(transcript("claim_verdicts", p2, res.content));
        const auto j = extract_json(res.content);
        if (j && j->contains("verdicts") && (*j)["verdicts"].is_array()) {
            const auto& arr = (*j)["verdicts"];
            for (std::size_t pos = 0; pos < arr.size(); ++pos) {
                const auto& v = arr[pos];
                std::size_t idx = pos;
                if (v.is_object() && v.contains("claim") && v["claim"].is_number_integer()) {
                    idx = v["claim"].get<std::size_t>() - 1;
                }
                const json verdict = v.is_object() ? v.value("verdict", json()) : v;
                if (idx >= verdicts.size() || verdicts[idx]) continue;
                if (verdict.is_number()) verdicts[idx] = verdict.get<double>() != 0.0;
                if (verdict.is_boolean()) verdicts[idx] = verdict.get<bool>();
                if (verdict.is_string()) {
                    const std::string s = to_lower_ascii(verdict.get<std::string>());
                    if (s == "yes" || s == "supported" || s == "1") verdicts[idx] = true;
                    if (s == "no" || s == "unsupported" || s == "0") verdicts[idx] = false;
                }
            }
        }
        if (std::all_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.has_value(); })) break;
    }

    std::size_t supported = 0;
    for (const auto& v : verdicts) {
        result.supported.push_back(v.value_or(false));
        result.parse_failed.push_back(!v.has_value());
        if (!v) result.parse_flag = true;
        if (v.value_or(false)) ++supported;
    }
    result.score = static_cast<double>(supported) / static_cast<double>(result.claims.size());
    return result;
}

std::vector<std::string> rouge_tokens(std::string_view text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (const char c : text) {
        const auto u = static_cast<unsigned char>(c);
        cleaned += (u < 0x80 && std::ispunct(u)) ? ' ' : static_cast<char>(std::tolower(u));
    }
    return split_whitespace(cleaned);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

double ngram_recall(const std::vector<std::string>& answer, const std::vector<std::string>& reference, std::size_t n) {
    const auto ref = ngram_counts(reference, n);
    const auto ans = ngram_counts(answer, n);
    std::size_t matched = 0, total = 0;
    for (const auto& [gram, count] : ref) {
        total += count;
        const auto it = ans.find(gram);
        if (it != ans.end()) matched += std::min(count, it->second);
    }
    return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

}  // namespace

RougeScores rouge_recall(std::string_view answer, std::string_view reference) {
    RougeScores s;
    const auto a = rouge_tokens(answer);
    const auto r = rouge_tokens(reference);
    if (a.empty()) s.flags.push_back("empty_answer");
    if (r.size() < 1) s.flags.push_back("reference_shorter_than_1");
    if (r.size() < 2) s.flags.push_back("reference_shorter_than_2");
    s.rouge1_recall = ngram_recall(a, r, 1);
    s.rouge2_recall = ngram_recall(a, r, 2);
    s.rougeL_recall = r.empty() ? 0.0 : static_cast<double>(lcs_length(a, r)) / static_cast<double>(r.size());
    s.rouge_recall_avg = (s.rouge1_recall + s.rouge2_recall + s.rougeL_recall) / 3.0;
    return s;
}

BertScore bertscore(const TokenEmbeddings& answer, const TokenEmbeddings& reference) {
    BertScore s;
    const std::size_t na = answer.vectors.rows(), nr = reference.vectors.rows();
    if (na == 0 || nr == 0) return s;
    std::vector<double> best_a(na, 0.0), best_r(nr, 0.0);
    for (std::size_t i = 0; i < na; ++i) {
        for (std::size_t j = 0; j < nr; ++j) {
            const double c = std::max(0.0, cosine(answer.vectors.row(i), reference.vectors.row(j)));
            best_a[i] = std::max(best_a[i], c);
            best_r[j] = std::max(best_r[j], c);
        }
    }
    for (const double v : best_a) s.precision += v;
    for (const double v : best_r) s.recall += v;
    s.precision /= static_cast<double>(na);
    s.recall /= static_cast<double>(nr);
    s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

BertScore bertscore_f1(const std::string& answer, const std::string& reference, const TokenEmbeddingBackend& backend) {
    return bertscore(backend.embed_tokens(answer), backend.embed_tokens(reference));
}

std::string to_string(ReferenceMode m) {
    return m == ReferenceMode::gold ? "gold" : "contexts";
}

ReferenceMode reference_mode_from_string(const std::string& s) {
    if (s == "contexts") return ReferenceMode::contexts;
    if (s == "gold") return ReferenceMode::gold;
    throw ValidationError("unknown reference mode '" + s + "' (expected contexts or gold)");
}

void to_json(json& j, const ScoredRecord& s) {
    j = json{{"record_id", s.record_id}, {"query_id", s.query_id}, {"domain", s.domain},
             {"template", s.template_name}, {"model", s.model}, {"k", s.k},
             {"k_mode", s.k_mode}, {"audience", s.audience}, {"failed", s.failed},
             {"flags", s.flags}};
    json rel = json::object();
    for (const auto& [n, r] : s.relevancy) {
        rel["n" + std::to_string(n)] = {{"generated_questions", r.generated_questions},
                                         {"cosine_scores", r.cosine_scores},
                                         {"mean_cosine", r.mean_cosine},
                                         {"non_committal", r.non_committal},
                                         {"final_score", r.final_score},
                                         {"count_mismatch", r.count_mismatch},
                                         {"transcripts", r.transcripts}};
    }
    j["answer_relevancy"] = std::move(rel);
    if (s.faithfulness) {
        const auto& f = *s.faithfulness;
        j["faithfulness"] = {{"claims", f.claims},       {"supported", f.supported},
                             {"parse_failed", f.parse_failed}, {"score", f.score},
                             {"parse_flag", f.parse_flag}, {"transcripts", f.transcripts}};
    } else {
        j["faithfulness"] = nullptr;
    }
    if (s.rouge) {
        j["rouge"] = {{"rouge1_recall", s.rouge->rouge1_recall},
                      {"rouge2_recall", s.rouge->rouge2_recall},
                      {"rougeL_recall", s.rouge->rougeL_recall},
                      {"rouge_recall_avg", s.rouge->rouge_recall_avg},
                      {"flags", s.rouge->flags}};
    } else {
        j["rouge"] = nullptr;
    }
    if (s.bert) {
        j["bertscore"] = {{"precision", s.bert->precision}, {"recall", s.bert->recall}, {"f1", s.bert->f1}};
    } else {
        j["bertscore"] = nullptr;
    }
}

namespace {

ScoredRecord score_one(const GenerationRecord& rec, const LLMClient* judge, const EmbeddingBackend& backend,
                       const TokenEmbeddingBackend* token_backend, const std::map<std::string, std::string>& gold,
                       const EvalOptions& options) {
    ScoredRecord s;
    s.record_id = rec.record_id;
    s.query_id = rec.query_id;
    s.domain = rec.domain;
    s.template_name = rec.template_name;
    s.model = rec.model;
    s.k = rec.k;
    s.k_mode = rec.k_mode;
    s.audience = to_string(rec.audience);
    if (rec.failed || trim(rec.response).empty()) {
        s.failed = true;
        s.flags.push_back(rec.failed ? "generation_failed" : "empty_answer");
        return s;
    }

    if (judge == nullptr) {
        s.flags.push_back("judge_metrics_skipped: no judge configured");
    } else {
        for (const auto n : options.question_counts) {
            try {
                auto r = answer_relevancy(rec, *judge, backend, n, options.template_dir);
                if (r.count_mismatch) s.flags.push_back("relevancy_n" + std::to_string(n) + "_count_mismatch");
                s.relevancy.emplace(n, std::move(r));
            } catch (const Error& e) {
                s.flags.push_back("relevancy_n" + std::to_string(n) + "_skipped: " + e.what());
            }
        }
        try {
            s.faithfulness = faithfulness(rec, *judge, options.template_dir);
            if (s.faithfulness->parse_flag) s.flags.push_back("faithfulness_parse_flag");
        } catch (const Error& e) {
            s.flags.push_back(std::string("faithfulness_skipped: ") + e.what());
        }
    }

    std::string reference;
    if (options.reference == ReferenceMode::gold) {
        const auto it = gold.find(rec.query_id);
        if (it != gold.end()) reference = it->second;
    } else {
        for (const auto& c : rec.contexts) {
            if (!reference.empty()) reference += '\n';
            reference += c.text;
        }
    }
    if (trim(reference).empty()) {
        s.flags.push_back("lexical_metrics_skipped: no reference text");
        return s;
    }
    s.rouge = rouge_recall(rec.response, reference);
    if (token_backend == nullptr) {
        s.flags.push_back("bertscore_skipped: no token backend");
    } else {
        try {
            s.bert = bertscore_f1(rec.response, reference, *token_backend);
        } catch (const Error& e) {
            s.flags.push_back(std::string("bertscore_skipped: ") + e.what());
        }
    }
    return s;
}

}  // namespace

std::vector<ScoredRecord> score_records(std::span<const GenerationRecord> records, const LLMClient* judge,
                                        const EmbeddingBackend& backend, const TokenEmbeddingBackend* token_backend,
                                        const std::map<std::string, std::string>& gold, const EvalOptions& options) {
    std::vector<ScoredRecord> out(records.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i = next++; i < records.size(); i = next++) {
            out[i] = score_one(records[i], judge, backend, token_backend, gold, options);
        }
    };
    const std::size_t n_threads =
        std::clamp<std::size_t>(options.max_in_flight, 1, std::max<std::size_t>(1, records.size()));
    std::vector<std::thread> threads;
    for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    for (const auto& s : out) {
        for (const auto& f : s.flags) {
            if (f.find("skipped") != std::string::npos) warn(s.record_id + ": " + f);
        }
    }
    return out;
}

void write_scored_records(const fs::path& path, std::span<const ScoredRecord> scored) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    for (const auto& s : scored) out << json(s).dump() << '\n';
}

namespace {

std::string group_value(const ScoredRecord& s, const std::string& dim) {
    if (dim == "template") return s.template_name;
    if (dim == "model") return s.model;
    if (dim == "k") return std::to_string(s.k);
    if (dim == "k_mode") return s.k_mode;
    if (dim == "audience") return s.audience;
    if (dim == "domain") return s.domain;
    throw ValidationError("unknown grouping dimension '" + dim + "'");
}

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

MetricTable aggregate_metrics(std::span<const ScoredRecord> scored, const std::vector<std::string>& group_by) {
    MetricTable table;
    table.group_by = group_by;

    std::set<std::size_t> ns;
    for (const auto& s : scored) {
        for (const auto& [n, r] : s.relevancy) ns.insert(n);
    }
    table.metric_columns.push_back("faithfulness");
    for (const auto n : ns) {
        table.metric_columns.push_back("answer_relevancy_n" + std::to_string(n));
        table.metric_columns.push_back("answer_relevancy_n" + std::to_string(n) + "_no_multiplier");
    }
    for (const char* c : {"rouge1_recall", "rouge2_recall", "rougeL_recall", "rouge_recall", "bertscore_precision",
                          "bertscore_recall", "bertscore_f1"}) {
        table.metric_columns.push_back(c);
    }
    const std::size_t rate_n = ns.empty() ? 0 : *ns.begin();

    std::map<std::vector<std::string>, std::vector<const ScoredRecord*>> groups;
    for (const auto& s : scored) {
        std::vector<std::string> key;
        for (const auto& d : group_by) key.push_back(group_value(s, d));
        groups[key].push_back(&s);
    }

    // Numeric-aware ordering so k=10 sorts after k=5.
    std::vector<std::vector<std::string>> keys;
    for (const auto& [k, v] : groups) keys.push_back(k);
    std::stable_sort(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i] == b[i]) continue;
            if (group_by[i] == "k") return std::stoul(a[i]) < std::stoul(b[i]);
            return a[i] < b[i];
        }
        return false;
    });

    for (const auto& key : keys) {
        const auto& members = groups.at(key);
        MetricRow row;
        for (std::size_t i = 0; i < group_by.size(); ++i) row.group[group_by[i]] = key[i];
        row.records = members.size();
        std::map<std::string, double> sums;
        std::size_t rated = 0;
        const auto add = [&](const std::string& col, double v) {
            sums[col] += v;
            ++row.metrics[col].count;
        };
        for (const auto* s : members) {
            if (s->failed) {
                ++row.failed;
                continue;
            }
            if (s->faithfulness) add("faithfulness", s->faithfulness->score);
            for (const auto& [n, r] : s->relevancy) {
                add("answer_relevancy_n" + std::to_string(n), r.final_score);
                add("answer_relevancy_n" + std::to_string(n) + "_no_multiplier", r.mean_cosine);
                if (n == rate_n) {
                    ++rated;
                    if (r.non_committal) ++row.non_committal;
                }
            }
            if (s->rouge) {
                add("rouge1_recall", s->rouge->rouge1_recall);
                add("rouge2_recall", s->rouge->rouge2_recall);
                add("rougeL_recall", s->rouge->rougeL_recall);
                add("rouge_recall", s->rouge->rouge_recall_avg);
            }
            if (s->bert) {
                add("bertscore_precision", s->bert->precision);
                add("bertscore_recall", s->bert->recall);
                add("bertscore_f1", s->bert->f1);
            }
        }
        if (row.failed == row.records) {
            std::string label;
            for (const auto& v : key) label += (label.empty() ? "" : "|") + v;
            warn("metric group '" + label + "' has no scored records; omitted");
            continue;
        }
        for (auto& [col, mean] : row.metrics) mean.mean = sums[col] / static_cast<double>(mean.count);
        row.non_committal_rate = rated == 0 ? 0.0 : static_cast<double>(row.non_committal) / static_cast<double>(rated);
        table.rows.push_back(std::move(row));
    }
    return table;
}

void write_metric_csv(const MetricTable& table, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    for (const auto& g : table.group_by) out << g << ',';
    out << "records,failed,non_committal,non_committal_rate";
    for (const auto& c : table.metric_columns) out << ',' << c;
    out << '\n';
    for (const auto& row : table.rows) {
        for (const auto& g : table.group_by) out << row.group.at(g) << ',';
        out << row.records << ',' << row.failed << ',' << row.non_committal << ',' << fmt6(row.non_committal_rate);
        for (const auto& c : table.metric_columns) {
            out << ',';
            const auto it = row.metrics.find(c);
            if (it != row.metrics.end() && it->second.count > 0) out << fmt6(it->second.mean);
        }
        out << '\n';
    }
}

json metric_table_json(const MetricTable& table) {
    json rows = json::array();
    for (const auto& row : table.rows) {
        json metrics = json::object();
        for (const auto& c : table.metric_columns) {
            const auto it = row.metrics.find(c);
            if (it != row.metrics.end() && it->second.count > 0) {
                metrics[c] = {{"mean", std::stod(fmt6(it->second.mean))}, {"count", it->second.count}};
            } else {
                metrics[c] = nullptr;
            }
        }
        rows.push_back({{"group", row.group},
                        {"records", row.records},
                        {"failed", row.failed},
                        {"non_committal", row.non_committal},
                        {"non_committal_rate", std::stod(fmt6(row.non_committal_rate))},
                        {"metrics", std::move(metrics)}});
    }
    return json{{"group_by", table.group_by}, {"columns", table.metric_columns}, {"rows", std::move(rows)}};
}

}  // namespace legalrag
