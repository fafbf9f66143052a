#include "legalrag/retrieval_eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <unordered_map>

#include "legalrag/errors.hpp"
#include "legalrag/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace legalrag {

std::vector<DocSpan> doc_spans(std::span<const ScoredChunk> retrieved) {
    std::vector<DocSpan> out;
    out.reserve(retrieved.size());
    for (const auto& r : retrieved) out.push_back(DocSpan{r.chunk.doc_id, r.chunk.span});
    return out;
}

std::vector<DocSpan> doc_spans(std::span<const GroundTruthSnippet> truth) {
    std::vector<DocSpan> out;
    out.reserve(truth.size());
    for (const auto& t : truth) out.push_back(DocSpan{t.doc_id, t.span});
    return out;
}

namespace {

std::map<std::string, std::vector<Span>> unions_by_doc(std::span<const DocSpan> spans) {
    std::map<std::string, std::vector<Span>> grouped;
    for (const auto& s : spans) grouped[s.doc_id].push_back(s.span);
    for (auto& [doc, v] : grouped) v = union_spans(std::move(v));
    return grouped;
}

std::size_t overlap_with(const std::vector<Span>& disjoint, Span s) {
    std::size_t total = 0;
    for (const auto& u : disjoint) total += span_overlap(u, s);
    return total;
}

std::size_t total_length(const std::map<std::string, std::vector<Span>>& unions) {
    std::size_t n = 0;
    for (const auto& [doc, v] : unions) {
        for (const auto& s : v) n += s.length();
    }
    return n;
}

}  // namespace

double span_precision(std::span<const DocSpan> retrieved, std::span<const DocSpan> truth) {
    const auto truth_union = unions_by_doc(truth);
    std::size_t hit = 0, total = 0;
    for (const auto& r : retrieved) {
        total += r.span.length();
        const auto it = truth_union.find(r.doc_id);
        if (it != truth_union.end()) hit += overlap_with(it->second, r.span);
    }
    return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

std::optional<double> span_recall(std::span<const DocSpan> retrieved, std::span<const DocSpan> truth) {
    const auto truth_union = unions_by_doc(truth);
    const std::size_t denom = total_length(truth_union);
    if (denom == 0) return std::nullopt;
    const auto retrieved_union = unions_by_doc(retrieved);
    std::size_t covered = 0;
    for (const auto& [doc, spans] : truth_union) {
        const auto it = retrieved_union.find(doc);
        if (it == retrieved_union.end()) continue;
        for (const auto& t : spans) covered += overlap_with(it->second, t);
    }
    return static_cast<double>(covered) / static_cast<double>(denom);
}

double precision_at_k(std::span<const ScoredChunk> retrieved, std::span<const GroundTruthSnippet> truth,
                      std::size_t k) {
    const auto r = doc_spans(retrieved.first(std::min(k, retrieved.size())));
    const auto t = doc_spans(truth);
    return span_precision(r, t);
}

std::optional<double> recall_at_k(std::span<const ScoredChunk> retrieved, std::span<const GroundTruthSnippet> truth,
                                  std::size_t k) {
    const auto r = doc_spans(retrieved.first(std::min(k, retrieved.size())));
    const auto t = doc_spans(truth);
    return span_recall(r, t);
}

std::string VariantLabels::key() const {
    return chunking + "_" + backend + "_" + similarity + "_" + ranking + "_" + translation;
}

void to_json(json& j, const VariantLabels& v) {
    j = json{{"chunking", v.chunking},
             {"backend", v.backend},
             {"similarity", v.similarity},
             {"ranking", v.ranking},
             {"translation", v.translation}};
}

void from_json(const json& j, VariantLabels& v) {
    v.chunking = j.at("chunking").get<std::string>();
    v.backend = j.at("backend").get<std::string>();
    v.similarity = j.at("similarity").get<std::string>();
    v.ranking = j.at("ranking").get<std::string>();
    v.translation = j.at("translation").get<std::string>();
}

void save_run(const RetrievalRun& run, const fs::path& path) {
    json queries = json::array();
    for (const auto& q : run.queries) {
        json results = json::array();
        for (const auto& r : q.results) {
            results.push_back({{"chunk_id", r.chunk.chunk_id},
                               {"doc_id", r.chunk.doc_id},
                               {"span", {r.chunk.span.start, r.chunk.span.end}},
                               {"text", r.chunk.text},
                               {"score", r.score},
                               {"rank", r.rank}});
        }
        queries.push_back({{"query_id", q.query_id}, {"results", std::move(results)}});
    }
    const json doc{{"variant", run.variant}, {"depth", run.depth}, {"warnings", run.warnings},
                   {"queries", std::move(queries)}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write run '" + path.string() + "'");
    out << doc.dump() << '\n';
}

RetrievalRun load_run(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot read run '" + path.string() + "'");
    RetrievalRun run;
    try {
        const json doc = json::parse(in);
        run.variant = doc.at("variant").get<VariantLabels>();
        run.depth = doc.at("depth").get<std::size_t>();
        run.warnings = doc.value("warnings", std::vector<std::string>{});
        for (const auto& q : doc.at("queries")) {
            QueryResult qr;
            qr.query_id = q.at("query_id").get<std::string>();
            for (const auto& r : q.at("results")) {
                ScoredChunk sc;
                sc.chunk.chunk_id = r.at("chunk_id").get<std::string>();
                sc.chunk.doc_id = r.at("doc_id").get<std::string>();
                sc.chunk.span = Span{r.at("span").at(0).get<std::size_t>(), r.at("span").at(1).get<std::size_t>()};
                sc.chunk.text = r.value("text", std::string());
                sc.score = r.at("score").get<double>();
                sc.rank = r.at("rank").get<std::size_t>();
                qr.results.push_back(std::move(sc));
            }
            run.queries.push_back(std::move(qr));
        }
    } catch (const json::exception& e) {
        throw ParseError("run '" + path.string() + "': " + e.what());
    }
    return run;
}

PRCurve evaluate_run(const RetrievalRun& run, const std::vector<QAPair>& benchmark, std::span<const std::size_t> ks) {
    if (ks.empty()) throw std::invalid_argument("evaluate_run needs at least one k");
    for (const auto k : ks) {
        if (k < 1) throw std::invalid_argument("k must be >= 1");
    }
    std::unordered_map<std::string, const QueryResult*> by_id;
    for (const auto& q : run.queries) by_id.emplace(q.query_id, &q);

    std::vector<std::string> missing;
    for (const auto& qa : benchmark) {
        if (by_id.count(qa.id) == 0) missing.push_back(qa.id);
    }
    if (!missing.empty()) {
        std::string msg = "run '" + run.variant.key() + "' is missing " + std::to_string(missing.size()) +
                          " benchmark queries:";
        for (std::size_t i = 0; i < missing.size() && i < 50; ++i) msg += " " + missing[i];
        throw IntegrityError(msg);
    }

    PRCurve curve;
    curve.variant = run.variant;
    curve.ks.assign(ks.begin(), ks.end());
    const std::size_t max_k = *std::max_element(ks.begin(), ks.end());

    struct Sums {
        std::vector<double> p, r;
        std::size_t n = 0;
    };
    Sums overall{std::vector<double>(ks.size()), std::vector<double>(ks.size()), 0};
    std::map<std::string, Sums> per_domain;

    for (const auto& qa : benchmark) {
        const auto& results = by_id.at(qa.id)->results;
        if (results.size() < max_k) ++curve.short_lists;
        const auto truth = doc_spans(qa.snippets);
        if (!span_recall({}, truth)) {
            warn("query '" + qa.id + "' has zero-length ground truth; excluded");
            ++curve.excluded_queries;
            continue;
        }
        auto& dom = per_domain.try_emplace(qa.domain, Sums{std::vector<double>(ks.size()),
                                                           std::vector<double>(ks.size()), 0})
                        .first->second;
        const auto retrieved = doc_spans(results);
        for (std::size_t i = 0; i < ks.size(); ++i) {
            const auto top = std::span<const DocSpan>(retrieved).first(std::min(ks[i], retrieved.size()));
            const double p = span_precision(top, truth);
            const double r = *span_recall(top, truth);
            overall.p[i] += p;
            overall.r[i] += r;
            dom.p[i] += p;
            dom.r[i] += r;
        }
        ++overall.n;
        ++dom.n;
    }
    if (curve.short_lists > 0) {
        warn("run '" + run.variant.key() + "': " + std::to_string(curve.short_lists) +
             " queries returned fewer than " + std::to_string(max_k) + " chunks; scored on what was returned");
    }

    const auto finish = [&](const Sums& s) {
        std::vector<PRPoint> pts(ks.size());
        for (std::size_t i = 0; i < ks.size(); ++i) {
            if (s.n > 0) {
                pts[i].precision = s.p[i] / static_cast<double>(s.n);
                pts[i].recall = s.r[i] / static_cast<double>(s.n);
            }
            pts[i].queries = s.n;
        }
        return pts;
    };
    curve.overall = finish(overall);
    for (const auto& [domain, sums] : per_domain) curve.by_domain[domain] = finish(sums);
    return curve;
}

std::vector<std::size_t> parse_ks(const std::string& spec) {
    std::set<std::size_t> ks;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        const auto comma = spec.find(',', pos);
        const std::string part = trim(spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
        if (!part.empty()) {
            try {
                const auto dash = part.find('-');
                if (dash == std::string::npos) {
                    ks.insert(std::stoul(part));
                } else {
                    const auto lo = std::stoul(part.substr(0, dash));
                    const auto hi = std::stoul(part.substr(dash + 1));
                    if (lo > hi) throw ValidationError("bad k range '" + part + "'");
                    for (auto k = lo; k <= hi; ++k) ks.insert(k);
                }
            } catch (const std::logic_error&) {
                throw ValidationError("bad k specification '" + spec + "'");
            }
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (ks.empty() || *ks.begin() == 0) throw ValidationError("k values must be >= 1: '" + spec + "'");
    return {ks.begin(), ks.end()};
}

namespace {

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string labels_csv(const VariantLabels& v) {
    return v.chunking + "," + v.backend + "," + v.similarity + "," + v.ranking + "," + v.translation;
}

}  // namespace

void write_pr_csv(std::span<const PRCurve> curves, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    out << "chunking,backend,similarity,ranking,translation,domain,k,precision,recall,queries\n";
    for (const auto& c : curves) {
        const auto emit = [&](const std::string& domain, const std::vector<PRPoint>& pts) {
            for (std::size_t i = 0; i < c.ks.size(); ++i) {
                out << labels_csv(c.variant) << ',' << domain << ',' << c.ks[i] << ',' << fmt6(pts[i].precision)
                    << ',' << fmt6(pts[i].recall) << ',' << pts[i].queries << '\n';
            }
        };
        emit("overall", c.overall);
        for (const auto& [domain, pts] : c.by_domain) emit(domain, pts);
    }
}

json pr_summary(std::span<const PRCurve> curves) {
    json variants = json::array();
    for (const auto& c : curves) {
        const auto points = [&](const std::vector<PRPoint>& pts) {
            json arr = json::array();
            for (std::size_t i = 0; i < c.ks.size(); ++i) {
                arr.push_back({{"k", c.ks[i]},
                               {"precision", std::stod(fmt6(pts[i].precision))},
                               {"recall", std::stod(fmt6(pts[i].recall))}});
            }
            return arr;
        };
        json domains = json::object();
        for (const auto& [d, pts] : c.by_domain) domains[d] = points(pts);
        variants.push_back({{"variant", c.variant},
                            {"key", c.variant.key()},
                            {"queries", c.overall.empty() ? 0 : c.overall.front().queries},
                            {"excluded_queries", c.excluded_queries},
                            {"short_lists", c.short_lists},
                            {"overall", points(c.overall)},
                            {"by_domain", std::move(domains)}});
    }
    return json{{"variants", std::move(variants)}};
}

void write_ranked_comparison_csv(std::span<const PRCurve> curves, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    out << "chunking,backend,similarity,translation,k,precision_unranked,recall_unranked,precision_reranked,"
           "recall_reranked\n";
    for (const auto& u : curves) {
        if (u.variant.ranking != "unranked") continue;
        for (const auto& r : curves) {
            VariantLabels expect = u.variant;
            expect.ranking = "reranked";
            if (r.variant != expect || r.ks != u.ks) continue;
            for (std::size_t i = 0; i < u.ks.size(); ++i) {
                out << u.variant.chunking << ',' << u.variant.backend << ',' << u.variant.similarity << ','
                    << u.variant.translation << ',' << u.ks[i] << ',' << fmt6(u.overall[i].precision) << ','
                    << fmt6(u.overall[i].recall) << ',' << fmt6(r.overall[i].precision) << ','
                    << fmt6(r.overall[i].recall) << '\n';
            }
        }
    }
}

double text_similarity_check(std::span<const ScoredChunk> retrieved, std::span<const GroundTruthSnippet> truth,
                             const EmbeddingBackend& backend) {
    if (retrieved.empty() || truth.empty()) return 0.0;
    std::vector<std::string> texts;
    for (const auto& t : truth) texts.push_back(t.quote);
    for (const auto& r : retrieved) texts.push_back(r.chunk.text);
    const Matrix m = embed_batch(backend, texts);
    double total = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        double best = -1.0;
        for (std::size_t j = 0; j < retrieved.size(); ++j) best = std::max(best, cosine(m.row(i), m.row(truth.size() + j)));
        total += best;
    }
    return total / static_cast<double>(truth.size());
}

}  // namespace legalrag
