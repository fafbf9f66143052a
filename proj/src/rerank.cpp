#include "legalrag/rerank.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "legalrag/errors.hpp"
#include "legalrag/log.hpp"

using nlohmann::json;

namespace legalrag {

std::vector<ScoredChunk> IdentityReranker::rerank(const std::string&, std::span<const ScoredChunk> candidates) const {
    return {candidates.begin(), candidates.end()};
}

std::vector<ScoredChunk> EmbeddingReranker::rerank(const std::string& query,
                                                   std::span<const ScoredChunk> candidates) const {
    std::vector<std::string> texts{query};
    for (const auto& c : candidates) texts.push_back(c.chunk.text);
    const Matrix m = embed_batch(*backend_, texts);
    std::vector<ScoredChunk> out(candidates.begin(), candidates.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i].score = cosine(m.row(0), m.row(i + 1));
    std::stable_sort(out.begin(), out.end(), [](const ScoredChunk& a, const ScoredChunk& b) { return a.score > b.score; });
    return out;
}

HttpReranker::HttpReranker(std::string name, Endpoint endpoint, std::string model, RetryPolicy retry)
    : name_(std::move(name)), endpoint_(std::move(endpoint)), model_(std::move(model)), retry_(retry) {}

std::vector<ScoredChunk> HttpReranker::rerank(const std::string& query, std::span<const ScoredChunk> candidates) const {
    std::vector<std::string> docs;
    for (const auto& c : candidates) docs.push_back(c.chunk.text);
    const json body{{"model", model_}, {"query", query}, {"documents", docs}, {"top_n", docs.size()}};
    const json res = post_json(endpoint_, body, retry_);
    std::vector<ScoredChunk> out;
    try {
        for (const auto& r : res.at("results")) {
            const auto idx = r.at("index").get<std::size_t>();
            if (idx >= candidates.size()) throw IntegrityError("rerank result index out of range");
            ScoredChunk sc = candidates[idx];
            sc.score = r.at("relevance_score").get<double>();
            out.push_back(std::move(sc));
        }
    } catch (const json::exception& e) {
        throw ParseError("rerank response from " + endpoint_.url + ": " + e.what());
    }
    return out;
}

RerankOutcome rerank(const Reranker& reranker, const std::string& query, std::span<const ScoredChunk> candidates) {
    if (candidates.empty()) throw std::invalid_argument("rerank needs at least one candidate");
    RerankOutcome outcome;
    try {
        outcome.results = reranker.rerank(query, candidates);
    } catch (const TransportError& e) {
        outcome.fell_back = true;
        outcome.warning = "reranker '" + reranker.name() + "' failed (" + e.what() + "); kept first-stage order";
        warn(outcome.warning);
        outcome.results.assign(candidates.begin(), candidates.end());
        for (std::size_t i = 0; i < outcome.results.size(); ++i) outcome.results[i].rank = i + 1;
        return outcome;
    }

    std::map<std::string, long> balance;
    for (const auto& c : candidates) ++balance[c.chunk.chunk_id];
    for (const auto& c : outcome.results) --balance[c.chunk.chunk_id];
    const bool permutation = outcome.results.size() == candidates.size() &&
                             std::all_of(balance.begin(), balance.end(), [](const auto& kv) { return kv.second == 0; });
    if (!permutation) {
        throw IntegrityError("reranker '" + reranker.name() + "' did not return a permutation of its " +
                             std::to_string(candidates.size()) + " candidates");
    }
    std::stable_sort(outcome.results.begin(), outcome.results.end(),
                     [](const ScoredChunk& a, const ScoredChunk& b) { return a.score > b.score; });
    for (std::size_t i = 0; i < outcome.results.size(); ++i) outcome.results[i].rank = i + 1;
    return outcome;
}

}  // namespace legalrag
