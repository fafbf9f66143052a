#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "legalrag/embedding.hpp"
#include "legalrag/http.hpp"
#include "legalrag/index.hpp"

namespace legalrag {

/// Second-stage scorer. Implementations return the candidates in their new
/// order with new scores; they must not drop or duplicate items.
class Reranker {
public:
    virtual ~Reranker() = default;
    virtual std::string name() const = 0;
    virtual std::vector<ScoredChunk> rerank(const std::string& query, std::span<const ScoredChunk> candidates) const = 0;
};

class IdentityReranker final : public Reranker {
public:
    std::string name() const override { return "identity"; }
    std::vector<ScoredChunk> rerank(const std::string& query, std::span<const ScoredChunk> candidates) const override;
};

/// Rescores candidates by cosine similarity between query and chunk text under
/// its own embedding backend.
class EmbeddingReranker final : public Reranker {
public:
    explicit EmbeddingReranker(std::shared_ptr<const EmbeddingBackend> backend) : backend_(std::move(backend)) {}
    std::string name() const override { return "embedding:" + backend_->name(); }
    std::vector<ScoredChunk> rerank(const std::string& query, std::span<const ScoredChunk> candidates) const override;

private:
    std::shared_ptr<const EmbeddingBackend> backend_;
};

/// Rerank service speaking the common rerank body:
/// POST {"model", "query", "documents": [..], "top_n"} -> {"results": [{"index", "relevance_score"}]}.
class HttpReranker final : public Reranker {
public:
    HttpReranker(std::string name, Endpoint endpoint, std::string model, RetryPolicy retry = {});
    std::string name() const override { return name_; }
    std::vector<ScoredChunk> rerank(const std::string& query, std::span<const ScoredChunk> candidates) const override;

private:
    std::string name_;
    Endpoint endpoint_;
    std::string model_;
    RetryPolicy retry_;
};

struct RerankOutcome {
    std::vector<ScoredChunk> results;
    bool fell_back = false;  // transport failure; results keep the input order
    std::string warning;
};

/// Runs a reranker and enforces its contract: the output must be a permutation
/// of the input (IntegrityError otherwise); ranks become 1..N in non-increasing
/// score order. A TransportError falls back to the input order with a warning.
RerankOutcome rerank(const Reranker& reranker, const std::string& query, std::span<const ScoredChunk> candidates);

}  // namespace legalrag
