#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "legalrag/chunker.hpp"
#include "legalrag/embedding.hpp"

namespace legalrag {

struct ScoredChunk {
    Chunk chunk;
    double score = 0.0;
    std::size_t rank = 0;  // 1-based
};

/// Orders by score descending, then (doc_id, span.start) ascending.
bool ranks_before(const ScoredChunk& a, const ScoredChunk& b) noexcept;

/// Sorts with ranks_before, keeps the first n, and assigns ranks 1..n.
void finalize_ranking(std::vector<ScoredChunk>& results, std::size_t n);

/// Chunks with their embeddings and the provenance needed to reuse them.
struct VectorIndex {
    std::vector<Chunk> chunks;
    Matrix vectors;  // row i embeds chunks[i]
    std::string backend_name;
    ChunkingConfig chunking;

    std::size_t dim() const noexcept { return vectors.cols(); }
    /// Throws IntegrityError on row/chunk mismatch, non-finite values or missing provenance.
    void validate() const;
};

VectorIndex build_index(const Corpus& corpus, const ChunkingConfig& chunking, const EmbeddingBackend& backend,
                        std::size_t batch_size = 32, std::size_t max_in_flight = 1);

/// Top-n chunks by cosine similarity. With `scope`, only that document's chunks compete.
std::vector<ScoredChunk> cosine_search(const VectorIndex& index, std::span<const float> query_vec, std::size_t n,
                                       const std::optional<std::string>& scope = std::nullopt);

struct Bm25Params {
    double k1 = 1.5;
    double b = 0.75;
};

/// Okapi BM25 over word_tokens() of each chunk, with
/// IDF(t) = ln((N - df + 0.5) / (df + 0.5) + 1). Collection statistics cover
/// every chunk; a scope only filters which chunks compete.
class Bm25Index {
public:
    explicit Bm25Index(std::vector<Chunk> chunks, Bm25Params params = {});

    const std::vector<Chunk>& chunks() const noexcept { return chunks_; }
    const Bm25Params& params() const noexcept { return params_; }

    /// BM25 score of every chunk, in chunk order. Repeated query terms count once.
    std::vector<double> score_all(const std::string& query) const;

    /// Empty result (with a warning) when the query has no tokens.
    std::vector<ScoredChunk> search(const std::string& query, std::size_t n,
                                    const std::optional<std::string>& scope = std::nullopt) const;

private:
    std::vector<Chunk> chunks_;
    Bm25Params params_;
    std::vector<std::size_t> lengths_;
    double avg_length_ = 0.0;
    std::unordered_map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> postings_;
};

std::vector<ScoredChunk> bm25_search(std::span<const Chunk> chunks, const std::string& query, std::size_t n,
                                     Bm25Params params = {}, const std::optional<std::string>& scope = std::nullopt);

/// Vector-store file: {"backend", "dim", "chunking", "items": [{"chunk_id", "doc_id",
/// "span", "text", "vector"}]}. Written through a temporary file and renamed.
void save_index(const VectorIndex& index, const std::filesystem::path& path, const std::string& config_digest = {});

/// Loads and validates a vector-store file. With `expected_backend`, refuses
/// (ProvenanceError) an index built by a different backend.
VectorIndex load_index(const std::filesystem::path& path,
                       const std::optional<std::string>& expected_backend = std::nullopt);

/// The config digest recorded next to an index file ("<path>.digest"), or empty.
std::string read_index_digest(const std::filesystem::path& path);

}  // namespace legalrag
