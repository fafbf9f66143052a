#pragma once

#include <cstddef>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "legalrag/corpus.hpp"
#include "legalrag/text.hpp"

namespace legalrag {

struct Chunk {
    std::string doc_id;
    Span span;
    std::string text;
    std::string chunk_id;  // "doc_id:start-end"

    friend bool operator==(const Chunk&, const Chunk&) = default;
};

std::string make_chunk_id(const std::string& doc_id, Span span);

enum class ChunkStrategy { naive, rcts };

std::string to_string(ChunkStrategy s);
ChunkStrategy chunk_strategy_from_string(const std::string& s);

struct ChunkingConfig {
    ChunkStrategy strategy = ChunkStrategy::rcts;
    std::size_t max_chars = 500;
    std::vector<std::string> separators{"\n\n", "\n", " ", ""};

    /// Throws ValidationError when max_chars is 0 or (for rcts) the separator
    /// list does not end with the empty string.
    void validate() const;

    friend bool operator==(const ChunkingConfig&, const ChunkingConfig&) = default;
};

void to_json(nlohmann::json& j, const ChunkingConfig& c);
void from_json(const nlohmann::json& j, ChunkingConfig& c);

/// Consecutive spans of exactly max_chars characters; the final one may be shorter.
std::vector<Chunk> chunk_naive(const Document& doc, std::size_t max_chars);

/// Recursive character splitting. Separators are kept at the end of the piece
/// they terminate, so the chunks tile the document exactly.
std::vector<Chunk> chunk_rcts(const Document& doc, const ChunkingConfig& cfg);

/// Dispatches on cfg.strategy.
std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg);
std::vector<Chunk> chunk_corpus(const Corpus& corpus, const ChunkingConfig& cfg);

}  // namespace legalrag
