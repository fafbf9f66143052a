#include "legalrag/chunker.hpp"

#include <nlohmann/json.hpp>

#include <optional>

#include "legalrag/errors.hpp"

namespace legalrag {

std::string make_chunk_id(const std::string& doc_id, Span span) {
    return doc_id + ":" + std::to_string(span.start) + "-" + std::to_string(span.end);
}

std::string to_string(ChunkStrategy s) { return s == ChunkStrategy::naive ? "naive" : "rcts"; }

ChunkStrategy chunk_strategy_from_string(const std::string& s) {
    if (s == "naive") return ChunkStrategy::naive;
    if (s == "rcts") return ChunkStrategy::rcts;
    throw ValidationError("unknown chunking strategy '" + s + "' (expected naive or rcts)");
}

void ChunkingConfig::validate() const {
    if (max_chars < 1) throw ValidationError("chunking max_chars must be >= 1");
    if (strategy == ChunkStrategy::rcts && (separators.empty() || !separators.back().empty())) {
        throw ValidationError("rcts separators must end with the empty string");
    }
}

void to_json(nlohmann::json& j, const ChunkingConfig& c) {
    j = nlohmann::json{{"strategy", to_string(c.strategy)}, {"max_chars", c.max_chars}, {"separators", c.separators}};
}

void from_json(const nlohmann::json& j, ChunkingConfig& c) {
    c = ChunkingConfig{};
    if (j.contains("strategy")) c.strategy = chunk_strategy_from_string(j.at("strategy").get<std::string>());
    if (j.contains("max_chars")) c.max_chars = j.at("max_chars").get<std::size_t>();
    if (j.contains("separators")) c.separators = j.at("separators").get<std::vector<std::string>>();
}

namespace {

Chunk make_chunk(const Document& doc, Span span) {
    return Chunk{doc.id(), span, std::string(doc.slice(span)), make_chunk_id(doc.id(), span)};
}

class RecursiveSplitter {
public:
    RecursiveSplitter(const Document& doc, const ChunkingConfig& cfg) : doc_(doc), cfg_(cfg) {}

    void split(Span span, std::size_t level, std::vector<Span>& out) const {
        // First separator (from `level` on) that occurs inside the span; "" always matches.
        const std::size_t b0 = doc_.byte_offset(span.start);
        const std::size_t b1 = doc_.byte_offset(span.end);
        const std::string_view text = std::string_view(doc_.text()).substr(b0, b1 - b0);
        std::size_t sep_level = level;
        while (sep_level + 1 < cfg_.separators.size() &&
               text.find(cfg_.separators[sep_level]) == std::string_view::npos) {
            ++sep_level;
        }
        const std::string& sep = cfg_.separators[sep_level];

        std::vector<Span> pieces;
        if (sep.empty()) {
            for (std::size_t c = span.start; c < span.end; ++c) pieces.push_back(Span{c, c + 1});
        } else {
            std::size_t piece_start = span.start;
            std::size_t pos = 0;
            while ((pos = text.find(sep, pos)) != std::string_view::npos) {
                pos += sep.size();
                const std::size_t piece_end = doc_.char_index(b0 + pos);
                if (piece_end > piece_start) pieces.push_back(Span{piece_start, piece_end});
                piece_start = piece_end;
            }
            if (span.end > piece_start) pieces.push_back(Span{piece_start, span.end});
        }

        std::optional<Span> current;
        const auto flush = [&] {
            if (current) out.push_back(*current);
            current.reset();
        };
        for (const auto& piece : pieces) {
            if (piece.length() > cfg_.max_chars) {
                flush();
                split(piece, sep_level + 1, out);
            } else if (current && current->length() + piece.length() <= cfg_.max_chars) {
                current->end = piece.end;
            } else {
                flush();
                current = piece;
            }
        }
        flush();
    }

private:
    const Document& doc_;
    const ChunkingConfig& cfg_;
};

}  // namespace

std::vector<Chunk> chunk_naive(const Document& doc, std::size_t max_chars) {
    if (max_chars < 1) throw ValidationError("chunking max_chars must be >= 1");
    std::vector<Chunk> out;
    for (std::size_t s = 0; s < doc.char_len(); s += max_chars) {
        out.push_back(make_chunk(doc, Span{s, std::min(s + max_chars, doc.char_len())}));
    }
    return out;
}

std::vector<Chunk> chunk_rcts(const Document& doc, const ChunkingConfig& cfg) {
    cfg.validate();
    if (cfg.strategy != ChunkStrategy::rcts) throw ValidationError("chunk_rcts requires strategy rcts");
    std::vector<Span> spans;
    RecursiveSplitter(doc, cfg).split(Span{0, doc.char_len()}, 0, spans);
    std::vector<Chunk> out;
    out.reserve(spans.size());
    for (const auto& s : spans) out.push_back(make_chunk(doc, s));
    return out;
}

std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg) {
    cfg.validate();
    return cfg.strategy == ChunkStrategy::naive ? chunk_naive(doc, cfg.max_chars) : chunk_rcts(doc, cfg);
}

std::vector<Chunk> chunk_corpus(const Corpus& corpus, const ChunkingConfig& cfg) {
    std::vector<Chunk> out;
    for (const auto& doc : corpus.documents()) {
        auto chunks = chunk_document(doc, cfg);
        out.insert(out.end(), std::make_move_iterator(chunks.begin()), std::make_move_iterator(chunks.end()));
    }
    return out;
}

}  // namespace legalrag
