#include "legalrag/index.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "legalrag/errors.hpp"
#include "legalrag/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace legalrag {

bool ranks_before(const ScoredChunk& a, const ScoredChunk& b) noexcept {
    if (a.score != b.score) return a.score > b.score;
    if (a.chunk.doc_id != b.chunk.doc_id) return a.chunk.doc_id < b.chunk.doc_id;
    return a.chunk.span.start < b.chunk.span.start;
}

void finalize_ranking(std::vector<ScoredChunk>& results, std::size_t n) {
    if (n < results.size()) {
        std::partial_sort(results.begin(), results.begin() + static_cast<std::ptrdiff_t>(n), results.end(),
                          ranks_before);
        results.resize(n);
    } else {
        std::sort(results.begin(), results.end(), ranks_before);
    }
    for (std::size_t i = 0; i < results.size(); ++i) results[i].rank = i + 1;
}

void VectorIndex::validate() const {
    if (backend_name.empty()) throw IntegrityError("index has no backend provenance");
    if (vectors.rows() != chunks.size()) {
        throw IntegrityError("index has " + std::to_string(chunks.size()) + " chunks but " +
                             std::to_string(vectors.rows()) + " vectors");
    }
    for (const float v : vectors.data()) {
        if (!std::isfinite(v)) throw IntegrityError("index contains a non-finite vector component");
    }
    for (const auto& c : chunks) {
        if (c.chunk_id != make_chunk_id(c.doc_id, c.span)) {
            throw IntegrityError("chunk_id '" + c.chunk_id + "' does not match its doc_id and span");
        }
    }
}

VectorIndex build_index(const Corpus& corpus, const ChunkingConfig& chunking, const EmbeddingBackend& backend,
                        std::size_t batch_size, std::size_t max_in_flight) {
    VectorIndex index;
    index.chunks = chunk_corpus(corpus, chunking);
    index.backend_name = backend.name();
    index.chunking = chunking;
    if (!index.chunks.empty()) {
        std::vector<std::string> texts;
        texts.reserve(index.chunks.size());
        for (const auto& c : index.chunks) texts.push_back(c.text);
        index.vectors = embed_batch(backend, texts, batch_size, max_in_flight);
    } else {
        index.vectors = Matrix(0, backend.dim());
    }
    index.validate();
    return index;
}

std::vector<ScoredChunk> cosine_search(const VectorIndex& index, std::span<const float> query_vec, std::size_t n,
                                       const std::optional<std::string>& scope) {
    if (n < 1) throw std::invalid_argument("cosine_search needs n >= 1");
    if (index.vectors.rows() > 0 && query_vec.size() != index.dim()) {
        throw IntegrityError("query vector has length " + std::to_string(query_vec.size()) + ", index dim is " +
                             std::to_string(index.dim()));
    }
    const auto is_zero = [](std::span<const float> v) {
        return std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; });
    };
    if (is_zero(query_vec)) warn("zero-norm query vector; all cosine similarities are 0");

    std::vector<ScoredChunk> results;
    std::size_t zero_rows = 0;
    for (std::size_t i = 0; i < index.chunks.size(); ++i) {
        if (scope && index.chunks[i].doc_id != *scope) continue;
        const auto row = index.vectors.row(i);
        if (is_zero(row)) ++zero_rows;
        results.push_back(ScoredChunk{index.chunks[i], cosine(query_vec, row), 0});
    }
    if (zero_rows > 0) warn(std::to_string(zero_rows) + " zero-norm chunk vector(s) scored as similarity 0");
    finalize_ranking(results, n);
    return results;
}

Bm25Index::Bm25Index(std::vector<Chunk> chunks, Bm25Params params)
    : chunks_(std::move(chunks)), params_(params) {
    lengths_.reserve(chunks_.size());
    double total = 0.0;
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
        const auto tokens = word_tokens(chunks_[i].text);
        lengths_.push_back(tokens.size());
        total += static_cast<double>(tokens.size());
        std::unordered_map<std::string, std::size_t> tf;
        for (const auto& t : tokens) ++tf[t];
        for (auto& [term, count] : tf) postings_[term].emplace_back(i, count);
    }
    avg_length_ = chunks_.empty() ? 0.0 : total / static_cast<double>(chunks_.size());
}

std::vector<double> Bm25Index::score_all(const std::string& query) const {
    std::vector<double> scores(chunks_.size(), 0.0);
    const auto terms = word_tokens(query);
    const std::set<std::string> unique_terms(terms.begin(), terms.end());
    const auto n_docs = static_cast<double>(chunks_.size());
    for (const auto& term : unique_terms) {
        const auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        const auto df = static_cast<double>(it->second.size());
        const double idf = std::log((n_docs - df + 0.5) / (df + 0.5) + 1.0);
        for (const auto& [doc, count] : it->second) {
            const auto tf = static_cast<double>(count);
            const double len_ratio = avg_length_ > 0.0 ? static_cast<double>(lengths_[doc]) / avg_length_ : 0.0;
            const double norm = params_.k1 * (1.0 - params_.b + params_.b * len_ratio);
            scores[doc] += idf * (tf * (params_.k1 + 1.0)) / (tf + norm);
        }
    }
    return scores;
}

std::vector<ScoredChunk> Bm25Index::search(const std::string& query, std::size_t n,
                                           const std::optional<std::string>& scope) const {
    if (n < 1) throw std::invalid_argument("bm25 search needs n >= 1");
    if (word_tokens(query).empty()) {
        warn("BM25 query '" + query + "' has no tokens; returning no results");
        return {};
    }
    const auto scores = score_all(query);
    std::vector<ScoredChunk> results;
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
        if (scope && chunks_[i].doc_id != *scope) continue;
        results.push_back(ScoredChunk{chunks_[i], scores[i], 0});
    }
    finalize_ranking(results, n);
    return results;
}

std::vector<ScoredChunk> bm25_search(std::span<const Chunk> chunks, const std::string& query, std::size_t n,
                                     Bm25Params params, const std::optional<std::string>& scope) {
    return Bm25Index(std::vector<Chunk>(chunks.begin(), chunks.end()), params).search(query, n, scope);
}

void save_index(const VectorIndex& index, const fs::path& path, const std::string& config_digest) {
    index.validate();
    json items = json::array();
    for (std::size_t i = 0; i < index.chunks.size(); ++i) {
        const auto& c = index.chunks[i];
        const auto row = index.vectors.row(i);
        items.push_back({{"chunk_id", c.chunk_id},
                         {"doc_id", c.doc_id},
                         {"span", {c.span.start, c.span.end}},
                         {"text", c.text},
                         {"vector", std::vector<float>(row.begin(), row.end())}});
    }
    json doc{{"backend", index.backend_name}, {"dim", index.dim()}, {"chunking", index.chunking},
             {"items", std::move(items)}};
    if (!config_digest.empty()) doc["config_digest"] = config_digest;

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw LoadError("cannot write index '" + tmp.string() + "'");
        out << doc.dump();
        if (!out) throw LoadError("failed writing index '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
    if (!config_digest.empty()) {
        std::ofstream sidecar(path.string() + ".digest", std::ios::trunc);
        sidecar << config_digest << '\n';
    }
}

namespace {

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot read '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("'" + path.string() + "': " + e.what());
    }
}

}  // namespace

VectorIndex load_index(const fs::path& path, const std::optional<std::string>& expected_backend) {
    const json doc = read_json_file(path);
    VectorIndex index;
    try {
        index.backend_name = doc.at("backend").get<std::string>();
        index.chunking = doc.at("chunking").get<ChunkingConfig>();
        const auto dim = doc.at("dim").get<std::size_t>();
        index.vectors = Matrix(0, dim);
        for (const auto& item : doc.at("items")) {
            Chunk c;
            c.chunk_id = item.at("chunk_id").get<std::string>();
            c.doc_id = item.at("doc_id").get<std::string>();
            const auto& span = item.at("span");
            c.span = Span{span.at(0).get<std::size_t>(), span.at(1).get<std::size_t>()};
            c.text = item.at("text").get<std::string>();
            const auto vec = item.at("vector").get<std::vector<float>>();
            if (vec.size() != dim) {
                throw IntegrityError("index item '" + c.chunk_id + "' has a " + std::to_string(vec.size()) +
                                     "-dim vector, expected " + std::to_string(dim));
            }
            index.vectors.append_row(vec);
            index.chunks.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw ParseError("index '" + path.string() + "': " + e.what());
    }
    index.validate();
    if (expected_backend && *expected_backend != index.backend_name) {
        throw ProvenanceError("index '" + path.string() + "' was built with backend '" + index.backend_name +
                              "', but backend '" + *expected_backend + "' is configured");
    }
    return index;
}

std::string read_index_digest(const fs::path& path) {
    std::error_code ec;
    if (!fs::exists(path, ec)) return {};
    std::ifstream in(path.string() + ".digest");
    std::string digest;
    std::getline(in, digest);
    return trim(digest);
}

}  // namespace legalrag
