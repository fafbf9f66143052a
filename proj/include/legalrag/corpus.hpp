#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json_fwd.hpp>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "legalrag/text.hpp"

namespace legalrag {

/// One corpus file. Character positions are Unicode scalar-value indices.
class Document {
public:
    /// Throws LoadError when `text` is not valid UTF-8 or is empty.
    Document(std::string doc_id, std::string text);

    const std::string& id() const noexcept { return id_; }
    const std::string& text() const noexcept { return text_; }
    std::size_t char_len() const noexcept { return offsets_.size() - 1; }

    /// Substring for a character span; throws IntegrityError when out of bounds.
    std::string_view slice(Span span) const;

    std::size_t byte_offset(std::size_t char_index) const { return offsets_.at(char_index); }
    /// Character index of a byte offset that lies on a code point boundary.
    std::size_t char_index(std::size_t byte_offset) const;

private:
    std::string id_;
    std::string text_;
    std::vector<std::uint32_t> offsets_;
};

/// Immutable set of documents, ordered by doc_id.
class Corpus {
public:
    Corpus() = default;
    /// Sorts by doc_id; throws IntegrityError on duplicate ids.
    explicit Corpus(std::vector<Document> docs);

    const std::vector<Document>& documents() const noexcept { return docs_; }
    const Document* find(std::string_view doc_id) const;
    std::size_t size() const noexcept { return docs_.size(); }
    bool empty() const noexcept { return docs_.empty(); }

private:
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

struct GroundTruthSnippet {
    std::string doc_id;
    Span span;
    std::string quote;
};

struct QAPair {
    std::string id;
    std::string query;
    std::vector<GroundTruthSnippet> snippets;
    std::string domain;
};

struct BenchmarkSubset {
    std::vector<QAPair> qa_pairs;
    std::set<std::string> selected_docs;
    std::map<std::string, std::size_t> per_domain_count;
};

/// Loads every regular, non-hidden file under `root` as a Document.
/// doc_id is the '/'-separated path relative to root.
Corpus load_corpus(const std::filesystem::path& root);

/// Maps the LegalBench-RAG folder/file names (contractnli, cuad, maud, privacy_qa)
/// onto their display labels; other labels pass through unchanged.
std::string canonical_domain(std::string_view label);

/// Parses a benchmark document and validates every snippet against `corpus`.
/// `fallback_domain` is used for tests with no explicit domain and no folder prefix.
std::vector<QAPair> parse_benchmark(const nlohmann::json& doc, const Corpus& corpus,
                                    const std::string& fallback_domain = "default");

/// Reads a LegalBench-RAG style benchmark file ({"tests": [...]}).
std::vector<QAPair> load_benchmark(const std::filesystem::path& path, const Corpus& corpus);

nlohmann::json benchmark_to_json(const std::vector<QAPair>& qa);
void save_benchmark(const std::filesystem::path& path, const std::vector<QAPair>& qa);

/// Distinct documents referenced by a QA pair, sorted.
std::vector<std::string> snippet_docs(const QAPair& qa);

/// Draws exactly `per_domain` unique QA pairs from every domain while greedily
/// keeping the set of referenced documents small. Deterministic for a given seed.
BenchmarkSubset sample_mini(const std::vector<QAPair>& qa, std::size_t per_domain, std::uint64_t seed);

}  // namespace legalrag
