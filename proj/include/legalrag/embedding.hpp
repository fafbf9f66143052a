#pragma once

#include <atomic>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "legalrag/http.hpp"

namespace legalrag {

/// Dense row-major float matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::span<float> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const float> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
    const std::vector<float>& data() const noexcept { return data_; }

    /// Appends a row; the first row fixes the column count.
    void append_row(std::span<const float> values);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

/// Cosine similarity; 0 when either vector has zero norm.
double cosine(std::span<const float> a, std::span<const float> b) noexcept;

/// Source of sentence-level embedding vectors.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::string name() const = 0;
    /// Vector length; 0 if not yet known (remote backend before its first call).
    virtual std::size_t dim() const = 0;
    /// One row per input text. Must be deterministic for a fixed backend.
    virtual Matrix embed(std::span<const std::string> texts) const = 0;
};

/// Signed-hash bucket counts of character n-grams, L2-normalised. Offline and
/// deterministic; the empty string maps to the zero vector.
class HashedNgramEmbedder final : public EmbeddingBackend {
public:
    explicit HashedNgramEmbedder(std::size_t dim = 256, std::size_t n = 3, std::string name = {});

    std::string name() const override { return name_; }
    std::size_t dim() const override { return dim_; }
    Matrix embed(std::span<const std::string> texts) const override;

    std::vector<float> embed_one(std::string_view text) const;

private:
    std::size_t dim_;
    std::size_t n_;
    std::string name_;
};

/// OpenAI-compatible embeddings client:
/// POST {"model", "input": [..]} -> {"data": [{"embedding": [..]}]}.
class HttpEmbeddingBackend final : public EmbeddingBackend {
public:
    HttpEmbeddingBackend(std::string name, Endpoint endpoint, std::string model, std::size_t dim = 0,
                         RetryPolicy retry = {});

    std::string name() const override { return name_; }
    std::size_t dim() const override { return dim_.load(); }
    Matrix embed(std::span<const std::string> texts) const override;

private:
    std::string name_;
    Endpoint endpoint_;
    std::string model_;
    mutable std::atomic<std::size_t> dim_;
    RetryPolicy retry_;
};

/// Embeds `texts` in batches of `batch_size`, running up to `max_in_flight`
/// batches concurrently. Row order always matches input order. Throws
/// std::invalid_argument for an empty input and IntegrityError on a dimension mismatch.
Matrix embed_batch(const EmbeddingBackend& backend, std::span<const std::string> texts, std::size_t batch_size = 32,
                   std::size_t max_in_flight = 1);

struct TokenEmbeddings {
    std::vector<std::string> tokens;
    Matrix vectors;  // one row per token
};

/// Source of per-token contextual vectors (BERTScore).
class TokenEmbeddingBackend {
public:
    virtual ~TokenEmbeddingBackend() = default;
    virtual std::string name() const = 0;
    virtual TokenEmbeddings embed_tokens(const std::string& text) const = 0;
};

/// Each word token embedded independently with a HashedNgramEmbedder.
class HashedTokenEmbedder final : public TokenEmbeddingBackend {
public:
    explicit HashedTokenEmbedder(std::size_t dim = 256) : inner_(dim, 3, "hashed-token") {}
    std::string name() const override { return "hashed-token-d" + std::to_string(inner_.dim()); }
    TokenEmbeddings embed_tokens(const std::string& text) const override;

private:
    HashedNgramEmbedder inner_;
};

/// Embeddings contract extended with per-token output:
/// POST {"model", "input": [text], "encoding_level": "token"}
///   -> {"data": [{"tokens": [..], "token_embeddings": [[..], ..]}]}.
class HttpTokenEmbedder final : public TokenEmbeddingBackend {
public:
    HttpTokenEmbedder(std::string name, Endpoint endpoint, std::string model, RetryPolicy retry = {});
    std::string name() const override { return name_; }
    TokenEmbeddings embed_tokens(const std::string& text) const override;

private:
    std::string name_;
    Endpoint endpoint_;
    std::string model_;
    RetryPolicy retry_;
};

}  // namespace legalrag
