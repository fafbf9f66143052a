#include "legalrag/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <stdexcept>

#include "legalrag/errors.hpp"
#include "legalrag/text.hpp"

using nlohmann::json;

namespace legalrag {

void Matrix::append_row(std::span<const float> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    if (values.size() != cols_) {
        throw IntegrityError("row of length " + std::to_string(values.size()) + " appended to matrix with " +
                             std::to_string(cols_) + " columns");
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

double cosine(std::span<const float> a, std::span<const float> b) noexcept {
    const std::size_t n = std::min(a.size(), b.size());
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

HashedNgramEmbedder::HashedNgramEmbedder(std::size_t dim, std::size_t n, std::string name)
    : dim_(dim), n_(n), name_(std::move(name)) {
    if (dim_ == 0 || n_ == 0) throw std::invalid_argument("hashed embedder needs dim >= 1 and n >= 1");
    if (name_.empty()) name_ = "hashed-char" + std::to_string(n_) + "-d" + std::to_string(dim_);
}

std::vector<float> HashedNgramEmbedder::embed_one(std::string_view text) const {
    // Lowercase, collapse whitespace, pad with one space at each end.
    std::u32string cps;
    cps.push_back(U' ');
    for (char32_t c : decode_utf8(text)) {
        if (c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' || c == U'\v') c = U' ';
        if (c >= U'A' && c <= U'Z') c = c - U'A' + U'a';
        if (c == U' ' && cps.back() == U' ') continue;
        cps.push_back(c);
    }
    if (cps.back() != U' ') cps.push_back(U' ');

    std::vector<double> acc(dim_, 0.0);
    std::string gram;
    for (std::size_t i = 0; i + n_ <= cps.size(); ++i) {
        gram.clear();
        for (std::size_t k = 0; k < n_; ++k) append_utf8(gram, cps[i + k]);
        if (gram.find_first_not_of(' ') == std::string::npos) continue;
        const std::uint64_t h = fnv1a64(gram);
        acc[h % dim_] += ((h >> 63) & 1U) != 0 ? -1.0 : 1.0;
    }
    double norm = 0.0;
    for (const double v : acc) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<float> out(dim_, 0.0f);
    if (norm > 0.0) {
        for (std::size_t i = 0; i < dim_; ++i) out[i] = static_cast<float>(acc[i] / norm);
    }
    return out;
}

Matrix HashedNgramEmbedder::embed(std::span<const std::string> texts) const {
    Matrix m(0, dim_);
    for (const auto& t : texts) {
        const auto v = embed_one(t);
        m.append_row(v);
    }
    return m;
}

HttpEmbeddingBackend::HttpEmbeddingBackend(std::string name, Endpoint endpoint, std::string model, std::size_t dim,
                                           RetryPolicy retry)
    : name_(std::move(name)), endpoint_(std::move(endpoint)), model_(std::move(model)), dim_(dim), retry_(retry) {}

Matrix HttpEmbeddingBackend::embed(std::span<const std::string> texts) const {
    const json body{{"model", model_}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
    const json res = post_json(endpoint_, body, retry_);
    if (!res.contains("data") || !res["data"].is_array() || res["data"].size() != texts.size()) {
        throw ParseError("embedding response from " + endpoint_.url + " does not contain one item per input");
    }
    // Items may carry an explicit index; honour it so row order matches input order.
    std::vector<const json*> items(texts.size(), nullptr);
    for (std::size_t i = 0; i < res["data"].size(); ++i) {
        const auto& item = res["data"][i];
        const std::size_t idx = item.contains("index") ? item["index"].get<std::size_t>() : i;
        if (idx >= items.size() || items[idx] != nullptr) throw ParseError("embedding response has bad indices");
        items[idx] = &item;
    }
    Matrix m;
    for (const auto* item : items) {
        const auto vec = item->at("embedding").get<std::vector<float>>();
        std::size_t expected = dim_.load();
        if (expected == 0) {
            dim_.compare_exchange_strong(expected, vec.size());
            expected = dim_.load();
        }
        if (vec.size() != expected) {
            throw IntegrityError("backend '" + name_ + "' returned a " + std::to_string(vec.size()) +
                                 "-dim vector, expected " + std::to_string(expected));
        }
        m.append_row(vec);
    }
    return m;
}

Matrix embed_batch(const EmbeddingBackend& backend, std::span<const std::string> texts, std::size_t batch_size,
                   std::size_t max_in_flight) {
    if (texts.empty()) throw std::invalid_argument("embed_batch needs at least one text");
    batch_size = std::max<std::size_t>(batch_size, 1);
    max_in_flight = std::max<std::size_t>(max_in_flight, 1);

    const std::size_t n_batches = (texts.size() + batch_size - 1) / batch_size;
    std::vector<Matrix> parts(n_batches);
    const auto run = [&](std::size_t b) {
        const std::size_t lo = b * batch_size;
        const std::size_t hi = std::min(lo + batch_size, texts.size());
        Matrix part = backend.embed(texts.subspan(lo, hi - lo));
        if (part.rows() != hi - lo) {
            throw IntegrityError("backend '" + backend.name() + "' returned " + std::to_string(part.rows()) +
                                 " vectors for " + std::to_string(hi - lo) + " texts");
        }
        return part;
    };
    for (std::size_t first = 0; first < n_batches; first += max_in_flight) {
        const std::size_t last = std::min(first + max_in_flight, n_batches);
        if (last - first == 1) {
            parts[first] = run(first);
            continue;
        }
        std::vector<std::future<Matrix>> inflight;
        for (std::size_t b = first; b < last; ++b) inflight.push_back(std::async(std::launch::async, run, b));
        for (std::size_t b = first; b < last; ++b) parts[b] = inflight[b - first].get();
    }

    Matrix out;
    const std::size_t dim = backend.dim();
    for (const auto& part : parts) {
        for (std::size_t r = 0; r < part.rows(); ++r) {
            if (dim != 0 && part.cols() != dim) {
                throw IntegrityError("backend '" + backend.name() + "' returned " + std::to_string(part.cols()) +
                                     "-dim vectors, expected " + std::to_string(dim));
            }
            out.append_row(part.row(r));
        }
    }
    return out;
}

TokenEmbeddings HashedTokenEmbedder::embed_tokens(const std::string& text) const {
    TokenEmbeddings out;
    out.tokens = word_tokens(text);
    out.vectors = Matrix(0, inner_.dim());
    for (const auto& tok : out.tokens) out.vectors.append_row(inner_.embed_one(tok));
    return out;
}

HttpTokenEmbedder::HttpTokenEmbedder(std::string name, Endpoint endpoint, std::string model, RetryPolicy retry)
    : name_(std::move(name)), endpoint_(std::move(endpoint)), model_(std::move(model)), retry_(retry) {}

TokenEmbeddings HttpTokenEmbedder::embed_tokens(const std::string& text) const {
    const json body{{"model", model_}, {"input", json::array({text})}, {"encoding_level", "token"}};
    const json res = post_json(endpoint_, body, retry_);
    try {
        const auto& item = res.at("data").at(0);
        TokenEmbeddings out;
        for (const auto& v : item.at("token_embeddings")) out.vectors.append_row(v.get<std::vector<float>>());
        if (item.contains("tokens")) out.tokens = item["tokens"].get<std::vector<std::string>>();
        else out.tokens.resize(out.vectors.rows());
        if (out.tokens.size() != out.vectors.rows()) throw ParseError("token/vector count mismatch");
        return out;
    } catch (const json::exception& e) {
        throw ParseError("token embedding response from " + endpoint_.url + ": " + e.what());
    }
}

}  // namespace legalrag
