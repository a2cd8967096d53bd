#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tracefind/encoder.hpp"

namespace tracefind {

struct Hit {
    std::string record_id;
    double score = 0.0;

    friend bool operator==(const Hit&, const Hit&) = default;
};

struct RetrievalResult {
    std::string query_id;
    std::vector<Hit> hits;  // score non-increasing, ties by record_id
};

/// Row-normalized candidate embeddings with their record ids. Exact search.
class EmbeddingIndex {
public:
    EmbeddingIndex() = default;

    /// Throws ValidationError on an empty input, mixed dimensions, duplicate
    /// ids, or rows that are not unit length (1e-6).
    EmbeddingIndex(std::vector<TraceEmbedding> embeddings, std::uint64_t vocab_hash = 0);

    std::size_t size() const noexcept { return record_ids_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    std::uint64_t vocab_hash() const noexcept { return vocab_hash_; }
    const std::vector<std::string>& record_ids() const noexcept { return record_ids_; }
    std::span<const double> row(std::size_t i) const { return {vectors_.data() + i * dim_, dim_}; }

    /// Exact top-k by inner product (cosine on unit vectors), ties broken by
    /// record_id ascending. Returns min(k, n) hits.
    RetrievalResult knn(std::span<const double> query, std::size_t k, std::string query_id = {}) const;

    /// Header (magic, n, dim, vocab hash), row-major f64 vectors, then the
    /// record_id table. Layout in docs/formats.md.
    void save(const std::filesystem::path& path) const;
    static EmbeddingIndex load(const std::filesystem::path& path);

private:
    std::size_t dim_ = 0;
    std::uint64_t vocab_hash_ = 0;
    std::vector<double> vectors_;
    std::vector<std::string> record_ids_;
};

/// Free-function form; throws ValidationError on an empty index.
RetrievalResult knn(const EmbeddingIndex& index, std::span<const double> query, std::size_t k);

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Okapi BM25 over call-token documents with
/// idf = ln(1 + (N - df + 0.5) / (df + 0.5)). Query terms are deduplicated
/// (query term frequency is ignored).
class Bm25Index {
public:
    struct Document {
        std::string record_id;
        std::vector<std::string> tokens;
    };

    explicit Bm25Index(std::vector<Document> documents, Bm25Params params = {});

    std::size_t size() const noexcept { return ids_.size(); }
    double idf(const std::string& term) const;
    double avg_length() const noexcept { return avg_len_; }

    /// Score of every document, in input order.
    std::vector<double> scores(std::span<const std::string> query) const;

    /// Top min(k, n) by score, ties by record_id. An empty query scores every
    /// document 0 and still returns k hits.
    RetrievalResult rank(std::span<const std::string> query, std::size_t k, std::string query_id = {}) const;

private:
    Bm25Params params_;
    std::vector<std::string> ids_;
    std::vector<std::size_t> lengths_;
    std::vector<std::unordered_map<std::string, std::size_t>> tf_;
    std::unordered_map<std::string, std::size_t> df_;
    double avg_len_ = 0.0;
};

RetrievalResult bm25_rank(std::span<const Bm25Index::Document> candidates, std::span<const std::string> query, std::size_t k,
                          Bm25Params params = {});

/// k distinct candidates uniformly without replacement, all scored 0.
/// Requires k <= candidate count.
RetrievalResult random_rank(std::span<const std::string> candidate_ids, std::size_t k, std::uint64_t seed);

/// Sorts by score descending then record_id ascending and keeps k.
void sort_and_truncate(std::vector<Hit>& hits, std::size_t k);

}  // namespace tracefind
