#include "tracefind/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "tracefind/error.hpp"
#include "tracefind/rng.hpp"

namespace tracefind {

namespace {

constexpr char kIndexMagic[8] = {'T', 'F', 'I', 'N', 'D', 'X', '0', '1'};

bool hit_before(const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.record_id < b.record_id;
}

void put_u64(std::ostream& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(buf, 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), 8)) throw ValidationError("index: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void sort_and_truncate(std::vector<Hit>& hits, std::size_t k) {
    k = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), hit_before);
    hits.resize(k);
}

EmbeddingIndex::EmbeddingIndex(std::vector<TraceEmbedding> embeddings, std::uint64_t vocab_hash) : vocab_hash_(vocab_hash) {
    if (embeddings.empty()) throw ValidationError("index: no embeddings");
    dim_ = embeddings.front().vector.size();
    if (dim_ == 0) throw ValidationError("index: zero-dimensional embeddings");
    std::unordered_set<std::string> seen;
    vectors_.reserve(embeddings.size() * dim_);
    for (auto& e : embeddings) {
        if (e.vector.size() != dim_) throw ValidationError("index: mixed embedding dimensions");
        if (!seen.insert(e.record_id).second) throw ValidationError("index: duplicate record_id " + e.record_id);
        const double norm = std::sqrt(std::inner_product(e.vector.begin(), e.vector.end(), e.vector.begin(), 0.0));
        if (std::abs(norm - 1.0) > 1e-6) throw ValidationError("index: embedding " + e.record_id + " is not normalized");
        vectors_.insert(vectors_.end(), e.vector.begin(), e.vector.end());
        record_ids_.push_back(std::move(e.record_id));
    }
}

RetrievalResult EmbeddingIndex::knn(std::span<const double> query, std::size_t k, std::string query_id) const {
    if (size() == 0) throw ValidationError("knn: empty index");
    if (query.size() != dim_) throw ValidationError("knn: query dimension mismatch");
    if (k == 0) throw ValidationError("knn: k must be at least 1");
    std::vector<Hit> hits;
    hits.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) {
        const auto r = row(i);
        double dot = 0.0;
        for (std::size_t d = 0; d < dim_; ++d) dot += r[d] * query[d];
        hits.push_back({record_ids_[i], dot});
    }
    sort_and_truncate(hits, k);
    return {std::move(query_id), std::move(hits)};
}

void EmbeddingIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write index " + path.string());
    out.write(kIndexMagic, sizeof kIndexMagic);
    put_u64(out, size());
    put_u64(out, dim_);
    put_u64(out, vocab_hash_);
    for (double v : vectors_) put_u64(out, std::bit_cast<std::uint64_t>(v));
    for (const auto& id : record_ids_) {
        put_u64(out, id.size());
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
    }
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open index " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kIndexMagic, 8) != 0) throw ValidationError("index: bad magic");
    EmbeddingIndex index;
    const auto n = get_u64(in);
    index.dim_ = get_u64(in);
    index.vocab_hash_ = get_u64(in);
    if (n == 0 || index.dim_ == 0 || n > (1ULL << 32) || index.dim_ > (1ULL << 20)) throw ValidationError("index: bad header");
    index.vectors_.resize(n * index.dim_);
    for (auto& v : index.vectors_) v = std::bit_cast<double>(get_u64(in));
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto len = get_u64(in);
        if (len > (1ULL << 20)) throw ValidationError("index: bad record_id length");
        std::string id(len, '\0');
        if (!in.read(id.data(), static_cast<std::streamsize>(len))) throw ValidationError("index: truncated record_id table");
        index.record_ids_.push_back(std::move(id));
    }
    return index;
}

RetrievalResult knn(const EmbeddingIndex& index, std::span<const double> query, std::size_t k) {
    return index.knn(query, k);
}

Bm25Index::Bm25Index(std::vector<Document> documents, Bm25Params params) : params_(params) {
    if (documents.empty()) throw ValidationError("bm25: empty candidate collection");
    std::size_t total = 0;
    for (auto& doc : documents) {
        std::unordered_map<std::string, std::size_t> tf;
        for (const auto& t : doc.tokens) ++tf[t];
        for (const auto& [term, _] : tf) ++df_[term];
        lengths_.push_back(doc.tokens.size());
        total += doc.tokens.size();
        tf_.push_back(std::move(tf));
        ids_.push_back(std::move(doc.record_id));
    }
    avg_len_ = static_cast<double>(total) / static_cast<double>(ids_.size());
}

double Bm25Index::idf(const std::string& term) const {
    const auto it = df_.find(term);
    const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
    const double n = static_cast<double>(ids_.size());
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

std::vector<double> Bm25Index::scores(std::span<const std::string> query) const {
    std::vector<std::string> terms(query.begin(), query.end());
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

    std::vector<double> out(ids_.size(), 0.0);
    for (const auto& term : terms) {
        if (!df_.contains(term)) continue;
        const double w = idf(term);
        for (std::size_t d = 0; d < ids_.size(); ++d) {
            const auto it = tf_[d].find(term);
            if (it == tf_[d].end()) continue;
            const double tf = static_cast<double>(it->second);
            const double norm = avg_len_ > 0.0 ? static_cast<double>(lengths_[d]) / avg_len_ : 0.0;
            out[d] += w * tf * (params_.k1 + 1.0) / (tf + params_.k1 * (1.0 - params_.b + params_.b * norm));
        }
    }
    return out;
}

RetrievalResult Bm25Index::rank(std::span<const std::string> query, std::size_t k, std::string query_id) const {
    const auto s = scores(query);
    std::vector<Hit> hits;
    hits.reserve(s.size());
    for (std::size_t d = 0; d < s.size(); ++d) hits.push_back({ids_[d], s[d]});
    sort_and_truncate(hits, k);
    return {std::move(query_id), std::move(hits)};
}

RetrievalResult bm25_rank(std::span<const Bm25Index::Document> candidates, std::span<const std::string> query, std::size_t k,
                          Bm25Params params) {
    return Bm25Index({candidates.begin(), candidates.end()}, params).rank(query, k);
}

RetrievalResult random_rank(std::span<const std::string> candidate_ids, std::size_t k, std::uint64_t seed) {
    if (k > candidate_ids.size()) throw ValidationError("random_rank: k exceeds candidate count");
    Rng rng(seed);
    RetrievalResult result;
    for (auto i : rng.sample_without_replacement(candidate_ids.size(), k)) result.hits.push_back({candidate_ids[i], 0.0});
    return result;
}

}  // namespace tracefind
