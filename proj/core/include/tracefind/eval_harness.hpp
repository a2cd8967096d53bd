#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tracefind/codebleu.hpp"
#include "tracefind/encoder.hpp"
#include "tracefind/retrieval.hpp"
#include "tracefind/tokenizer.hpp"
#include "tracefind/trace_corpus.hpp"

namespace tracefind {

enum class QuerySet { WithLibraries, WithoutLibraries };

std::string_view to_string(QuerySet q) noexcept;
QuerySet query_set_from_string(std::string_view name);

struct EvalConfig {
    std::vector<std::size_t> k_values{1, 5};
    std::uint64_t seed = 0;
    QuerySet query_set = QuerySet::WithLibraries;
    /// Drop a hit whose record_id equals the query's, so a query drawn from
    /// the candidate pool cannot retrieve its own trace.
    bool exclude_self = true;
    CodeBleuWeights weights;

    /// Throws ValidationError unless k_values is non-empty, strictly
    /// ascending and >= 1.
    void validate() const;
};

/// A ranked retriever over a fixed candidate corpus.
class RetrievalSystem {
public:
    virtual ~RetrievalSystem() = default;
    virtual std::string name() const = 0;

    /// Called once before any query. `seed` is the system's own stream.
    virtual void prepare(const Corpus& candidates, std::uint64_t seed) = 0;

    /// Top `k` candidates for `query`, best first.
    virtual std::vector<Hit> retrieve(const TraceRecord& query, std::size_t query_index, std::size_t k) = 0;

    /// Fraction of query tokens outside the system's vocabulary, if relevant.
    virtual std::optional<double> unk_rate(const Corpus&) const { return std::nullopt; }

    /// Provenance entries merged into the report metadata.
    virtual std::map<std::string, std::string> provenance() const { return {}; }
};

/// Mean-pooled encoder embeddings, exact cosine search.
std::unique_ptr<RetrievalSystem> make_embedding_system(std::string name, EncoderModel model, Vocabulary vocab,
                                                       Variant variant, EncodeOptions options = {});
/// Same, but reuses a prebuilt index of the candidate corpus.
std::unique_ptr<RetrievalSystem> make_embedding_system(std::string name, EncoderModel model, Vocabulary vocab,
                                                       Variant variant, EncodeOptions options, EmbeddingIndex index);
std::unique_ptr<RetrievalSystem> make_bm25_system(std::string name, Variant variant, Bm25Params params = {});
std::unique_ptr<RetrievalSystem> make_random_system(std::string name = "random");

/// Replays hits produced elsewhere: query record_id -> ranked candidate ids.
std::unique_ptr<RetrievalSystem> make_hit_log_system(std::string name,
                                                     std::map<std::string, std::vector<std::string>> hits);

struct ScoredHit {
    std::string record_id;
    double retrieval_score = 0.0;
    double codebleu = 0.0;
    bool fallback = false;
};

struct QueryLog {
    std::string query_id;
    std::vector<ScoredHit> hits;
    std::vector<double> max_at_k;  // parallel to k_values
};

struct SystemResult {
    std::string name;
    std::vector<double> avg_max;  // parallel to k_values, 0..100
    std::vector<QueryLog> queries;
    std::size_t fallback_hits = 0;
    std::optional<double> unk_rate;
};

struct EvalReport {
    EvalConfig config;
    std::size_t query_count = 0;
    std::size_t excluded_empty_source = 0;
    std::size_t candidate_count = 0;
    std::map<std::string, std::string> metadata;  // hashes and provenance
    std::vector<SystemResult> systems;

    const SystemResult* find(const std::string& system) const;
    /// Deterministic serialization (no timestamps); doubles round-trip.
    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
};

/// For each query: retrieve max(k) hits once, score each with
/// codebleu(hit source, query source), and take prefix maxima for every k.
/// Systems get independent seed streams derived from config.seed and their
/// name, so adding a system leaves the others' numbers unchanged.
EvalReport evaluate(const Corpus& candidates, const Corpus& queries, std::vector<RetrievalSystem*> systems,
                    const EvalConfig& config);

/// "75.085" -> "75.09": round half away from zero on the shortest decimal
/// form of the value, two places.
std::string format_score(double value);

struct RenderedTable {
    std::string text;
    std::string json;
};

/// Rows are systems, columns are (query set, k) over all reports.
RenderedTable render_table(const std::vector<EvalReport>& reports);

}  // namespace tracefind
