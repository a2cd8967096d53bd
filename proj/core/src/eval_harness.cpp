#include "tracefind/eval_harness.hpp"

#include <algorithm>
#include <charconv>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "tracefind/error.hpp"
#include "tracefind/hash.hpp"
#include "tracefind/rng.hpp"

namespace tracefind {

using ojson = nlohmann::ordered_json;

std::string_view to_string(QuerySet q) noexcept {
    return q == QuerySet::WithLibraries ? "WithLibraries" : "WithoutLibraries";
}

QuerySet query_set_from_string(std::string_view name) {
    if (name == "WithLibraries" || name == "with-libraries" || name == "withlib") return QuerySet::WithLibraries;
    if (name == "WithoutLibraries" || name == "without-libraries" || name == "withoutlib")
        return QuerySet::WithoutLibraries;
    throw ValidationError("unknown query set '" + std::string(name) + "'");
}

void EvalConfig::validate() const {
    if (k_values.empty()) throw ValidationError("k_values must not be empty");
    for (std::size_t i = 0; i < k_values.size(); ++i) {
        if (k_values[i] == 0) throw ValidationError("k_values must be >= 1");
        if (i > 0 && k_values[i] <= k_values[i - 1]) throw ValidationError("k_values must be strictly ascending");
    }
    weights.validate();
}

namespace {

class EmbeddingSystem final : public RetrievalSystem {
public:
    EmbeddingSystem(std::string name, EncoderModel model, Vocabulary vocab, Variant variant, EncodeOptions options,
                    std::optional<EmbeddingIndex> index)
        : name_(std::move(name)), model_(std::move(model)), vocab_(std::move(vocab)), variant_(variant),
          options_(options), index_(std::move(index)) {
        if (model_.vocab_hash != 0 && model_.vocab_hash != vocab_.hash())
            throw ValidationError(name_ + ": model was trained with a different vocabulary");
        if (options_.max_len > model_.config.max_positions)
            throw ValidationError(name_ + ": max_len exceeds the model's max_positions");
        if (vocab_.size() > model_.config.vocab_size)
            throw ValidationError(name_ + ": vocabulary larger than the model's embedding table");
    }

    std::string name() const override { return name_; }

    void prepare(const Corpus& candidates, std::uint64_t) override {
        if (index_) {
            std::set<std::string> have(index_->record_ids().begin(), index_->record_ids().end());
            bool same = have.size() == candidates.size();
            for (const auto& r : candidates.records) same = same && have.count(r.record_id) > 0;
            if (!same) throw ValidationError(name_ + ": index does not cover the candidate set");
            return;
        }
        std::vector<TraceEmbedding> rows;
        rows.reserve(candidates.size());
        for (const auto& r : candidates.records) rows.push_back(embed(model_, encode(r, vocab_, variant_, options_)));
        index_.emplace(std::move(rows), vocab_.hash());
    }

    std::vector<Hit> retrieve(const TraceRecord& query, std::size_t, std::size_t k) override {
        const auto e = embed(model_, encode(query, vocab_, variant_, options_));
        return index_->knn(e.vector, k, query.record_id).hits;
    }

    std::optional<double> unk_rate(const Corpus& queries) const override {
        std::vector<EncodedTrace> enc;
        enc.reserve(queries.size());
        for (const auto& r : queries.records) enc.push_back(encode(r, vocab_, variant_, options_));
        return unk_stats(enc).rate();
    }

    std::map<std::string, std::string> provenance() const override {
        return {{name_ + ".model_hash", hex64(model_hash(model_))},
                {name_ + ".vocab_hash", hex64(vocab_.hash())},
                {name_ + ".variant", std::string(to_string(variant_))},
                {name_ + ".max_len", std::to_string(options_.max_len)}};
    }

private:
    std::string name_;
    EncoderModel model_;
    Vocabulary vocab_;
    Variant variant_;
    EncodeOptions options_;
    std::optional<EmbeddingIndex> index_;
};

class Bm25System final : public RetrievalSystem {
public:
    Bm25System(std::string name, Variant variant, Bm25Params params)
        : name_(std::move(name)), variant_(variant), params_(params) {}

    std::string name() const override { return name_; }

    void prepare(const Corpus& candidates, std::uint64_t) override {
        std::vector<Bm25Index::Document> docs;
        docs.reserve(candidates.size());
        for (const auto& r : candidates.records) docs.push_back({r.record_id, token_strings(r, variant_)});
        index_.emplace(std::move(docs), params_);
    }

    std::vector<Hit> retrieve(const TraceRecord& query, std::size_t, std::size_t k) override {
        const auto tokens = token_strings(query, variant_);
        return index_->rank(tokens, k, query.record_id).hits;
    }

    std::map<std::string, std::string> provenance() const override {
        std::ostringstream p;
        p << params_.k1 << "," << params_.b;
        return {{name_ + ".variant", std::string(to_string(variant_))}, {name_ + ".k1_b", p.str()}};
    }

private:
    std::string name_;
    Variant variant_;
    Bm25Params params_;
    std::optional<Bm25Index> index_;
};

class RandomSystem final : public RetrievalSystem {
public:
    explicit RandomSystem(std::string name) : name_(std::move(name)) {}

    std::string name() const override { return name_; }

    void prepare(const Corpus& candidates, std::uint64_t seed) override {
        seed_ = seed;
        ids_.clear();
        for (const auto& r : candidates.records) ids_.push_back(r.record_id);
    }

    std::vector<Hit> retrieve(const TraceRecord&, std::size_t query_index, std::size_t k) override {
        return random_rank(ids_, std::min(k, ids_.size()), derive_seed(seed_, query_index)).hits;
    }

private:
    std::string name_;
    std::uint64_t seed_ = 0;
    std::vector<std::string> ids_;
};

class HitLogSystem final : public RetrievalSystem {
public:
    HitLogSystem(std::string name, std::map<std::string, std::vector<std::string>> hits)
        : name_(std::move(name)), hits_(std::move(hits)) {}

    std::string name() const override { return name_; }
    void prepare(const Corpus&, std::uint64_t) override {}

    std::vector<Hit> retrieve(const TraceRecord& query, std::size_t, std::size_t k) override {
        const auto it = hits_.find(query.record_id);
        if (it == hits_.end()) throw ValidationError(name_ + ": hit log has no entry for query '" + query.record_id + "'");
        std::vector<Hit> out;
        for (std::size_t i = 0; i < it->second.size() && i < k; ++i)
            out.push_back({it->second[i], -static_cast<double>(i)});
        return out;
    }

private:
    std::string name_;
    std::map<std::string, std::vector<std::string>> hits_;
};

ojson weights_json(const CodeBleuWeights& w) {
    return ojson{{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}, {"delta", w.delta}};
}

}  // namespace

std::unique_ptr<RetrievalSystem> make_embedding_system(std::string name, EncoderModel model, Vocabulary vocab,
                                                       Variant variant, EncodeOptions options) {
    return std::make_unique<EmbeddingSystem>(std::move(name), std::move(model), std::move(vocab), variant, options,
                                             std::nullopt);
}

std::unique_ptr<RetrievalSystem> make_embedding_system(std::string name, EncoderModel model, Vocabulary vocab,
                                                       Variant variant, EncodeOptions options, EmbeddingIndex index) {
    return std::make_unique<EmbeddingSystem>(std::move(name), std::move(model), std::move(vocab), variant, options,
                                             std::move(index));
}

std::unique_ptr<RetrievalSystem> make_bm25_system(std::string name, Variant variant, Bm25Params params) {
    return std::make_unique<Bm25System>(std::move(name), variant, params);
}

std::unique_ptr<RetrievalSystem> make_random_system(std::string name) {
    return std::make_unique<RandomSystem>(std::move(name));
}

std::unique_ptr<RetrievalSystem> make_hit_log_system(std::string name,
                                                     std::map<std::string, std::vector<std::string>> hits) {
    return std::make_unique<HitLogSystem>(std::move(name), std::move(hits));
}

const SystemResult* EvalReport::find(const std::string& system) const {
    for (const auto& s : systems)
        if (s.name == system) return &s;
    return nullptr;
}

EvalReport evaluate(const Corpus& candidates, const Corpus& queries, std::vector<RetrievalSystem*> systems,
                    const EvalConfig& config) {
    config.validate();
    if (candidates.empty()) throw EmptyCorpusError("evaluate: candidate set is empty");
    if (systems.empty()) throw ValidationError("evaluate: no systems selected");
    {
        std::set<std::string> names;
        for (const auto* s : systems)
            if (!names.insert(s->name()).second) throw ValidationError("evaluate: duplicate system '" + s->name() + "'");
    }

    EvalReport report;
    report.config = config;
    report.candidate_count = candidates.size();

    Corpus usable;
    usable.namespace_prefix = queries.namespace_prefix;
    for (const auto& q : queries.records) {
        if (q.source.empty())
            ++report.excluded_empty_source;
        else
            usable.records.push_back(q);
    }
    if (usable.empty()) throw ValidationError("evaluate: no queries with a non-empty source");
    report.query_count = usable.size();
    report.metadata["candidates_hash"] = hex64(corpus_hash(candidates));
    report.metadata["queries_hash"] = hex64(corpus_hash(usable));

    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < candidates.size(); ++i) by_id.emplace(candidates.records[i].record_id, i);

    // Analyses are shared across systems; the query side is small, the
    // candidate side is filled lazily as hits arrive.
    std::vector<std::optional<CodeAnalysis>> cand_analysis(candidates.size());
    std::vector<CodeAnalysis> query_analysis;
    query_analysis.reserve(usable.size());
    for (const auto& q : usable.records) query_analysis.push_back(analyze(q.source));
    std::vector<std::map<std::size_t, CodeBleuResult>> pair_cache(usable.size());

    const std::size_t depth = config.k_values.back();
    for (auto* system : systems) {
        SystemResult result;
        result.name = system->name();
        system->prepare(candidates, derive_seed(config.seed, "eval/" + result.name));
        for (const auto& [k, v] : system->provenance()) report.metadata[k] = v;
        result.unk_rate = system->unk_rate(usable);

        std::vector<double> sums(config.k_values.size(), 0.0);
        for (std::size_t qi = 0; qi < usable.size(); ++qi) {
            const auto& query = usable.records[qi];
            auto hits = system->retrieve(query, qi, config.exclude_self ? depth + 1 : depth);
            if (config.exclude_self)
                std::erase_if(hits, [&](const Hit& h) { return h.record_id == query.record_id; });
            if (hits.size() > depth) hits.resize(depth);

            QueryLog log;
            log.query_id = query.record_id;
            for (const auto& h : hits) {
                const auto it = by_id.find(h.record_id);
                if (it == by_id.end())
                    throw ValidationError(result.name + ": hit '" + h.record_id + "' is not a candidate");
                const std::size_t ci = it->second;
                auto cached = pair_cache[qi].find(ci);
                if (cached == pair_cache[qi].end()) {
                    if (!cand_analysis[ci]) cand_analysis[ci] = analyze(candidates.records[ci].source);
                    cached = pair_cache[qi].emplace(ci, codebleu(*cand_analysis[ci], query_analysis[qi], config.weights)).first;
                }
                log.hits.push_back({h.record_id, h.score, cached->second.score, cached->second.fallback_used});
                result.fallback_hits += cached->second.fallback_used ? 1 : 0;
            }
            double best = 0.0;
            std::size_t next = 0;
            for (std::size_t ki = 0; ki < config.k_values.size(); ++ki) {
                for (; next < log.hits.size() && next < config.k_values[ki]; ++next)
                    best = std::max(best, log.hits[next].codebleu);
                log.max_at_k.push_back(best);
                sums[ki] += best;
            }
            result.queries.push_back(std::move(log));
        }
        for (double s : sums) result.avg_max.push_back(s / static_cast<double>(usable.size()));
        report.systems.push_back(std::move(result));
    }
    return report;
}

std::string EvalReport::to_json() const {
    ojson j;
    ojson cfg;
    cfg["k_values"] = config.k_values;
    cfg["seed"] = config.seed;
    cfg["query_set"] = std::string(to_string(config.query_set));
    cfg["exclude_self"] = config.exclude_self;
    cfg["weights"] = weights_json(config.weights);
    j["config"] = cfg;
    j["query_count"] = query_count;
    j["excluded_empty_source"] = excluded_empty_source;
    j["candidate_count"] = candidate_count;
    j["metadata"] = ojson::object();
    for (const auto& [k, v] : metadata) j["metadata"][k] = v;
    j["systems"] = ojson::array();
    for (const auto& s : systems) {
        ojson sj;
        sj["name"] = s.name;
        sj["avg_max"] = s.avg_max;
        sj["fallback_hits"] = s.fallback_hits;
        sj["unk_rate"] = s.unk_rate ? ojson(*s.unk_rate) : ojson(nullptr);
        sj["queries"] = ojson::array();
        for (const auto& q : s.queries) {
            ojson qj;
            qj["query_id"] = q.query_id;
            qj["max_at_k"] = q.max_at_k;
            qj["hits"] = ojson::array();
            for (const auto& h : q.hits)
                qj["hits"].push_back(ojson{{"record_id", h.record_id},
                                           {"retrieval_score", h.retrieval_score},
                                           {"codebleu", h.codebleu},
                                           {"fallback", h.fallback}});
            sj["queries"].push_back(std::move(qj));
        }
        j["systems"].push_back(std::move(sj));
    }
    return j.dump(1) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
    EvalReport r;
    try {
        const auto j = ojson::parse(text);
        const auto& cfg = j.at("config");
        r.config.k_values = cfg.at("k_values").get<std::vector<std::size_t>>();
        r.config.seed = cfg.at("seed").get<std::uint64_t>();
        r.config.query_set = query_set_from_string(cfg.at("query_set").get<std::string>());
        r.config.exclude_self = cfg.at("exclude_self").get<bool>();
        const auto& w = cfg.at("weights");
        r.config.weights = {w.at("alpha").get<double>(), w.at("beta").get<double>(), w.at("gamma").get<double>(),
                            w.at("delta").get<double>()};
        r.query_count = j.at("query_count").get<std::size_t>();
        r.excluded_empty_source = j.at("excluded_empty_source").get<std::size_t>();
        r.candidate_count = j.at("candidate_count").get<std::size_t>();
        for (const auto& [k, v] : j.at("metadata").items()) r.metadata[k] = v.get<std::string>();
        for (const auto& sj : j.at("systems")) {
            SystemResult s;
            s.name = sj.at("name").get<std::string>();
            s.avg_max = sj.at("avg_max").get<std::vector<double>>();
            s.fallback_hits = sj.at("fallback_hits").get<std::size_t>();
            if (!sj.at("unk_rate").is_null()) s.unk_rate = sj.at("unk_rate").get<double>();
            for (const auto& qj : sj.at("queries")) {
                QueryLog q;
                q.query_id = qj.at("query_id").get<std::string>();
                q.max_at_k = qj.at("max_at_k").get<std::vector<double>>();
                for (const auto& hj : qj.at("hits"))
                    q.hits.push_back({hj.at("record_id").get<std::string>(), hj.at("retrieval_score").get<double>(),
                                      hj.at("codebleu").get<double>(), hj.at("fallback").get<bool>()});
                s.queries.push_back(std::move(q));
            }
            r.systems.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("eval report: ") + e.what());
    }
    return r;
}

std::string format_score(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed);
    std::string s(buf, res.ptr);
    std::string sign;
    if (!s.empty() && s[0] == '-') {
        sign = "-";
        s.erase(0, 1);
    }
    const auto dot = s.find('.');
    std::string digits = dot == std::string::npos ? s : s.substr(0, dot);
    std::string frac = dot == std::string::npos ? "" : s.substr(dot + 1);
    const bool up = frac.size() > 2 && frac[2] >= '5';
    frac.resize(2, '0');
    std::string all = digits + frac;
    if (up) {
        std::size_t i = all.size();
        while (i > 0) {
            --i;
            if (all[i] == '9') {
                all[i] = '0';
            } else {
                ++all[i];
                break;
            }
            if (i == 0) all.insert(all.begin(), '1');
        }
    }
    std::string out = all.substr(0, all.size() - 2) + "." + all.substr(all.size() - 2);
    if (out.find_first_not_of("0.") == std::string::npos) sign.clear();
    return sign + out;
}

RenderedTable render_table(const std::vector<EvalReport>& reports) {
    std::vector<std::string> columns;
    std::vector<std::string> rows;
    std::map<std::string, std::map<std::size_t, double>> cells;
    for (const auto& r : reports) {
        const std::size_t base = columns.size();
        for (std::size_t k : r.config.k_values)
            columns.push_back(std::string(to_string(r.config.query_set)) + " top@" + std::to_string(k));
        for (const auto& s : r.systems) {
            if (std::find(rows.begin(), rows.end(), s.name) == rows.end()) rows.push_back(s.name);
            for (std::size_t ki = 0; ki < s.avg_max.size(); ++ki) cells[s.name][base + ki] = s.avg_max[ki];
        }
    }

    std::vector<std::vector<std::string>> grid;
    grid.push_back({"system"});
    for (const auto& c : columns) grid[0].push_back(c);
    ojson j;
    j["columns"] = columns;
    j["rows"] = ojson::array();
    for (const auto& name : rows) {
        std::vector<std::string> line{name};
        ojson rj;
        rj["system"] = name;
        rj["values"] = ojson::array();
        rj["formatted"] = ojson::array();
        for (std::size_t c = 0; c < columns.size(); ++c) {
            const auto it = cells[name].find(c);
            if (it == cells[name].end()) {
                line.push_back("-");
                rj["values"].push_back(nullptr);
                rj["formatted"].push_back(nullptr);
            } else {
                line.push_back(format_score(it->second));
                rj["values"].push_back(it->second);
                rj["formatted"].push_back(line.back());
            }
        }
        grid.push_back(std::move(line));
        j["rows"].push_back(std::move(rj));
    }

    std::vector<std::size_t> width(grid[0].size(), 0);
    for (const auto& line : grid)
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
    std::ostringstream text;
    for (std::size_t r = 0; r < grid.size(); ++r) {
        for (std::size_t c = 0; c < grid[r].size(); ++c) {
            if (c == 0)
                text << std::left << std::setw(static_cast<int>(width[c])) << grid[r][c];
            else
                text << "  " << std::right << std::setw(static_cast<int>(width[c])) << grid[r][c];
        }
        text << "\n";
        if (r == 0) {
            std::size_t total = width[0];
            for (std::size_t c = 1; c < width.size(); ++c) total += 2 + width[c];
            text << std::string(total, '-') << "\n";
        }
    }
    return {text.str(), j.dump(2) + "\n"};
}

}  // namespace tracefind
