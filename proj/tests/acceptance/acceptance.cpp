// Desk-scale acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "tracefind/codebleu.hpp"
#include "tracefind/dataset_split.hpp"
#include "tracefind/encoder.hpp"
#include "tracefind/eval_harness.hpp"
#include "tracefind/retrieval.hpp"
#include "tracefind/rng.hpp"
#include "tracefind/synth_gen.hpp"

namespace fs = std::filesystem;
using namespace tracefind;

namespace {

constexpr std::uint64_t kSeed = 1;
const fs::path kOut = "acceptance_out";

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 2) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(precision);
    s << v;
    return s.str();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

void write(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream(path, std::ios::binary) << text;
}

// ---- the shared desk-scale run (criteria 1-4) ----

struct DeskRun {
    SplitResult split;
    EncoderModel plain, boundaries;
    Vocabulary plain_vocab, boundaries_vocab;
    EvalReport with_libraries, without_libraries;
    double cpu = 0.0;
};

EncoderModel pretrain(const Corpus& candidates, const Vocabulary& vocab, Variant variant, std::uint64_t seed,
                      std::size_t epochs = 0) {
    auto cfg = EncoderConfig::desk_preset(vocab.size(), fitted_max_len(candidates, variant));
    cfg.seed = seed;
    if (epochs) cfg.epochs = epochs;
    return pretrain_corpus(candidates, vocab, variant, cfg).model;
}

EncodeOptions options_for(const EncoderModel& m) {
    EncodeOptions o;
    o.max_len = m.config.max_positions;
    return o;
}

std::vector<std::unique_ptr<RetrievalSystem>> systems_for(const DeskRun& run) {
    std::vector<std::unique_ptr<RetrievalSystem>> out;
    out.push_back(make_embedding_system("embedding", run.plain, run.plain_vocab, Variant::Plain, options_for(run.plain)));
    out.push_back(make_embedding_system("embedding_boundaries", run.boundaries, run.boundaries_vocab, Variant::Boundaries,
                                        options_for(run.boundaries)));
    out.push_back(make_bm25_system("bm25", Variant::Plain));
    out.push_back(make_random_system("random"));
    return out;
}

std::vector<RetrievalSystem*> raw(const std::vector<std::unique_ptr<RetrievalSystem>>& owned) {
    std::vector<RetrievalSystem*> out;
    for (const auto& s : owned) out.push_back(s.get());
    return out;
}

DeskRun desk_run() {
    const double start = cpu_seconds();
    DeskRun run;
    GenPlan plan;
    plan.n_methods = 200;
    plan.library_overlap = 0.8;
    plan.seed = kSeed;
    const Corpus corpus = dedup(generate(plan).corpus);
    SplitSpec spec;
    spec.candidate_projects = {"synth-p0", "synth-p1"};
    spec.seed = kSeed;
    spec.with_lib_sample = 200;
    spec.without_lib_sample = 200;
    run.split = split(corpus, spec);
    const Corpus& cand = run.split.candidates;

    run.plain_vocab = build_vocab(cand, Variant::Plain);
    run.boundaries_vocab = build_vocab(cand, Variant::Boundaries);
    run.plain = pretrain(cand, run.plain_vocab, Variant::Plain, kSeed);
    run.boundaries = pretrain(cand, run.boundaries_vocab, Variant::Boundaries, kSeed);

    EvalConfig cfg;
    cfg.seed = kSeed;
    auto owned = systems_for(run);
    run.with_libraries = evaluate(cand, run.split.with_libraries, raw(owned), cfg);
    cfg.query_set = QuerySet::WithoutLibraries;
    run.without_libraries = evaluate(cand, run.split.without_libraries, raw(owned), cfg);
    run.cpu = cpu_seconds() - start;

    write(kOut / "report_with_libraries.json", run.with_libraries.to_json());
    write(kOut / "report_without_libraries.json", run.without_libraries.to_json());
    const auto table = render_table({run.with_libraries, run.without_libraries});
    write(kOut / "desk_table.txt", table.text);
    write(kOut / "desk_table.json", table.json);
    std::cout << table.text << std::flush;
    return run;
}

double top(const EvalReport& r, const std::string& system, std::size_t ki = 0) { return r.find(system)->avg_max.at(ki); }

Outcome ordering(const DeskRun& run) {
    const auto& r = run.with_libraries;
    const double e = top(r, "embedding"), b = top(r, "bm25"), x = top(r, "random");
    const bool pass = e >= b && b >= x && e - x >= 15.0 && run.cpu < 1800.0;
    return {pass, "top@1 embedding " + fmt(e) + ", bm25 " + fmt(b) + ", random " + fmt(x) + "; margin " + fmt(e - x) +
                      "; cpu " + fmt(run.cpu, 0) + " s"};
}

Outcome boundaries_effect(const DeskRun& run) {
    const double p = top(run.with_libraries, "embedding");
    const double b = top(run.with_libraries, "embedding_boundaries");
    return {b >= p - 1.0, "top@1 boundaries " + fmt(b) + " vs plain " + fmt(p)};
}

Outcome monotonic(const std::vector<const EvalReport*>& reports) {
    std::size_t checked = 0;
    for (const auto* r : reports) {
        for (const auto& s : r->systems) {
            if (s.avg_max.at(1) < s.avg_max.at(0)) return {false, s.name + " average decreases"};
            for (const auto& q : s.queries) {
                if (q.max_at_k.at(1) < q.max_at_k.at(0)) return {false, s.name + "/" + q.query_id + " decreases"};
                ++checked;
            }
        }
    }
    return {true, std::to_string(checked) + " (system, query) pairs across " + std::to_string(reports.size()) + " runs"};
}

Outcome exact_match(const DeskRun& run, EvalReport& injected_report) {
    Corpus candidates = run.split.candidates;
    const Corpus& queries = run.split.without_libraries;
    for (const auto& q : queries.records) {
        TraceRecord copy = q;
        copy.record_id = "injected/" + q.record_id;
        candidates.records.push_back(std::move(copy));
    }
    auto owned = systems_for(run);
    EvalConfig cfg;
    cfg.seed = kSeed;
    cfg.query_set = QuerySet::WithoutLibraries;
    injected_report = evaluate(candidates, queries, {owned[0].get(), owned[1].get()}, cfg);
    const double p = top(injected_report, "embedding");
    const double b = top(injected_report, "embedding_boundaries");
    const bool pass = std::abs(p - 100.0) <= 0.01 && std::abs(b - 100.0) <= 0.01;
    return {pass, "top@1 plain " + fmt(p) + ", boundaries " + fmt(b) + " over " + std::to_string(queries.size()) +
                      " injected queries"};
}

// ---- standalone criteria ----

EncodedTrace make_trace(const std::vector<TokenId>& events, std::size_t max_len, std::string id) {
    EncodedTrace t;
    t.record_id = std::move(id);
    t.ids.assign(max_len, special::kPad);
    t.attention_mask.assign(max_len, 0);
    t.ids[0] = special::kCls;
    for (std::size_t i = 0; i < events.size(); ++i) t.ids[i + 1] = events[i];
    t.ids[events.size() + 1] = special::kSep;
    std::fill_n(t.attention_mask.begin(), events.size() + 2, 1);
    return t;
}

Outcome gradient_check() {
    const auto t0 = std::chrono::steady_clock::now();
    EncoderConfig cfg;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.intermediate = 12;
    cfg.max_positions = 10;
    cfg.vocab_size = 14;
    cfg.mask_prob = 0.5;
    cfg.seed = kSeed;
    auto model = EncoderModel::initialize(cfg);
    Rng perturb(derive_seed(kSeed, "acceptance/perturb"));
    model.params.for_each([&](const std::string&, Matrix& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.05 * perturb.normal();
    });
    Rng data(derive_seed(kSeed, "acceptance/data"));
    std::vector<EncodedTrace> batch;
    for (int b = 0; b < 3; ++b) {
        std::vector<TokenId> ev;
        const auto n = data.between(3, 8);
        for (int i = 0; i < n; ++i) ev.push_back(static_cast<TokenId>(special::kCount + data.below(7)));
        batch.push_back(make_trace(ev, cfg.max_positions, "g" + std::to_string(b)));
    }
    Rng mask_rng(derive_seed(kSeed, "acceptance/mask"));
    const auto masked = mask_batch(batch, cfg, mask_rng);

    EncoderParams grad;
    mlm_loss_and_gradient(model, masked, grad);
    std::vector<Matrix*> params, grads;
    model.params.for_each([&](const std::string&, Matrix& m) { params.push_back(&m); });
    grad.for_each([&](const std::string&, Matrix& m) { grads.push_back(&m); });

    Rng pick(derive_seed(kSeed, "acceptance/pick"));
    const double h = 1e-5;
    std::size_t checked = 0, unreached = 0;
    double worst = 0.0;
    for (int attempt = 0; attempt < 10000 && checked < 200; ++attempt) {
        const auto t = pick.below(params.size());
        Matrix& p = *params[t];
        const auto i = static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(p.size())));
        const double analytic = grads[t]->data()[i];
        const double saved = p.data()[i];
        p.data()[i] = saved + h;
        const double up = mlm_loss(model, masked).loss;
        p.data()[i] = saved - h;
        const double down = mlm_loss(model, masked).loss;
        p.data()[i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max(std::abs(analytic), std::abs(numeric));
        if (scale < 1e-6) {
            // Parameter the masked loss does not reach; both sides must agree on ~0.
            if (std::abs(analytic - numeric) > 1e-9) return {false, "unreached parameter has gradient mismatch"};
            ++unreached;
            continue;
        }
        worst = std::max(worst, std::abs(analytic - numeric) / scale);
        ++checked;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream d;
    d << checked << " parameters (" << unreached << " unreached skipped), worst relative error " << std::scientific << std::setprecision(2) << worst << ", "
      << std::fixed << std::setprecision(1) << secs << " s";
    return {checked >= 100 && worst <= 1e-4 && secs < 60.0, d.str()};
}

Outcome knn_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(kSeed, "acceptance/knn"));
    const std::size_t n = 1000, dim = 24;
    std::vector<TraceEmbedding> rows;
    for (std::size_t i = 0; i < n; ++i) {
        TraceEmbedding e;
        char id[16];
        std::snprintf(id, sizeof id, "v%04zu", (i * 7919) % n);  // ids not in insertion order
        e.record_id = id;
        if (i % 10 == 9) {
            e.vector = rows[i - 1].vector;  // exact duplicates exercise the tie-break
        } else {
            e.vector.resize(dim);
            double norm = 0.0;
            for (auto& x : e.vector) {
                x = rng.normal();
                norm += x * x;
            }
            for (auto& x : e.vector) x /= std::sqrt(norm);
        }
        rows.push_back(e);
    }
    const EmbeddingIndex index(rows);
    std::size_t queries = 0;
    for (std::size_t q = 0; q < 60; ++q) {
        std::vector<double> query = q < 20 ? rows[q * 37 % n].vector : std::vector<double>(dim);
        if (q >= 20) {
            double norm = 0.0;
            for (auto& x : query) {
                x = rng.normal();
                norm += x * x;
            }
            for (auto& x : query) x /= std::sqrt(norm);
        }
        // Brute force: full scan, score descending, record_id ascending.
        std::vector<std::pair<double, std::string>> all;
        for (const auto& r : rows) {
            double dot = 0.0;
            for (std::size_t d = 0; d < dim; ++d) dot += r.vector[d] * query[d];
            all.emplace_back(dot, r.record_id);
        }
        std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        for (std::size_t k : {1, 5, 50}) {
            const auto got = index.knn(query, k).hits;
            if (got.size() != k) return {false, "wrong hit count"};
            for (std::size_t i = 0; i < k; ++i) {
                if (got[i].record_id != all[i].second || std::abs(got[i].score - all[i].first) > 1e-12)
                    return {false, "rank " + std::to_string(i) + " differs for query " + std::to_string(q) + ", k " +
                                       std::to_string(k)};
            }
        }
        ++queries;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {secs < 10.0, std::to_string(queries) + " queries x k in {1,5,50} over " + std::to_string(n) +
                             " vectors with duplicates, " + fmt(secs, 2) + " s"};
}

Outcome bm25_fixture() {
    // Hand-computed values (tests/oracles/bm25_fixture.py).
    const Bm25Index index({{"d1", {"a", "b", "c", "a"}}, {"d2", {"b", "d"}}, {"d3", {"a", "e", "e", "f", "g"}}});
    const std::vector<std::string> query{"a", "e", "a"};
    const auto s = index.scores(query);
    const double expected[] = {0.630143370, 0.0, 1.632648506};
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(s[static_cast<std::size_t>(i)] - expected[i]));
    const auto ranked = index.rank(query, 3).hits;
    const bool order = ranked[0].record_id == "d3" && ranked[1].record_id == "d1" && ranked[2].record_id == "d2";
    return {worst < 5e-7 && order, "max deviation " + fmt(worst, 9) + ", ranking d3 > d1 > d2"};
}

Outcome codebleu_identities() {
    const fs::path dir = fs::path(TRACEFIND_TEST_DATA_DIR);
    auto read = [](const fs::path& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    std::size_t snippets = 0;
    for (const auto& entry : fs::directory_iterator(dir / "java_snippets")) {
        const auto src = read(entry.path());
        const double s = codebleu(src, src).score;
        if (std::abs(s - 100.0) > 1e-9) return {false, entry.path().filename().string() + " self-score " + fmt(s, 6)};
        ++snippets;
    }
    const double disjoint = codebleu(read(dir / "disjoint_candidate.java"), read(dir / "disjoint_reference.java")).score;

    GenPlan plan;
    plan.n_methods = 200;
    plan.mutation_rate = 0.3;
    plan.seed = kSeed;
    const auto g = generate(plan);
    std::size_t wins = 0;
    for (const auto& pair : g.manifest.pairs) {
        const auto original = analyze(g.manifest.find(pair.original)->source);
        const double mutant = codebleu(analyze(g.manifest.find(pair.mutant)->source), original).score;
        const double unrelated = codebleu(analyze(g.manifest.find(pair.unrelated)->source), original).score;
        wins += mutant > unrelated ? 1 : 0;
    }
    const double rate = g.manifest.pairs.empty() ? 0.0 : static_cast<double>(wins) / g.manifest.pairs.size();
    const bool pass = snippets >= 20 && disjoint < 10.0 && rate >= 0.9;
    return {pass, std::to_string(snippets) + " self-scores = 100; disjoint " + fmt(disjoint) + "; mutant wins " +
                      std::to_string(wins) + "/" + std::to_string(g.manifest.pairs.size())};
}

Outcome mask_statistics() {
    GenPlan plan;
    plan.n_methods = 120;
    plan.seed = kSeed;
    const Corpus corpus = generate(plan).corpus;
    const auto vocab = build_vocab(corpus, Variant::Boundaries);
    auto cfg = EncoderConfig::desk_preset(vocab.size(), fitted_max_len(corpus, Variant::Boundaries));
    EncodeOptions opts;
    opts.max_len = cfg.max_positions;
    std::vector<EncodedTrace> batch;
    for (const auto& r : corpus.records) batch.push_back(encode(r, vocab, Variant::Boundaries, opts));
    Rng rng(derive_seed(kSeed, "acceptance/mask-stats"));
    const auto masked = mask_batch(batch, cfg, rng);
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& s : masked.sequences)
        for (auto c : s.corruption) ++counts[static_cast<int>(c)];
    const double total = static_cast<double>(masked.masked_count());
    const double rate = total / static_cast<double>(masked.maskable_count);
    const double mask = counts[0] / total, random = counts[1] / total, keep = counts[2] / total;
    const bool pass = masked.maskable_count >= 10000 && std::abs(rate - 0.15) <= 0.01 && std::abs(mask - 0.8) <= 0.02 &&
                      std::abs(random - 0.1) <= 0.02 && std::abs(keep - 0.1) <= 0.02;
    return {pass, "rate " + fmt(rate, 4) + " over " + std::to_string(masked.maskable_count) + " tokens; mix " +
                      fmt(100 * mask, 1) + "/" + fmt(100 * random, 1) + "/" + fmt(100 * keep, 1)};
}

// synth -> dedup -> split -> vocab -> pretrain -> evaluate, at reduced scale.
std::string small_pipeline() {
    GenPlan plan;
    plan.n_methods = 40;
    plan.library_overlap = 0.8;
    plan.seed = kSeed;
    const Corpus corpus = dedup(generate(plan).corpus);
    SplitSpec spec;
    spec.candidate_projects = {"synth-p0", "synth-p1"};
    spec.seed = kSeed;
    spec.with_lib_sample = 30;
    spec.without_lib_sample = 30;
    const auto s = split(corpus, spec);
    const auto vocab = build_vocab(s.candidates, Variant::Boundaries);
    auto model = pretrain(s.candidates, vocab, Variant::Boundaries, kSeed, 3);
    const auto opts = options_for(model);
    auto emb = make_embedding_system("embedding_boundaries", std::move(model), vocab, Variant::Boundaries, opts);
    auto bm25 = make_bm25_system("bm25", Variant::Plain);
    auto random = make_random_system("random");
    EvalConfig cfg;
    cfg.seed = kSeed;
    return evaluate(s.candidates, s.with_libraries, {emb.get(), bm25.get(), random.get()}, cfg).to_json();
}

Outcome determinism() {
    const auto a = small_pipeline();
    const auto b = small_pipeline();
    write(kOut / "determinism_a.json", a);
    write(kOut / "determinism_b.json", b);
    return {a == b, std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "different")};
}

}  // namespace

int main() {
    std::vector<std::pair<int, Outcome>> results;
    auto report = [&](int id, const std::string& name, Outcome o) {
        std::cout << "CRITERION " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << name << ": " << o.detail
                  << std::endl;
        results.emplace_back(id, std::move(o));
    };
    auto guarded = [](const std::function<Outcome()>& fn) {
        try {
            return fn();
        } catch (const std::exception& e) {
            return Outcome{false, std::string("exception: ") + e.what()};
        }
    };

    // Cheap criteria first so their lines appear even if the long run is interrupted.
    report(5, "gradient check", guarded(gradient_check));
    report(6, "k-NN oracle", guarded(knn_oracle));
    report(7, "BM25 fixture", guarded(bm25_fixture));
    report(8, "CodeBLEU identities", guarded(codebleu_identities));
    report(9, "MLM mask statistics", guarded(mask_statistics));
    report(10, "determinism", guarded(determinism));

    DeskRun run;
    bool have_run = false;
    try {
        run = desk_run();
        have_run = true;
    } catch (const std::exception& e) {
        for (int id : {1, 2, 3, 4}) report(id, "desk run", {false, std::string("exception: ") + e.what()});
    }
    if (have_run) {
        report(1, "ordering", guarded([&] { return ordering(run); }));
        report(2, "boundaries effect", guarded([&] { return boundaries_effect(run); }));
        EvalReport injected;
        const Outcome c4 = guarded([&] { return exact_match(run, injected); });
        report(3, "monotonicity", guarded([&] {
                   std::vector<const EvalReport*> all{&run.with_libraries, &run.without_libraries};
                   if (!injected.systems.empty()) all.push_back(&injected);
                   return monotonic(all);
               }));
        report(4, "exact-match ceiling", c4);
    }

    std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::size_t passed = 0;
    std::ostringstream summary;
    for (const auto& [id, o] : results) {
        passed += o.pass ? 1 : 0;
        summary << "CRITERION " << id << " " << (o.pass ? "PASS" : "FAIL") << ": " << o.detail << "\n";
    }
    write(kOut / "summary.txt", summary.str());
    std::cout << "ACCEPTANCE " << passed << "/" << results.size() << " passed" << std::endl;
    return passed == results.size() ? 0 : 1;
}
