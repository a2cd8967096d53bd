#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tracefind/codebleu.hpp"
#include "tracefind/dataset_split.hpp"
#include "tracefind/encoder.hpp"
#include "tracefind/error.hpp"
#include "tracefind/eval_harness.hpp"
#include "tracefind/hash.hpp"
#include "tracefind/retrieval.hpp"
#include "tracefind/synth_gen.hpp"
#include "tracefind/tokenizer.hpp"
#include "tracefind/trace_corpus.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace tracefind;

namespace {

void log(const std::string& key, const std::string& value) { std::cerr << "[tracefind] " << key << "=" << value << "\n"; }

void require_file(const std::string& path) {
    if (path.empty()) throw ValidationError("missing required input path");
    if (!fs::is_regular_file(path)) throw ValidationError("input file not found: " + path);
}

std::string read_text(const std::string& path) {
    require_file(path);
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out << text;
}

Corpus load_corpus(const std::string& path, const std::string& ns) {
    require_file(path);
    Corpus c = parse_corpus(path, ns);
    log("corpus", path + " records=" + std::to_string(c.size()) + " hash=" + hex64(corpus_hash(c)));
    return c;
}

void save_corpus(const std::string& path, const Corpus& c) {
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    write_corpus(fs::path(path), c);
    log("wrote", path + " records=" + std::to_string(c.size()) + " hash=" + hex64(corpus_hash(c)));
}

EncoderModel load_model(const std::string& path) {
    require_file(path);
    auto m = load_checkpoint(path);
    log("model", path + " hash=" + hex64(model_hash(m)));
    return m;
}

Vocabulary load_vocab(const std::string& path) {
    require_file(path);
    auto v = Vocabulary::load(path);
    log("vocab", path + " size=" + std::to_string(v.size()) + " hash=" + hex64(v.hash()));
    return v;
}

std::vector<std::size_t> parse_k(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const long v = std::stol(item, &used);
            if (used != item.size() || v < 1) throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::logic_error&) {
            throw ValidationError("invalid k value '" + item + "'");
        }
    }
    return out;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// Hyperparameters shared by `pretrain` and the inline training in `evaluate`.
struct TrainFlags {
    std::string preset = "desk";
    std::size_t epochs = 0;
    std::size_t hidden = 0;
    std::size_t heads = 0;
    std::size_t layers = 0;
    std::size_t intermediate = 0;
    std::size_t max_len = 0;  // 0: longest training sequence + 2
    double learning_rate = 0.0;
    std::size_t batch = 0;
    double validation = 0.1;
    std::string pooling = "mean";

    void attach(CLI::App* app) {
        app->add_option("--preset", preset, "desk or full")->check(CLI::IsMember({"desk", "full"}));
        app->add_option("--epochs", epochs, "override the preset's epoch count");
        app->add_option("--hidden", hidden);
        app->add_option("--heads", heads);
        app->add_option("--layers", layers);
        app->add_option("--intermediate", intermediate);
        app->add_option("--max-len", max_len, "sequence length; 0 fits the longest training trace");
        app->add_option("--lr", learning_rate);
        app->add_option("--batch", batch);
        app->add_option("--validation", validation, "held-out fraction for checkpoint selection");
        app->add_option("--pooling", pooling)->check(CLI::IsMember({"mean", "cls"}));
    }

    EncoderConfig config(std::size_t vocab_size, std::size_t fitted_len, std::uint64_t seed) const {
        const std::size_t len = max_len != 0 ? max_len : fitted_len;
        EncoderConfig c = preset == "full" ? EncoderConfig::full_preset(vocab_size)
                                            : EncoderConfig::desk_preset(vocab_size, len);
        c.max_positions = len;
        if (epochs) c.epochs = epochs;
        if (hidden) c.hidden = hidden;
        if (heads) c.heads = heads;
        if (layers) c.layers = layers;
        if (intermediate) c.intermediate = intermediate;
        if (learning_rate > 0.0) c.learning_rate = learning_rate;
        if (batch) c.batch = batch;
        c.pooling = pooling_from_string(pooling);
        c.seed = seed;
        c.validate();
        return c;
    }
};

EncodeOptions options_for(const EncoderModel& m) {
    EncodeOptions o;
    o.max_len = m.config.max_positions;
    return o;
}

EncoderModel pretrain_model(const Corpus& corpus, const Vocabulary& vocab, Variant variant, const TrainFlags& flags,
                            std::uint64_t seed, const std::string& curve_path = {}) {
    const auto cfg = flags.config(vocab.size(), fitted_max_len(corpus, variant), seed);
    log("pretrain", "variant=" + std::string(to_string(variant)) + " records=" + std::to_string(corpus.size()) +
                        " epochs=" + std::to_string(cfg.epochs) + " max_len=" + std::to_string(cfg.max_positions));
    TrainHooks hooks;
    hooks.on_epoch = [](const EpochLoss& e) {
        std::ostringstream s;
        s << "epoch=" << e.epoch << " train=" << e.train_loss << " validation=" << e.validation_loss;
        log("pretrain", s.str());
    };
    auto result = pretrain_corpus(corpus, vocab, variant, cfg, flags.validation, hooks);
    if (result.diverged) throw std::runtime_error("pretraining diverged (non-finite loss)");
    if (!curve_path.empty()) {
        std::ostringstream csv;
        csv << "epoch,train_loss,validation_loss\n";
        for (const auto& e : result.curve) csv << e.epoch << "," << e.train_loss << "," << e.validation_loss << "\n";
        write_text(curve_path, csv.str());
    }
    log("pretrain", "best_epoch=" + std::to_string(result.best_epoch) + " model_hash=" + hex64(model_hash(result.model)));
    return std::move(result.model);
}

struct Common {
    std::uint64_t seed = 0;
    std::string ns = "java.";
};

void add_seed(CLI::App* app, Common& common) { app->add_option("--seed", common.seed, "PRNG seed"); }
void add_namespace(CLI::App* app, Common& common) {
    app->add_option("--namespace", common.ns, "core-library namespace prefix");
}

int run(int argc, char** argv) {
    CLI::App app{"Trace embedding, retrieval and CodeBLEU evaluation toolkit", "tracefind"};
    app.set_config("--config", "", "TOML-style key/value file; command-line flags take precedence");
    app.require_subcommand(1);
    Common common;

    // ingest
    auto* ingest = app.add_subcommand("ingest", "validate a raw JSONL trace corpus and write it canonically");
    std::string ingest_in, ingest_out;
    ingest->add_option("--input", ingest_in)->required();
    ingest->add_option("--out", ingest_out)->required();
    add_namespace(ingest, common);
    ingest->callback([&] {
        const Corpus c = load_corpus(ingest_in, common.ns);
        const auto st = corpus_stats(c);
        log("stats", "records=" + std::to_string(st.records) + " fqns=" + std::to_string(st.distinct_fqns) +
                         " max_len=" + std::to_string(st.max_sequence_length));
        save_corpus(ingest_out, c);
    });

    // dedup
    auto* dd = app.add_subcommand("dedup", "drop records with a repeated call sequence (boundaries kept)");
    std::string dd_in, dd_out;
    dd->add_option("--input", dd_in)->required();
    dd->add_option("--out", dd_out)->required();
    add_namespace(dd, common);
    dd->callback([&] {
        const Corpus c = load_corpus(dd_in, common.ns);
        const Corpus d = dedup(c);
        log("dedup", "removed=" + std::to_string(c.size() - d.size()));
        save_corpus(dd_out, d);
    });

    // split
    auto* sp = app.add_subcommand("split", "candidate/query split and evaluation-set sampling");
    std::string sp_in, sp_out, sp_projects;
    std::size_t with_lib = 500, without_lib = 500;
    sp->add_option("--input", sp_in)->required();
    sp->add_option("--candidates", sp_projects, "comma-separated candidate projects")->required();
    sp->add_option("--with-lib", with_lib);
    sp->add_option("--without-lib", without_lib);
    sp->add_option("--out", sp_out, "output prefix; writes PREFIX.{cand,query,withlib,withoutlib}.jsonl")->required();
    add_seed(sp, common);
    add_namespace(sp, common);
    sp->callback([&] {
        const Corpus c = load_corpus(sp_in, common.ns);
        SplitSpec spec;
        for (const auto& p : split_list(sp_projects)) spec.candidate_projects.insert(p);
        spec.seed = common.seed;
        spec.with_lib_sample = with_lib;
        spec.without_lib_sample = without_lib;
        const auto r = split(c, spec);
        if (r.with_lib_truncated) log("warning", "with-lib sample truncated to " + std::to_string(r.with_libraries.size()));
        if (r.without_lib_truncated)
            log("warning", "without-lib sample truncated to " + std::to_string(r.without_libraries.size()));
        save_corpus(sp_out + ".cand.jsonl", r.candidates);
        save_corpus(sp_out + ".query.jsonl", r.queries);
        save_corpus(sp_out + ".withlib.jsonl", r.with_libraries);
        save_corpus(sp_out + ".withoutlib.jsonl", r.without_libraries);
    });

    // vocab
    auto* vb = app.add_subcommand("vocab", "build the call-signature vocabulary");
    std::string vb_in, vb_out, vb_variant = "plain";
    vb->add_option("--input", vb_in)->required();
    vb->add_option("--out", vb_out)->required();
    vb->add_option("--variant", vb_variant)->check(CLI::IsMember({"plain", "boundaries"}));
    add_namespace(vb, common);
    vb->callback([&] {
        const Corpus c = load_corpus(vb_in, common.ns);
        const auto v = build_vocab(c, variant_from_string(vb_variant));
        write_text(vb_out, v.to_json());
        log("vocab", "size=" + std::to_string(v.size()) + " hash=" + hex64(v.hash()));
    });

    // pretrain
    auto* pt = app.add_subcommand("pretrain", "masked-language-model pretraining");
    std::string pt_in, pt_vocab, pt_out, pt_variant = "plain", pt_curve;
    TrainFlags pt_flags;
    pt->add_option("--input", pt_in)->required();
    pt->add_option("--vocab", pt_vocab)->required();
    pt->add_option("--out", pt_out)->required();
    pt->add_option("--variant", pt_variant)->check(CLI::IsMember({"plain", "boundaries"}));
    pt->add_option("--loss-curve", pt_curve, "CSV of per-epoch losses");
    pt_flags.attach(pt);
    add_seed(pt, common);
    add_namespace(pt, common);
    pt->callback([&] {
        const Corpus c = load_corpus(pt_in, common.ns);
        const auto vocab = load_vocab(pt_vocab);
        const auto model = pretrain_model(c, vocab, variant_from_string(pt_variant), pt_flags, common.seed, pt_curve);
        if (const auto parent = fs::path(pt_out).parent_path(); !parent.empty()) fs::create_directories(parent);
        save_checkpoint(pt_out, model);
    });

    // embed
    auto* em = app.add_subcommand("embed", "embed every trace of a corpus");
    std::string em_in, em_model, em_vocab, em_out, em_variant = "plain";
    em->add_option("--input", em_in)->required();
    em->add_option("--model", em_model)->required();
    em->add_option("--vocab", em_vocab)->required();
    em->add_option("--variant", em_variant)->check(CLI::IsMember({"plain", "boundaries"}));
    em->add_option("--out", em_out, "JSONL of {record_id, norm, vector}")->required();
    add_namespace(em, common);
    em->callback([&] {
        const Corpus c = load_corpus(em_in, common.ns);
        const auto model = load_model(em_model);
        const auto vocab = load_vocab(em_vocab);
        const auto variant = variant_from_string(em_variant);
        std::ostringstream out;
        for (const auto& r : c.records) {
            const auto e = embed(model, encode(r, vocab, variant, options_for(model)));
            out << ojson{{"record_id", e.record_id}, {"norm", e.norm}, {"vector", e.vector}}.dump() << "\n";
        }
        write_text(em_out, out.str());
    });

    // index
    auto* ix = app.add_subcommand("index", "build an exact-search index from embeddings");
    std::string ix_in, ix_out, ix_vocab;
    ix->add_option("--embeddings", ix_in)->required();
    ix->add_option("--vocab", ix_vocab, "vocabulary whose hash is stamped into the index");
    ix->add_option("--out", ix_out)->required();
    ix->callback([&] {
        std::istringstream in(read_text(ix_in));
        std::vector<TraceEmbedding> rows;
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (line.empty()) continue;
            try {
                const auto j = ojson::parse(line);
                rows.push_back({j.at("vector").get<std::vector<double>>(), j.at("record_id").get<std::string>(),
                                j.at("norm").get<double>()});
            } catch (const nlohmann::json::exception& e) {
                throw ValidationError(ix_in + ": line " + std::to_string(n) + ": " + e.what());
            }
        }
        const std::uint64_t vh = ix_vocab.empty() ? 0 : load_vocab(ix_vocab).hash();
        EmbeddingIndex index(std::move(rows), vh);
        if (const auto parent = fs::path(ix_out).parent_path(); !parent.empty()) fs::create_directories(parent);
        index.save(ix_out);
        log("index", "rows=" + std::to_string(index.size()) + " dim=" + std::to_string(index.dim()));
    });

    // query
    auto* qy = app.add_subcommand("query", "nearest candidates for each query trace");
    std::string qy_index, qy_model, qy_vocab, qy_in, qy_out, qy_variant = "plain";
    std::size_t qy_k = 5;
    qy->add_option("--index", qy_index)->required();
    qy->add_option("--model", qy_model)->required();
    qy->add_option("--vocab", qy_vocab)->required();
    qy->add_option("--input", qy_in, "JSONL corpus of query traces")->required();
    qy->add_option("--variant", qy_variant)->check(CLI::IsMember({"plain", "boundaries"}));
    qy->add_option("--k", qy_k)->check(CLI::PositiveNumber);
    qy->add_option("--out", qy_out, "JSONL of {query_id, hits}; stdout when omitted");
    add_namespace(qy, common);
    qy->callback([&] {
        require_file(qy_index);
        const auto index = EmbeddingIndex::load(qy_index);
        const auto model = load_model(qy_model);
        const auto vocab = load_vocab(qy_vocab);
        if (index.vocab_hash() != 0 && index.vocab_hash() != vocab.hash())
            throw ValidationError("index was built with a different vocabulary");
        const Corpus queries = load_corpus(qy_in, common.ns);
        const auto variant = variant_from_string(qy_variant);
        std::ostringstream out;
        for (const auto& q : queries.records) {
            const auto e = embed(model, encode(q, vocab, variant, options_for(model)));
            const auto res = index.knn(e.vector, qy_k, q.record_id);
            ojson hits = ojson::array();
            for (const auto& h : res.hits) hits.push_back({{"record_id", h.record_id}, {"score", h.score}});
            out << ojson{{"query_id", res.query_id}, {"hits", hits}}.dump() << "\n";
        }
        if (qy_out.empty())
            std::cout << out.str();
        else
            write_text(qy_out, out.str());
    });

    // codebleu
    auto* cb = app.add_subcommand("codebleu", "CodeBLEU of a candidate snippet against a reference");
    std::string cb_cand, cb_ref, cb_weights = "0.25,0.25,0.25,0.25";
    cb->add_option("--candidate", cb_cand)->required();
    cb->add_option("--reference", cb_ref)->required();
    cb->add_option("--weights", cb_weights, "alpha,beta,gamma,delta");
    cb->callback([&] {
        const auto w = CodeBleuWeights::parse(cb_weights);
        const auto r = codebleu(read_text(cb_cand), read_text(cb_ref), w);
        ojson j;
        j["score"] = r.score;
        j["components"] = {{"ngram", r.ngram}, {"weighted_ngram", r.weighted_ngram}, {"syntax", r.syntax},
                           {"dataflow", r.dataflow}};
        j["fallback_used"] = r.fallback_used;
        j["dataflow_excluded"] = r.dataflow_excluded;
        j["effective_weights"] = {r.effective.alpha, r.effective.beta, r.effective.gamma, r.effective.delta};
        std::cout << j.dump(2) << "\n";
    });

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "average maximum CodeBLEU@k for each retrieval system");
    std::string ev_cand, ev_queries, ev_systems = "embedding,bm25,random", ev_k = "1,5", ev_out, ev_table,
                                     ev_set = "WithLibraries", ev_weights = "0.25,0.25,0.25,0.25", ev_hits;
    std::string ev_model, ev_vocab, ev_model_b, ev_vocab_b;
    bool ev_keep_self = false;
    TrainFlags ev_flags;
    ev->add_option("--candidates", ev_cand)->required();
    ev->add_option("--queries", ev_queries)->required();
    ev->add_option("--systems", ev_systems, "subset of embedding,embedding_boundaries,bm25,bm25_boundaries,random,external");
    ev->add_option("--k", ev_k, "ascending list, e.g. 1,5");
    ev->add_option("--out", ev_out, "report JSON")->required();
    ev->add_option("--table", ev_table, "rendered text table");
    ev->add_option("--query-set", ev_set)->check(CLI::IsMember({"WithLibraries", "WithoutLibraries"}));
    ev->add_option("--weights", ev_weights, "CodeBLEU alpha,beta,gamma,delta");
    ev->add_option("--hits", ev_hits, "JSON {query_id: [candidate ids]} scored as system 'external'");
    ev->add_option("--model", ev_model, "plain-variant checkpoint; trained on the candidates when omitted");
    ev->add_option("--vocab", ev_vocab);
    ev->add_option("--model-boundaries", ev_model_b);
    ev->add_option("--vocab-boundaries", ev_vocab_b);
    ev->add_flag("--keep-self", ev_keep_self, "allow a query to retrieve its own record");
    ev_flags.attach(ev);
    add_seed(ev, common);
    add_namespace(ev, common);
    ev->callback([&] {
        EvalConfig cfg;
        cfg.k_values = parse_k(ev_k);
        cfg.seed = common.seed;
        cfg.query_set = query_set_from_string(ev_set);
        cfg.exclude_self = !ev_keep_self;
        cfg.weights = CodeBleuWeights::parse(ev_weights);
        cfg.validate();
        const Corpus candidates = load_corpus(ev_cand, common.ns);
        const Corpus queries = load_corpus(ev_queries, common.ns);

        auto embedding = [&](const std::string& name, Variant variant, const std::string& model_path,
                             const std::string& vocab_path) {
            if (model_path.empty() != vocab_path.empty())
                throw ValidationError(name + ": pass both a model and its vocabulary, or neither");
            if (!model_path.empty()) {
                auto model = load_model(model_path);
                const auto opts = options_for(model);
                return make_embedding_system(name, std::move(model), load_vocab(vocab_path), variant, opts);
            }
            auto vocab = build_vocab(candidates, variant);
            auto model = pretrain_model(candidates, vocab, variant, ev_flags, derive_seed(common.seed, "pretrain/" + name));
            const auto opts = options_for(model);
            return make_embedding_system(name, std::move(model), std::move(vocab), variant, opts);
        };

        std::vector<std::unique_ptr<RetrievalSystem>> owned;
        for (const auto& name : split_list(ev_systems)) {
            if (name == "embedding")
                owned.push_back(embedding(name, Variant::Plain, ev_model, ev_vocab));
            else if (name == "embedding_boundaries")
                owned.push_back(embedding(name, Variant::Boundaries, ev_model_b, ev_vocab_b));
            else if (name == "bm25")
                owned.push_back(make_bm25_system(name, Variant::Plain));
            else if (name == "bm25_boundaries")
                owned.push_back(make_bm25_system(name, Variant::Boundaries));
            else if (name == "random")
                owned.push_back(make_random_system(name));
            else if (name == "external") {
                if (ev_hits.empty()) throw ValidationError("system 'external' needs --hits");
                std::map<std::string, std::vector<std::string>> hits;
                try {
                    hits = ojson::parse(read_text(ev_hits)).get<std::map<std::string, std::vector<std::string>>>();
                } catch (const nlohmann::json::exception& e) {
                    throw ValidationError(ev_hits + ": " + e.what());
                }
                owned.push_back(make_hit_log_system(name, std::move(hits)));
            } else {
                throw ValidationError("unknown system '" + name + "'");
            }
        }
        std::vector<RetrievalSystem*> systems;
        for (auto& s : owned) systems.push_back(s.get());
        const auto report = evaluate(candidates, queries, systems, cfg);
        if (report.excluded_empty_source > 0)
            log("warning", "excluded " + std::to_string(report.excluded_empty_source) + " queries with empty source");
        for (const auto& s : report.systems)
            if (s.unk_rate) log("unk_rate", s.name + "=" + std::to_string(*s.unk_rate));
        write_text(ev_out, report.to_json());
        const auto table = render_table({report});
        if (!ev_table.empty()) write_text(ev_table, table.text);
        std::cout << table.text;
    });

    // table
    auto* tb = app.add_subcommand("table", "render one table from several evaluation reports");
    std::vector<std::string> tb_reports;
    std::string tb_out, tb_json;
    tb->add_option("--reports", tb_reports)->required()->delimiter(',');
    tb->add_option("--out", tb_out, "text table; stdout when omitted");
    tb->add_option("--json", tb_json, "machine-readable table");
    tb->callback([&] {
        std::vector<EvalReport> reports;
        for (const auto& p : tb_reports) reports.push_back(EvalReport::from_json(read_text(p)));
        const auto table = render_table(reports);
        if (tb_out.empty())
            std::cout << table.text;
        else
            write_text(tb_out, table.text);
        if (!tb_json.empty()) write_text(tb_json, table.json);
    });

    // synth
    auto* sy = app.add_subcommand("synth", "generate a synthetic (source, trace) corpus");
    GenPlan plan;
    std::string sy_out, sy_manifest;
    bool emission = false;
    sy->add_option("--methods", plan.n_methods);
    sy->add_option("--traces-mean", plan.traces_per_method_mean);
    sy->add_option("--mutation-rate", plan.mutation_rate);
    sy->add_option("--library-overlap", plan.library_overlap);
    sy->add_option("--projects", plan.projects);
    sy->add_option("--out", sy_out);
    sy->add_option("--manifest", sy_manifest);
    sy->add_flag("--emission-table", emission, "print the emission table as Markdown and exit");
    add_seed(sy, common);
    sy->callback([&] {
        if (emission) {
            std::cout << emission_table_markdown();
            return;
        }
        if (sy_out.empty()) throw ValidationError("synth: --out is required");
        plan.seed = common.seed;
        const auto g = generate(plan);
        save_corpus(sy_out, g.corpus);
        if (!sy_manifest.empty()) write_text(sy_manifest, g.manifest.to_json());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ValidationError& e) {
        std::cerr << "tracefind: error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "tracefind: internal error: " << e.what() << "\n";
        return 2;
    }
}
