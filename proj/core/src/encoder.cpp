#include "tracefind/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "tracefind/error.hpp"
#include "tracefind/hash.hpp"

namespace tracefind {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-6;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

struct LnCache {
    Matrix xhat;
    Eigen::VectorXd inv_std;
};

struct LayerCache {
    Matrix input;
    Matrix q, k, v;
    std::vector<Matrix> probs;
    Matrix context;
    LnCache ln1;
    Matrix h1;
    Matrix f1, g;
    LnCache ln2;
};

struct SequenceCache {
    std::vector<TokenId> ids;
    LnCache emb_ln;
    std::vector<LayerCache> layers;
};

Matrix ln_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps, LnCache* cache) {
    const auto cols = static_cast<double>(x.cols());
    Matrix xhat(x.rows(), x.cols());
    Eigen::VectorXd inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).sum() / cols;
        const double var = (x.row(r).array() - mean).square().sum() / cols;
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (x.row(r).array() - mean) * inv_std(r);
    }
    Matrix y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Matrix ln_backward(const Matrix& dy, const LnCache& cache, const Matrix& gamma, Matrix& dgamma, Matrix& dbeta) {
    dgamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    dbeta += dy.colwise().sum();
    const Matrix dxhat = dy.array().rowwise() * gamma.row(0).array();
    const auto cols = static_cast<double>(dy.cols());
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double mean_d = dxhat.row(r).sum() / cols;
        const double mean_dx = dxhat.row(r).dot(cache.xhat.row(r)) / cols;
        dx.row(r) = cache.inv_std(r) * (dxhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx);
    }
    return dx;
}

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y = x * w;
    y.rowwise() += b.row(0);
    return y;
}

void softmax_rows(Matrix& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
    }
}

/// One encoder layer (post-LN). `key_mask[j] == 0` removes key j.
Matrix layer_forward(const LayerParams& p, const EncoderConfig& cfg, const Matrix& x, std::span<const std::uint8_t> key_mask,
                     LayerCache* cache) {
    const auto T = x.rows();
    const auto d = static_cast<Eigen::Index>(cfg.hidden / cfg.heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    Matrix q = affine(x, p.wq, p.bq);
    Matrix k = affine(x, p.wk, p.bk);
    Matrix v = affine(x, p.wv, p.bv);
    Matrix context(T, x.cols());
    std::vector<Matrix> probs;
    if (cache) probs.reserve(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h) * d;
        Matrix s = (q.middleCols(c0, d) * k.middleCols(c0, d).transpose()) * scale;
        for (Eigen::Index j = 0; j < T; ++j) {
            if (!key_mask[static_cast<std::size_t>(j)]) s.col(j).setConstant(-std::numeric_limits<double>::infinity());
        }
        softmax_rows(s);
        context.middleCols(c0, d).noalias() = s * v.middleCols(c0, d);
        if (cache) probs.push_back(std::move(s));
    }
    Matrix attn = affine(context, p.wo, p.bo);
    Matrix r1 = x + attn;
    LnCache ln1;
    Matrix h1 = ln_forward(r1, p.ln1_gamma, p.ln1_beta, cfg.layer_norm_eps, cache ? &ln1 : nullptr);
    Matrix f1 = affine(h1, p.w1, p.b1);
    Matrix g = f1.unaryExpr(&gelu);
    Matrix r2 = h1 + affine(g, p.w2, p.b2);
    LnCache ln2;
    Matrix out = ln_forward(r2, p.ln2_gamma, p.ln2_beta, cfg.layer_norm_eps, cache ? &ln2 : nullptr);
    if (cache) {
        cache->input = x;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->probs = std::move(probs);
        cache->context = std::move(context);
        cache->ln1 = std::move(ln1);
        cache->h1 = std::move(h1);
        cache->f1 = std::move(f1);
        cache->g = std::move(g);
        cache->ln2 = std::move(ln2);
    }
    return out;
}

Matrix layer_backward(const LayerParams& p, const EncoderConfig& cfg, const LayerCache& c, const Matrix& dout,
                      LayerParams& grad) {
    const auto d = static_cast<Eigen::Index>(cfg.hidden / cfg.heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    const Matrix dr2 = ln_backward(dout, c.ln2, p.ln2_gamma, grad.ln2_gamma, grad.ln2_beta);
    grad.w2.noalias() += c.g.transpose() * dr2;
    grad.b2 += dr2.colwise().sum();
    const Matrix df1 = (dr2 * p.w2.transpose()).array() * c.f1.unaryExpr(&gelu_grad).array();
    grad.w1.noalias() += c.h1.transpose() * df1;
    grad.b1 += df1.colwise().sum();
    Matrix dh1 = dr2;
    dh1.noalias() += df1 * p.w1.transpose();

    const Matrix dr1 = ln_backward(dh1, c.ln1, p.ln1_gamma, grad.ln1_gamma, grad.ln1_beta);
    grad.wo.noalias() += c.context.transpose() * dr1;
    grad.bo += dr1.colwise().sum();
    const Matrix dcontext = dr1 * p.wo.transpose();

    Matrix dq(c.q.rows(), c.q.cols());
    Matrix dk(c.k.rows(), c.k.cols());
    Matrix dv(c.v.rows(), c.v.cols());
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h) * d;
        const Matrix& prob = c.probs[h];
        const auto dctx = dcontext.middleCols(c0, d);
        dv.middleCols(c0, d).noalias() = prob.transpose() * dctx;
        const Matrix dprob = dctx * c.v.middleCols(c0, d).transpose();
        const Eigen::VectorXd row_dot = (dprob.array() * prob.array()).rowwise().sum();
        Matrix ds = prob.array() * (dprob.array().colwise() - row_dot.array());
        ds *= scale;
        dq.middleCols(c0, d).noalias() = ds * c.k.middleCols(c0, d);
        dk.middleCols(c0, d).noalias() = ds.transpose() * c.q.middleCols(c0, d);
    }
    grad.wq.noalias() += c.input.transpose() * dq;
    grad.wk.noalias() += c.input.transpose() * dk;
    grad.wv.noalias() += c.input.transpose() * dv;
    grad.bq += dq.colwise().sum();
    grad.bk += dk.colwise().sum();
    grad.bv += dv.colwise().sum();

    Matrix dx = dr1;
    dx.noalias() += dq * p.wq.transpose();
    dx.noalias() += dk * p.wk.transpose();
    dx.noalias() += dv * p.wv.transpose();
    return dx;
}

void check_ids(const EncoderConfig& cfg, std::span<const TokenId> ids) {
    if (ids.size() > cfg.max_positions) {
        throw std::out_of_range("sequence length " + std::to_string(ids.size()) + " exceeds max_positions " +
                                std::to_string(cfg.max_positions));
    }
    for (TokenId id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
            throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                                    std::to_string(cfg.vocab_size));
        }
    }
}

Matrix encoder_forward(const EncoderModel& model, std::span<const TokenId> ids, std::span<const std::uint8_t> key_mask,
                       SequenceCache* cache) {
    const auto& cfg = model.config;
    const auto& p = model.params;
    const auto T = static_cast<Eigen::Index>(ids.size());
    Matrix x(T, static_cast<Eigen::Index>(cfg.hidden));
    for (Eigen::Index t = 0; t < T; ++t) {
        x.row(t) = p.token_embedding.row(ids[static_cast<std::size_t>(t)]) + p.position_embedding.row(t);
    }
    x = ln_forward(x, p.emb_ln_gamma, p.emb_ln_beta, cfg.layer_norm_eps, cache ? &cache->emb_ln : nullptr);
    if (cache) {
        cache->ids.assign(ids.begin(), ids.end());
        cache->layers.resize(cfg.layers);
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        x = layer_forward(p.layers[l], cfg, x, key_mask, cache ? &cache->layers[l] : nullptr);
    }
    return x;
}

void encoder_backward(const EncoderModel& model, const SequenceCache& cache, Matrix dx, EncoderParams& grad) {
    const auto& cfg = model.config;
    const auto& p = model.params;
    for (std::size_t l = cfg.layers; l-- > 0;) {
        dx = layer_backward(p.layers[l], cfg, cache.layers[l], dx, grad.layers[l]);
    }
    const Matrix dx0 = ln_backward(dx, cache.emb_ln, p.emb_ln_gamma, grad.emb_ln_gamma, grad.emb_ln_beta);
    for (Eigen::Index t = 0; t < dx0.rows(); ++t) {
        grad.token_embedding.row(cache.ids[static_cast<std::size_t>(t)]) += dx0.row(t);
        grad.position_embedding.row(t) += dx0.row(t);
    }
}

struct HeadCache {
    Matrix hidden, z, y;
    LnCache ln;
};

/// MLM head logits for the selected rows of `hidden`.
Matrix head_forward(const EncoderModel& model, const Matrix& selected, HeadCache* cache) {
    const auto& p = model.params;
    Matrix z = affine(selected, p.head_w, p.head_b);
    Matrix g = z.unaryExpr(&gelu);
    LnCache ln;
    Matrix y = ln_forward(g, p.head_ln_gamma, p.head_ln_beta, model.config.layer_norm_eps, cache ? &ln : nullptr);
    Matrix logits = affine(y, p.decoder_w, p.decoder_b);
    if (cache) {
        cache->hidden = selected;
        cache->z = std::move(z);
        cache->y = std::move(y);
        cache->ln = std::move(ln);
    }
    return logits;
}

Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

/// Summed cross-entropy of the masked targets; fills `dlogits` with
/// (softmax - onehot) * grad_scale when non-null.
double cross_entropy(const Matrix& logits, const std::vector<TokenId>& targets, std::size_t& correct, double grad_scale,
                     Matrix* dlogits) {
    double total = 0.0;
    if (dlogits) dlogits->resize(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        Eigen::Index argmax = 0;
        const double m = logits.row(r).maxCoeff(&argmax);
        const Eigen::RowVectorXd e = (logits.row(r).array() - m).exp();
        const double z = e.sum();
        const auto target = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(r)]);
        total += -(logits(r, target) - m - std::log(z));
        if (argmax == target) ++correct;
        if (dlogits) {
            dlogits->row(r) = e / z * grad_scale;
            (*dlogits)(r, target) -= grad_scale;
        }
    }
    return total;
}

Matrix head_backward(const EncoderModel& model, const HeadCache& c, const Matrix& dlogits, EncoderParams& grad) {
    const auto& p = model.params;
    grad.decoder_w.noalias() += c.y.transpose() * dlogits;
    grad.decoder_b += dlogits.colwise().sum();
    const Matrix dy = dlogits * p.decoder_w.transpose();
    const Matrix dg = ln_backward(dy, c.ln, p.head_ln_gamma, grad.head_ln_gamma, grad.head_ln_beta);
    const Matrix dz = dg.array() * c.z.unaryExpr(&gelu_grad).array();
    grad.head_w.noalias() += c.hidden.transpose() * dz;
    grad.head_b += dz.colwise().sum();
    return dz * p.head_w.transpose();
}

}  // namespace

std::string_view to_string(Pooling p) noexcept {
    return p == Pooling::Mean ? "mean" : "cls";
}

Pooling pooling_from_string(std::string_view name) {
    if (name == "mean") return Pooling::Mean;
    if (name == "cls") return Pooling::Cls;
    throw ValidationError("unknown pooling '" + std::string(name) + "' (expected mean|cls)");
}

EncoderConfig EncoderConfig::full_preset(std::size_t vocab_size) {
    EncoderConfig cfg;
    cfg.vocab_size = vocab_size;
    cfg.epochs = 400;
    return cfg;
}

EncoderConfig EncoderConfig::desk_preset(std::size_t vocab_size, std::size_t max_positions) {
    EncoderConfig cfg;
    cfg.hidden = 64;
    cfg.heads = 4;
    cfg.layers = 2;
    cfg.intermediate = 256;
    cfg.max_positions = max_positions;
    cfg.vocab_size = vocab_size;
    cfg.epochs = 40;
    cfg.learning_rate = 3e-3;
    cfg.batch = 8;
    return cfg;
}

void EncoderConfig::validate() const {
    if (hidden == 0 || heads == 0 || layers == 0 || intermediate == 0 || max_positions == 0 || batch == 0) {
        throw ValidationError("encoder config: sizes must be positive");
    }
    if (hidden % heads != 0) throw ValidationError("encoder config: hidden must be divisible by heads");
    if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw ValidationError("encoder config: mask_prob must be in (0, 1)");
    if (vocab_size <= static_cast<std::size_t>(special::kCount)) {
        throw ValidationError("encoder config: vocab_size must exceed the 7 special tokens");
    }
    if (!(learning_rate > 0.0)) throw ValidationError("encoder config: learning_rate must be positive");
    if (warmup_fraction < 0.0 || warmup_fraction > 1.0) throw ValidationError("encoder config: warmup_fraction in [0,1]");
}

EncoderParams EncoderParams::zeros(const EncoderConfig& cfg) {
    const auto H = static_cast<Eigen::Index>(cfg.hidden);
    const auto I = static_cast<Eigen::Index>(cfg.intermediate);
    const auto V = static_cast<Eigen::Index>(cfg.vocab_size);
    EncoderParams p;
    p.token_embedding = Matrix::Zero(V, H);
    p.position_embedding = Matrix::Zero(static_cast<Eigen::Index>(cfg.max_positions), H);
    p.emb_ln_gamma = Matrix::Zero(1, H);
    p.emb_ln_beta = Matrix::Zero(1, H);
    p.layers.resize(cfg.layers);
    for (auto& l : p.layers) {
        for (Matrix* w : {&l.wq, &l.wk, &l.wv, &l.wo}) *w = Matrix::Zero(H, H);
        for (Matrix* b : {&l.bq, &l.bk, &l.bv, &l.bo, &l.ln1_gamma, &l.ln1_beta, &l.b2, &l.ln2_gamma, &l.ln2_beta}) {
            *b = Matrix::Zero(1, H);
        }
        l.w1 = Matrix::Zero(H, I);
        l.b1 = Matrix::Zero(1, I);
        l.w2 = Matrix::Zero(I, H);
    }
    p.head_w = Matrix::Zero(H, H);
    p.head_b = Matrix::Zero(1, H);
    p.head_ln_gamma = Matrix::Zero(1, H);
    p.head_ln_beta = Matrix::Zero(1, H);
    p.decoder_w = Matrix::Zero(H, V);
    p.decoder_b = Matrix::Zero(1, V);
    return p;
}

void EncoderParams::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
    fn("embeddings.token", token_embedding);
    fn("embeddings.position", position_embedding);
    fn("embeddings.ln.gamma", emb_ln_gamma);
    fn("embeddings.ln.beta", emb_ln_beta);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string prefix = "layer." + std::to_string(i) + ".";
        auto& l = layers[i];
        fn(prefix + "attention.wq", l.wq);
        fn(prefix + "attention.bq", l.bq);
        fn(prefix + "attention.wk", l.wk);
        fn(prefix + "attention.bk", l.bk);
        fn(prefix + "attention.wv", l.wv);
        fn(prefix + "attention.bv", l.bv);
        fn(prefix + "attention.wo", l.wo);
        fn(prefix + "attention.bo", l.bo);
        fn(prefix + "attention.ln.gamma", l.ln1_gamma);
        fn(prefix + "attention.ln.beta", l.ln1_beta);
        fn(prefix + "ffn.w1", l.w1);
        fn(prefix + "ffn.b1", l.b1);
        fn(prefix + "ffn.w2", l.w2);
        fn(prefix + "ffn.b2", l.b2);
        fn(prefix + "ffn.ln.gamma", l.ln2_gamma);
        fn(prefix + "ffn.ln.beta", l.ln2_beta);
    }
    fn("mlm.dense.w", head_w);
    fn("mlm.dense.b", head_b);
    fn("mlm.ln.gamma", head_ln_gamma);
    fn("mlm.ln.beta", head_ln_beta);
    fn("mlm.decoder.w", decoder_w);
    fn("mlm.decoder.b", decoder_b);
}

void EncoderParams::for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const {
    const_cast<EncoderParams*>(this)->for_each([&](const std::string& name, Matrix& m) { fn(name, m); });
}

std::size_t EncoderParams::parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

EncoderModel EncoderModel::initialize(const EncoderConfig& config, std::uint64_t vocab_hash) {
    config.validate();
    EncoderModel model{config, EncoderParams::zeros(config), vocab_hash};
    Rng rng(derive_seed(config.seed, "encoder/init"));
    model.params.for_each([&](const std::string& name, Matrix& m) {
        if (name.ends_with(".gamma")) {
            m.setOnes();
        } else if (m.rows() > 1) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.normal() * config.init_std;
            }
        }
    });
    return model;
}

bool EncoderModel::all_finite() const {
    bool finite = true;
    params.for_each([&](const std::string&, const Matrix& m) { finite = finite && m.allFinite(); });
    return finite;
}

std::vector<Matrix> forward(const EncoderModel& model, std::span<const EncodedTrace> batch) {
    std::vector<Matrix> out;
    out.reserve(batch.size());
    for (const auto& trace : batch) {
        check_ids(model.config, trace.ids);
        if (trace.attention_mask.size() != trace.ids.size()) throw std::invalid_argument("forward: mask length mismatch");
        out.push_back(encoder_forward(model, trace.ids, trace.attention_mask, nullptr));
    }
    return out;
}

std::vector<Matrix> attention_maps(const EncoderModel& model, const EncodedTrace& input, std::size_t layer) {
    check_ids(model.config, input.ids);
    if (layer >= model.config.layers) throw std::out_of_range("attention_maps: layer index");
    SequenceCache cache;
    encoder_forward(model, input.ids, input.attention_mask, &cache);
    return cache.layers[layer].probs;
}

Matrix layer_norm_normalized(const Matrix& x, double eps) {
    LnCache cache;
    const Matrix ones = Matrix::Ones(1, x.cols());
    const Matrix zeros = Matrix::Zero(1, x.cols());
    ln_forward(x, ones, zeros, eps, &cache);
    return cache.xhat;
}

std::size_t MaskedBatch::masked_count() const noexcept {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.positions.size();
    return n;
}

MaskedBatch mask_batch(std::span<const EncodedTrace> batch, const EncoderConfig& config, Rng& rng) {
    MaskedBatch out;
    out.sequences.reserve(batch.size());
    const auto signature_ids = static_cast<std::uint64_t>(config.vocab_size) - special::kCount;
    for (const auto& trace : batch) {
        MaskedSequence seq;
        const auto n = trace.length();
        seq.inputs.assign(trace.ids.begin(), trace.ids.begin() + static_cast<std::ptrdiff_t>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const TokenId id = seq.inputs[i];
            if (id < special::kCount) continue;
            ++out.maskable_count;
            if (!rng.bernoulli(config.mask_prob)) continue;
            seq.positions.push_back(i);
            seq.targets.push_back(id);
            const double r = rng.uniform();
            if (r < 0.8) {
                seq.inputs[i] = special::kMask;
                seq.corruption.push_back(Corruption::Mask);
            } else if (r < 0.9) {
                seq.inputs[i] = static_cast<TokenId>(special::kCount + rng.below(signature_ids));
                seq.corruption.push_back(Corruption::Random);
            } else {
                seq.corruption.push_back(Corruption::Keep);
            }
        }
        out.sequences.push_back(std::move(seq));
    }
    return out;
}

MlmResult mlm_loss(const EncoderModel& model, const MaskedBatch& batch) {
    MlmResult result;
    result.masked_count = batch.masked_count();
    if (result.masked_count == 0) return result;
    double total = 0.0;
    for (const auto& seq : batch.sequences) {
        if (seq.positions.empty()) continue;
        check_ids(model.config, seq.inputs);
        const std::vector<std::uint8_t> mask(seq.inputs.size(), 1);
        const Matrix hidden = encoder_forward(model, seq.inputs, mask, nullptr);
        const Matrix logits = head_forward(model, select_rows(hidden, seq.positions), nullptr);
        total += cross_entropy(logits, seq.targets, result.correct, 0.0, nullptr);
    }
    result.loss = total / static_cast<double>(result.masked_count);
    return result;
}

MlmResult mlm_loss(const EncoderModel& model, std::span<const EncodedTrace> batch, Rng& rng) {
    return mlm_loss(model, mask_batch(batch, model.config, rng));
}

MlmResult mlm_loss_and_gradient(const EncoderModel& model, const MaskedBatch& batch, EncoderParams& gradient) {
    gradient = EncoderParams::zeros(model.config);
    MlmResult result;
    result.masked_count = batch.masked_count();
    if (result.masked_count == 0) return result;
    const double scale = 1.0 / static_cast<double>(result.masked_count);
    double total = 0.0;
    for (const auto& seq : batch.sequences) {
        if (seq.positions.empty()) continue;
        check_ids(model.config, seq.inputs);
        const std::vector<std::uint8_t> mask(seq.inputs.size(), 1);
        SequenceCache cache;
        const Matrix hidden = encoder_forward(model, seq.inputs, mask, &cache);
        HeadCache head;
        const Matrix logits = head_forward(model, select_rows(hidden, seq.positions), &head);
        Matrix dlogits;
        total += cross_entropy(logits, seq.targets, result.correct, scale, &dlogits);
        const Matrix dselected = head_backward(model, head, dlogits, gradient);
        Matrix dhidden = Matrix::Zero(hidden.rows(), hidden.cols());
        for (std::size_t i = 0; i < seq.positions.size(); ++i) {
            dhidden.row(static_cast<Eigen::Index>(seq.positions[i])) += dselected.row(static_cast<Eigen::Index>(i));
        }
        encoder_backward(model, cache, std::move(dhidden), gradient);
    }
    result.loss = total * scale;
    return result;
}

namespace {

struct AdamState {
    EncoderParams m, v;
};

void adamw_step(EncoderParams& params, const EncoderParams& grad, AdamState& state, double lr, double weight_decay,
                std::size_t step) {
    const double bias1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
    const double bias2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
    std::vector<const Matrix*> grads;
    grad.for_each([&](const std::string&, const Matrix& g) { grads.push_back(&g); });
    std::vector<Matrix*> ms, vs;
    state.m.for_each([&](const std::string&, Matrix& m) { ms.push_back(&m); });
    state.v.for_each([&](const std::string&, Matrix& v) { vs.push_back(&v); });
    std::size_t i = 0;
    params.for_each([&](const std::string& name, Matrix& p) {
        const Matrix& g = *grads[i];
        Matrix& m = *ms[i];
        Matrix& v = *vs[i];
        ++i;
        m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
        v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
        const Matrix update = (m.array() / bias1) / ((v.array() / bias2).sqrt() + kAdamEps);
        // Decay weight matrices only; biases, gains and their 1xN peers are exempt.
        const bool decay = p.rows() > 1 && !name.ends_with(".gamma");
        if (decay) p *= (1.0 - lr * weight_decay);
        p -= lr * update;
    });
}

double learning_rate_at(const EncoderConfig& cfg, std::size_t step, std::size_t total) {
    const auto warmup = static_cast<std::size_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total)));
    if (warmup > 0 && step <= warmup) return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
    if (total <= warmup) return cfg.learning_rate;
    return cfg.learning_rate * static_cast<double>(total - step + 1) / static_cast<double>(total - warmup);
}

}  // namespace

TrainResult train(const EncoderModel& initial, std::span<const EncodedTrace> training, std::span<const EncodedTrace> validation,
                  const TrainHooks& hooks) {
    const auto& cfg = initial.config;
    cfg.validate();
    if (training.empty()) throw ValidationError("train: empty training set");
    {
        std::unordered_set<std::string_view> train_ids;
        for (const auto& t : training) train_ids.insert(t.record_id);
        for (const auto& v : validation) {
            if (train_ids.contains(v.record_id)) {
                throw ValidationError("train: validation record '" + v.record_id + "' also in training set");
            }
        }
    }

    TrainResult result{initial, {}, 0, 0, false};
    EncoderModel model = initial;
    AdamState adam{EncoderParams::zeros(cfg), EncoderParams::zeros(cfg)};
    EncoderParams grad = EncoderParams::zeros(cfg);

    Rng shuffle_rng(derive_seed(cfg.seed, "train/shuffle"));
    Rng mask_rng(derive_seed(cfg.seed, "train/mask"));
    Rng validation_rng(derive_seed(cfg.seed, "train/validation"));
    const MaskedBatch validation_batch = mask_batch(validation, cfg, validation_rng);

    const std::size_t steps_per_epoch = (training.size() + cfg.batch - 1) / cfg.batch;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;
    std::vector<std::size_t> order(training.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    double best = std::numeric_limits<double>::infinity();
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        std::size_t masked_sum = 0;
        bool diverged = false;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            std::vector<EncodedTrace> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch); ++i) batch.push_back(training[order[i]]);
            const MaskedBatch masked = mask_batch(batch, cfg, mask_rng);
            ++step;
            const MlmResult r = mlm_loss_and_gradient(model, masked, grad);
            if (!std::isfinite(r.loss)) {
                diverged = true;
                break;
            }
            if (r.masked_count == 0) continue;
            loss_sum += r.loss * static_cast<double>(r.masked_count);
            masked_sum += r.masked_count;
            adamw_step(model.params, grad, adam, learning_rate_at(cfg, step, total_steps), cfg.weight_decay, step);
        }
        if (diverged || !model.all_finite()) {
            result.diverged = true;
            break;
        }
        EpochLoss point;
        point.epoch = epoch;
        point.train_loss = masked_sum == 0 ? 0.0 : loss_sum / static_cast<double>(masked_sum);
        point.validation_loss = validation.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                   : mlm_loss(model, validation_batch).loss;
        result.curve.push_back(point);
        if (hooks.on_epoch) hooks.on_epoch(point);
        if (validation.empty() || point.validation_loss < best) {
            if (!validation.empty()) best = point.validation_loss;
            result.model = model;
            result.best_epoch = epoch;
        }
    }
    result.steps = step;
    return result;
}

void holdout(std::vector<EncodedTrace> all, std::size_t count, std::uint64_t seed, std::vector<EncodedTrace>& training,
             std::vector<EncodedTrace>& validation) {
    training.clear();
    validation.clear();
    count = std::min(count, all.size() > 0 ? all.size() - 1 : 0);
    Rng rng(derive_seed(seed, "train/holdout"));
    std::vector<bool> held(all.size(), false);
    for (auto i : rng.sample_without_replacement(all.size(), count)) held[i] = true;
    for (std::size_t i = 0; i < all.size(); ++i) (held[i] ? validation : training).push_back(std::move(all[i]));
}

std::size_t fitted_max_len(const Corpus& corpus, Variant variant) {
    std::size_t n = 0;
    for (const auto& r : corpus.records) n = std::max(n, events_for(r, variant).size());
    return std::min<std::size_t>(n + 2, 768);
}

TrainResult pretrain_corpus(const Corpus& corpus, const Vocabulary& vocab, Variant variant, const EncoderConfig& config,
                            double validation_fraction, const TrainHooks& hooks) {
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw ValidationError("validation fraction must be in [0, 1)");
    config.validate();
    EncodeOptions opts;
    opts.max_len = config.max_positions;
    std::vector<EncodedTrace> all;
    all.reserve(corpus.size());
    for (const auto& r : corpus.records) all.push_back(encode(r, vocab, variant, opts));
    const auto held = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(all.size())));
    std::vector<EncodedTrace> training, validation;
    holdout(std::move(all), held, derive_seed(config.seed, "pretrain/holdout"), training, validation);
    return train(EncoderModel::initialize(config, vocab.hash()), training, validation, hooks);
}

TraceEmbedding embed(const EncoderModel& model, const EncodedTrace& input) {
    const auto n = input.length();
    const std::span<const TokenId> ids(input.ids.data(), n);
    check_ids(model.config, ids);
    const std::vector<std::uint8_t> mask(n, 1);
    const Matrix hidden = encoder_forward(model, ids, mask, nullptr);
    Eigen::RowVectorXd pooled = model.config.pooling == Pooling::Mean ? Eigen::RowVectorXd(hidden.colwise().mean())
                                                                       : Eigen::RowVectorXd(hidden.row(0));
    TraceEmbedding out;
    out.record_id = input.record_id;
    out.norm = pooled.norm();
    if (out.norm > 0.0) pooled /= out.norm;
    out.vector.assign(pooled.data(), pooled.data() + pooled.size());
    return out;
}

namespace {

constexpr char kCheckpointMagic[8] = {'T', 'F', 'C', 'K', 'P', 'T', '0', '1'};

nlohmann::ordered_json config_to_json(const EncoderConfig& c) {
    nlohmann::ordered_json j;
    j["hidden"] = c.hidden;
    j["heads"] = c.heads;
    j["layers"] = c.layers;
    j["intermediate"] = c.intermediate;
    j["max_positions"] = c.max_positions;
    j["mask_prob"] = c.mask_prob;
    j["vocab_size"] = c.vocab_size;
    j["epochs"] = c.epochs;
    j["learning_rate"] = c.learning_rate;
    j["batch"] = c.batch;
    j["seed"] = c.seed;
    j["weight_decay"] = c.weight_decay;
    j["warmup_fraction"] = c.warmup_fraction;
    j["init_std"] = c.init_std;
    j["layer_norm_eps"] = c.layer_norm_eps;
    j["pooling"] = std::string(to_string(c.pooling));
    return j;
}

EncoderConfig config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.hidden = j.at("hidden").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.intermediate = j.at("intermediate").get<std::size_t>();
    c.max_positions = j.at("max_positions").get<std::size_t>();
    c.mask_prob = j.at("mask_prob").get<double>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch = j.at("batch").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.warmup_fraction = j.at("warmup_fraction").get<double>();
    c.init_std = j.at("init_std").get<double>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
    c.pooling = pooling_from_string(j.at("pooling").get<std::string>());
    return c;
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

}  // namespace

std::string serialize_checkpoint(const EncoderModel& model) {
    nlohmann::ordered_json header;
    header["format"] = "tracefind-checkpoint";
    header["version"] = 1;
    header["config"] = config_to_json(model.config);
    header["vocab_hash"] = hex64(model.vocab_hash);
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    model.params.for_each([&](const std::string& name, const Matrix& m) {
        tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(m.size()) * sizeof(double);
    });
    header["tensors"] = tensors;
    const std::string header_text = header.dump();

    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    put_u64(out, header_text.size());
    out += header_text;
    out.reserve(out.size() + offset);
    model.params.for_each([&](const std::string&, const Matrix& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) put_u64(out, std::bit_cast<std::uint64_t>(m(r, c)));
        }
    });
    return out;
}

EncoderModel deserialize_checkpoint(std::string_view bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
        throw ValidationError("checkpoint: bad magic");
    }
    const auto header_len = get_u64(bytes, 8);
    if (16 + header_len > bytes.size()) throw ValidationError("checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(16, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("checkpoint: invalid header: ") + e.what());
    }
    EncoderModel model;
    model.config = config_from_json(header.at("config"));
    model.config.validate();
    model.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
    model.params = EncoderParams::zeros(model.config);
    const auto& tensors = header.at("tensors");
    const std::size_t data_start = 16 + header_len;
    std::size_t index = 0;
    model.params.for_each([&](const std::string& name, Matrix& m) {
        if (index >= tensors.size()) throw ValidationError("checkpoint: missing tensor " + name);
        const auto& t = tensors[index++];
        if (t.at("name") != name || t.at("rows") != m.rows() || t.at("cols") != m.cols()) {
            throw ValidationError("checkpoint: tensor " + name + " does not match config");
        }
        std::size_t at = data_start + t.at("offset").get<std::size_t>();
        if (at + static_cast<std::size_t>(m.size()) * 8 > bytes.size()) throw ValidationError("checkpoint: truncated data");
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c, at += 8) m(r, c) = std::bit_cast<double>(get_u64(bytes, at));
        }
    });
    if (index != tensors.size()) throw ValidationError("checkpoint: unexpected extra tensors");
    if (!model.all_finite()) throw ValidationError("checkpoint: non-finite parameters");
    return model;
}

void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint " + path.string());
    const auto bytes = serialize_checkpoint(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

EncoderModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return deserialize_checkpoint(buf.str());
}

std::uint64_t model_hash(const EncoderModel& model) {
    return fnv1a64(serialize_checkpoint(model));
}

}  // namespace tracefind
