#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tracefind/rng.hpp"
#include "tracefind/tokenizer.hpp"

namespace tracefind {

using Matrix = Eigen::MatrixXd;

enum class Pooling { Mean, Cls };

std::string_view to_string(Pooling p) noexcept;
Pooling pooling_from_string(std::string_view name);

/// BERT-style encoder hyperparameters. Defaults are the full-size model
/// (hidden 512, 8 heads, 6 layers, FFN 2048, 768 positions, 15% masking);
/// `epochs` defaults to the desk-scale 40, see full_preset() for 400.
struct EncoderConfig {
    std::size_t hidden = 512;
    std::size_t heads = 8;
    std::size_t layers = 6;
    std::size_t intermediate = 2048;
    std::size_t max_positions = 768;
    double mask_prob = 0.15;
    std::size_t vocab_size = 0;
    std::size_t epochs = 40;
    double learning_rate = 1e-4;
    std::size_t batch = 16;
    std::uint64_t seed = 0;

    double weight_decay = 0.01;
    double warmup_fraction = 0.05;
    double init_std = 0.02;
    double layer_norm_eps = 1e-12;
    Pooling pooling = Pooling::Mean;

    static EncoderConfig full_preset(std::size_t vocab_size);
    /// Single-core scale: hidden 64, 4 heads, 2 layers, FFN 256, 40 epochs,
    /// learning rate 3e-3, batch 8.
    static EncoderConfig desk_preset(std::size_t vocab_size, std::size_t max_positions);

    /// Throws ValidationError when hidden % heads != 0, mask_prob is outside
    /// (0, 1), or a size is zero.
    void validate() const;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct LayerParams {
    Matrix wq, wk, wv, wo;
    Matrix bq, bk, bv, bo;
    Matrix ln1_gamma, ln1_beta;
    Matrix w1, b1, w2, b2;
    Matrix ln2_gamma, ln2_beta;
};

/// Every learned tensor. Bias and layer-norm vectors are stored as 1xN
/// matrices so the whole set can be walked uniformly.
struct EncoderParams {
    Matrix token_embedding;     // vocab x hidden
    Matrix position_embedding;  // max_positions x hidden
    Matrix emb_ln_gamma, emb_ln_beta;
    std::vector<LayerParams> layers;
    // MLM head: dense + GELU + layer norm + untied decoder.
    Matrix head_w, head_b;
    Matrix head_ln_gamma, head_ln_beta;
    Matrix decoder_w, decoder_b;  // hidden x vocab, 1 x vocab

    /// Zero-filled tensors with the shapes implied by `config`.
    static EncoderParams zeros(const EncoderConfig& config);

    /// Visits tensors in a fixed order with stable names
    /// (e.g. "layer.0.attention.wq").
    void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
    void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;

    std::size_t parameter_count() const;
};

struct EncoderModel {
    EncoderConfig config;
    EncoderParams params;
    std::uint64_t vocab_hash = 0;

    /// Normal(0, init_std) weights, zero biases, unit layer-norm gains.
    static EncoderModel initialize(const EncoderConfig& config, std::uint64_t vocab_hash = 0);

    bool all_finite() const;
};

/// Hidden states of the final layer, one max_len x hidden matrix per input.
/// PAD keys are masked out of attention. Throws std::out_of_range for ids
/// >= vocab_size or sequences longer than max_positions.
std::vector<Matrix> forward(const EncoderModel& model, std::span<const EncodedTrace> batch);

/// Per-head attention probabilities (max_len x max_len) of one layer.
std::vector<Matrix> attention_maps(const EncoderModel& model, const EncodedTrace& input, std::size_t layer);

/// Row-wise (x - mean) / sqrt(var + eps), before the affine parameters.
Matrix layer_norm_normalized(const Matrix& x, double eps);

enum class Corruption : std::uint8_t { Mask, Random, Keep };

struct MaskedSequence {
    std::vector<TokenId> inputs;   // non-PAD prefix with corruption applied
    std::vector<std::size_t> positions;
    std::vector<TokenId> targets;  // original ids at `positions`
    std::vector<Corruption> corruption;
};

struct MaskedBatch {
    std::vector<MaskedSequence> sequences;
    std::size_t masked_count() const noexcept;
    std::size_t maskable_count = 0;
};

/// Selects signature positions (ids >= 7) with probability mask_prob; of
/// those, 80% become [MASK], 10% a random signature id, 10% stay unchanged.
MaskedBatch mask_batch(std::span<const EncodedTrace> batch, const EncoderConfig& config, Rng& rng);

struct MlmResult {
    double loss = 0.0;
    std::size_t masked_count = 0;
    std::size_t correct = 0;  // argmax prediction equals target
};

/// Mean cross-entropy over the selected positions; 0 when nothing is masked.
MlmResult mlm_loss(const EncoderModel& model, const MaskedBatch& batch);
MlmResult mlm_loss(const EncoderModel& model, std::span<const EncodedTrace> batch, Rng& rng);

/// Loss plus the analytic gradient of every parameter.
MlmResult mlm_loss_and_gradient(const EncoderModel& model, const MaskedBatch& batch, EncoderParams& gradient);

struct EpochLoss {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;  // NaN when no validation set is given
};

struct TrainResult {
    EncoderModel model;  // checkpoint with the lowest validation loss
    std::vector<EpochLoss> curve;
    std::size_t best_epoch = 0;
    std::size_t steps = 0;
    bool diverged = false;
};

struct TrainHooks {
    std::function<void(const EpochLoss&)> on_epoch;
};

/// AdamW with linear warmup over `warmup_fraction` of the steps followed by
/// linear decay. Deterministic for a fixed config.seed. Training and
/// validation sets must be disjoint by record_id.
TrainResult train(const EncoderModel& initial, std::span<const EncodedTrace> training,
                  std::span<const EncodedTrace> validation, const TrainHooks& hooks = {});

/// Splits off `count` examples (seeded) as a validation set.
void holdout(std::vector<EncodedTrace> all, std::size_t count, std::uint64_t seed, std::vector<EncodedTrace>& training,
             std::vector<EncodedTrace>& validation);

/// Longest event sequence of `corpus` plus [CLS] and [SEP], capped at 768.
std::size_t fitted_max_len(const Corpus& corpus, Variant variant);

/// Encodes `corpus` at config.max_positions, holds out a seeded
/// `validation_fraction` for checkpoint selection and trains from a fresh
/// initialization. The shared path for the CLI and the acceptance runs.
TrainResult pretrain_corpus(const Corpus& corpus, const Vocabulary& vocab, Variant variant, const EncoderConfig& config,
                            double validation_fraction = 0.1, const TrainHooks& hooks = {});

struct TraceEmbedding {
    std::vector<double> vector;
    std::string record_id;
    double norm = 0.0;  // L2 norm before normalization
};

/// Mean (or CLS) pooling over non-PAD positions, then L2 normalization.
TraceEmbedding embed(const EncoderModel& model, const EncodedTrace& input);

/// Binary container; layout documented in docs/formats.md.
std::string serialize_checkpoint(const EncoderModel& model);
EncoderModel deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model);
EncoderModel load_checkpoint(const std::filesystem::path& path);

std::uint64_t model_hash(const EncoderModel& model);

}  // namespace tracefind
