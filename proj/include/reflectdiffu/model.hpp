#pragma once

// The assembled empathetic-response model: annotator, contagion encoder,
// emotion experts, intent explore/sample/correct with paired diffusion, and
// the pointer-generator decoder.

#include <memory>
#include <span>

#include "reflectdiffu/decoder.hpp"
#include "reflectdiffu/emotion.hpp"
#include "reflectdiffu/intent_twice.hpp"

namespace rd {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t ff_hidden = 256;
    std::size_t max_len = 128;
    double dropout = 0.0;
    double tau = 0.5;
    std::size_t max_response_len = 30;

    std::size_t diffusion_T = 50;
    double beta_start = 1e-4;
    double beta_end = 0.05;
    VarianceForm variance_form = VarianceForm::product;
    std::size_t diffusion_state_t = 5;  // depth of the corrupt/denoise pass on Q
    std::size_t denoiser_hidden = 128;
    std::size_t timestep_dim = 16;

    double intent_alpha = 1.0;
    double ratio_clip_lo = 0.1;
    double ratio_clip_hi = 10.0;

    std::uint64_t seed = 1;

    EncoderConfig encoder() const { return {vocab_size, d_model, layers, heads, ff_hidden, max_len}; }
    DecoderConfig decoder() const { return {d_model, layers, heads, ff_hidden, max_len}; }
    bool operator==(const ModelConfig&) const = default;
};

struct LossWeights {
    double delta = 1.0;  // L_em
    double zeta = 1.0;   // L_twice
    double eta = 1.0;    // L_res
    bool operator==(const LossWeights&) const = default;
};

/// A loss component that is NaN or infinite.
class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(std::string component, double value);
    const std::string& component() const { return component_; }

private:
    std::string component_;
};

/// delta L_em + zeta L_twice + eta L_res. Throws NonFiniteLoss naming the bad component.
Tensor joint_loss(const Tensor& em, const Tensor& twice, const Tensor& res, const LossWeights& w);

struct BatchLosses {
    Tensor total;
    Tensor em, twice, res;                 // weighted terms of the joint objective
    Tensor era, prior, policy;             // auxiliary terms (weight 1)
    Tensor kl_pos, kl_neg, intent;         // parts of twice
    double mean_reward = 0.0;
    std::size_t clamped = 0;               // probabilities floored at 1e-12
};

/// The values the objective treats as constants: detached denoiser targets,
/// sampled actions, importance ratios and rewards. Recording one evaluation
/// and replaying it pins them, so a finite-difference probe sees the same
/// function that backpropagation differentiates.
class StopGradientTape {
public:
    enum class Mode { record, replay };

    Tensor hold(const Tensor& x);
    double hold(double v);
    void replay();  // switch to replay and rewind

    Mode mode() const { return mode_; }

private:
    Mode mode_ = Mode::record;
    std::vector<std::vector<double>> tensors_;
    std::vector<double> scalars_;
    std::size_t next_tensor_ = 0, next_scalar_ = 0;
};

/// Everything the model infers about one dialogue.
struct Prediction {
    Emotion emotion = Emotion::surprised;
    Polarity sentiment = Polarity::neu;
    Intent intent_first = Intent::neutral;
    Intent intent_twice = Intent::neutral;
    Intent reference = Intent::neutral;  // the reference intent chosen by the policy
    std::vector<ReasonTag> context_tags;
    Generation response;
};

class ReflectDiffu {
public:
    ReflectDiffu(const ModelConfig& cfg, Vocab vocab);
    ReflectDiffu(const ReflectDiffu&) = delete;
    ReflectDiffu& operator=(const ReflectDiffu&) = delete;

    /// Joint objective over a labelled batch (gold tags feed the encoder).
    /// `rng` drives dropout, diffusion noise and action sampling.
    BatchLosses batch_loss(std::span<const Dialogue* const> batch, const LossWeights& w, Rng& rng,
                           bool training = true, StopGradientTape* tape = nullptr) const;

    /// Inference with predicted tags; noise is seeded from the dialogue id.
    Prediction predict(const Dialogue& d, const GenerateOptions& options, Rng* sampler = nullptr) const;

    /// Per-token -log P_w of the gold response under inference-mode encoding.
    std::vector<double> response_nll(const Dialogue& d) const;

    void refresh_behaviour() { policy_.refresh_behaviour(); }

    ParameterSet& parameters() { return ps_; }
    const ParameterSet& parameters() const { return ps_; }
    const ModelConfig& config() const { return cfg_; }
    const Vocab& vocab() const { return vocab_; }
    const Era& era() const { return era_; }
    Era& era() { return era_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    const SentimentLexicon& lexicon() const { return *lexicon_; }

private:
    struct Encoded {
        ContextView ctx;
        std::vector<ReasonTag> tags;
        Tensor h_tilde, H, q;
        std::vector<bool> h_valid;
        Polarity sentiment = Polarity::neu;
        IntentDistribution intent;
        Tensor emo_pos, emo_neg, emo_fused;
    };
    Encoded encode(const Dialogue& d, bool gold_tags, Rng& noise, const DropoutCtx& drop) const;
    std::uint64_t dialogue_seed(const Dialogue& d) const;

    ModelConfig cfg_;
    Vocab vocab_;
    const SentimentLexicon* lexicon_;
    NoiseSchedule schedule_;
    ParameterSet ps_;
    Era era_;
    ContagionEncoder encoder_;
    EmotionClassifier emotion_;
    IntentHead intent_;
    Denoiser den_pos_, den_neg_;
    EmuFusion emu_;
    PolicyNet policy_;
    ResponseDecoder decoder_;
};

/// Gold labels a dialogue must carry for training.
void require_labels(const Dialogue& d);

}  // namespace rd
