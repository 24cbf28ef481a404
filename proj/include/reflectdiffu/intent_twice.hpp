#pragma once

// Explore / sample / correct: first-pass intent scores, EMU fusion of the
// polarity states, the reference-intent policy and the tied correction head.

#include <span>

#include "reflectdiffu/diffusion.hpp"
#include "reflectdiffu/intent_table.hpp"

namespace rd {

struct IntentDistribution {
    Tensor p_semantic;  // [9]
    Tensor p_intent;    // [9]
    Tensor first;       // p_semantic + alpha * p_intent (unnormalized)
    Intent argmax = Intent::neutral;
};

/// Intent embeddings, the internal intent classifier and the correction
/// projection. The classifier's linear layer is shared with the correction.
class IntentHead {
public:
    IntentHead() = default;
    IntentHead(ParameterSet& ps, const std::string& prefix, std::size_t d_model, Rng& rng);

    IntentDistribution first(const Tensor& q, double alpha) const;

    struct Correction {
        Tensor probs;   // [9]
        Tensor logits;  // [9]
        Intent argmax = Intent::neutral;
    };
    /// logits = W_int (e_ref + P intent_first) + b_int.
    Correction correct(Intent reference, const Tensor& intent_first) const;

    const Tensor& embeddings() const { return emb_; }  // [9 x d]
    const Linear& shared() const { return shared_; }
    const Linear& blend() const { return blend_; }

private:
    Tensor emb_;
    Linear shared_;  // d -> 9
    Linear blend_;   // 9 -> d
};

Intent argmax_intent(const Tensor& scores);

/// CrossAttention([Emo_pos; H], [Emo_neg; H]) mean-pooled over valid query rows.
class EmuFusion {
public:
    EmuFusion() = default;
    EmuFusion(ParameterSet& ps, const std::string& prefix, std::size_t d_model, Rng& rng);

    /// `h_valid` flags the usable rows of H.
    Tensor operator()(const Tensor& emo_pos, const Tensor& emo_neg, const Tensor& H,
                      const std::vector<bool>* h_valid = nullptr) const;

    const Linear& wq() const { return wq_; }
    const Linear& wk() const { return wk_; }
    const Linear& wv() const { return wv_; }

private:
    Linear wq_, wk_, wv_;
};

/// Two linear layers over Emo_fused giving logits for the three reference
/// intents, plus a frozen behaviour copy refreshed on demand.
class PolicyNet {
public:
    PolicyNet() = default;
    PolicyNet(ParameterSet& ps, const std::string& prefix, std::size_t d_model, Rng& rng);

    Tensor probs(const Tensor& emo_fused) const;
    std::array<double, 3> behaviour_probs(const Tensor& emo_fused) const;
    void refresh_behaviour();

    const Linear& l1() const { return l1_; }
    const Linear& l2() const { return l2_; }

private:
    Linear l1_, l2_;
    Linear mu1_, mu2_;  // non-trainable snapshot
};

struct ActionSample {
    std::size_t action = 0;
    double ratio = 1.0;  // clipped pi(a) / mu(a)
    double mu_prob = 0.0;
};

ActionSample sample_action(const Tensor& pi, std::span<const double> mu, Rng& rng, double clip_lo = 0.1,
                           double clip_hi = 10.0);

/// sigmoid(Emo_pol . e_a) with Emo_pol chosen by the emotion's polarity.
double reward(Emotion emotion, std::size_t action, const Tensor& emo_pos, const Tensor& emo_neg,
              const Tensor& intent_embeddings, const ReferIntents& refs);

struct PolicyStep {
    Tensor pi;  // [3], differentiable
    std::size_t action = 0;
    double ratio = 1.0;
    double reward = 0.0;
};

/// -mean[ratio (R - b) log pi(a)] with b the mean reward.
Tensor policy_loss(const std::vector<PolicyStep>& steps);

/// Cross-entropy of the corrected distribution against the gold intent.
Tensor intent_loss(const Tensor& probs, Intent gold);

inline Tensor twice_loss(const Tensor& kl_pos, const Tensor& kl_neg, const Tensor& l_intent) {
    return add(add(kl_pos, kl_neg), l_intent);
}

}  // namespace rd
