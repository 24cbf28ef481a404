#pragma once

// Emotion reason annotator: a small transformer over the flattened context,
// bilinear self-attention composition, and a CRF over {noem, em}.

#include <span>
#include <stdexcept>
#include <vector>

#include "reflectdiffu/corpus.hpp"
#include "reflectdiffu/crf.hpp"
#include "reflectdiffu/layers.hpp"

namespace rd {

struct EncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t ff_hidden = 256;
    std::size_t max_len = 128;
};

struct ReasonRepr {
    Tensor h_tilde;  // [L x d]
    Tensor alpha;    // [L x L], rows sum to 1
};

class EraError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Era {
public:
    Era() = default;
    Era(ParameterSet& ps, const std::string& prefix, const EncoderConfig& cfg, Rng& rng);

    /// Contextual token vectors [L x d]. PAD ids are masked out of attention,
    /// as is every position flagged false in `valid` when given.
    Tensor encode_tokens(std::span<const TokenId> tokens, const std::vector<bool>* valid = nullptr,
                         const DropoutCtx& drop = {}) const;

    /// alpha = softmax(h W hᵀ) by row, h̃ = alpha h.
    ReasonRepr compose_attention(const Tensor& h, const std::vector<bool>* valid = nullptr) const;

    Tensor emissions(const Tensor& h_tilde) const;
    Tensor crf_loss(const Tensor& h_tilde, std::span<const ReasonTag> tags) const;
    std::vector<ReasonTag> decode(const Tensor& h_tilde) const;

    /// Full pass over a flattened context.
    ReasonRepr represent(const ContextView& ctx, const DropoutCtx& drop = {}) const;

    struct Annotation {
        std::vector<std::vector<ReasonTag>> turn_tags;  // one entry per dialogue turn
        ContextView context;
        ReasonRepr repr;
    };
    /// Tags every user turn in view; bot turns, the target and turns dropped
    /// by truncation are all noem. Strict mode refuses an untrained model.
    Annotation annotate(const Dialogue& d, bool strict = true) const;

    bool trained() const { return trained_flag_.item() != 0.0; }
    void mark_trained(bool v = true) { trained_flag_.mutable_data()[0] = v ? 1.0 : 0.0; }

    const EncoderConfig& config() const { return cfg_; }
    Tensor transitions() const { return transitions_; }
    Tensor attention_weight() const { return w_att_; }

private:
    EncoderConfig cfg_;
    Tensor tok_emb_, pos_emb_;
    TransformerEncoder encoder_;
    Tensor w_att_;
    Linear emit_;
    Tensor transitions_;
    Tensor trained_flag_;
};

}  // namespace rd
