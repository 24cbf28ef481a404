#pragma once

// Emotion-contagion encoder: word + position + reason embeddings, a CTX
// summary row, a transformer encoder, and attention aggregation into Q.

#include <span>

#include "reflectdiffu/era.hpp"

namespace rd {

class ContagionEncoder {
public:
    ContagionEncoder() = default;
    ContagionEncoder(ParameterSet& ps, const std::string& prefix, const EncoderConfig& cfg, Rng& rng);

    /// E_C[i] = E_W[tokens[i]] + E_P[i] + E_R[tags[i]].
    Tensor embed(std::span<const TokenId> tokens, std::span<const ReasonTag> tags) const;

    /// Prepends the CTX row and encodes. `valid` flags the non-PAD rows of
    /// `e_c`; the result has e_c.rows() + 1 rows with CTX first.
    Tensor encode(const Tensor& e_c, const std::vector<bool>* valid = nullptr, const DropoutCtx& drop = {}) const;

    /// Q = mean over valid query rows of Attention(H, h̃, h̃).
    /// `query_valid` has one flag per H row, `key_valid` one per h̃ row.
    Tensor aggregate(const Tensor& H, const Tensor& h_tilde, const std::vector<bool>* query_valid = nullptr,
                     const std::vector<bool>* key_valid = nullptr) const;

    const Tensor& word_table() const { return word_; }
    const Tensor& position_table() const { return position_; }
    const Tensor& reason_table() const { return reason_; }
    const Linear& wq() const { return wq_; }
    const Linear& wk() const { return wk_; }
    const Linear& wv() const { return wv_; }
    const EncoderConfig& config() const { return cfg_; }

private:
    EncoderConfig cfg_;
    Tensor word_, position_, reason_;
    TransformerEncoder encoder_;
    Linear wq_, wk_, wv_;
};

/// Validity flags for a token sequence (false at PAD).
std::vector<bool> non_pad(std::span<const TokenId> tokens);

}  // namespace rd
