#include "reflectdiffu/contagion.hpp"

#include <cmath>

namespace rd {

std::vector<bool> non_pad(std::span<const TokenId> tokens) {
    std::vector<bool> v(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) v[i] = tokens[i] != kPad;
    return v;
}

ContagionEncoder::ContagionEncoder(ParameterSet& ps, const std::string& prefix, const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    if (cfg.vocab_size == 0) throw std::invalid_argument("ContagionEncoder: empty vocabulary");
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    word_ = ps.create(prefix + ".word_emb", {cfg.vocab_size, cfg.d_model}, Init::normal(emb_std), rng);
    position_ = ps.create(prefix + ".pos_emb", {cfg.max_len, cfg.d_model}, Init::normal(emb_std), rng);
    reason_ = ps.create(prefix + ".reason_emb", {kNumTags, cfg.d_model}, Init::normal(emb_std), rng);
    encoder_ = TransformerEncoder(ps, prefix + ".enc", cfg.layers, cfg.d_model, cfg.heads, cfg.ff_hidden, rng);
    wq_ = Linear(ps, prefix + ".agg.q", cfg.d_model, cfg.d_model, rng);
    wk_ = Linear(ps, prefix + ".agg.k", cfg.d_model, cfg.d_model, rng, false);
    wv_ = Linear(ps, prefix + ".agg.v", cfg.d_model, cfg.d_model, rng);
}

Tensor ContagionEncoder::embed(std::span<const TokenId> tokens, std::span<const ReasonTag> tags) const {
    if (tokens.size() != tags.size()) throw TensorError("embed: tag/token length mismatch");
    if (tokens.empty()) throw TensorError("embed: empty sequence");
    if (tokens.size() > cfg_.max_len - 1)
        throw TensorError("embed: sequence longer than " + std::to_string(cfg_.max_len - 1) + " tokens");
    std::vector<std::size_t> ids(tokens.begin(), tokens.end()), pos(tokens.size()), tag_ids(tags.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        pos[i] = i;
        tag_ids[i] = index(tags[i]);
    }
    return add(add(embedding(word_, ids), embedding(position_, pos)), embedding(reason_, tag_ids));
}

Tensor ContagionEncoder::encode(const Tensor& e_c, const std::vector<bool>* valid, const DropoutCtx& drop) const {
    if (e_c.rows() + 1 > cfg_.max_len) throw TensorError("encode: input overflows max_len with the CTX row");
    if (valid && valid->size() != e_c.rows()) throw TensorError("encode: mask length mismatch");
    const std::size_t ctx_id[1] = {kCtx};
    const Tensor x = concat_rows({embedding(word_, ctx_id), e_c});
    std::vector<bool> keep(e_c.rows() + 1, true);
    if (valid)
        for (std::size_t i = 0; i < valid->size(); ++i) keep[i + 1] = (*valid)[i];
    return encoder_(drop(x), &keep, drop);
}

Tensor ContagionEncoder::aggregate(const Tensor& H, const Tensor& h_tilde, const std::vector<bool>* query_valid,
                                   const std::vector<bool>* key_valid) const {
    if (h_tilde.size() == 0 || h_tilde.rows() == 0) throw TensorError("aggregate: empty reason representation");
    if (query_valid && query_valid->size() != H.rows()) throw TensorError("aggregate: query mask length mismatch");
    const auto mask = attention_mask(H.rows(), h_tilde.rows(), key_valid, false);
    const Tensor attended = scaled_dot_attention(wq_(H), wk_(h_tilde), wv_(h_tilde), mask).output;
    return mean_rows(attended, query_valid);
}

}  // namespace rd
