#include "reflectdiffu/era.hpp"

#include <cmath>

namespace rd {

Era::Era(ParameterSet& ps, const std::string& prefix, const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.vocab_size == 0) throw std::invalid_argument("Era: empty vocabulary");
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    tok_emb_ = ps.create(prefix + ".tok_emb", {cfg.vocab_size, cfg.d_model}, Init::normal(emb_std), rng);
    pos_emb_ = ps.create(prefix + ".pos_emb", {cfg.max_len, cfg.d_model}, Init::normal(emb_std), rng);
    encoder_ = TransformerEncoder(ps, prefix + ".enc", cfg.layers, cfg.d_model, cfg.heads, cfg.ff_hidden, rng);
    w_att_ = ps.create(prefix + ".w_att", {cfg.d_model, cfg.d_model}, Init::xavier(0.5), rng);
    emit_ = Linear(ps, prefix + ".emit", cfg.d_model, kNumTags, rng);
    transitions_ = ps.create(prefix + ".transitions", {kCrfStates, kCrfStates}, Init::zeros(), rng);
    trained_flag_ = ps.create(prefix + ".trained", {1}, Init::zeros(), rng, false);
}

Tensor Era::encode_tokens(std::span<const TokenId> tokens, const std::vector<bool>* valid,
                          const DropoutCtx& drop) const {
    if (tokens.empty()) throw EraError("encode_tokens: empty input");
    if (tokens.size() > cfg_.max_len)
        throw EraError("encode_tokens: sequence longer than " + std::to_string(cfg_.max_len));
    if (valid && valid->size() != tokens.size()) throw EraError("encode_tokens: mask length mismatch");
    std::vector<std::size_t> ids(tokens.begin(), tokens.end());
    std::vector<std::size_t> pos(tokens.size());
    std::vector<bool> keep(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        pos[i] = i;
        keep[i] = tokens[i] != kPad && (!valid || (*valid)[i]);
    }
    const Tensor x = add(embedding(tok_emb_, ids), embedding(pos_emb_, pos));
    return encoder_(drop(x), &keep, drop);
}

ReasonRepr Era::compose_attention(const Tensor& h, const std::vector<bool>* valid) const {
    const Tensor scores = matmul_nt(matmul(h, w_att_), h);
    Tensor alpha;
    if (valid) {
        const std::size_t n = h.rows();
        if (valid->size() != n) throw EraError("compose_attention: mask length mismatch");
        auto mask = attention_mask(n, n, valid, false);
        alpha = mask ? masked_softmax(scores, *mask) : softmax(scores);
    } else {
        alpha = softmax(scores);
    }
    return {matmul(alpha, h), alpha};
}

Tensor Era::emissions(const Tensor& h_tilde) const { return emit_(h_tilde); }

Tensor Era::crf_loss(const Tensor& h_tilde, std::span<const ReasonTag> tags) const {
    return crf_neg_log_likelihood(emissions(h_tilde), transitions_, tags);
}

std::vector<ReasonTag> Era::decode(const Tensor& h_tilde) const {
    NoGradGuard guard;
    return viterbi_decode(emissions(h_tilde), transitions_);
}

ReasonRepr Era::represent(const ContextView& ctx, const DropoutCtx& drop) const {
    std::vector<bool> keep(ctx.tokens.size());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = ctx.tokens[i] != kPad;
    const Tensor h = encode_tokens(ctx.tokens, nullptr, drop);
    return compose_attention(h, &keep);
}

Era::Annotation Era::annotate(const Dialogue& d, bool strict) const {
    if (strict && !trained()) throw EraError("annotate: annotator has not been trained");
    Annotation out;
    out.context = flatten_context(d, cfg_.max_len - 1);
    out.turn_tags.resize(d.turns.size());
    for (std::size_t k = 0; k < d.turns.size(); ++k) out.turn_tags[k].assign(d.turns[k].tokens.size(), ReasonTag::noem);
    if (out.context.tokens.empty()) return out;

    NoGradGuard guard;
    out.repr = represent(out.context);
    const auto path = decode(out.repr.h_tilde);

    // Map flattened positions back onto turns; a truncated newest turn keeps only its tail.
    std::size_t pos = out.context.tokens.size();
    for (std::size_t k = d.target; k-- > out.context.first_turn && pos > 0;) {
        auto& tags = out.turn_tags[k];
        const std::size_t n = std::min(tags.size(), pos);
        for (std::size_t i = 0; i < n; ++i) {
            const ReasonTag t = path[pos - n + i];
            tags[tags.size() - n + i] = d.turns[k].speaker == Speaker::bot ? ReasonTag::noem : t;
        }
        pos -= n;
    }
    return out;
}

}  // namespace rd
