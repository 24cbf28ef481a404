#include "reflectdiffu/layers.hpp"

#include <cmath>

namespace rd {

Tensor ParameterSet::create(const std::string& name, Shape shape, Init init, Rng& rng, bool trainable) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> data(n, 0.0);
    switch (init.kind) {
        case Init::Kind::zeros:
            break;
        case Init::Kind::ones:
            std::fill(data.begin(), data.end(), 1.0);
            break;
        case Init::Kind::normal:
            for (double& v : data) v = init.scale * rng.normal();
            break;
        case Init::Kind::xavier: {
            const double fan_out = static_cast<double>(shape[0]);
            const double fan_in = static_cast<double>(shape.size() > 1 ? shape[1] : shape[0]);
            const double bound = init.scale * std::sqrt(6.0 / (fan_in + fan_out));
            for (double& v : data) v = rng.uniform(-bound, bound);
            break;
        }
    }
    Tensor t = Tensor::from(std::move(shape), std::move(data), trainable);
    index_[name] = params_.size();
    params_.push_back({name, t});
    trainable_.push_back(trainable);
    return t;
}

std::vector<NamedTensor> ParameterSet::trainable() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (trainable_[i]) out.push_back(params_[i]);
    return out;
}

std::vector<NamedTensor> ParameterSet::with_prefix(const std::string& prefix) const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (trainable_[i] && params_[i].name.rfind(prefix, 0) == 0) out.push_back(params_[i]);
    return out;
}

bool ParameterSet::is_trainable(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return trainable_[it->second];
}

Tensor ParameterSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].tensor;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

// ---------------------------------------------------------------------------

Linear::Linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               bool with_bias, Init init) {
    weight = ps.create(name + ".weight", {out, in}, init, rng);
    if (with_bias) bias = ps.create(name + ".bias", {out}, Init::zeros(), rng);
}

LayerNorm::LayerNorm(ParameterSet& ps, const std::string& name, std::size_t dim, Rng& rng) {
    gain = ps.create(name + ".gain", {dim}, Init::ones(), rng);
    bias = ps.create(name + ".bias", {dim}, Init::zeros(), rng);
}

std::optional<std::vector<bool>> attention_mask(std::size_t queries, std::size_t keys,
                                                const std::vector<bool>* key_valid, bool causal) {
    bool any_masked = causal && keys > 1;
    if (key_valid) {
        if (key_valid->size() != keys) throw TensorError("attention_mask: key mask size mismatch");
        for (bool v : *key_valid) any_masked = any_masked || !v;
    }
    if (!any_masked) return std::nullopt;
    std::vector<bool> mask(queries * keys, true);
    for (std::size_t i = 0; i < queries; ++i)
        for (std::size_t j = 0; j < keys; ++j) {
            bool keep = !key_valid || (*key_valid)[j];
            if (causal && j > i) keep = false;
            mask[i * keys + j] = keep;
        }
    return mask;
}

MultiHeadAttention::MultiHeadAttention(ParameterSet& ps, const std::string& name, std::size_t dim,
                                       std::size_t n_heads, Rng& rng)
    : heads(n_heads) {
    if (n_heads == 0 || dim % n_heads != 0)
        throw std::invalid_argument("MultiHeadAttention: dim must be divisible by heads");
    q = Linear(ps, name + ".q", dim, dim, rng);
    // Key bias only shifts every score of a query by the same amount.
    k = Linear(ps, name + ".k", dim, dim, rng, false);
    v = Linear(ps, name + ".v", dim, dim, rng);
    o = Linear(ps, name + ".o", dim, dim, rng);
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& memory,
                                      const std::vector<bool>* key_valid, bool causal) const {
    const Tensor qs = q(query);
    const Tensor ks = k(memory);
    const Tensor vs = v(memory);
    const auto mask = attention_mask(qs.rows(), ks.rows(), key_valid, causal);
    const std::size_t dh = qs.cols() / heads;
    if (heads == 1) return o(scaled_dot_attention(qs, ks, vs, mask).output);
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t b = h * dh, e = (h + 1) * dh;
        outs.push_back(
            scaled_dot_attention(slice_cols(qs, b, e), slice_cols(ks, b, e), slice_cols(vs, b, e), mask).output);
    }
    return o(concat_cols(outs));
}

FeedForward::FeedForward(ParameterSet& ps, const std::string& name, std::size_t dim, std::size_t hidden,
                         Rng& rng) {
    up = Linear(ps, name + ".up", dim, hidden, rng);
    down = Linear(ps, name + ".down", hidden, dim, rng);
}

EncoderLayer::EncoderLayer(ParameterSet& ps, const std::string& name, std::size_t dim, std::size_t heads,
                           std::size_t ff_hidden, Rng& rng) {
    ln_attn = LayerNorm(ps, name + ".ln_attn", dim, rng);
    attn = MultiHeadAttention(ps, name + ".attn", dim, heads, rng);
    ln_ff = LayerNorm(ps, name + ".ln_ff", dim, rng);
    ff = FeedForward(ps, name + ".ff", dim, ff_hidden, rng);
}

Tensor EncoderLayer::operator()(const Tensor& x, const std::vector<bool>* valid, const DropoutCtx& drop) const {
    const Tensor normed = ln_attn(x);
    Tensor h = add(x, drop(attn(normed, normed, valid, false)));
    return add(h, drop(ff(ln_ff(h))));
}

DecoderLayer::DecoderLayer(ParameterSet& ps, const std::string& name, std::size_t dim, std::size_t heads,
                           std::size_t ff_hidden, Rng& rng) {
    ln_self = LayerNorm(ps, name + ".ln_self", dim, rng);
    self_attn = MultiHeadAttention(ps, name + ".self_attn", dim, heads, rng);
    ln_cross = LayerNorm(ps, name + ".ln_cross", dim, rng);
    cross_attn = MultiHeadAttention(ps, name + ".cross_attn", dim, heads, rng);
    ln_ff = LayerNorm(ps, name + ".ln_ff", dim, rng);
    ff = FeedForward(ps, name + ".ff", dim, ff_hidden, rng);
}

Tensor DecoderLayer::operator()(const Tensor& x, const Tensor& memory, const std::vector<bool>* memory_valid,
                                const DropoutCtx& drop) const {
    const Tensor normed = ln_self(x);
    Tensor h = add(x, drop(self_attn(normed, normed, nullptr, true)));
    h = add(h, drop(cross_attn(ln_cross(h), memory, memory_valid, false)));
    return add(h, drop(ff(ln_ff(h))));
}

TransformerEncoder::TransformerEncoder(ParameterSet& ps, const std::string& name, std::size_t n_layers,
                                       std::size_t dim, std::size_t heads, std::size_t ff_hidden, Rng& rng) {
    for (std::size_t i = 0; i < n_layers; ++i)
        layers.emplace_back(ps, name + ".layer" + std::to_string(i), dim, heads, ff_hidden, rng);
    final_norm = LayerNorm(ps, name + ".final_norm", dim, rng);
}

Tensor TransformerEncoder::operator()(const Tensor& x, const std::vector<bool>* valid,
                                      const DropoutCtx& drop) const {
    Tensor h = x;
    for (const auto& layer : layers) h = layer(h, valid, drop);
    return final_norm(h);
}

TransformerDecoder::TransformerDecoder(ParameterSet& ps, const std::string& name, std::size_t n_layers,
                                       std::size_t dim, std::size_t heads, std::size_t ff_hidden, Rng& rng) {
    for (std::size_t i = 0; i < n_layers; ++i)
        layers.emplace_back(ps, name + ".layer" + std::to_string(i), dim, heads, ff_hidden, rng);
    final_norm = LayerNorm(ps, name + ".final_norm", dim, rng);
}

Tensor TransformerDecoder::operator()(const Tensor& x, const Tensor& memory, const std::vector<bool>* memory_valid,
                                      const DropoutCtx& drop) const {
    Tensor h = x;
    for (const auto& layer : layers) h = layer(h, memory, memory_valid, drop);
    return final_norm(h);
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps) {
    const Tensor num = dot(a, b);
    const Tensor den = sqrt(add_scalar(mul(dot(a, a), dot(b, b)), eps));
    return div(num, den);
}

}  // namespace rd
