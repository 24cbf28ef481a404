#pragma once

// Parameter registry and the transformer building blocks shared by the
// annotator, the contagion encoder and the response decoder.

#include <map>
#include <string>
#include <vector>

#include "reflectdiffu/gradcheck.hpp"
#include "reflectdiffu/rng.hpp"
#include "reflectdiffu/tensor.hpp"

namespace rd {

struct Init {
    enum class Kind { zeros, ones, normal, xavier } kind = Kind::xavier;
    double scale = 1.0;

    static Init zeros() { return {Kind::zeros, 0.0}; }
    static Init ones() { return {Kind::ones, 1.0}; }
    static Init normal(double stddev) { return {Kind::normal, stddev}; }
    static Init xavier(double gain = 1.0) { return {Kind::xavier, gain}; }
};

/// Owns every parameter tensor of a model under a stable, unique name.
/// Registration order is the serialization order.
class ParameterSet {
public:
    Tensor create(const std::string& name, Shape shape, Init init, Rng& rng, bool trainable = true);

    const std::vector<NamedTensor>& all() const { return params_; }
    std::vector<NamedTensor> trainable() const;
    std::vector<NamedTensor> with_prefix(const std::string& prefix) const;
    bool is_trainable(const std::string& name) const;
    Tensor get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t scalar_count() const;
    void zero_grad();

private:
    std::vector<NamedTensor> params_;
    std::vector<bool> trainable_;
    std::map<std::string, std::size_t> index_;
};

/// Inverted dropout applied to sublayer outputs; off unless p > 0 and an Rng is supplied.
struct DropoutCtx {
    double p = 0.0;
    Rng* rng = nullptr;

    Tensor operator()(const Tensor& x) const { return (p > 0.0 && rng) ? dropout(x, p, *rng) : x; }
};

struct Linear {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out] or undefined

    Linear() = default;
    Linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
           bool with_bias = true, Init init = Init::xavier());
    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;
    double eps = 1e-5;

    LayerNorm() = default;
    LayerNorm(ParameterSet& ps, const std::string& name, std::size_t dim, Rng& rng);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }
};

/// Builds a row-major [queries x keys] attention mask. Returns nullopt when
/// every pair may attend.
std::optional<std::vector<bool>> attention_mask(std::size_t queries, std::size_t keys,
                                                const std::vector<bool>* key_valid, bool causal);

struct MultiHeadAttention {
    Linear q, k, v, o;
    std::size_t heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParameterSet& ps, const std::string& name, std::size_t dim, std::size_t heads, Rng& rng);
    /// `query` [nq, d], `memory` [nk, d]; `key_valid` flags usable memory rows.
    Tensor operator()(const Tensor& query, const Tensor& memory, const std::vector<bool>* key_valid,
                      bool causal) const;
};

struct FeedForward {
    Linear up, down;

    FeedForward() = default;
    FeedForward(ParameterSet& ps, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng);
    Tensor operator()(const Tensor& x) const { return down(gelu(up(x))); }
};

/// Pre-norm encoder block: x + Attn(LN x), then x + FFN(LN x).
struct EncoderLayer {
    LayerNorm ln_attn, ln_ff;
    MultiHeadAttention attn;
    FeedForward ff;

    EncoderLayer() = default;
    EncoderLayer(ParameterSet& ps, const std::string& name, std::size_t dim, std::size_t heads,
                 std::size_t ff_hidden, Rng& rng);
    Tensor operator()(const Tensor& x, const std::vector<bool>* valid, const DropoutCtx& drop) const;
};

/// Pre-norm decoder block with causal self-attention and cross-attention.
struct DecoderLayer {
    LayerNorm ln_self, ln_cross, ln_ff;
    MultiHeadAttention self_attn, cross_attn;
    FeedForward ff;

    DecoderLayer() = default;
    DecoderLayer(ParameterSet& ps, const std::string& name, std::size_t dim, std::size_t heads,
                 std::size_t ff_hidden, Rng& rng);
    Tensor operator()(const Tensor& x, const Tensor& memory, const std::vector<bool>* memory_valid,
                      const DropoutCtx& drop) const;
};

struct TransformerEncoder {
    std::vector<EncoderLayer> layers;
    LayerNorm final_norm;

    TransformerEncoder() = default;
    TransformerEncoder(ParameterSet& ps, const std::string& name, std::size_t layers, std::size_t dim,
                       std::size_t heads, std::size_t ff_hidden, Rng& rng);
    Tensor operator()(const Tensor& x, const std::vector<bool>* valid, const DropoutCtx& drop = {}) const;
};

struct TransformerDecoder {
    std::vector<DecoderLayer> layers;
    LayerNorm final_norm;

    TransformerDecoder() = default;
    TransformerDecoder(ParameterSet& ps, const std::string& name, std::size_t layers, std::size_t dim,
                       std::size_t heads, std::size_t ff_hidden, Rng& rng);
    Tensor operator()(const Tensor& x, const Tensor& memory, const std::vector<bool>* memory_valid,
                      const DropoutCtx& drop = {}) const;
};

/// Cosine similarity of two vectors as a differentiable scalar.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps = 1e-12);

}  // namespace rd
