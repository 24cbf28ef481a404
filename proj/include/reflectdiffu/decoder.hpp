#pragma once

// Transformer response decoder with a pointer-generator output layer.

#include <optional>
#include <span>
#include <string>

#include "reflectdiffu/contagion.hpp"

namespace rd {

/// Context words the decoder may copy, in the extended vocabulary: in-vocab
/// words keep their id, each distinct OOV word gets vocab_size + j.
struct CopySource {
    std::vector<std::size_t> ids;        // one per copyable memory row
    std::vector<std::string> oov_words;  // extended id vocab_size + j -> oov_words[j]
    std::size_t vocab_size = 0;

    std::size_t width() const { return vocab_size + oov_words.size(); }
    /// Extended id for `word`/`token`: the OOV slot when `token` is UNK and the
    /// word occurs in the context, else `token`.
    std::size_t extend(TokenId token, const std::string& word) const;
};

/// Builds the copy source from the context tokens/words (PAD entries skipped).
CopySource make_copy_source(std::span<const TokenId> tokens, std::span<const std::string> words,
                            std::size_t vocab_size);

/// Decoder memory: [Emo_fused; H]. Row 0 is the fused state, row 1 the CTX
/// summary, rows 2.. the context tokens (copy targets).
struct DecoderMemory {
    Tensor rows;
    std::vector<bool> valid;
    CopySource copy;
};

DecoderMemory make_memory(const Tensor& emo_fused, const Tensor& H, std::span<const TokenId> tokens,
                          std::span<const std::string> words, std::size_t vocab_size);

struct PointerGenOutput {
    Tensor p_vocab;  // [L x V]
    Tensor p_copy;   // [L x n_copy]
    Tensor p_gen;    // [L]
    Tensor p_w;      // [L x (V + n_oov)]
};

struct DecoderConfig {
    std::size_t d_model = 64;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t ff_hidden = 256;
    std::size_t max_len = 128;
};

class ResponseDecoder {
public:
    ResponseDecoder() = default;
    /// `word_table` and `position_table` are shared with the encoder.
    ResponseDecoder(ParameterSet& ps, const std::string& prefix, const DecoderConfig& cfg, const Tensor& word_table,
                    const Tensor& position_table, Rng& rng);

    /// One forward pass over the whole prefix (teacher forcing). Row t is the
    /// distribution of the token after prefix[0..t]. `gate` forces p_gen.
    PointerGenOutput forward(std::span<const std::size_t> prefix, const DecoderMemory& memory,
                             const DropoutCtx& drop = {}, std::optional<double> gate = std::nullopt) const;

    const DecoderConfig& config() const { return cfg_; }
    std::size_t vocab_size() const { return word_.rows(); }
    const Linear& output() const { return out_; }
    const Linear& gate() const { return gate_; }

private:
    DecoderConfig cfg_;
    Tensor word_, position_;
    TransformerDecoder decoder_;
    Linear out_, copy_q_, copy_k_, gate_;
};

/// Prefix SOS + gold[0..n-2] and target gold (gold ends with EOS).
struct TeacherForcing {
    std::vector<std::size_t> prefix, target;
};
/// `gold_tokens`/`gold_words` exclude SOS/EOS; EOS is appended.
TeacherForcing teacher_forcing(std::span<const TokenId> gold_tokens, std::span<const std::string> gold_words,
                               const CopySource& copy);

struct ResponseLoss {
    Tensor loss;  // mean per-step -log P_w[gold]
    std::size_t clamped = 0;
};
ResponseLoss response_loss(const Tensor& p_w, std::span<const std::size_t> target);

struct GenerateOptions {
    std::size_t max_len = 30;
    std::size_t top_k = 0;  // 0 = greedy
};

struct Generation {
    std::vector<std::size_t> ids;  // extended ids, no SOS/EOS
    std::vector<std::string> words;
};

/// Greedy or top-k decoding. PAD, UNK, SOS and CTX are never emitted.
Generation generate(const ResponseDecoder& decoder, const DecoderMemory& memory, const Vocab& vocab,
                    const GenerateOptions& options, Rng* rng = nullptr);

}  // namespace rd
