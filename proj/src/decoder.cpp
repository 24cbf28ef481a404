#include "reflectdiffu/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rd {

namespace {
constexpr double kProbFloor = 1e-12;
constexpr std::size_t kMemoryHeader = 2;  // fused state + CTX
}  // namespace

std::size_t CopySource::extend(TokenId token, const std::string& word) const {
    if (token == kUnk) {
        const auto it = std::find(oov_words.begin(), oov_words.end(), word);
        if (it != oov_words.end()) return vocab_size + static_cast<std::size_t>(it - oov_words.begin());
    }
    return token;
}

CopySource make_copy_source(std::span<const TokenId> tokens, std::span<const std::string> words,
                            std::size_t vocab_size) {
    if (tokens.size() != words.size()) throw std::invalid_argument("make_copy_source: tokens/words length mismatch");
    CopySource src;
    src.vocab_size = vocab_size;
    src.ids.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= vocab_size) throw std::invalid_argument("make_copy_source: token id outside vocabulary");
        if (tokens[i] == kUnk) {
            if (std::find(src.oov_words.begin(), src.oov_words.end(), words[i]) == src.oov_words.end())
                src.oov_words.push_back(words[i]);
            src.ids.push_back(src.extend(kUnk, words[i]));
        } else {
            src.ids.push_back(tokens[i]);
        }
    }
    return src;
}

DecoderMemory make_memory(const Tensor& emo_fused, const Tensor& H, std::span<const TokenId> tokens,
                          std::span<const std::string> words, std::size_t vocab_size) {
    if (H.rows() != tokens.size() + 1) throw TensorError("make_memory: H must hold the CTX row plus one row per token");
    DecoderMemory m;
    m.rows = concat_rows({reshape(emo_fused, {1, H.cols()}), H});
    m.valid.assign(kMemoryHeader, true);
    for (TokenId t : tokens) m.valid.push_back(t != kPad);
    m.copy = make_copy_source(tokens, words, vocab_size);
    return m;
}

ResponseDecoder::ResponseDecoder(ParameterSet& ps, const std::string& prefix, const DecoderConfig& cfg,
                                 const Tensor& word_table, const Tensor& position_table, Rng& rng)
    : cfg_(cfg), word_(word_table), position_(position_table) {
    if (word_.cols() != cfg.d_model || position_.cols() != cfg.d_model)
        throw std::invalid_argument("ResponseDecoder: embedding width differs from d_model");
    if (position_.rows() < cfg.max_len) throw std::invalid_argument("ResponseDecoder: position table too short");
    decoder_ = TransformerDecoder(ps, prefix + ".dec", cfg.layers, cfg.d_model, cfg.heads, cfg.ff_hidden, rng);
    out_ = Linear(ps, prefix + ".out", cfg.d_model, word_.rows(), rng);
    copy_q_ = Linear(ps, prefix + ".copy.q", cfg.d_model, cfg.d_model, rng);
    copy_k_ = Linear(ps, prefix + ".copy.k", cfg.d_model, cfg.d_model, rng, false);
    gate_ = Linear(ps, prefix + ".gate", 3 * cfg.d_model, 1, rng);
}

PointerGenOutput ResponseDecoder::forward(std::span<const std::size_t> prefix, const DecoderMemory& memory,
                                          const DropoutCtx& drop, std::optional<double> gate) const {
    const std::size_t L = prefix.size(), V = vocab_size(), d = cfg_.d_model;
    if (L == 0) throw TensorError("decoder: empty prefix");
    if (L > cfg_.max_len) throw TensorError("decoder: prefix longer than max_len");
    if (memory.rows.rows() != memory.valid.size() || memory.rows.rows() < kMemoryHeader)
        throw TensorError("decoder: malformed memory");
    if (gate && (*gate < 0.0 || *gate > 1.0)) throw std::invalid_argument("decoder: forced gate outside [0, 1]");

    std::vector<std::size_t> ids(prefix.begin(), prefix.end());
    for (auto& id : ids)
        if (id >= V) id = kUnk;  // copied OOV words are fed back as UNK
    const Tensor x = add(embedding(word_, ids), slice_rows(position_, 0, L));
    const Tensor D = decoder_(x, memory.rows, &memory.valid, drop);

    PointerGenOutput out;
    out.p_vocab = softmax(out_(D));
    const std::size_t width = memory.copy.width();
    const std::size_t n_copy = memory.rows.rows() - kMemoryHeader;
    const bool can_copy =
        n_copy > 0 && std::any_of(memory.valid.begin() + kMemoryHeader, memory.valid.end(), [](bool v) { return v; });
    if (!can_copy) {
        out.p_gen = Tensor::full({L}, 1.0);
        out.p_copy = Tensor::zeros({L, std::max<std::size_t>(n_copy, 1)});
        out.p_w = pad_cols(out.p_vocab, width);
        return out;
    }

    const Tensor M = slice_rows(memory.rows, kMemoryHeader, memory.rows.rows());
    const Tensor scores = scale(matmul_nt(copy_q_(D), copy_k_(M)), 1.0 / std::sqrt(static_cast<double>(d)));
    std::vector<bool> mask(L * n_copy);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t j = 0; j < n_copy; ++j) mask[t * n_copy + j] = memory.valid[kMemoryHeader + j];
    out.p_copy = masked_softmax(scores, mask);
    const Tensor context = matmul(out.p_copy, M);

    out.p_gen = gate ? Tensor::full({L}, *gate) : reshape(sigmoid(gate_(concat_cols({D, context, x}))), {L});
    const Tensor keep = add_scalar(neg(out.p_gen), 1.0);
    out.p_w = add(pad_cols(mul_colwise(out.p_vocab, out.p_gen), width),
                  scatter_cols(mul_colwise(out.p_copy, keep), memory.copy.ids, width));
    return out;
}

TeacherForcing teacher_forcing(std::span<const TokenId> gold_tokens, std::span<const std::string> gold_words,
                               const CopySource& copy) {
    if (gold_tokens.size() != gold_words.size()) throw std::invalid_argument("teacher_forcing: length mismatch");
    TeacherForcing tf;
    tf.prefix.push_back(kSos);
    for (std::size_t i = 0; i < gold_tokens.size(); ++i) {
        const std::size_t id = copy.extend(gold_tokens[i], gold_words[i]);
        tf.target.push_back(id);
        tf.prefix.push_back(id);
    }
    tf.target.push_back(kEos);
    return tf;
}

ResponseLoss response_loss(const Tensor& p_w, std::span<const std::size_t> target) {
    if (target.empty()) throw std::invalid_argument("response_loss: empty target");
    if (p_w.rows() != target.size()) throw TensorError("response_loss: step count mismatch");
    ResponseLoss r;
    const Tensor gold = pick_rows(p_w, target);
    for (double p : gold.data()) r.clamped += p < kProbFloor;
    r.loss = neg(mean(log_clamped(gold, kProbFloor)));
    return r;
}

Generation generate(const ResponseDecoder& decoder, const DecoderMemory& memory, const Vocab& vocab,
                    const GenerateOptions& options, Rng* rng) {
    if (options.top_k > 0 && !rng) throw std::invalid_argument("generate: top-k sampling needs an Rng");
    NoGradGuard guard;
    const std::size_t V = decoder.vocab_size();
    Generation g;
    std::vector<std::size_t> prefix{kSos};
    const std::size_t steps = std::min(options.max_len, decoder.config().max_len);
    for (std::size_t step = 0; step < steps; ++step) {
        const auto out = decoder.forward(prefix, memory);
        const std::size_t W = out.p_w.cols();
        std::vector<double> p(out.p_w.data().end() - static_cast<std::ptrdiff_t>(W), out.p_w.data().end());
        for (TokenId banned : {kPad, kUnk, kSos, kCtx}) p[banned] = -1.0;

        std::size_t next;
        if (options.top_k == 0) {
            next = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        } else {
            std::vector<std::size_t> order(W);
            for (std::size_t i = 0; i < W; ++i) order[i] = i;
            const std::size_t k = std::min(options.top_k, W);
            std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                              [&](std::size_t a, std::size_t b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
            std::vector<double> w(k);
            for (std::size_t i = 0; i < k; ++i) w[i] = std::max(p[order[i]], 0.0);
            next = order[rng->categorical(w)];
        }
        if (next == kEos) break;
        g.ids.push_back(next);
        g.words.push_back(next < V ? vocab.token(static_cast<TokenId>(next)) : memory.copy.oov_words.at(next - V));
        prefix.push_back(next);
        if (prefix.size() > decoder.config().max_len) break;
    }
    return g;
}

}  // namespace rd
