#include "reflectdiffu/intent_twice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rd {

namespace {
constexpr double kProbFloor = 1e-12;

void copy_into(const Tensor& src, const Tensor& dst) {
    auto s = src.data();
    auto d = Tensor(dst).mutable_data();
    std::copy(s.begin(), s.end(), d.begin());
}
}  // namespace

Intent argmax_intent(const Tensor& scores) {
    if (scores.size() != kNumIntents) throw TensorError("argmax_intent: expected 9 scores");
    const auto d = scores.data();
    return static_cast<Intent>(std::max_element(d.begin(), d.end()) - d.begin());
}

IntentHead::IntentHead(ParameterSet& ps, const std::string& prefix, std::size_t d_model, Rng& rng) {
    emb_ = ps.create(prefix + ".emb", {kNumIntents, d_model}, Init::normal(1.0 / std::sqrt(double(d_model))), rng);
    shared_ = Linear(ps, prefix + ".shared", d_model, kNumIntents, rng);
    blend_ = Linear(ps, prefix + ".blend", kNumIntents, d_model, rng, false);
}

IntentDistribution IntentHead::first(const Tensor& q, double alpha) const {
    std::vector<Tensor> sims;
    sims.reserve(kNumIntents);
    for (std::size_t k = 0; k < kNumIntents; ++k) sims.push_back(reshape(cosine_similarity(q, reshape(row(emb_, k), {q.size()})), {1, 1}));
    IntentDistribution out;
    out.p_semantic = softmax(reshape(concat_rows(sims), {kNumIntents}));
    out.p_intent = softmax(shared_(q));
    out.first = add(out.p_semantic, scale(out.p_intent, alpha));
    out.argmax = argmax_intent(out.first);
    return out;
}

IntentHead::Correction IntentHead::correct(Intent reference, const Tensor& intent_first) const {
    const std::size_t id[1] = {index(reference)};
    const Tensor e_ref = reshape(embedding(emb_, id), {emb_.cols()});
    Correction out;
    out.logits = shared_(add(e_ref, blend_(intent_first)));
    out.probs = softmax(out.logits);
    out.argmax = argmax_intent(out.probs);
    return out;
}

// ---------------------------------------------------------------------------

EmuFusion::EmuFusion(ParameterSet& ps, const std::string& prefix, std::size_t d_model, Rng& rng) {
    wq_ = Linear(ps, prefix + ".q", d_model, d_model, rng);
    wk_ = Linear(ps, prefix + ".k", d_model, d_model, rng, false);
    wv_ = Linear(ps, prefix + ".v", d_model, d_model, rng);
}

Tensor EmuFusion::operator()(const Tensor& emo_pos, const Tensor& emo_neg, const Tensor& H,
                             const std::vector<bool>* h_valid) const {
    const std::size_t d = H.cols();
    const Tensor queries = concat_rows({reshape(emo_pos, {1, d}), H});
    const Tensor keys = concat_rows({reshape(emo_neg, {1, d}), H});
    std::vector<bool> valid(H.rows() + 1, true);
    if (h_valid) {
        if (h_valid->size() != H.rows()) throw TensorError("emu_fuse: mask length mismatch");
        std::copy(h_valid->begin(), h_valid->end(), valid.begin() + 1);
    }
    const auto mask = attention_mask(queries.rows(), keys.rows(), &valid, false);
    const Tensor out = scaled_dot_attention(wq_(queries), wk_(keys), wv_(keys), mask).output;
    return mean_rows(out, &valid);
}

// ---------------------------------------------------------------------------

PolicyNet::PolicyNet(ParameterSet& ps, const std::string& prefix, std::size_t d_model, Rng& rng) {
    l1_ = Linear(ps, prefix + ".l1", d_model, d_model, rng);
    l2_ = Linear(ps, prefix + ".l2", d_model, 3, rng);
    mu1_.weight = ps.create(prefix + ".mu.l1.weight", {d_model, d_model}, Init::zeros(), rng, false);
    mu1_.bias = ps.create(prefix + ".mu.l1.bias", {d_model}, Init::zeros(), rng, false);
    mu2_.weight = ps.create(prefix + ".mu.l2.weight", {3, d_model}, Init::zeros(), rng, false);
    mu2_.bias = ps.create(prefix + ".mu.l2.bias", {3}, Init::zeros(), rng, false);
    refresh_behaviour();
}

Tensor PolicyNet::probs(const Tensor& emo_fused) const { return softmax(l2_(tanh(l1_(emo_fused)))); }

std::array<double, 3> PolicyNet::behaviour_probs(const Tensor& emo_fused) const {
    NoGradGuard guard;
    const Tensor p = softmax(mu2_(tanh(mu1_(emo_fused.detach()))));
    return {p.at(0), p.at(1), p.at(2)};
}

void PolicyNet::refresh_behaviour() {
    copy_into(l1_.weight, mu1_.weight);
    copy_into(l1_.bias, mu1_.bias);
    copy_into(l2_.weight, mu2_.weight);
    copy_into(l2_.bias, mu2_.bias);
}

ActionSample sample_action(const Tensor& pi, std::span<const double> mu, Rng& rng, double clip_lo, double clip_hi) {
    if (pi.size() != 3 || mu.size() != 3) throw TensorError("sample_action: expected 3 action probabilities");
    ActionSample s;
    s.action = rng.categorical(mu);
    s.mu_prob = mu[s.action];
    const double p = pi.at(s.action);
    s.ratio = p == s.mu_prob ? 1.0 : std::clamp(p / std::max(s.mu_prob, kProbFloor), clip_lo, clip_hi);
    return s;
}

double reward(Emotion emotion, std::size_t action, const Tensor& emo_pos, const Tensor& emo_neg,
              const Tensor& intent_embeddings, const ReferIntents& refs) {
    if (action >= 3) throw std::out_of_range("reward: action must be 0, 1 or 2");
    const Tensor& state = polarity(emotion) == Polarity::pos ? emo_pos : emo_neg;
    const std::size_t k = index(refs[action]);
    const std::size_t d = intent_embeddings.cols();
    if (state.size() != d) throw TensorError("reward: state/embedding width mismatch");
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) z += state.data()[c] * intent_embeddings.at(k, c);
    // the logistic saturates to exactly 0 or 1 in double; keep R strictly inside (0, 1)
    constexpr double lo = std::numeric_limits<double>::min();
    return std::clamp(1.0 / (1.0 + std::exp(-z)), lo, std::nextafter(1.0, 0.0));
}

Tensor policy_loss(const std::vector<PolicyStep>& steps) {
    if (steps.empty()) throw std::invalid_argument("policy_loss: empty trajectory");
    double baseline = 0.0;
    for (const auto& s : steps) baseline += s.reward;
    baseline /= static_cast<double>(steps.size());
    std::vector<Tensor> terms;
    for (const auto& s : steps) {
        const double w = s.ratio * (s.reward - baseline);
        terms.push_back(scale(log_clamped(pick(s.pi, s.action), kProbFloor), -w));
    }
    return mean(concat_rows(terms));
}

Tensor intent_loss(const Tensor& probs, Intent gold) {
    return neg(log_clamped(pick(probs, index(gold)), kProbFloor));
}

}  // namespace rd
