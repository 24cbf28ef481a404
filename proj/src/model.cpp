#include "reflectdiffu/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rd {

namespace {

constexpr double kProbFloor = 1e-12;

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Tensor mean_of(const std::vector<Tensor>& terms) {
    return terms.empty() ? Tensor::scalar(0.0) : mean(concat_rows(terms));
}

ModelConfig checked(ModelConfig cfg, const Vocab& vocab) {
    if (cfg.vocab_size == 0) cfg.vocab_size = vocab.size();
    if (cfg.vocab_size != vocab.size()) throw std::invalid_argument("ReflectDiffu: vocab_size differs from the vocabulary");
    if (cfg.d_model == 0 || cfg.heads == 0 || cfg.d_model % cfg.heads != 0)
        throw std::invalid_argument("ReflectDiffu: d_model must be a positive multiple of heads");
    if (cfg.max_len < 2) throw std::invalid_argument("ReflectDiffu: max_len must be at least 2");
    if (cfg.diffusion_state_t == 0 || cfg.diffusion_state_t > cfg.diffusion_T)
        throw std::invalid_argument("ReflectDiffu: diffusion_state_t must lie in [1, T]");
    return cfg;
}

}  // namespace

NonFiniteLoss::NonFiniteLoss(std::string component, double value)
    : std::runtime_error("non-finite loss component " + component + " (" + std::to_string(value) + ")"),
      component_(std::move(component)) {}

Tensor joint_loss(const Tensor& em, const Tensor& twice, const Tensor& res, const LossWeights& w) {
    for (const auto& [name, t] : {std::pair{"L_em", &em}, {"L_twice", &twice}, {"L_res", &res}})
        if (!std::isfinite(t->item())) throw NonFiniteLoss(name, t->item());
    if (w.delta < 0.0 || w.zeta < 0.0 || w.eta < 0.0) throw std::invalid_argument("joint_loss: negative weight");
    return add(add(scale(em, w.delta), scale(twice, w.zeta)), scale(res, w.eta));
}

void require_labels(const Dialogue& d) {
    if (!d.emotion()) throw std::invalid_argument("dialogue " + d.id + ": no emotion label");
    if (!d.intent()) throw std::invalid_argument("dialogue " + d.id + ": no intent label on the target turn");
}

Tensor StopGradientTape::hold(const Tensor& x) {
    if (mode_ == Mode::record) {
        tensors_.emplace_back(x.data().begin(), x.data().end());
        return x.detach();
    }
    if (next_tensor_ >= tensors_.size() || tensors_[next_tensor_].size() != x.size())
        throw std::logic_error("StopGradientTape: replay diverged from the recording");
    return Tensor::from(x.shape(), tensors_[next_tensor_++]);
}

double StopGradientTape::hold(double v) {
    if (mode_ == Mode::record) {
        scalars_.push_back(v);
        return v;
    }
    if (next_scalar_ >= scalars_.size()) throw std::logic_error("StopGradientTape: replay diverged from the recording");
    return scalars_[next_scalar_++];
}

void StopGradientTape::replay() {
    mode_ = Mode::replay;
    next_tensor_ = next_scalar_ = 0;
}

ReflectDiffu::ReflectDiffu(const ModelConfig& config, Vocab vocab)
    : cfg_(checked(config, vocab)),
      vocab_(std::move(vocab)),
      lexicon_(&SentimentLexicon::builtin()),
      schedule_(cfg_.diffusion_T, cfg_.beta_start, cfg_.beta_end, cfg_.variance_form) {
    Rng rng(cfg_.seed);
    const std::size_t d = cfg_.d_model;
    era_ = Era(ps_, "era", cfg_.encoder(), rng);
    encoder_ = ContagionEncoder(ps_, "enc", cfg_.encoder(), rng);
    emotion_ = EmotionClassifier(ps_, "emotion", d, rng);
    intent_ = IntentHead(ps_, "intent", d, rng);
    den_pos_ = Denoiser(ps_, "den_pos", d, kNumIntents, rng, cfg_.denoiser_hidden, cfg_.timestep_dim);
    den_neg_ = Denoiser(ps_, "den_neg", d, kNumIntents, rng, cfg_.denoiser_hidden, cfg_.timestep_dim);
    emu_ = EmuFusion(ps_, "emu", d, rng);
    policy_ = PolicyNet(ps_, "policy", d, rng);
    decoder_ = ResponseDecoder(ps_, "dec", cfg_.decoder(), encoder_.word_table(), encoder_.position_table(), rng);
}

std::uint64_t ReflectDiffu::dialogue_seed(const Dialogue& d) const { return Rng::mix(cfg_.seed ^ fnv1a(d.id)); }

ReflectDiffu::Encoded ReflectDiffu::encode(const Dialogue& d, bool gold_tags, Rng& noise,
                                           const DropoutCtx& drop) const {
    Encoded e;
    e.ctx = flatten_context(d, cfg_.max_len - 1);
    if (e.ctx.tokens.empty()) throw std::invalid_argument("dialogue " + d.id + ": empty context");
    const ReasonRepr rep = era_.represent(e.ctx, drop);
    e.h_tilde = rep.h_tilde;
    if (gold_tags) {
        e.tags = e.ctx.tags;
    } else {
        NoGradGuard guard;
        e.tags = era_.decode(rep.h_tilde);
        for (std::size_t i = 0; i < e.tags.size(); ++i)
            if (e.ctx.speakers[i] == Speaker::bot) e.tags[i] = ReasonTag::noem;
    }

    const std::vector<bool> valid = non_pad(e.ctx.tokens);
    e.H = encoder_.encode(encoder_.embed(e.ctx.tokens, e.tags), &valid, drop);
    e.h_valid.assign(1, true);
    e.h_valid.insert(e.h_valid.end(), valid.begin(), valid.end());
    e.q = encoder_.aggregate(e.H, e.h_tilde, &e.h_valid, &valid);
    e.sentiment = context_sentiment(*lexicon_, e.ctx);
    e.intent = intent_.first(e.q, cfg_.intent_alpha);

    const std::size_t t = cfg_.diffusion_state_t;
    const auto start = forward_diffuse(e.q, t, schedule_, noise);
    e.emo_pos = reverse_chain(start.q_t, t, e.intent.first, den_pos_.predictor(), schedule_);
    e.emo_neg = reverse_chain(start.q_t, t, e.intent.first, den_neg_.predictor(), schedule_);
    e.emo_fused = emu_(e.emo_pos, e.emo_neg, e.H, &e.h_valid);
    return e;
}

BatchLosses ReflectDiffu::batch_loss(std::span<const Dialogue* const> batch, const LossWeights& w, Rng& rng,
                                     bool training, StopGradientTape* tape) const {
    if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
    const DropoutCtx drop{training ? cfg_.dropout : 0.0, training ? &rng : nullptr};

    std::vector<Encoded> enc;
    std::vector<Polarity> sentiments;
    std::vector<Emotion> emotions;
    enc.reserve(batch.size());
    for (const Dialogue* d : batch) {
        require_labels(*d);
        enc.push_back(encode(*d, true, rng, drop));
        sentiments.push_back(enc.back().sentiment);
        emotions.push_back(*d->emotion());
    }
    const Polarity v = polarity_vote(sentiments).v;
    auto hold = [tape](const auto& x) { return tape ? tape->hold(x) : x; };

    BatchLosses out;
    std::vector<Tensor> probs, qs, era_terms, prior_terms, intent_terms, res_terms;
    std::vector<Tensor> pos_q, pos_c, neg_q, neg_c;
    std::vector<PolicyStep> steps;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Dialogue& d = *batch[i];
        const Encoded& e = enc[i];
        const Intent gold_intent = *d.intent();
        const Emotion gold_emotion = emotions[i];

        qs.push_back(e.q);
        probs.push_back(emotion_.classify(e.q, v));
        era_terms.push_back(era_.crf_loss(e.h_tilde, e.ctx.tags));
        prior_terms.push_back(intent_loss(e.intent.p_intent, gold_intent));

        // Denoisers learn on frozen targets.
        auto& dq = polarity(gold_emotion) == Polarity::pos ? pos_q : neg_q;
        auto& dc = polarity(gold_emotion) == Polarity::pos ? pos_c : neg_c;
        dq.push_back(tape ? tape->hold(e.q) : e.q.detach());
        dc.push_back(tape ? tape->hold(e.intent.first) : e.intent.first.detach());

        const ReferIntents refs = lookup_refer_intents(gold_emotion);
        const Tensor pi = policy_.probs(e.emo_fused);
        const auto mu = policy_.behaviour_probs(e.emo_fused);
        const auto act = sample_action(pi, mu, rng, cfg_.ratio_clip_lo, cfg_.ratio_clip_hi);
        const auto action = static_cast<std::size_t>(hold(static_cast<double>(act.action)));
        const double ratio = hold(act.ratio);
        const double r = hold(reward(gold_emotion, action, e.emo_pos, e.emo_neg, intent_.embeddings(), refs));
        steps.push_back({pi, action, ratio, r});
        out.mean_reward += r / static_cast<double>(batch.size());

        intent_terms.push_back(intent_loss(intent_.correct(refs[action], e.intent.first).probs, gold_intent));

        const Turn& target = d.target_response();
        const std::size_t n = std::min(target.tokens.size(), cfg_.max_len - 1);
        const DecoderMemory memory = make_memory(e.emo_fused, e.H, e.ctx.tokens, e.ctx.words, vocab_.size());
        const auto tf = teacher_forcing(std::span(target.tokens).first(n), std::span(target.words).first(n), memory.copy);
        const auto rl = response_loss(decoder_.forward(tf.prefix, memory, drop).p_w, tf.target);
        res_terms.push_back(rl.loss);
        out.clamped += rl.clamped;
    }

    const EmotionLoss em = emotion_loss(probs, emotions, qs, cfg_.tau);
    out.clamped += em.clamped;
    out.em = em.total;
    out.kl_pos = denoiser_loss(den_pos_.predictor(), pos_q, pos_c, schedule_, rng);
    out.kl_neg = denoiser_loss(den_neg_.predictor(), neg_q, neg_c, schedule_, rng);
    out.intent = mean_of(intent_terms);
    out.twice = twice_loss(out.kl_pos, out.kl_neg, out.intent);
    out.res = mean_of(res_terms);
    out.era = mean_of(era_terms);
    out.prior = mean_of(prior_terms);
    out.policy = policy_loss(steps);
    for (const auto& [name, t] : {std::pair{"L_era", &out.era}, {"L_prior", &out.prior}, {"L_policy", &out.policy}})
        if (!std::isfinite(t->item())) throw NonFiniteLoss(name, t->item());
    out.total = add(joint_loss(out.em, out.twice, out.res, w), add(add(out.era, out.prior), out.policy));
    return out;
}

Prediction ReflectDiffu::predict(const Dialogue& d, const GenerateOptions& options, Rng* sampler) const {
    NoGradGuard guard;
    Rng noise(dialogue_seed(d));
    const Encoded e = encode(d, false, noise, {});
    Prediction p;
    p.sentiment = e.sentiment;
    p.context_tags = e.tags;
    const Polarity one[1] = {e.sentiment};
    const Tensor probs = emotion_.classify(e.q, polarity_vote(one).v);
    const auto pd = probs.data();
    p.emotion = static_cast<Emotion>(std::max_element(pd.begin(), pd.end()) - pd.begin());
    p.intent_first = e.intent.argmax;

    const ReferIntents refs = lookup_refer_intents(p.emotion);
    const Tensor pi = policy_.probs(e.emo_fused);
    const auto pid = pi.data();
    p.reference = refs[static_cast<std::size_t>(std::max_element(pid.begin(), pid.end()) - pid.begin())];
    p.intent_twice = intent_.correct(p.reference, e.intent.first).argmax;

    const DecoderMemory memory = make_memory(e.emo_fused, e.H, e.ctx.tokens, e.ctx.words, vocab_.size());
    GenerateOptions opt = options;
    opt.max_len = std::min(opt.max_len, cfg_.max_response_len);
    p.response = generate(decoder_, memory, vocab_, opt, sampler);
    return p;
}

std::vector<double> ReflectDiffu::response_nll(const Dialogue& d) const {
    NoGradGuard guard;
    Rng noise(dialogue_seed(d));
    const Encoded e = encode(d, false, noise, {});
    const Turn& target = d.target_response();
    const std::size_t n = std::min(target.tokens.size(), cfg_.max_len - 1);
    const DecoderMemory memory = make_memory(e.emo_fused, e.H, e.ctx.tokens, e.ctx.words, vocab_.size());
    const auto tf = teacher_forcing(std::span(target.tokens).first(n), std::span(target.words).first(n), memory.copy);
    const Tensor p = pick_rows(decoder_.forward(tf.prefix, memory).p_w, tf.target);
    std::vector<double> nll;
    for (double x : p.data()) nll.push_back(-std::log(std::max(x, kProbFloor)));
    return nll;
}

}  // namespace rd
