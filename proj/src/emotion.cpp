#include "reflectdiffu/emotion.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace rd {

namespace {

const std::vector<std::pair<const char*, double>> kBuiltinLexicon{
    {"accident", -0.5}, {"afraid", -0.6}, {"alone", -0.4}, {"amazing", 0.8}, {"angry", -0.7},
    {"annoyed", -0.5}, {"anticipating", 0.3}, {"anxious", -0.5}, {"apprehensive", -0.4}, {"ashamed", -0.6},
    {"awesome", 0.8}, {"awful", -0.8}, {"bad", -0.6}, {"beautiful", 0.7}, {"best", 0.7}, {"boring", -0.4},
    {"brilliant", 0.7}, {"broke", -0.4}, {"broken", -0.5}, {"calm", 0.3}, {"caring", 0.6},
    {"celebrate", 0.6}, {"cheerful", 0.7}, {"comfortable", 0.4}, {"confident", 0.6},
    {"congratulations", 0.7}, {"content", 0.5}, {"cool", 0.4}, {"crash", -0.5}, {"cried", -0.5},
    {"cry", -0.5}, {"damn", -0.4}, {"dead", -0.7}, {"death", -0.7}, {"delighted", 0.8}, {"depressed", -0.8},
    {"devastated", -0.9}, {"died", -0.7}, {"disappointed", -0.6}, {"disgusted", -0.7}, {"embarrassed", -0.5},
    {"enjoy", 0.6}, {"enjoyed", 0.6}, {"excellent", 0.8}, {"excited", 0.7}, {"fail", -0.6}, {"failed", -0.6},
    {"faithful", 0.5}, {"fantastic", 0.8}, {"fear", -0.6}, {"fortunate", 0.6}, {"frustrated", -0.6},
    {"fun", 0.6}, {"furious", -0.8}, {"glad", 0.6}, {"good", 0.5}, {"grateful", 0.7}, {"great", 0.7},
    {"guilty", -0.6}, {"happy", 0.7}, {"hate", -0.8}, {"hopeful", 0.6}, {"horrible", -0.8},
    {"impressed", 0.6}, {"jealous", -0.5}, {"joyful", 0.8}, {"kind", 0.5}, {"laugh", 0.5}, {"like", 0.3},
    {"lonely", -0.6}, {"lose", -0.4}, {"lost", -0.4}, {"love", 0.8}, {"loved", 0.7}, {"lucky", 0.6},
    {"mad", -0.6}, {"miserable", -0.8}, {"nervous", -0.4}, {"nice", 0.5}, {"nostalgic", 0.2}, {"pain", -0.6},
    {"panic", -0.6}, {"peaceful", 0.5}, {"perfect", 0.7}, {"pleased", 0.6}, {"positive", 0.5},
    {"prepared", 0.4}, {"problem", -0.3}, {"proud", 0.6}, {"regret", -0.5}, {"relieved", 0.5},
    {"rude", -0.5}, {"sad", -0.6}, {"safe", 0.4}, {"scared", -0.6}, {"sentimental", -0.1}, {"shame", -0.6},
    {"sick", -0.5}, {"smile", 0.5}, {"stress", -0.5}, {"stressed", -0.6}, {"stupid", -0.5}, {"success", 0.7},
    {"surprised", 0.3}, {"sweet", 0.5}, {"terrible", -0.8}, {"terrified", -0.8}, {"thankful", 0.7},
    {"thanks", 0.4}, {"thrilled", 0.8}, {"tired", -0.3}, {"trouble", -0.4}, {"trusting", 0.5},
    {"ugly", -0.5}, {"unfortunately", -0.5}, {"unhappy", -0.6}, {"upset", -0.6}, {"win", 0.6}, {"won", 0.6},
    {"wonderful", 0.8}, {"worried", -0.5}, {"worry", -0.4}, {"worse", -0.5}, {"worst", -0.8}, {"yay", 0.6},
};

constexpr double kProbFloor = 1e-12;

bool sentence_end(const std::string& w) { return w == "." || w == "!" || w == "?"; }

}  // namespace

const std::unordered_set<std::string>& default_negations() {
    static const std::unordered_set<std::string> words{"not", "no", "never", "none", "nobody", "without"};
    return words;
}

SentimentLexicon::SentimentLexicon(std::unordered_map<std::string, double> valence,
                                   std::unordered_set<std::string> negations, double t_pos, double t_neg)
    : valence_(std::move(valence)), negations_(std::move(negations)), t_pos_(t_pos), t_neg_(t_neg) {
    if (!(t_neg_ < 0.0 && 0.0 < t_pos_)) throw std::invalid_argument("lexicon thresholds must satisfy t_neg < 0 < t_pos");
    for (const auto& [w, v] : valence_)
        if (!(v >= -1.0 && v <= 1.0)) throw std::invalid_argument("lexicon valence out of [-1, 1] for " + w);
}

const SentimentLexicon& SentimentLexicon::builtin() {
    static const SentimentLexicon lex = [] {
        std::unordered_map<std::string, double> v;
        for (const auto& [w, s] : kBuiltinLexicon) v.emplace(w, s);
        return SentimentLexicon(std::move(v), default_negations());
    }();
    return lex;
}

SentimentLexicon SentimentLexicon::load_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open lexicon: " + path.string());
    std::unordered_map<std::string, double> v;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("lexicon line " + std::to_string(line_no) + ": expected word<TAB>valence");
        try {
            v[line.substr(0, tab)] = std::stod(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw std::runtime_error("lexicon line " + std::to_string(line_no) + ": bad valence");
        }
    }
    return SentimentLexicon(std::move(v), default_negations());
}

double SentimentLexicon::score(std::span<const std::string> tokens) const {
    double total = 0.0;
    bool negate = false;
    for (const auto& w : tokens) {
        if (sentence_end(w)) {
            negate = false;
            continue;
        }
        if (negations_.count(w)) {
            negate = true;
            continue;
        }
        auto it = valence_.find(w);
        if (it == valence_.end()) continue;
        total += negate ? -it->second : it->second;
        negate = false;
    }
    return total;
}

Polarity SentimentLexicon::sentiment(std::span<const std::string> tokens) const {
    const double s = score(tokens);
    if (s > t_pos_) return Polarity::pos;
    if (s < t_neg_) return Polarity::neg;
    return Polarity::neu;
}

Polarity context_sentiment(const SentimentLexicon& lex, const ContextView& ctx) {
    std::vector<std::string> words;
    for (std::size_t i = 0; i < ctx.words.size(); ++i)
        if (ctx.speakers[i] == Speaker::user) words.push_back(ctx.words[i]);
    return lex.sentiment(words);
}

PolarityCounts polarity_vote(std::span<const Polarity> batch) {
    if (batch.empty()) throw std::invalid_argument("polarity_vote: empty batch");
    PolarityCounts c;
    for (Polarity p : batch) {
        if (p == Polarity::pos) ++c.n_pos;
        else if (p == Polarity::neg) ++c.n_neg;
        else ++c.n_neu;
    }
    if (c.n_pos > c.n_neg && c.n_pos > c.n_neu) c.v = Polarity::pos;
    else if (c.n_neg > c.n_pos && c.n_neg > c.n_neu) c.v = Polarity::neg;
    else c.v = Polarity::neu;
    return c;
}

// ---------------------------------------------------------------------------

EmotionClassifier::EmotionClassifier(ParameterSet& ps, const std::string& prefix, std::size_t d_model, Rng& rng) {
    e_emo_ = ps.create(prefix + ".e_emo", {d_model, d_model}, Init::xavier(), rng);
    w_pos_ = ps.create(prefix + ".w_pos", {kNumEmotions, d_model}, Init::xavier(), rng);
    w_neg_ = ps.create(prefix + ".w_neg", {kNumEmotions, d_model}, Init::xavier(), rng);
}

Tensor EmotionClassifier::logits(const Tensor& q, Polarity v) const {
    const Tensor z = linear(q, e_emo_, Tensor());
    switch (v) {
        case Polarity::pos: return linear(z, w_pos_, Tensor());
        case Polarity::neg: return linear(z, w_neg_, Tensor());
        case Polarity::neu: return scale(add(linear(z, w_pos_, Tensor()), linear(z, w_neg_, Tensor())), 0.5);
    }
    throw std::invalid_argument("EmotionClassifier: bad polarity");
}

// ---------------------------------------------------------------------------

Tensor nt_xent_loss(const std::vector<Tensor>& qs, std::span<const Emotion> labels, double tau) {
    if (qs.size() != labels.size()) throw std::invalid_argument("nt_xent_loss: label count mismatch");
    if (qs.size() < 2) throw std::invalid_argument("nt_xent_loss: batch must hold at least two samples");
    if (!(tau > 0.0)) throw std::invalid_argument("nt_xent_loss: temperature must be positive");
    const std::size_t B = qs.size();
    bool any_positive = false;
    for (std::size_t i = 0; i < B && !any_positive; ++i)
        for (std::size_t j = 0; j < B; ++j) any_positive = any_positive || (i != j && labels[i] == labels[j]);
    if (!any_positive) return Tensor::scalar(0.0);

    std::vector<Tensor> rows;
    rows.reserve(B);
    const Tensor one = Tensor::scalar(1.0);
    for (const auto& q : qs) rows.push_back(scale_by(q, div(one, sqrt(add_scalar(dot(q, q), 1e-12)))));
    const Tensor n = concat_rows(rows);
    const Tensor s = scale(matmul_nt(n, n), 1.0 / tau);
    std::vector<bool> mask(B * B, true);
    for (std::size_t i = 0; i < B; ++i) mask[i * B + i] = false;
    const Tensor p = masked_softmax(s, mask);
    std::vector<Tensor> terms;
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < B; ++j)
            if (i != j && labels[i] == labels[j]) terms.push_back(log_clamped(pick(p, i * B + j), kProbFloor));
    return neg(sum(concat_rows(terms)));
}

EmotionLoss emotion_loss(const std::vector<Tensor>& probs, std::span<const Emotion> gold,
                         const std::vector<Tensor>& qs, double tau) {
    if (probs.empty() || probs.size() != gold.size()) throw std::invalid_argument("emotion_loss: batch mismatch");
    EmotionLoss out;
    std::vector<Tensor> nll;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const Tensor pg = pick(probs[i], index(gold[i]));
        if (pg.item() < kProbFloor) out.clamped = true;
        nll.push_back(neg(log_clamped(pg, kProbFloor)));
    }
    out.cls = mean(concat_rows(nll));
    out.ntx = qs.size() >= 2 ? nt_xent_loss(qs, gold, tau) : Tensor::scalar(0.0);
    out.total = add(out.ntx, out.cls);
    return out;
}

}  // namespace rd
