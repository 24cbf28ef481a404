#pragma once

// Lexicon polarity voting and the polarity-routed emotion experts.

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "reflectdiffu/corpus.hpp"
#include "reflectdiffu/layers.hpp"

namespace rd {

class SentimentLexicon {
public:
    SentimentLexicon() = default;
    SentimentLexicon(std::unordered_map<std::string, double> valence, std::unordered_set<std::string> negations,
                     double t_pos = 0.05, double t_neg = -0.05);

    /// The bundled default lexicon.
    static const SentimentLexicon& builtin();
    /// `word<TAB>valence` lines; '#' starts a comment. Uses the default negation set and thresholds.
    static SentimentLexicon load_tsv(const std::filesystem::path& path);

    /// Sum of valences; a negation word flips the next scored word within
    /// the same sentence.
    double score(std::span<const std::string> tokens) const;
    Polarity sentiment(std::span<const std::string> tokens) const;

    const std::unordered_map<std::string, double>& valences() const { return valence_; }
    const std::unordered_set<std::string>& negations() const { return negations_; }
    double t_pos() const { return t_pos_; }
    double t_neg() const { return t_neg_; }

private:
    std::unordered_map<std::string, double> valence_;
    std::unordered_set<std::string> negations_;
    double t_pos_ = 0.05;
    double t_neg_ = -0.05;
};

const std::unordered_set<std::string>& default_negations();

/// Sentiment of the user-side words of a dialogue's context.
Polarity context_sentiment(const SentimentLexicon& lex, const ContextView& ctx);

struct PolarityCounts {
    std::size_t n_pos = 0, n_neg = 0, n_neu = 0;
    Polarity v = Polarity::neu;
};

/// Batch vote; v is the strict majority class, any tie resolves to neu.
PolarityCounts polarity_vote(std::span<const Polarity> batch);

class EmotionClassifier {
public:
    EmotionClassifier() = default;
    EmotionClassifier(ParameterSet& ps, const std::string& prefix, std::size_t d_model, Rng& rng);

    /// pos -> W_pos E Q, neg -> W_neg E Q, neu -> mean of the two.
    Tensor logits(const Tensor& q, Polarity v) const;
    Tensor classify(const Tensor& q, Polarity v) const { return softmax(logits(q, v)); }

    const Tensor& w_pos() const { return w_pos_; }
    const Tensor& w_neg() const { return w_neg_; }
    const Tensor& e_emo() const { return e_emo_; }

private:
    Tensor e_emo_, w_pos_, w_neg_;
};

/// Supervised NT-Xent over a batch of Q vectors with cosine similarity / tau.
/// For every anchor i and positive j != i with the same label, adds
/// -log(exp(s_ij) / sum_{k != i} exp(s_ik)). Zero when no positive pair exists.
Tensor nt_xent_loss(const std::vector<Tensor>& qs, std::span<const Emotion> labels, double tau = 0.5);

struct EmotionLoss {
    Tensor total;  // ntx + cls
    Tensor ntx;
    Tensor cls;    // mean over the batch of -log p[gold]
    bool clamped = false;  // some p[gold] fell below the 1e-12 floor
};

EmotionLoss emotion_loss(const std::vector<Tensor>& probs, std::span<const Emotion> gold,
                         const std::vector<Tensor>& qs, double tau = 0.5);

}  // namespace rd
