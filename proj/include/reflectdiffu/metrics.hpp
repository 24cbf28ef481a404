#pragma once

// Automatic evaluation metrics. Sentences are pre-tokenized word lists.

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace rd {

using Sentence = std::vector<std::string>;

class MetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Corpus BLEU up to order n (cumulative, uniform weights), in percent.
/// Orders >= 2 with zero matches are smoothed as (0+1)/(total+1).
double bleu_n(std::span<const Sentence> hypotheses, std::span<const Sentence> references, int n);

/// Unique / total n-grams over the whole hypothesis set.
double distinct_n(std::span<const Sentence> hypotheses, int n);

struct Perplexity {
    double value = 0.0;
    std::size_t floored = 0;  // tokens whose probability hit the floor
};

/// exp of the mean negative log-likelihood over all gold tokens.
double perplexity_from_nll(std::span<const double> token_nll);
/// Same from per-token gold probabilities; zeros are floored at 1e-12.
Perplexity perplexity(std::span<const double> gold_probs);

template <class T>
double accuracy(std::span<const T> predictions, std::span<const T> golds) {
    if (predictions.size() != golds.size()) throw MetricError("accuracy: length mismatch");
    if (predictions.empty()) throw MetricError("accuracy: empty input");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) hit += predictions[i] == golds[i];
    return 100.0 * static_cast<double>(hit) / static_cast<double>(golds.size());
}

/// F1 of the positive class over aligned binary labels; 1 when neither side has a positive.
double binary_f1(const std::vector<bool>& predicted, const std::vector<bool>& gold);

struct EvalReport {
    std::array<double, 4> bleu{};
    double distinct1 = 0.0, distinct2 = 0.0;
    std::optional<double> ppl, acc_emo, acc_intent;  // absent in model-free mode
    std::size_t n_samples = 0;
};

/// BLEU and distinct fields of a report.
EvalReport text_metrics(std::span<const Sentence> hypotheses, std::span<const Sentence> references);

nlohmann::ordered_json to_json(const EvalReport& r);

}  // namespace rd
