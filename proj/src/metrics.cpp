#include "reflectdiffu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace rd {

namespace {

using NGram = std::vector<std::string>;

std::map<NGram, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
    std::map<NGram, std::size_t> out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[NGram(s.begin() + i, s.begin() + i + n)];
    return out;
}

}  // namespace

double bleu_n(std::span<const Sentence> hypotheses, std::span<const Sentence> references, int n) {
    if (hypotheses.size() != references.size()) throw MetricError("bleu_n: hypotheses and references differ in length");
    if (hypotheses.empty()) throw MetricError("bleu_n: empty corpus");
    if (n < 1) throw MetricError("bleu_n: order must be >= 1");

    std::size_t hyp_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        hyp_len += hypotheses[i].size();
        ref_len += references[i].size();
    }
    if (hyp_len == 0) return 0.0;

    double log_p = 0.0;
    for (int k = 1; k <= n; ++k) {
        std::size_t match = 0, total = 0;
        for (std::size_t i = 0; i < hypotheses.size(); ++i) {
            const auto h = ngram_counts(hypotheses[i], static_cast<std::size_t>(k));
            const auto r = ngram_counts(references[i], static_cast<std::size_t>(k));
            for (const auto& [g, c] : h) {
                total += c;
                if (auto it = r.find(g); it != r.end()) match += std::min(c, it->second);
            }
        }
        double p;
        if (match == 0) {
            if (k == 1) return 0.0;
            p = 1.0 / static_cast<double>(total + 1);
        } else {
            p = static_cast<double>(match) / static_cast<double>(total);
        }
        log_p += std::log(p);
    }
    const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return 100.0 * bp * std::exp(log_p / n);
}

double distinct_n(std::span<const Sentence> hypotheses, int n) {
    if (hypotheses.empty()) throw MetricError("distinct_n: empty corpus");
    if (n < 1) throw MetricError("distinct_n: order must be >= 1");
    std::set<NGram> unique;
    std::size_t total = 0;
    for (const auto& s : hypotheses)
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i) {
            unique.emplace(s.begin() + i, s.begin() + i + n);
            ++total;
        }
    if (total == 0) throw MetricError("distinct_n: every hypothesis is shorter than n");
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

double perplexity_from_nll(std::span<const double> token_nll) {
    if (token_nll.empty()) throw MetricError("perplexity: no tokens");
    double s = 0.0;
    for (double v : token_nll) s += v;
    return std::exp(s / static_cast<double>(token_nll.size()));
}

Perplexity perplexity(std::span<const double> gold_probs) {
    constexpr double kFloor = 1e-12;
    std::vector<double> nll;
    nll.reserve(gold_probs.size());
    Perplexity out;
    for (double p : gold_probs) {
        if (p < kFloor) {
            ++out.floored;
            p = kFloor;
        }
        nll.push_back(-std::log(p));
    }
    out.value = perplexity_from_nll(nll);
    return out;
}

double binary_f1(const std::vector<bool>& predicted, const std::vector<bool>& gold) {
    if (predicted.size() != gold.size()) throw MetricError("binary_f1: length mismatch");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        tp += predicted[i] && gold[i];
        fp += predicted[i] && !gold[i];
        fn += !predicted[i] && gold[i];
    }
    if (tp + fp + fn == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

EvalReport text_metrics(std::span<const Sentence> hypotheses, std::span<const Sentence> references) {
    EvalReport r;
    for (int k = 1; k <= 4; ++k) r.bleu[static_cast<std::size_t>(k - 1)] = bleu_n(hypotheses, references, k);
    auto distinct_or_zero = [&](int k) {
        try {
            return distinct_n(hypotheses, k);
        } catch (const MetricError&) {
            return 0.0;  // all responses too short to contain an n-gram
        }
    };
    r.distinct1 = distinct_or_zero(1);
    r.distinct2 = distinct_or_zero(2);
    r.n_samples = hypotheses.size();
    return r;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
    nlohmann::ordered_json j;
    j["B-1"] = r.bleu[0];
    j["B-2"] = r.bleu[1];
    j["B-3"] = r.bleu[2];
    j["B-4"] = r.bleu[3];
    j["D-1"] = r.distinct1;
    j["D-2"] = r.distinct2;
    j["PPL"] = opt(r.ppl);
    j["Acc_emo"] = opt(r.acc_emo);
    j["Acc_Intent"] = opt(r.acc_intent);
    j["n_samples"] = r.n_samples;
    return j;
}

}  // namespace rd
