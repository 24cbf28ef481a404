#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "reflectdiffu/metrics.hpp"

using namespace rd;

namespace {

Sentence words(const std::string& s) {
    std::istringstream is(s);
    Sentence out;
    for (std::string w; is >> w;) out.push_back(w);
    return out;
}

std::vector<Sentence> corpus(std::initializer_list<const char*> lines) {
    std::vector<Sentence> out;
    for (const char* l : lines) out.push_back(words(l));
    return out;
}

// Joined n-gram strings as hash keys, independent of the library's std::map counting.
std::string key(const Sentence& s, std::size_t i, std::size_t n) {
    std::string k;
    for (std::size_t j = i; j < i + n; ++j) k += s[j] + '\x1f';
    return k;
}

double bleu_oracle(const std::vector<Sentence>& hyp, const std::vector<Sentence>& ref, int n) {
    double log_sum = 0.0;
    double c = 0, r = 0;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
        c += static_cast<double>(hyp[i].size());
        r += static_cast<double>(ref[i].size());
    }
    for (int k = 1; k <= n; ++k) {
        double m = 0, t = 0;
        for (std::size_t i = 0; i < hyp.size(); ++i) {
            std::unordered_map<std::string, int> rc;
            for (std::size_t j = 0; j + k <= ref[i].size(); ++j) ++rc[key(ref[i], j, k)];
            for (std::size_t j = 0; j + k <= hyp[i].size(); ++j) {
                ++t;
                auto it = rc.find(key(hyp[i], j, k));
                if (it != rc.end() && it->second > 0) {
                    --it->second;
                    ++m;
                }
            }
        }
        if (m == 0 && k == 1) return 0.0;
        log_sum += std::log(m == 0 ? 1.0 / (t + 1) : m / t);
    }
    const double bp = c >= r ? 1.0 : std::exp(1 - r / c);
    return 100.0 * bp * std::exp(log_sum / n);
}

}  // namespace

TEST(Bleu, IdenticalCorpusScoresHundred) {
    const auto c = corpus({"i am so sorry to hear that", "that sounds like a lot of fun"});
    for (int n = 1; n <= 4; ++n) EXPECT_NEAR(bleu_n(c, c, n), 100.0, 1e-9);
}

TEST(Bleu, DisjointVocabularyIsZero) {
    EXPECT_EQ(bleu_n(corpus({"a b c"}), corpus({"x y z"}), 1), 0.0);
}

TEST(Bleu, CatSatCatSlept) {
    EXPECT_NEAR(bleu_n(corpus({"the cat sat"}), corpus({"the cat slept"}), 1), 66.67, 0.01);
    // bigrams: 1 of 2 match -> sqrt(2/3 * 1/2)
    EXPECT_NEAR(bleu_n(corpus({"the cat sat"}), corpus({"the cat slept"}), 2), 100.0 * std::sqrt(1.0 / 3.0), 1e-9);
}

TEST(Bleu, ClippedCountsAndBrevityPenalty) {
    // "the the the" vs "the cat": clipped unigram match 1/3; c=3 >= r=2
    EXPECT_NEAR(bleu_n(corpus({"the the the"}), corpus({"the cat"}), 1), 100.0 / 3.0, 1e-9);
    // short hypothesis: c=1, r=3 -> BP = e^{1-3}
    EXPECT_NEAR(bleu_n(corpus({"the"}), corpus({"the cat sat"}), 1), 100.0 * std::exp(-2.0), 1e-9);
}

TEST(Bleu, SmoothsZeroHigherOrders) {
    // unigrams all match, no shared bigram: p2 = 1/(2+1)
    const double b = bleu_n(corpus({"a b c"}), corpus({"c b a"}), 2);
    EXPECT_NEAR(b, 100.0 * std::sqrt(1.0 / 3.0), 1e-9);
    EXPECT_GT(b, 0.0);
}

TEST(Bleu, Errors) {
    std::vector<Sentence> empty;
    EXPECT_THROW(bleu_n(empty, empty, 1), MetricError);
    EXPECT_THROW(bleu_n(corpus({"a"}), corpus({"a", "b"}), 1), MetricError);
}

TEST(Bleu, MatchesOracleAndIsOrderInvariant) {
    std::mt19937_64 gen(7);
    const std::vector<std::string> pool{"a", "b", "c", "d", "e", "f"};
    std::vector<Sentence> hyp, ref;
    for (int i = 0; i < 40; ++i) {
        Sentence h, r;
        for (std::size_t j = 0, n = 1 + gen() % 8; j < n; ++j) h.push_back(pool[gen() % pool.size()]);
        for (std::size_t j = 0, n = 1 + gen() % 8; j < n; ++j) r.push_back(pool[gen() % pool.size()]);
        hyp.push_back(h);
        ref.push_back(r);
    }
    for (int n = 1; n <= 4; ++n) {
        const double b = bleu_n(hyp, ref, n);
        EXPECT_NEAR(b, bleu_oracle(hyp, ref, n), 1e-9);
        EXPECT_GE(b, 0.0);
        EXPECT_LE(b, 100.0);
    }
    std::vector<std::size_t> idx(hyp.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), gen);
    std::vector<Sentence> h2, r2;
    for (auto i : idx) {
        h2.push_back(hyp[i]);
        r2.push_back(ref[i]);
    }
    EXPECT_NEAR(bleu_n(h2, r2, 4), bleu_n(hyp, ref, 4), 1e-9);
}

TEST(Distinct, Counting) {
    EXPECT_NEAR(distinct_n(corpus({"a a b"}), 1), 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(distinct_n(corpus({"a a b"}), 2), 1.0, 1e-12);
    EXPECT_NEAR(distinct_n(corpus({"ok", "ok", "ok", "ok"}), 1), 0.25, 1e-12);
}

TEST(Distinct, Errors) {
    std::vector<Sentence> empty;
    EXPECT_THROW(distinct_n(empty, 1), MetricError);
    EXPECT_THROW(distinct_n(corpus({"a", "b"}), 2), MetricError);
}

TEST(Distinct, MatchesHashSetOracle) {
    std::mt19937_64 gen(11);
    std::vector<Sentence> hyp;
    for (int i = 0; i < 30; ++i) {
        Sentence s;
        for (std::size_t j = 0, n = gen() % 6; j < n; ++j) s.push_back(std::string(1, static_cast<char>('a' + gen() % 5)));
        hyp.push_back(s);
    }
    for (std::size_t n = 1; n <= 2; ++n) {
        std::unordered_set<std::string> seen;
        double total = 0;
        for (const auto& s : hyp)
            for (std::size_t j = 0; j + n <= s.size(); ++j) {
                seen.insert(key(s, j, n));
                ++total;
            }
        EXPECT_NEAR(distinct_n(hyp, static_cast<int>(n)), static_cast<double>(seen.size()) / total, 1e-12);
    }
}

TEST(Perplexity, AnalyticCases) {
    std::vector<double> uniform(40, 1.0 / 50.0);
    EXPECT_NEAR(perplexity(uniform).value, 50.0, 1e-6);
    std::vector<double> perfect(5, 1.0);
    EXPECT_NEAR(perplexity(perfect).value, 1.0, 1e-12);
    std::vector<double> two{0.5, 0.25};
    EXPECT_NEAR(perplexity(two).value, 2.0 * std::sqrt(2.0), 1e-12);
    std::vector<double> nll{std::log(2.0), std::log(4.0)};
    EXPECT_NEAR(perplexity_from_nll(nll), 2.0 * std::sqrt(2.0), 1e-12);
}

TEST(Perplexity, FloorsZeroProbability) {
    std::vector<double> p{0.0, 1.0};
    const auto r = perplexity(p);
    EXPECT_EQ(r.floored, 1u);
    EXPECT_NEAR(r.value, std::exp(-std::log(1e-12) / 2.0), 1e-3);
    std::vector<double> none;
    EXPECT_THROW(perplexity(none), MetricError);
}

TEST(Accuracy, Counting) {
    std::vector<int> g{1, 2, 3, 4};
    std::vector<int> all = g, none{0, 0, 0, 0}, three{1, 2, 3, 0};
    EXPECT_EQ(accuracy<int>(all, g), 100.0);
    EXPECT_EQ(accuracy<int>(none, g), 0.0);
    EXPECT_EQ(accuracy<int>(three, g), 75.0);
    std::vector<int> short_{1};
    EXPECT_THROW(accuracy<int>(short_, g), MetricError);
}

TEST(Report, JsonKeysAndNulls) {
    const auto c = corpus({"hello there friend"});
    EvalReport r = text_metrics(c, c);
    auto j = to_json(r);
    for (const char* k : {"B-1", "B-2", "B-3", "B-4", "D-1", "D-2", "PPL", "Acc_emo", "Acc_Intent", "n_samples"})
        EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_TRUE(j["PPL"].is_null());
    EXPECT_TRUE(j["Acc_emo"].is_null());
    EXPECT_DOUBLE_EQ(j["B-1"].get<double>(), 100.0);
    EXPECT_EQ(j["n_samples"].get<int>(), 1);
    r.ppl = 3.0;
    EXPECT_DOUBLE_EQ(to_json(r)["PPL"].get<double>(), 3.0);
}

TEST(BinaryF1, Counting) {
    const std::vector<bool> p{true, true, false, false, true}, g{true, false, true, false, true};
    // tp 2, fp 1, fn 1
    EXPECT_NEAR(binary_f1(p, g), 4.0 / 6.0, 1e-12);
    EXPECT_EQ(binary_f1(g, g), 1.0);
    EXPECT_EQ(binary_f1({false, false}, {false, false}), 1.0);
    EXPECT_EQ(binary_f1({false, false}, {true, false}), 0.0);
    EXPECT_THROW(binary_f1({true}, {true, false}), MetricError);
}
