#include <gtest/gtest.h>

#include <cmath>

#include "reflectdiffu/emotion.hpp"
#include "reflectdiffu/gradcheck.hpp"

using namespace rd;

namespace {

std::vector<std::string> words(std::initializer_list<const char*> ws) { return {ws.begin(), ws.end()}; }

Tensor random_vector(std::size_t n, Rng& rng, bool grad = true) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return Tensor::from({n}, v, grad);
}

double cosine(const Tensor& a, const Tensor& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a.at(i) * b.at(i);
        aa += a.at(i) * a.at(i);
        bb += b.at(i) * b.at(i);
    }
    return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST(Lexicon, SentimentExamples) {
    const auto& lex = SentimentLexicon::builtin();
    EXPECT_EQ(lex.sentiment(words({"great"})), Polarity::pos);
    EXPECT_EQ(lex.sentiment(words({"not", "great"})), Polarity::neg);
    EXPECT_EQ(lex.sentiment(std::vector<std::string>{}), Polarity::neu);
    EXPECT_EQ(lex.sentiment(words({"the", "table"})), Polarity::neu);
    // Negation scope ends at the sentence boundary.
    EXPECT_EQ(lex.sentiment(words({"not", ".", "great"})), Polarity::pos);
}

TEST(Lexicon, CoversEveryEmotionWithMatchingPolarity) {
    const auto& lex = SentimentLexicon::builtin();
    EXPECT_GE(lex.valences().size(), 110u);
    EXPECT_EQ(lex.negations().size(), 6u);
    EXPECT_LT(lex.t_neg(), 0.0);
    EXPECT_GT(lex.t_pos(), 0.0);
    for (Emotion e : all_emotions()) {
        const std::vector<std::string> w{std::string(to_string(e))};
        EXPECT_EQ(lex.sentiment(w), polarity(e)) << to_string(e);
    }
    for (const auto& [w, v] : lex.valences()) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Lexicon, BundledFileMatchesBuiltin) {
    const auto file = SentimentLexicon::load_tsv(std::string(RD_RESOURCE_DIR) + "/lexicon.tsv");
    EXPECT_EQ(file.valences(), SentimentLexicon::builtin().valences());
}

TEST(Lexicon, RejectsBadThresholds) {
    EXPECT_THROW(SentimentLexicon({}, {}, -0.1, -0.2), std::invalid_argument);
    EXPECT_THROW(SentimentLexicon({{"x", 1.5}}, {}), std::invalid_argument);
}

TEST(Vote, Examples) {
    const std::vector<Polarity> a{Polarity::pos, Polarity::pos, Polarity::neg};
    EXPECT_EQ(polarity_vote(a).v, Polarity::pos);
    const std::vector<Polarity> b{Polarity::pos, Polarity::neg};
    EXPECT_EQ(polarity_vote(b).v, Polarity::neu);
    EXPECT_THROW(polarity_vote(std::vector<Polarity>{}), std::invalid_argument);
}

TEST(Vote, RandomBatchMatchesTally) {
    Rng rng(4);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<Polarity> batch(32);
        std::size_t counts[3] = {0, 0, 0};
        for (auto& p : batch) {
            p = static_cast<Polarity>(rng.below(3));
            ++counts[static_cast<std::size_t>(p)];
        }
        const auto c = polarity_vote(batch);
        EXPECT_EQ(c.n_pos, counts[0]);
        EXPECT_EQ(c.n_neg, counts[1]);
        EXPECT_EQ(c.n_neu, counts[2]);
        EXPECT_EQ(c.n_pos + c.n_neg + c.n_neu, 32u);
        const std::size_t best = std::max({counts[0], counts[1], counts[2]});
        const int winners = (counts[0] == best) + (counts[1] == best) + (counts[2] == best);
        Polarity expect = Polarity::neu;
        if (winners == 1) expect = counts[0] == best ? Polarity::pos : counts[1] == best ? Polarity::neg : Polarity::neu;
        EXPECT_EQ(c.v, expect);
    }
}

TEST(Classifier, RoutingContract) {
    ParameterSet ps;
    Rng rng(1);
    EmotionClassifier clf(ps, "emo", 8, rng);
    const Tensor q = random_vector(8, rng, false);
    const Tensor before_pos = clf.classify(q, Polarity::pos);
    const Tensor before_neg = clf.classify(q, Polarity::neg);
    auto perturb = [&](const Tensor& w) {
        for (double& x : Tensor(w).mutable_data()) x += rng.normal();
    };
    perturb(clf.w_neg());
    const Tensor after_pos = clf.classify(q, Polarity::pos);
    for (std::size_t i = 0; i < kNumEmotions; ++i) EXPECT_EQ(before_pos.at(i), after_pos.at(i));
    perturb(clf.w_pos());
    const Tensor after_neg = clf.classify(q, Polarity::neg);
    EXPECT_NE(before_neg.at(0), after_neg.at(0));  // W_neg was perturbed earlier
    const Tensor neg2 = clf.classify(q, Polarity::neg);
    perturb(clf.w_pos());
    const Tensor neg3 = clf.classify(q, Polarity::neg);
    for (std::size_t i = 0; i < kNumEmotions; ++i) EXPECT_EQ(neg2.at(i), neg3.at(i));
    for (Polarity v : {Polarity::pos, Polarity::neg, Polarity::neu}) {
        const Tensor p = clf.classify(q, v);
        double s = 0.0;
        for (double x : p.data()) s += x;
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Classifier, NeutralWithEqualExpertsMatchesEither) {
    ParameterSet ps;
    Rng rng(2);
    EmotionClassifier clf(ps, "emo", 8, rng);
    auto src = clf.w_pos().data();
    auto dst = Tensor(clf.w_neg()).mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
    const Tensor q = random_vector(8, rng, false);
    const Tensor neu = clf.classify(q, Polarity::neu);
    const Tensor pos = clf.classify(q, Polarity::pos);
    for (std::size_t i = 0; i < kNumEmotions; ++i) EXPECT_NEAR(neu.at(i), pos.at(i), 1e-15);
}

TEST(Classifier, ScalarOracleForTwoEmotions) {
    ParameterSet ps;
    Rng rng(3);
    EmotionClassifier clf(ps, "emo", 2, rng);
    const Tensor q = Tensor::vector({0.7, -1.1});
    const Tensor& E = clf.e_emo();
    const double z0 = E.at(0, 0) * 0.7 + E.at(0, 1) * -1.1;
    const double z1 = E.at(1, 0) * 0.7 + E.at(1, 1) * -1.1;
    auto logit = [&](const Tensor& W, std::size_t k) { return W.at(k, 0) * z0 + W.at(k, 1) * z1; };
    // Restricted to two labels, the probability ratio is exp(l0 - l1).
    for (Polarity v : {Polarity::pos, Polarity::neg, Polarity::neu}) {
        const Tensor p = clf.classify(q, v);
        auto l = [&](std::size_t k) {
            if (v == Polarity::pos) return logit(clf.w_pos(), k);
            if (v == Polarity::neg) return logit(clf.w_neg(), k);
            return 0.5 * (logit(clf.w_pos(), k) + logit(clf.w_neg(), k));
        };
        double z = 0.0;
        for (std::size_t k = 0; k < kNumEmotions; ++k) z += std::exp(l(k));
        EXPECT_NEAR(p.at(0), std::exp(l(0)) / z, 1e-10);
        EXPECT_NEAR(p.at(1), std::exp(l(1)) / z, 1e-10);
        EXPECT_NEAR(p.at(0) / p.at(1), std::exp(l(0) - l(1)), 1e-10);
    }
}

TEST(NtXent, Examples) {
    Rng rng(5);
    const Tensor a = random_vector(4, rng), b = random_vector(4, rng);
    const std::vector<Emotion> diff{Emotion::sad, Emotion::joyful};
    EXPECT_EQ(nt_xent_loss({a, b}, diff).item(), 0.0);
    const std::vector<Emotion> same{Emotion::sad, Emotion::sad};
    EXPECT_NEAR(nt_xent_loss({a, a}, same).item(), 0.0, 1e-15);
    EXPECT_THROW(nt_xent_loss({a}, std::vector<Emotion>{Emotion::sad}), std::invalid_argument);
}

TEST(NtXent, ThreeVectorsMatchFormula) {
    Rng rng(6);
    const std::vector<Tensor> q{random_vector(5, rng), random_vector(5, rng), random_vector(5, rng)};
    const std::vector<Emotion> y{Emotion::sad, Emotion::sad, Emotion::joyful};
    const double tau = 0.5;
    double expect = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            if (i == j || y[i] != y[j]) continue;
            double den = 0.0;
            for (std::size_t k = 0; k < 3; ++k)
                if (k != i) den += std::exp(cosine(q[i], q[k]) / tau);
            expect -= std::log(std::exp(cosine(q[i], q[j]) / tau) / den);
        }
    const Tensor loss = nt_xent_loss(q, y, tau);
    EXPECT_NEAR(loss.item(), expect, 1e-10);
    EXPECT_GE(loss.item(), 0.0);
    const auto report = finite_difference_check("nt_xent", [&] { return nt_xent_loss(q, y, tau); },
                                                {{"q0", q[0]}, {"q1", q[1]}, {"q2", q[2]}});
    EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(EmotionLoss, Examples) {
    Rng rng(7);
    std::vector<double> one_hot(kNumEmotions, 0.0);
    one_hot[index(Emotion::sad)] = 1.0;
    const Tensor perfect = Tensor::vector(one_hot);
    const Tensor q = random_vector(4, rng);
    const std::vector<Emotion> gold{Emotion::sad};
    const auto l1 = emotion_loss({perfect}, gold, {q});
    EXPECT_EQ(l1.total.item(), 0.0);

    const Tensor uniform = Tensor::full({kNumEmotions}, 1.0 / kNumEmotions);
    const auto l2 = emotion_loss({uniform}, gold, {q});
    EXPECT_NEAR(l2.cls.item(), std::log(32.0), 1e-12);

    // Components add up; floor is flagged.
    const std::vector<Tensor> qs{random_vector(4, rng), random_vector(4, rng), random_vector(4, rng)};
    const std::vector<Emotion> g3{Emotion::sad, Emotion::sad, Emotion::angry};
    const std::vector<Tensor> ps{uniform, perfect, Tensor::zeros({kNumEmotions})};
    const auto l3 = emotion_loss(ps, g3, qs);
    const double cls = (std::log(32.0) + 0.0 - std::log(1e-12)) / 3.0;
    EXPECT_NEAR(l3.cls.item(), cls, 1e-10);
    EXPECT_NEAR(l3.total.item(), cls + nt_xent_loss(qs, g3).item(), 1e-10);
    EXPECT_TRUE(l3.clamped);
    EXPECT_FALSE(l2.clamped);
}
