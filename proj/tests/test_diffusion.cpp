#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "reflectdiffu/diffusion.hpp"
#include "reflectdiffu/optim.hpp"

using namespace rd;

namespace {

NoiseSchedule desk_schedule() { return NoiseSchedule(50, 1e-4, 0.05); }

struct Moments {
    double mean = 0.0, var = 0.0;
};

// Pooled over coordinates, all of which share the same q0 value.
Moments pooled(const std::vector<std::vector<double>>& draws) {
    double n = 0.0, s = 0.0, ss = 0.0;
    for (const auto& d : draws)
        for (double x : d) {
            s += x;
            ss += x * x;
            n += 1.0;
        }
    const double m = s / n;
    return {m, ss / n - m * m};
}

NoisePredictor constant_predictor(double v) {
    return [v](const Tensor& q, std::size_t, const Tensor&) { return Tensor::full(q.shape(), v); };
}

}  // namespace

TEST(NoiseSchedule, LinearBetasAndCumulativeProduct) {
    const auto s = desk_schedule();
    EXPECT_EQ(s.T(), 50u);
    EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
    EXPECT_DOUBLE_EQ(s.beta(50), 0.05);
    EXPECT_DOUBLE_EQ(s.alpha_bar(0), 1.0);
    double prod = 1.0;
    for (std::size_t t = 1; t <= 50; ++t) {
        prod *= 1.0 - s.beta(t);
        EXPECT_NEAR(s.alpha_bar(t), prod, 1e-15);
        EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
        if (t > 1) EXPECT_GE(s.beta(t), s.beta(t - 1));
    }
    EXPECT_NEAR(s.noise_scale(10), std::sqrt(1.0 - s.alpha_bar(10)), 1e-15);
}

TEST(NoiseSchedule, RejectsBadArguments) {
    EXPECT_THROW(NoiseSchedule(0, 1e-4, 0.05), std::invalid_argument);
    EXPECT_THROW(NoiseSchedule(10, 0.1, 0.01), std::invalid_argument);
    EXPECT_THROW(NoiseSchedule(10, 0.1, 1.0), std::invalid_argument);
    const auto s = desk_schedule();
    EXPECT_THROW(s.beta(0), std::out_of_range);
    EXPECT_THROW(s.beta(51), std::out_of_range);
}

TEST(NoiseSchedule, SumFormNeedsBetaSumBelowOne) {
    // 1000 linear steps up to 0.05 sum to about 25.
    EXPECT_THROW(NoiseSchedule(1000, 1e-4, 0.05, VarianceForm::sum), std::invalid_argument);
    const NoiseSchedule s(10, 0.01, 0.05, VarianceForm::sum);
    double sum = 0.0;
    for (std::size_t t = 1; t <= 5; ++t) sum += s.beta(t);
    EXPECT_NEAR(s.noise_scale(5), std::sqrt(1.0 - sum), 1e-15);
}

TEST(ForwardDiffuse, ZeroBetasAreIdentity) {
    const auto s = NoiseSchedule::from_betas({0.0, 0.0, 0.0});
    const std::vector<double> q0{0.5, -1.0, 2.0};
    Rng rng(1);
    EXPECT_EQ(forward_diffuse_iterative(q0, 3, s, rng), q0);
    const auto jump = forward_diffuse(Tensor::vector(q0), 3, s, rng);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(jump.q_t.at(i), q0[i]);
}

TEST(ForwardDiffuse, TimestepOutOfRangeThrows) {
    const auto s = desk_schedule();
    Rng rng(1);
    const std::vector<double> q0{1.0};
    EXPECT_THROW(forward_diffuse_iterative(q0, 0, s, rng), std::out_of_range);
    EXPECT_THROW(forward_diffuse(Tensor::vector(q0), 51, s, rng), std::out_of_range);
}

TEST(ForwardDiffuse, IterativeChainMatchesClosedFormInDistribution) {
    const auto s = desk_schedule();
    const std::size_t d = 16, n = 10000;
    const std::vector<double> q0(d, 2.0);
    std::vector<std::vector<double>> iter, jump;
    for (std::size_t seed = 0; seed < n; ++seed) {
        Rng a(seed), b(seed + 1000003);
        iter.push_back(forward_diffuse_iterative(q0, 50, s, a));
        const auto j = forward_diffuse(Tensor::vector(q0), 50, s, b);
        jump.emplace_back(j.q_t.data().begin(), j.q_t.data().end());
    }
    const double ab = s.alpha_bar(50);
    const auto mi = pooled(iter), mj = pooled(jump);
    EXPECT_NEAR(mi.mean / (std::sqrt(ab) * 2.0), 1.0, 0.02);
    EXPECT_NEAR(mj.mean / (std::sqrt(ab) * 2.0), 1.0, 0.02);
    EXPECT_NEAR(mi.var / (1.0 - ab), 1.0, 0.02);
    EXPECT_NEAR(mj.var / (1.0 - ab), 1.0, 0.02);
    EXPECT_NEAR(mi.mean / mj.mean, 1.0, 0.02);
    EXPECT_NEAR(mi.var / mj.var, 1.0, 0.02);
}

TEST(ForwardDiffuse, VarianceApproachesOneWhenSignalVanishes) {
    const NoiseSchedule s(200, 0.05, 0.2);
    ASSERT_LT(s.alpha_bar(200), 1e-6);
    std::vector<std::vector<double>> draws;
    const std::vector<double> q0(8, 3.0);
    for (std::size_t seed = 0; seed < 10000; ++seed) {
        Rng rng(seed);
        draws.push_back(forward_diffuse_iterative(q0, 200, s, rng));
    }
    const auto m = pooled(draws);
    EXPECT_NEAR(m.var, 1.0, 0.02);
    EXPECT_NEAR(m.mean, 0.0, 0.02);
}

TEST(ForwardDiffuse, ClosedFormIsDifferentiableInQ0) {
    const auto s = desk_schedule();
    Rng rng(4);
    const Tensor q0 = Tensor::vector({1.0, 2.0}, true);
    const auto sample = forward_diffuse(q0, 20, s, rng);
    sum(sample.q_t).backward();
    EXPECT_NEAR(q0.grad()[0], std::sqrt(s.alpha_bar(20)), 1e-12);
    EXPECT_FALSE(sample.noise.requires_grad());
}

TEST(DenoiseStep, OracleNoiseInvertsOneStepCorruption) {
    const auto s = desk_schedule();
    Rng rng(9);
    const Tensor q0 = Tensor::vector({0.3, -1.7, 2.2, 0.0});
    const auto sample = forward_diffuse(q0, 1, s, rng);
    const NoisePredictor oracle = [&](const Tensor&, std::size_t, const Tensor&) { return sample.noise; };
    const Tensor back = denoise_step(sample.q_t, 1, Tensor::vector({0.0}), oracle, s);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(back.at(i), q0.at(i), 1e-6);
}

TEST(DenoiseStep, ZeroBetaZeroNoiseIsIdentity) {
    const auto s = NoiseSchedule::from_betas({0.0, 0.0});
    const Tensor q = Tensor::vector({1.5, -0.25});
    for (std::size_t t : {1u, 2u}) {
        const Tensor out = denoise_step(q, t, Tensor::vector({0.0}), constant_predictor(0.0), s);
        EXPECT_DOUBLE_EQ(out.at(0), 1.5);
        EXPECT_DOUBLE_EQ(out.at(1), -0.25);
    }
}

TEST(DenoiseStep, MatchesStepFormula) {
    const auto s = desk_schedule();
    const Tensor q = Tensor::vector({1.0, -2.0});
    const Tensor out = denoise_step(q, 7, Tensor::vector({0.0}), constant_predictor(0.5), s);
    const double b = s.beta(7), ab = s.alpha_bar(7);
    EXPECT_NEAR(out.at(0), (1.0 - b * 0.5 / std::sqrt(1.0 - ab)) / std::sqrt(1.0 - b), 1e-14);
    EXPECT_NEAR(out.at(1), (-2.0 - b * 0.5 / std::sqrt(1.0 - ab)) / std::sqrt(1.0 - b), 1e-14);
}

TEST(DenoiseStep, TimestepZeroThrows) {
    const auto s = desk_schedule();
    EXPECT_THROW(denoise_step(Tensor::vector({1.0}), 0, Tensor::vector({0.0}), constant_predictor(0.0), s),
                 std::out_of_range);
}

TEST(Denoiser, OutputShapeMatchesInput) {
    ParameterSet ps;
    Rng rng(2);
    const Denoiser m(ps, "den", 6, 9, rng, 32, 8);
    const Tensor out = m(Tensor::zeros({6}), 13, Tensor::zeros({9}));
    EXPECT_EQ(out.shape(), Shape({6}));
    EXPECT_THROW(m(Tensor::zeros({5}), 13, Tensor::zeros({9})), TensorError);
}

TEST(DenoiserLoss, ZeroPredictorGivesDimension) {
    const auto s = desk_schedule();
    const std::size_t d = 16;
    std::vector<Tensor> q0s, conds;
    Rng data(5);
    for (int i = 0; i < 10000; ++i) {
        std::vector<double> v(d);
        for (double& x : v) x = data.normal();
        q0s.push_back(Tensor::vector(v));
        conds.push_back(Tensor::vector({0.0}));
    }
    NoGradGuard guard;
    Rng rng(6);
    EXPECT_NEAR(denoiser_loss(constant_predictor(0.0), q0s, conds, s, rng).item() / d, 1.0, 0.05);
}

TEST(DenoiserLoss, PerfectPredictorGivesZero) {
    const auto s = desk_schedule();
    std::vector<Tensor> q0s, conds;
    for (int i = 0; i < 20; ++i) {
        q0s.push_back(Tensor::vector({0.1 * i, -0.3, 1.0}));
        conds.push_back(q0s.back());  // the predictor reads q0 back out of the condition
    }
    const NoisePredictor perfect = [&](const Tensor& q, std::size_t t, const Tensor& q0) {
        const double ab = s.alpha_bar(t);
        return scale(sub(q, scale(q0, std::sqrt(ab))), 1.0 / std::sqrt(1.0 - ab));
    };
    Rng rng(3);
    EXPECT_NEAR(denoiser_loss(perfect, q0s, conds, s, rng).item(), 0.0, 1e-20);
    EXPECT_DOUBLE_EQ(denoiser_loss(perfect, {}, {}, s, rng).item(), 0.0);
    EXPECT_THROW(denoiser_loss(perfect, q0s, {}, s, rng), std::invalid_argument);
}

namespace {

// Two clusters selected by a one-hot condition.
struct Toy {
    std::vector<Tensor> q0s, conds;
};

Toy toy_batch(Rng& rng, std::size_t n) {
    Toy b;
    for (std::size_t i = 0; i < n; ++i) {
        const bool up = rng.below(2) == 1;
        const double c = up ? 1.0 : -1.0;
        b.q0s.push_back(Tensor::vector({c + 0.05 * rng.normal(), -c + 0.05 * rng.normal(), 0.5 * c, c}));
        b.conds.push_back(Tensor::vector({up ? 1.0 : 0.0, up ? 0.0 : 1.0}));
    }
    return b;
}

double chain_mse(const Denoiser& m, const NoiseSchedule& s, std::uint64_t seed) {
    NoGradGuard guard;
    Rng rng(seed);
    const Toy eval = toy_batch(rng, 200);
    double mse = 0.0;
    for (std::size_t i = 0; i < eval.q0s.size(); ++i) {
        const auto start = forward_diffuse(eval.q0s[i], s.T(), s, rng);
        const Tensor out = reverse_chain(start.q_t, s.T(), eval.conds[i], m.predictor(), s);
        const Tensor diff = sub(out, eval.q0s[i]);
        mse += dot(diff, diff).item() / 4.0;
    }
    return mse / static_cast<double>(eval.q0s.size());
}

}  // namespace

TEST(DenoiserTraining, LossDecreasesAndTrainedChainBeatsUntrained) {
    const auto s = desk_schedule();
    ParameterSet ps;
    Rng init(11);
    Denoiser m(ps, "den", 4, 2, init, 64, 16);
    const double untrained = chain_mse(m, s, 77);

    Adam opt(ps.trainable());
    Rng rng(12);
    std::vector<double> losses;
    for (int step = 0; step < 1500; ++step) {
        const Toy batch = toy_batch(rng, 32);
        ps.zero_grad();
        const Tensor loss = denoiser_loss(m.predictor(), batch.q0s, batch.conds, s, rng);
        loss.backward();
        opt.step(2e-3);
        losses.push_back(loss.item());
    }
    const double first = std::accumulate(losses.begin(), losses.begin() + 100, 0.0) / 100.0;
    const double at500 = std::accumulate(losses.begin() + 400, losses.begin() + 500, 0.0) / 100.0;
    const double last = std::accumulate(losses.end() - 100, losses.end(), 0.0) / 100.0;
    EXPECT_LT(at500, first);
    EXPECT_LT(last, at500 * 1.05);

    const double trained = chain_mse(m, s, 77);
    EXPECT_LT(trained, 0.5 * untrained) << "trained " << trained << " untrained " << untrained;
}

TEST(TimestepEmbedding, SinCosPairs) {
    const Tensor e = timestep_embedding(3, 8);
    ASSERT_EQ(e.size(), 8u);
    EXPECT_NEAR(e.at(0), std::sin(3.0), 1e-15);
    EXPECT_NEAR(e.at(4), std::cos(3.0), 1e-15);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(e.at(i) * e.at(i) + e.at(i + 4) * e.at(i + 4), 1.0, 1e-12);
}
