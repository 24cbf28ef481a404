#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "reflectdiffu/trainer.hpp"

using namespace rd;

namespace {

ModelConfig tiny(const Vocab& v) {
    ModelConfig c;
    c.vocab_size = v.size();
    c.d_model = 8;
    c.layers = 1;
    c.heads = 2;
    c.ff_hidden = 16;
    c.max_len = 64;
    c.diffusion_T = 10;
    c.diffusion_state_t = 3;
    c.denoiser_hidden = 16;
    c.timestep_dim = 4;
    c.max_response_len = 8;
    return c;
}

TrainConfig quick(std::size_t iters) {
    TrainConfig t;
    t.max_iters = iters;
    t.batch_size = 4;
    t.warmup_steps = 4;
    t.eval_every = 2;
    t.mu_refresh = 3;
    return t;
}

Corpus small_corpus(long n = 24) {
    SyntheticSpec s;
    s.n_dialogues = n;
    return generate_synthetic(s);
}

std::vector<std::vector<double>> params_of(const ReflectDiffu& m) {
    std::vector<std::vector<double>> out;
    for (const auto& p : m.parameters().all()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

}  // namespace

TEST(JointLoss, WeightedSum) {
    const auto s = [](double v) { return Tensor::scalar(v); };
    EXPECT_EQ(joint_loss(s(0), s(0), s(0), {}).item(), 0.0);
    EXPECT_EQ(joint_loss(s(1), s(2), s(3), {}).item(), 6.0);
    EXPECT_EQ(joint_loss(s(1), s(2), s(3), {1, 1, 0}).item(), 3.0);
    EXPECT_NEAR(joint_loss(s(0.7), s(1.3), s(2.9), {0.5, 2.0, 0.25}).item(), 0.35 + 2.6 + 0.725, 1e-15);
}

TEST(JointLoss, GradientsAreTheWeights) {
    Tensor a = Tensor::scalar(1.0, true), b = Tensor::scalar(2.0, true), c = Tensor::scalar(3.0, true);
    joint_loss(a, b, c, {0.5, 2.0, 0.25}).backward();
    EXPECT_DOUBLE_EQ(a.grad()[0], 0.5);
    EXPECT_DOUBLE_EQ(b.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(c.grad()[0], 0.25);
}

TEST(JointLoss, NonFiniteNamesComponent) {
    const auto s = [](double v) { return Tensor::scalar(v); };
    try {
        joint_loss(s(1), s(std::nan("")), s(1), {});
        FAIL();
    } catch (const NonFiniteLoss& e) {
        EXPECT_EQ(e.component(), "L_twice");
    }
    try {
        joint_loss(s(1), s(1), s(INFINITY), {});
        FAIL();
    } catch (const NonFiniteLoss& e) {
        EXPECT_EQ(e.component(), "L_res");
    }
}

TEST(Schedule, NoamValuesAndCrossover) {
    // d^-0.5 * min(s^-0.5, s * w^-1.5)
    EXPECT_NEAR(noam_lr(1, 64, 300), 0.125 * std::pow(300.0, -1.5), 1e-15);
    EXPECT_NEAR(noam_lr(300, 64, 300), 0.125 / std::sqrt(300.0), 1e-15);
    EXPECT_NEAR(noam_lr(1200, 64, 300), 0.125 / std::sqrt(1200.0), 1e-15);
    EXPECT_GT(noam_lr(300, 64, 300), noam_lr(299, 64, 300));
    EXPECT_GT(noam_lr(300, 64, 300), noam_lr(301, 64, 300));
    EXPECT_THROW(noam_lr(0, 64, 300), std::invalid_argument);
    // the decay floor
    const double peak = noam_lr(300, 64, 300);
    EXPECT_NEAR(scheduled_lr(1'000'000'000, 64, 300, 0.01), 0.01 * peak, 1e-15);
    EXPECT_EQ(scheduled_lr(1200, 64, 300, 0.01), noam_lr(1200, 64, 300));
}

TEST(Fit, ZeroIterationsIsANoOp) {
    const Corpus c = small_corpus(8);
    ReflectDiffu m(tiny(c.vocab), c.vocab);
    const auto before = params_of(m);
    const FitResult r = fit(m, c.dialogues, c.dialogues, quick(0));
    EXPECT_TRUE(r.log.empty());
    EXPECT_EQ(r.steps, 0u);
    EXPECT_EQ(params_of(m), before);
}

TEST(Fit, BatchTotalIsTheSumOfItsParts) {
    const Corpus c = small_corpus(8);
    ReflectDiffu m(tiny(c.vocab), c.vocab);
    std::vector<const Dialogue*> batch;
    for (const auto& d : c.dialogues) batch.push_back(&d);
    Rng rng(5);
    const LossWeights w{0.5, 2.0, 3.0};
    const BatchLosses l = m.batch_loss(batch, w, rng, true);
    const double parts = 0.5 * l.em.item() + 2.0 * l.twice.item() + 3.0 * l.res.item() + l.era.item() +
                         l.prior.item() + l.policy.item();
    EXPECT_NEAR(l.total.item(), parts, 1e-9 * std::abs(parts));
    EXPECT_NEAR(l.twice.item(), l.kl_pos.item() + l.kl_neg.item() + l.intent.item(), 1e-9 * l.twice.item());
}

TEST(StopGradientTape, ReplayPinsTheDetachedValues) {
    const Corpus c = small_corpus(8);
    ReflectDiffu m(tiny(c.vocab), c.vocab);
    std::vector<const Dialogue*> batch;
    for (const auto& d : c.dialogues) batch.push_back(&d);
    StopGradientTape tape;
    Rng r0(5);
    const double recorded = m.batch_loss(batch, {}, r0, true, &tape).total.item();
    tape.replay();
    Rng r1(5);
    EXPECT_EQ(m.batch_loss(batch, {}, r1, true, &tape).total.item(), recorded);
    // replaying more than was recorded is caught
    std::vector<const Dialogue*> twice = batch;
    twice.insert(twice.end(), batch.begin(), batch.end());
    tape.replay();
    Rng r2(5);
    EXPECT_THROW(m.batch_loss(twice, {}, r2, true, &tape), std::logic_error);
}

TEST(Fit, LogIsBitwiseReproducible) {
    const Corpus c = small_corpus();
    std::string csv[2];
    for (int run = 0; run < 2; ++run) {
        ReflectDiffu m(tiny(c.vocab), c.vocab);
        std::ostringstream os;
        write_log_header(os);
        const auto r = fit(m, c.dialogues, {c.dialogues.begin(), c.dialogues.begin() + 6}, quick(6),
                           nullptr, [&](const LogRow& row) { write_log_row(os, row); });
        EXPECT_EQ(r.log.size(), 6u);
        csv[run] = os.str();
    }
    EXPECT_EQ(csv[0], csv[1]);
}

TEST(Fit, CsvFormat) {
    std::ostringstream os;
    write_log_header(os);
    LogRow a;
    a.step = 1;
    a.lr = 0.5;
    a.l_em = 1;
    a.l_twice = 2;
    a.l_res = 3;
    a.l = 6;
    write_log_row(os, a);
    a.step = 2;
    a.val_l = 4.25;
    write_log_row(os, a);
    EXPECT_EQ(os.str(), "step,lr,L_em,L_twice,L_res,L,val_L\n1,0.5,1,2,3,6,\n2,0.5,1,2,3,6,4.25\n");
}

TEST(Fit, ValidatesOnScheduleAndKeepsBestState) {
    const Corpus c = small_corpus();
    const std::vector<Dialogue> val(c.dialogues.begin(), c.dialogues.begin() + 6);
    ReflectDiffu m(tiny(c.vocab), c.vocab);
    TrainConfig tc = quick(7);
    const FitResult r = fit(m, c.dialogues, val, tc);
    ASSERT_EQ(r.log.size(), 7u);
    for (const auto& row : r.log) EXPECT_EQ(!std::isnan(row.val_l), row.step % 2 == 0 || row.step == 7);
    double best = INFINITY;
    std::uint64_t best_step = 0;
    for (const auto& row : r.log)
        if (!std::isnan(row.val_l) && row.val_l < best) {
            best = row.val_l;
            best_step = row.step;
        }
    EXPECT_EQ(r.best_val, best);
    EXPECT_EQ(r.best_step, best_step);
    // the restored parameters reproduce the best validation loss
    EXPECT_EQ(validation_loss(m, val, tc), best);
    EXPECT_TRUE(m.era().trained());
}

TEST(Fit, EarlyStopsAfterPatienceRunsOut) {
    const Corpus c = small_corpus();
    const std::vector<Dialogue> val(c.dialogues.begin(), c.dialogues.begin() + 6);
    ReflectDiffu m(tiny(c.vocab), c.vocab);
    TrainConfig tc = quick(400);
    tc.eval_every = 1;
    tc.patience = 1;
    tc.lr_scale = 50.0;  // noisy enough that some validation fails to improve
    const FitResult r = fit(m, c.dialogues, val, tc);
    EXPECT_TRUE(r.early_stopped);
    EXPECT_LT(r.steps, 400u);
    EXPECT_EQ(r.log.size(), r.steps);
    EXPECT_EQ(validation_loss(m, val, tc), r.best_val);
}

TEST(Fit, DivergenceRestoresLastGoodStateAndThrows) {
    const Corpus c = small_corpus();
    ReflectDiffu m(tiny(c.vocab), c.vocab);
    const auto initial = params_of(m);
    TrainConfig tc = quick(50);
    tc.lr_scale = 1e300;
    try {
        fit(m, c.dialogues, {}, tc);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.step(), 1u);
        EXPECT_EQ(e.partial().log.size() + 1, e.step());
    }
    EXPECT_EQ(params_of(m), initial);
}

TEST(Split, DeterministicEightOneOne) {
    const Corpus c = small_corpus(50);
    const Split a = split_corpus(c.dialogues, 3), b = split_corpus(c.dialogues, 3), d = split_corpus(c.dialogues, 4);
    EXPECT_EQ(a.train.size(), 40u);
    EXPECT_EQ(a.val.size(), 5u);
    EXPECT_EQ(a.test.size(), 5u);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.test, b.test);
    EXPECT_NE(a.train, d.train);
    EXPECT_THROW(split_corpus(c.dialogues, 1, 0.9, 0.2), std::invalid_argument);
}
