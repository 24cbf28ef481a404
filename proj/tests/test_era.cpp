#include <gtest/gtest.h>

#include <cmath>

#include "reflectdiffu/era.hpp"
#include "reflectdiffu/gradcheck.hpp"
#include "reflectdiffu/optim.hpp"

using namespace rd;

namespace {

std::vector<std::vector<ReasonTag>> all_paths(std::size_t L) {
    std::vector<std::vector<ReasonTag>> out;
    for (std::size_t mask = 0; mask < (1u << L); ++mask) {
        std::vector<ReasonTag> p(L);
        for (std::size_t t = 0; t < L; ++t) p[t] = (mask >> t) & 1 ? ReasonTag::em : ReasonTag::noem;
        out.push_back(p);
    }
    return out;
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    std::vector<double> v(r * c);
    for (double& x : v) x = scale * rng.normal();
    return Tensor::from({r, c}, v, true);
}

EncoderConfig small_config(std::size_t vocab) {
    EncoderConfig cfg;
    cfg.vocab_size = vocab;
    cfg.d_model = 16;
    cfg.ff_hidden = 32;
    cfg.max_len = 32;
    return cfg;
}

}  // namespace

TEST(Crf, LengthOneZeroTransitionsIsSoftmaxCrossEntropy) {
    const Tensor e = Tensor::matrix(1, 2, {0.3, -1.2});
    const Tensor a = Tensor::zeros({4, 4});
    const std::vector<ReasonTag> tags{ReasonTag::em};
    const double loss = crf_neg_log_likelihood(e, a, tags).item();
    const double ce = -(-1.2 - std::log(std::exp(0.3) + std::exp(-1.2)));
    EXPECT_NEAR(loss, ce, 1e-12);
    EXPECT_GT(loss, 0.0);
}

TEST(Crf, LogPartitionMatchesBruteForce) {
    Rng rng(3);
    for (std::size_t L = 1; L <= 4; ++L) {
        for (int rep = 0; rep < 5; ++rep) {
            const Tensor e = random_matrix(L, 2, rng, 2.0);
            const Tensor a = random_matrix(4, 4, rng, 1.5);
            std::vector<double> scores;
            for (const auto& p : all_paths(L)) scores.push_back(crf_path_score(e, a, p));
            double m = *std::max_element(scores.begin(), scores.end()), s = 0.0;
            for (double x : scores) s += std::exp(x - m);
            EXPECT_NEAR(crf_log_partition(e, a), m + std::log(s), 1e-8);

            // Probabilities over all paths sum to one, each strictly inside (0, 1).
            double total = 0.0;
            for (const auto& p : all_paths(L)) {
                const double nll = crf_neg_log_likelihood(e, a, p).item();
                EXPECT_GT(nll, 0.0);
                total += std::exp(-nll);
            }
            EXPECT_NEAR(total, 1.0, 1e-8);
        }
    }
}

TEST(Crf, RejectsBadTags) {
    const Tensor e = Tensor::matrix(2, 2, {0.0, 0.0, 1.0, 0.0});
    const Tensor a = Tensor::zeros({4, 4});
    const std::vector<ReasonTag> short_tags{ReasonTag::em};
    EXPECT_THROW(crf_neg_log_likelihood(e, a, short_tags), TensorError);
    const std::vector<ReasonTag> bogus{ReasonTag::em, static_cast<ReasonTag>(2)};
    EXPECT_THROW(crf_neg_log_likelihood(e, a, bogus), TensorError);
}

TEST(Crf, GradientMatchesFiniteDifferences) {
    Rng rng(5);
    const Tensor e = random_matrix(5, 2, rng);
    const Tensor a = random_matrix(4, 4, rng, 0.5);
    const std::vector<ReasonTag> tags{ReasonTag::noem, ReasonTag::em, ReasonTag::em, ReasonTag::noem, ReasonTag::em};
    GradCheckOptions opt;
    opt.probes_per_tensor = 16;
    const auto report = finite_difference_check(
        "crf_nll", [&] { return crf_neg_log_likelihood(e, a, tags); }, {{"emissions", e}, {"transitions", a}}, opt);
    EXPECT_TRUE(report.passed) << report.max_rel_error << " at " << report.worst_param;
    EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(Viterbi, ZeroTransitionsIsPerPositionArgmax) {
    const Tensor e = Tensor::matrix(4, 2, {1.0, 0.0, 0.0, 2.0, -1.0, 0.5, 3.0, -3.0});
    const auto path = viterbi_decode(e, Tensor::zeros({4, 4}));
    EXPECT_EQ(path, (std::vector<ReasonTag>{ReasonTag::noem, ReasonTag::em, ReasonTag::em, ReasonTag::noem}));
}

TEST(Viterbi, PenalizedEmEmAlternates) {
    const Tensor e = Tensor::matrix(4, 2, {0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0});
    Tensor a = Tensor::zeros({4, 4});
    a.mutable_data()[1 * 4 + 1] = -10.0;
    const auto path = viterbi_decode(e, a);
    EXPECT_TRUE(path == (std::vector<ReasonTag>{ReasonTag::em, ReasonTag::noem, ReasonTag::em, ReasonTag::noem}) ||
                path == (std::vector<ReasonTag>{ReasonTag::noem, ReasonTag::em, ReasonTag::noem, ReasonTag::em}));
    // Exhaustive oracle: the decoded path scores at least as high as every path
    // and strictly beats all-em.
    const double best = crf_path_score(e, a, path);
    for (const auto& p : all_paths(4)) EXPECT_GE(best, crf_path_score(e, a, p));
    EXPECT_GT(best, crf_path_score(e, a, std::vector<ReasonTag>(4, ReasonTag::em)));
}

TEST(Viterbi, TiesResolveToNoem) {
    const auto path = viterbi_decode(Tensor::zeros({3, 2}), Tensor::zeros({4, 4}));
    EXPECT_EQ(path, std::vector<ReasonTag>(3, ReasonTag::noem));
}

TEST(Viterbi, BeatsEveryEnumeratedPath) {
    Rng rng(8);
    for (std::size_t L = 1; L <= 4; ++L)
        for (int rep = 0; rep < 10; ++rep) {
            const Tensor e = random_matrix(L, 2, rng, 2.0);
            const Tensor a = random_matrix(4, 4, rng, 2.0);
            const auto path = viterbi_decode(e, a);
            const double nll = crf_neg_log_likelihood(e, a, path).item();
            for (const auto& p : all_paths(L)) EXPECT_LE(nll, crf_neg_log_likelihood(e, a, p).item() + 1e-12);
        }
}

TEST(Era, ComposeSingleRow) {
    ParameterSet ps;
    Rng rng(1);
    Era era(ps, "era", small_config(10), rng);
    const Tensor h = Tensor::matrix(1, 16, {0.5, -1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});
    const auto r = era.compose_attention(h);
    EXPECT_DOUBLE_EQ(r.alpha.item(), 1.0);
    for (std::size_t i = 0; i < h.size(); ++i) EXPECT_DOUBLE_EQ(r.h_tilde.data()[i], h.data()[i]);
}

TEST(Era, ComposeUniformScoresGiveMean) {
    ParameterSet ps;
    Rng rng(1);
    Era era(ps, "era", small_config(10), rng);
    auto w = era.attention_weight().mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    const Tensor h = random_matrix(3, 16, rng);
    const auto r = era.compose_attention(h);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(r.alpha.data()[i], 1.0 / 3.0, 1e-15);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 16; ++c)
            EXPECT_NEAR(r.h_tilde.at(i, c), (h.at(0, c) + h.at(1, c) + h.at(2, c)) / 3.0, 1e-14);
}

TEST(Era, ComposeMatchesScalarOracle) {
    ParameterSet ps;
    Rng rng(2);
    Era era(ps, "era", small_config(10), rng);
    const Tensor h = random_matrix(3, 16, rng);
    const Tensor W = era.attention_weight();
    const auto r = era.compose_attention(h);
    for (std::size_t i = 0; i < 3; ++i) {
        double s[3], m = -1e300, z = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            s[j] = 0.0;
            for (std::size_t a = 0; a < 16; ++a)
                for (std::size_t b = 0; b < 16; ++b) s[j] += h.at(i, a) * W.at(a, b) * h.at(j, b);
            m = std::max(m, s[j]);
        }
        for (double& x : s) z += std::exp(x - m);
        double row_sum = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            const double alpha = std::exp(s[j] - m) / z;
            EXPECT_NEAR(r.alpha.at(i, j), alpha, 1e-10);
            row_sum += r.alpha.at(i, j);
        }
        EXPECT_NEAR(row_sum, 1.0, 1e-6);
        for (std::size_t c = 0; c < 16; ++c) {
            double v = 0.0;
            for (std::size_t j = 0; j < 3; ++j) v += r.alpha.at(i, j) * h.at(j, c);
            EXPECT_NEAR(r.h_tilde.at(i, c), v, 1e-10);
        }
    }
}

TEST(Era, ComposeIsPermutationEquivariant) {
    ParameterSet ps;
    Rng rng(4);
    Era era(ps, "era", small_config(10), rng);
    const Tensor h = random_matrix(4, 16, rng);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    const auto base = era.compose_attention(h);
    const auto permuted = era.compose_attention(embedding(h, perm));
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t c = 0; c < 16; ++c)
            EXPECT_NEAR(permuted.h_tilde.at(i, c), base.h_tilde.at(perm[i], c), 1e-12);
        for (std::size_t j = 0; j < 4; ++j)
            EXPECT_NEAR(permuted.alpha.at(i, j), base.alpha.at(perm[i], perm[j]), 1e-12);
    }
}

TEST(Era, EncodeShapeDeterminismAndErrors) {
    ParameterSet ps;
    Rng rng(1);
    Era era(ps, "era", small_config(20), rng);
    const std::vector<TokenId> toks{5, 6, 7, 8};
    const Tensor a = era.encode_tokens(toks);
    const Tensor b = era.encode_tokens(toks);
    ASSERT_EQ(a.shape(), (Shape{4, 16}));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
    EXPECT_THROW(era.encode_tokens(std::vector<TokenId>{}), EraError);
    EXPECT_THROW(era.encode_tokens(std::vector<TokenId>(33, 5)), EraError);
}

TEST(Era, PadPositionsDoNotLeak) {
    ParameterSet ps;
    Rng rng(1);
    Era era(ps, "era", small_config(20), rng);
    const std::vector<TokenId> toks{5, 6, 7};
    const std::vector<TokenId> padded{5, 6, 7, kPad, kPad};
    const Tensor a = era.encode_tokens(toks);
    const Tensor b = era.encode_tokens(padded);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(a.at(i, c), b.at(i, c));

    // Changing the id under a masked position has no effect on the other rows.
    const std::vector<bool> valid{true, true, true, false};
    const Tensor c1 = era.encode_tokens(std::vector<TokenId>{5, 6, 7, 9}, &valid);
    const Tensor c2 = era.encode_tokens(std::vector<TokenId>{5, 6, 7, 12}, &valid);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(c1.at(i, c), c2.at(i, c));
}

TEST(Era, AnnotateContract) {
    Corpus corpus = generate_synthetic({2, 20, 4, 4});
    ParameterSet ps;
    Rng rng(1);
    Era era(ps, "era", small_config(corpus.vocab.size()), rng);
    EXPECT_THROW(era.annotate(corpus.dialogues[0], true), EraError);
    // Force em everywhere: bot turns must still come back noem.
    auto t = era.transitions().mutable_data();
    t[kCrfStart * 4 + 1] = 50.0;
    t[1 * 4 + 1] = 50.0;
    for (const auto& d : corpus.dialogues) {
        const auto ann = era.annotate(d, false);
        ASSERT_EQ(ann.turn_tags.size(), d.turns.size());
        for (std::size_t k = 0; k < d.turns.size(); ++k) {
            ASSERT_EQ(ann.turn_tags[k].size(), d.turns[k].tokens.size());
            for (auto tag : ann.turn_tags[k])
                if (d.turns[k].speaker == Speaker::bot) EXPECT_EQ(tag, ReasonTag::noem);
        }
        EXPECT_EQ(ann.repr.h_tilde.rows(), ann.context.tokens.size());
    }
}

TEST(Era, EndToEndGradientCheck) {
    Corpus corpus = generate_synthetic({2, 4, 4, 4});
    ParameterSet ps;
    Rng rng(6);
    Era era(ps, "era", small_config(corpus.vocab.size()), rng);
    const auto ctx = flatten_context(corpus.dialogues[0], 31);
    const auto report = finite_difference_check(
        "era", [&] { return era.crf_loss(era.represent(ctx).h_tilde, ctx.tags); }, ps.trainable());
    EXPECT_TRUE(report.passed) << report.max_rel_error << " at " << report.worst_param;
}

TEST(Era, LearnsSyntheticTagsToHighF1) {
    Corpus corpus = generate_synthetic({7, 120, 8, 4});
    ParameterSet ps;
    Rng rng(3);
    Era era(ps, "era", small_config(corpus.vocab.size()), rng);
    Adam opt(ps.trainable());
    const std::size_t train_n = 100;
    for (std::size_t step = 1; step <= 400; ++step) {
        ps.zero_grad();
        const auto& d = corpus.dialogues[(step * 7) % train_n];
        const auto ctx = flatten_context(d, 31);
        era.crf_loss(era.represent(ctx).h_tilde, ctx.tags).backward();
        opt.step(3e-3);
    }
    era.mark_trained();
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = train_n; i < corpus.dialogues.size(); ++i) {
        const auto& d = corpus.dialogues[i];
        const auto ann = era.annotate(d);
        for (std::size_t k = 0; k < d.turns.size(); ++k)
            for (std::size_t j = 0; j < d.turns[k].tokens.size(); ++j) {
                const bool gold = d.turns[k].reason_tags[j] == ReasonTag::em && k < d.target;
                const bool pred = ann.turn_tags[k][j] == ReasonTag::em;
                tp += gold && pred;
                fp += !gold && pred;
                fn += gold && !pred;
            }
    }
    const double f1 = 2.0 * tp / std::max<double>(1.0, 2.0 * tp + fp + fn);
    EXPECT_GE(f1, 0.95);
}
