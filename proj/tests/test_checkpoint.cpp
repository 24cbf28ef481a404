#include <gtest/gtest.h>

#include <fstream>

#include "reflectdiffu/checkpoint.hpp"

using namespace rd;

namespace {

ModelConfig tiny_config(const Vocab& v) {
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

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::string& s) {
    std::ofstream(p, std::ios::binary | std::ios::trunc) << s;
}

class CheckpointTest : public ::testing::Test {
protected:
    void SetUp() override {
        SyntheticSpec spec;
        spec.n_dialogues = 24;
        corpus = generate_synthetic(spec);
        dir = std::filesystem::temp_directory_path() /
              ("rd_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        std::filesystem::create_directories(dir);
        model = std::make_unique<ReflectDiffu>(tiny_config(corpus.vocab), corpus.vocab);
        TrainConfig tc;
        tc.max_iters = 3;
        tc.batch_size = 4;
        tc.warmup_steps = 2;
        optimizer = Adam(model->parameters().trainable());
        fit(*model, corpus.dialogues, {}, tc, &optimizer);
    }
    void TearDown() override { std::filesystem::remove_all(dir); }

    Corpus corpus;
    std::filesystem::path dir;
    std::unique_ptr<ReflectDiffu> model;
    Adam optimizer;
};

void expect_same_prediction(const Prediction& a, const Prediction& b) {
    EXPECT_EQ(a.emotion, b.emotion);
    EXPECT_EQ(a.sentiment, b.sentiment);
    EXPECT_EQ(a.intent_first, b.intent_first);
    EXPECT_EQ(a.intent_twice, b.intent_twice);
    EXPECT_EQ(a.reference, b.reference);
    EXPECT_EQ(a.context_tags, b.context_tags);
    EXPECT_EQ(a.response.ids, b.response.ids);
    EXPECT_EQ(a.response.words, b.response.words);
}

}  // namespace

TEST_F(CheckpointTest, SaveLoadSaveIsByteIdentical) {
    save_checkpoint(dir / "a.ckpt", *model, &optimizer);
    const auto loaded = load_checkpoint(dir / "a.ckpt");
    ASSERT_TRUE(loaded.has_optimizer);
    EXPECT_EQ(loaded.step, 3u);
    Adam restored(loaded.model->parameters().trainable());
    loaded.restore_optimizer(restored);
    save_checkpoint(dir / "b.ckpt", *loaded.model, &restored);
    EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
    EXPECT_EQ(loaded.model->config(), model->config());
    EXPECT_EQ(loaded.model->vocab().tokens(), model->vocab().tokens());
}

TEST_F(CheckpointTest, InferenceIdenticalAfterRoundtrip) {
    save_checkpoint(dir / "m.ckpt", *model);
    const auto loaded = load_checkpoint(dir / "m.ckpt");
    EXPECT_FALSE(loaded.has_optimizer);
    GenerateOptions opt;
    opt.max_len = 8;
    for (std::size_t i = 0; i < 10; ++i) {
        const Dialogue& d = corpus.dialogues[i];
        expect_same_prediction(model->predict(d, opt), loaded.model->predict(d, opt));
        EXPECT_EQ(model->response_nll(d), loaded.model->response_nll(d));
    }
}

TEST_F(CheckpointTest, CorruptionIsReportedWithDistinctCodes) {
    save_checkpoint(dir / "m.ckpt", *model, &optimizer);
    const std::string good = slurp(dir / "m.ckpt");
    auto code_of = [&](const std::string& bytes) {
        spit(dir / "bad.ckpt", bytes);
        try {
            load_checkpoint(dir / "bad.ckpt");
        } catch (const CheckpointError& e) {
            return e.code();
        }
        return CheckpointErrc{};
    };

    std::string s = good;
    s[0] = 'X';
    EXPECT_EQ(code_of(s), CheckpointErrc::bad_magic);

    s = good;
    s[4] = 2;  // version field, little-endian low byte
    EXPECT_EQ(code_of(s), CheckpointErrc::version_mismatch);

    EXPECT_EQ(code_of(good.substr(0, good.size() / 2)), CheckpointErrc::truncated);
    EXPECT_EQ(code_of(good.substr(0, 6)), CheckpointErrc::truncated);
    EXPECT_EQ(code_of(good + "x"), CheckpointErrc::truncated);

    s = good;
    const auto pos = s.find("\"d_model\":8");
    ASSERT_NE(pos, std::string::npos);
    s[pos + 10] = '9';  // config text no longer matches its hash
    EXPECT_EQ(code_of(s), CheckpointErrc::hash_mismatch);

    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
}

TEST_F(CheckpointTest, StrictModeComparesConfig) {
    save_checkpoint(dir / "m.ckpt", *model);
    ModelConfig same = model->config();
    EXPECT_NO_THROW(load_checkpoint(dir / "m.ckpt", &same));
    ModelConfig other = same;
    other.intent_alpha = 0.5;
    try {
        load_checkpoint(dir / "m.ckpt", &other);
        FAIL() << "expected a config mismatch";
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.code(), CheckpointErrc::config_mismatch);
    }
    EXPECT_NE(config_hash(same), config_hash(other));
}

TEST_F(CheckpointTest, ResumedOptimizerContinuesIdentically) {
    save_checkpoint(dir / "m.ckpt", *model, &optimizer);
    const auto loaded = load_checkpoint(dir / "m.ckpt");
    Adam resumed(loaded.model->parameters().trainable());
    loaded.restore_optimizer(resumed);

    TrainConfig tc;
    tc.max_iters = 2;
    tc.batch_size = 4;
    tc.warmup_steps = 2;
    const auto a = fit(*model, corpus.dialogues, {}, tc, &optimizer);
    const auto b = fit(*loaded.model, corpus.dialogues, {}, tc, &resumed);
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].step, b.log[i].step);
        EXPECT_EQ(a.log[i].l, b.log[i].l);
    }
}
