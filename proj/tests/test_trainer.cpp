#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include <spanret/trainer.hpp>

#include "test_util.hpp"

using namespace spanret;
using spanret::testing::tiny_config;

TEST(Schedule, WarmupThenLinearDecay)
{
    LrSchedule s{2e-5, 0.01, 1000};
    EXPECT_EQ(s.warmup_steps(), 10u);
    EXPECT_DOUBLE_EQ(s.at(1), 2e-6);
    EXPECT_DOUBLE_EQ(s.at(5), 1e-5);
    EXPECT_DOUBLE_EQ(s.at(10), 2e-5);
    EXPECT_DOUBLE_EQ(s.at(505), 2e-5 * 495.0 / 990.0);
    EXPECT_DOUBLE_EQ(s.at(1000), 0.0);
    for (std::size_t t = 11; t < 1000; ++t) {
        EXPECT_LT(s.at(t + 1), s.at(t));
    }
}

TEST(Schedule, ZeroWarmupStartsAtPeak)
{
    LrSchedule s{1.0, 0.0, 4};
    EXPECT_DOUBLE_EQ(s.at(1), 0.75);
    EXPECT_DOUBLE_EQ(s.at(2), 0.5);
}

TEST(Adam, MatchesHandComputedSteps)
{
    OptimizerState<double> st(2, LrSchedule{0.1, 0.0, 1000});
    std::vector<double> p{1.0, -2.0};
    std::vector<double> g{0.5, -4.0};
    adam_step<double>(p, g, st);
    // First bias-corrected step moves every coordinate by lr * sign(g).
    double lr1 = 0.1 * 999.0 / 1000.0;
    EXPECT_NEAR(p[0], 1.0 - lr1, 1e-7);
    EXPECT_NEAR(p[1], -2.0 + lr1, 1e-7);
    double const p0 = 1.0 - lr1 * 0.5 / (0.5 + 1e-8);
    EXPECT_NEAR(p[0], p0, 1e-15);

    std::vector<double> g2{1.0, 0.0};
    adam_step<double>(p, g2, st);
    double m = 0.9 * 0.05 + 0.1 * 1.0;
    double v = 0.999 * 0.00025 + 0.001 * 1.0;
    double mh = m / (1 - 0.81);
    double vh = v / (1 - 0.999 * 0.999);
    double lr2 = 0.1 * 998.0 / 1000.0;
    EXPECT_NEAR(p[0], p0 - lr2 * mh / (std::sqrt(vh) + 1e-8), 1e-12);
    EXPECT_EQ(st.step, 2u);
}

TEST(Adam, SizeMismatchThrows)
{
    OptimizerState<double> st(2, LrSchedule{});
    std::vector<double> p{1.0, 2.0};
    std::vector<double> g{1.0};
    EXPECT_THROW(adam_step<double>(p, g, st), Error);
}

namespace {

/// Queries are the first few ids of their positive passage, so the task is
/// learnable from lexical overlap alone.
TrainingData overlap_task(std::size_t passages, std::size_t vocab, std::uint64_t seed)
{
    Rng rng(seed);
    TrainingData data;
    for (std::size_t i = 0; i < passages; ++i) {
        data.passages.push_back(spanret::testing::random_ids(rng, vocab, 8, 8));
    }
    for (std::size_t i = 0; i < passages; ++i) {
        TrainingData::Item item;
        item.query.assign(data.passages[i].begin(), data.passages[i].begin() + 3);
        item.positive = i;
        item.negative = (i + 1) % passages;
        data.items.push_back(item);
    }
    return data;
}

Vocabulary vocab_of(std::size_t size)
{
    Vocabulary v;
    for (std::size_t i = Vocabulary::reserved_count; i < size; ++i) {
        v.add("w" + std::to_string(i));
    }
    return v;
}

EncoderConfig small_config()
{
    auto c = tiny_config(40, 16, 1);
    c.init_std = 0.1;
    c.dropout = 0.1;
    return c;
}

} // namespace

TEST(Train, LossDecreasesOnLearnableTask)
{
    auto data = overlap_task(64, 40, 3);
    EncoderModel<float> model(small_config(), 11);
    OptimizerState<float> opt;
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.total_steps = 300;
    cfg.peak_lr = 3e-3;
    cfg.log_interval = 1;
    cfg.seed = 5;
    auto res = train(model, opt, data, cfg);
    ASSERT_EQ(res.metrics.size(), 300u);
    double first = 0.0;
    double last = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
        first += res.metrics[i].loss / 20.0;
        last += res.metrics[res.metrics.size() - 1 - i].loss / 20.0;
    }
    EXPECT_NEAR(first, std::log(16.0), 0.2);
    EXPECT_LT(last, 0.5 * first);
}

TEST(Train, DeterministicAndResumable)
{
    auto data = overlap_task(32, 40, 4);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.total_steps = 20;
    cfg.seed = 9;

    EncoderModel<float> a(small_config(), 1);
    OptimizerState<float> oa;
    train(a, oa, data, cfg);

    EncoderModel<float> b(small_config(), 1);
    OptimizerState<float> ob;
    std::string saved;
    cfg.checkpoint_interval = 7;
    train(b, ob, data, cfg, [&](const EncoderModel<float>& m, const OptimizerState<float>& o) {
        if (o.step == 14) {
            std::ostringstream out;
            write_checkpoint(out, m, vocab_of(40), o, ArtifactHeader{});
            saved = out.str();
        }
    });
    EXPECT_EQ(a.fingerprint(), b.fingerprint());

    ASSERT_FALSE(saved.empty());
    std::istringstream in(saved);
    auto ck = read_checkpoint<float>(in);
    EXPECT_EQ(ck.optimizer.step, 14u);
    train(ck.model, ck.optimizer, data, cfg);
    EXPECT_EQ(ck.model.fingerprint(), a.fingerprint());
}

TEST(Train, ThreadCountDoesNotChangeResult)
{
    auto data = overlap_task(32, 40, 4);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.total_steps = 5;
    EncoderModel<float> a(small_config(), 1);
    EncoderModel<float> b(small_config(), 1);
    OptimizerState<float> oa;
    OptimizerState<float> ob;
    cfg.threads = 1;
    train(a, oa, data, cfg);
    cfg.threads = 3;
    train(b, ob, data, cfg);
    EXPECT_EQ(a.fingerprint(), b.fingerprint());
}

TEST(Train, NonFiniteLossRestoresAndThrows)
{
    auto data = overlap_task(16, 40, 4);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.total_steps = 10;
    cfg.peak_lr = 1e38;
    cfg.warmup_fraction = 0.0;
    EncoderModel<float> model(small_config(), 2);
    auto const before = model.fingerprint();
    OptimizerState<float> opt;
    try {
        train(model, opt, data, cfg);
        FAIL() << "expected a numeric error";
    } catch (Error const& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numeric);
    }
    EXPECT_TRUE(model.all_finite());
    EXPECT_EQ(model.fingerprint(), before);
}

TEST(Train, RejectsTooFewExamplesAndMissingNegatives)
{
    auto data = overlap_task(4, 40, 4);
    EncoderModel<float> model(small_config(), 1);
    OptimizerState<float> opt;
    TrainConfig cfg;
    cfg.batch_size = 8;
    EXPECT_THROW(train(model, opt, data, cfg), Error);
    cfg.batch_size = 2;
    data.items[0].negative.reset();
    EXPECT_THROW(train(model, opt, data, cfg), Error);
    cfg.negatives = false;
    cfg.total_steps = 1;
    EXPECT_NO_THROW(train(model, opt, data, cfg));
}

TEST(Checkpoint, RoundTripsParametersVocabAndState)
{
    auto const vocab = vocab_of(40);
    EncoderModel<float> model(small_config(), 7);
    OptimizerState<float> opt(model.layout().total(), LrSchedule{1e-3, 0.1, 50});
    opt.step = 3;
    opt.first_moment[5] = 0.25F;
    ArtifactHeader h;
    h.config_hash = "abc";
    std::ostringstream out;
    write_checkpoint(out, model, vocab, opt, h);
    std::istringstream in(out.str());
    auto ck = read_checkpoint<float>(in);
    EXPECT_EQ(ck.model.fingerprint(), model.fingerprint());
    EXPECT_TRUE(ck.vocab == vocab);
    EXPECT_EQ(ck.optimizer.step, 3u);
    EXPECT_EQ(ck.optimizer.first_moment[5], 0.25F);
    EXPECT_EQ(ck.optimizer.schedule.total_steps, 50u);
    EXPECT_EQ(ck.header.config_hash, "abc");
}

TEST(Checkpoint, RejectsWrongTypeAndCorruption)
{
    EncoderModel<float> model(small_config(), 7);
    OptimizerState<float> opt(model.layout().total(), LrSchedule{});
    auto const vocab = vocab_of(40);
    std::ostringstream out;
    write_checkpoint(out, model, vocab, opt, ArtifactHeader{});
    {
        std::istringstream in(out.str());
        EXPECT_THROW(read_checkpoint<double>(in), Error);
    }
    {
        std::istringstream in(out.str().substr(0, out.str().size() / 2));
        EXPECT_THROW(read_checkpoint<float>(in), Error);
    }
    {
        std::istringstream in("garbage");
        try {
            (void)read_checkpoint<float>(in);
            FAIL();
        } catch (Error const& e) {
            EXPECT_NE(e.kind(), ErrorKind::numeric);
        }
    }
}

TEST(Metrics, CsvHasHeaderAndRows)
{
    std::vector<MetricRow> rows{{1, 1e-4, 2.5, 0.25}};
    std::ostringstream out;
    write_metrics_csv(out, rows);
    EXPECT_EQ(out.str(), "step,lr,loss,top1\n1,0.0001,2.5,0.250000\n");
}
