#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "cyclevae/data.hpp"
#include "cyclevae/errors.hpp"
#include "cyclevae/train.hpp"

using namespace cyclevae;

namespace {

ModelConfig tiny_model() {
    ModelConfig config;
    config.image_channels = 1;
    config.image_size = 8;
    config.z_dim = 3;
    config.s_dim = 3;
    config.trunk_channels = {3, 4};
    config.conv_blocks = 2;
    config.fc_width = 8;
    config.validate();
    return config;
}

// Small synthetic dataset: each class is a bright horizontal band at a
// class-specific row, plus per-image uniform noise.
LabeledImageDataset tiny_dataset(int classes, int per_class, std::uint64_t seed) {
    LabeledImageDataset d;
    d.channels = 1;
    d.height = 8;
    d.width = 8;
    d.num_classes = classes;
    Rng rng(seed);
    for (int c = 0; c < classes; ++c) {
        for (int j = 0; j < per_class; ++j) {
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    const Real base = (y == 2 * c % 8) ? 0.9 : 0.1;
                    d.images.push_back(base + rng.uniform(0.0, 0.05));
                }
            d.labels.push_back(c);
        }
    }
    d.split_tags.assign(d.labels.size(), Split::train);
    d.validate();
    return d;
}

TrainConfig quick_config(int iterations, std::uint64_t seed) {
    TrainConfig config;
    config.iterations = iterations;
    config.batch_size = 4;
    config.seed = seed;
    return config;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i)
        if (da[i] != db[i]) return false;
    return true;
}

std::vector<std::vector<Real>> snapshot(const std::vector<Tensor>& tensors) {
    std::vector<std::vector<Real>> out;
    for (const Tensor& t : tensors) out.emplace_back(t.data().begin(), t.data().end());
    return out;
}

bool matches_snapshot(const std::vector<Tensor>& tensors,
                      const std::vector<std::vector<Real>>& snap) {
    if (tensors.size() != snap.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        auto d = tensors[i].data();
        if (d.size() != snap[i].size()) return false;
        for (std::size_t j = 0; j < d.size(); ++j)
            if (d[j] != snap[i][j]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("train config: invariant validation") {
    TrainConfig config = quick_config(1, 0);
    CHECK_NOTHROW(config.validate());
    config.iterations = 0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = quick_config(1, 0);
    config.batch_size = 0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = quick_config(1, 0);
    config.adam.learning_rate = 0.0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = quick_config(1, 0);
    config.adam.beta1 = 1.0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("adam: zero gradients leave parameters unchanged but advance the step") {
    Tensor p = Tensor::from_data({3}, {0.5, -0.25, 1.0}, true);
    p.zero_grad();
    AdamState state;
    AdamConfig config;
    adam_update({p}, state, config);
    CHECK(p.data()[0] == 0.5);
    CHECK(p.data()[1] == -0.25);
    CHECK(p.data()[2] == 1.0);
    REQUIRE(state.find(p) != nullptr);
    CHECK(state.find(p)->t == 1);
}

TEST_CASE("adam: constant gradient drives the parameter against its sign") {
    Tensor p = Tensor::from_data({2}, {0.0, 0.0}, true);
    AdamState state;
    AdamConfig config;
    config.learning_rate = 0.01;
    for (int step = 0; step < 50; ++step) {
        p.zero_grad();
        p.node_ptr()->grad[0] = 1.0;   // push down
        p.node_ptr()->grad[1] = -2.0;  // push up
        adam_update({p}, state, config);
    }
    CHECK(p.data()[0] < -0.1);
    CHECK(p.data()[1] > 0.1);
    CHECK(state.find(p)->t == 50);
}

TEST_CASE("adam: zero learning rate is a legal no-op") {
    Tensor p = Tensor::from_data({2}, {1.0, 2.0}, true);
    p.zero_grad();
    p.node_ptr()->grad[0] = 3.0;
    p.node_ptr()->grad[1] = -1.0;
    AdamState state;
    AdamConfig config;
    config.learning_rate = 0.0;
    CHECK_NOTHROW(config.validate());
    adam_update({p}, state, config);
    CHECK(p.data()[0] == 1.0);
    CHECK(p.data()[1] == 2.0);
    CHECK(state.find(p)->t == 1);

    config.learning_rate = -0.1;
    CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("adam: missing gradient buffer is rejected") {
    Tensor p = Tensor::from_data({2}, {1.0, 2.0}, true);
    AdamState state;
    AdamConfig config;
    CHECK_THROWS_AS(adam_update({p}, state, config), UsageError);
}

TEST_CASE("forward step: deterministic, non-negative, and moves the decoder") {
    const ModelConfig mc = tiny_model();
    const LabeledImageDataset data = tiny_dataset(3, 6, 5);
    const TrainConfig tc = quick_config(1, 0);

    Rng sample_rng(41);
    const PairBatch batch =
        sample_similar_pair_batch(data, Split::train, tc.batch_size, sample_rng);

    ModelParams params1 = init_params(mc, 7);
    ModelParams params2 = init_params(mc, 7);
    AdamState state1, state2;
    Rng rng1(9), rng2(9);

    const auto decoder_before = snapshot(params1.decoder_params());
    const ForwardCycleMetrics m1 = train_step_forward(batch, params1, state1, tc, rng1);
    const ForwardCycleMetrics m2 = train_step_forward(batch, params2, state2, tc, rng2);

    CHECK(m1.total == m2.total);
    CHECK(m1.reconstruction == m2.reconstruction);
    CHECK(m1.kl == m2.kl);
    CHECK(m1.total >= 0.0);
    const auto named1 = params1.named();
    const auto named2 = params2.named();
    for (std::size_t i = 0; i < named1.size(); ++i)
        CHECK(bitwise_equal(named1[i].second, named2[i].second));

    CHECK_FALSE(matches_snapshot(params1.decoder_params(), decoder_before));
}

TEST_CASE("reverse step: encoder-only updates leave the decoder bitwise intact") {
    const ModelConfig mc = tiny_model();
    const LabeledImageDataset data = tiny_dataset(3, 6, 6);
    const TrainConfig tc = quick_config(1, 0);

    Rng sample_rng(4);
    Tensor x1 = sample_image_batch(data, Split::train, tc.batch_size, sample_rng);
    Tensor x2 = sample_image_batch(data, Split::train, tc.batch_size, sample_rng);

    ModelParams params = init_params(mc, 11);
    AdamState state;
    Rng rng(21);

    const auto decoder_before = snapshot(params.decoder_params());
    const auto encoder_before = snapshot(params.encoder_params());
    const Real loss = train_step_reverse(x1, x2, params, state, tc, rng);
    CHECK(loss > 0.0);
    CHECK(matches_snapshot(params.decoder_params(), decoder_before));
    CHECK_FALSE(matches_snapshot(params.encoder_params(), encoder_before));
}

TEST_CASE("reverse step: identical batches yield zero loss and no movement") {
    const ModelConfig mc = tiny_model();
    const LabeledImageDataset data = tiny_dataset(2, 4, 7);
    const TrainConfig tc = quick_config(1, 0);

    Rng sample_rng(8);
    Tensor x = sample_image_batch(data, Split::train, tc.batch_size, sample_rng);

    ModelParams params = init_params(mc, 13);
    AdamState state;
    Rng rng(5);
    const auto all_before = snapshot(params.all_params());
    const Real loss = train_step_reverse(x, x, params, state, tc, rng);
    CHECK(loss == 0.0);
    CHECK(matches_snapshot(params.all_params(), all_before));
}

TEST_CASE("reverse step: zero reverse weight applies no update at all") {
    const ModelConfig mc = tiny_model();
    const LabeledImageDataset data = tiny_dataset(3, 6, 9);
    TrainConfig tc = quick_config(1, 0);
    tc.weights.reverse_weight = 0.0;

    Rng sample_rng(14);
    Tensor x1 = sample_image_batch(data, Split::train, tc.batch_size, sample_rng);
    Tensor x2 = sample_image_batch(data, Split::train, tc.batch_size, sample_rng);

    ModelParams params = init_params(mc, 15);
    AdamState state;
    Rng rng(6);
    const auto all_before = snapshot(params.all_params());
    const Real loss = train_step_reverse(x1, x2, params, state, tc, rng);
    CHECK(loss > 0.0);
    CHECK(matches_snapshot(params.all_params(), all_before));
    CHECK(state.size() == 0);
}

TEST_CASE("fit: loop contract and seeded reproducibility") {
    const ModelConfig mc = tiny_model();
    const LabeledImageDataset data = tiny_dataset(3, 8, 12);

    TrainConfig tc = quick_config(1, 77);
    const FitResult once = fit(data, mc, tc);
    CHECK(once.log.records.size() == 1);
    CHECK(once.log.records[0].iteration == 1);
    CHECK(once.log.records[0].forward_total > 0.0);
    CHECK(once.log.records[0].reverse >= 0.0);

    tc = quick_config(6, 123);
    const FitResult a = fit(data, mc, tc);
    const FitResult b = fit(data, mc, tc);
    CHECK(a.log.same_losses(b.log));
    const auto named_a = a.params.named();
    const auto named_b = b.params.named();
    for (std::size_t i = 0; i < named_a.size(); ++i)
        CHECK(bitwise_equal(named_a[i].second, named_b[i].second));

    TrainConfig other = quick_config(6, 124);
    const FitResult c = fit(data, mc, other);
    CHECK_FALSE(a.log.same_losses(c.log));

    for (const TrainRecord& r : a.log.records) {
        CHECK(std::isfinite(r.forward_total));
        CHECK(std::isfinite(r.reverse));
    }
}

TEST_CASE("fit: dataset bounds are enforced with named errors") {
    const ModelConfig mc = tiny_model();
    const TrainConfig tc = quick_config(1, 0);

    const LabeledImageDataset one_class = tiny_dataset(1, 6, 3);
    CHECK_THROWS_AS(fit(one_class, mc, tc), ConfigError);

    LabeledImageDataset lonely = tiny_dataset(3, 2, 3);
    lonely.labels[2] = 0;  // class 1 keeps a single image
    CHECK_THROWS_AS(fit(lonely, mc, tc), ConfigError);

    LabeledImageDataset wrong_size = tiny_dataset(2, 4, 3);
    ModelConfig mc28 = default_model_config(28, 1);
    CHECK_THROWS_AS(fit(wrong_size, mc28, tc), ConfigError);
}

TEST_CASE("fit: loss trend improves on an easy dataset") {
    const ModelConfig mc = tiny_model();
    const LabeledImageDataset data = tiny_dataset(2, 10, 20);
    TrainConfig tc = quick_config(120, 3);
    tc.adam.learning_rate = 3e-3;

    const FitResult result = fit(data, mc, tc);
    const std::size_t n = result.log.records.size();
    REQUIRE(n == 120);
    const std::size_t tenth = n / 10;
    Real first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < tenth; ++i) first += result.log.records[i].forward_total;
    for (std::size_t i = n - tenth; i < n; ++i)
        last += result.log.records[i].forward_total;
    CHECK(last / static_cast<Real>(tenth) < first / static_cast<Real>(tenth));
}

TEST_CASE("train log: text roundtrip preserves every digit") {
    TrainLog log;
    for (int i = 1; i <= 5; ++i) {
        TrainRecord r;
        r.iteration = i;
        r.forward_total = 1.0 / (3.0 * i);
        r.forward_recon = 0.7 / i;
        r.forward_kl = 1e-17 * i;
        r.reverse = 2.0 * i / 7.0;
        r.wall_ms = 12.5 * i;
        log.records.push_back(r);
    }
    const std::string path = "build/test_train_log.txt";
    log.save(path);
    const TrainLog back = TrainLog::load(path);
    REQUIRE(back.records.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(back.records[i].iteration == log.records[i].iteration);
        CHECK(back.records[i].forward_total == log.records[i].forward_total);
        CHECK(back.records[i].forward_recon == log.records[i].forward_recon);
        CHECK(back.records[i].forward_kl == log.records[i].forward_kl);
        CHECK(back.records[i].reverse == log.records[i].reverse);
        CHECK(back.records[i].wall_ms == log.records[i].wall_ms);
    }
    CHECK(back.same_losses(log));

    TrainLog shifted = back;
    shifted.records[2].wall_ms += 100.0;
    CHECK(shifted.same_losses(log));
    shifted.records[2].reverse += 1e-16;
    CHECK_FALSE(shifted.same_losses(log));

    std::remove(path.c_str());
}

TEST_CASE("train log: malformed files are rejected") {
    const std::string path = "build/test_train_log_bad.txt";
    {
        std::FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("# header\n1 1.0 2.0 3.0 4.0 5.0\nnot a record\n", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(TrainLog::load(path), FormatError);
    {
        std::FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("2 1.0 2.0 3.0 4.0 5.0\n2 1.0 2.0 3.0 4.0 5.0\n", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(TrainLog::load(path), FormatError);
    CHECK_THROWS_AS(TrainLog::load("build/no_such_log.txt"), IoError);
    std::remove(path.c_str());
}

TEST_CASE("fit: mid-run resume reproduces the uninterrupted trace exactly") {
    const ModelConfig mc = tiny_model();
    const LabeledImageDataset data = tiny_dataset(3, 8, 30);
    const std::string dir = "build/test_resume_run";

    TrainConfig full_config = quick_config(12, 55);
    const FitResult full = fit(data, mc, full_config);

    TrainConfig half_config = quick_config(5, 55);
    half_config.output_dir = dir;
    const FitResult half = fit(data, mc, half_config);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(half.log.records[i].forward_total == full.log.records[i].forward_total);
        CHECK(half.log.records[i].reverse == full.log.records[i].reverse);
    }

    TrainConfig rest_config = quick_config(12, 55);
    const std::string checkpoint = dir + "/model.cvae";
    const FitResult rest = resume_fit(data, checkpoint, rest_config);
    REQUIRE(rest.log.records.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) {
        const TrainRecord& expected = full.log.records[5 + i];
        const TrainRecord& got = rest.log.records[i];
        CHECK(got.iteration == expected.iteration);
        CHECK(got.forward_total == expected.forward_total);
        CHECK(got.forward_recon == expected.forward_recon);
        CHECK(got.forward_kl == expected.forward_kl);
        CHECK(got.reverse == expected.reverse);
    }
    const auto named_full = full.params.named();
    const auto named_rest = rest.params.named();
    for (std::size_t i = 0; i < named_full.size(); ++i)
        CHECK(bitwise_equal(named_full[i].second, named_rest[i].second));

    TrainConfig shrunk = quick_config(3, 55);
    CHECK_THROWS_AS(resume_fit(data, checkpoint, shrunk), ConfigError);

    std::filesystem::remove_all(dir);
}

TEST_CASE("fit: checkpoint cadence writes a loadable rolling checkpoint") {
    const ModelConfig mc = tiny_model();
    const LabeledImageDataset data = tiny_dataset(2, 6, 40);
    const std::string dir = "build/test_cadence_run";

    TrainConfig tc = quick_config(4, 9);
    tc.checkpoint_every = 2;
    tc.output_dir = dir;
    const FitResult result = fit(data, mc, tc);

    const ModelParams loaded = load_checkpoint(dir + "/model.cvae");
    CHECK(loaded.config == mc);
    const TrainState state = load_train_state(dir + "/model.cvae");
    CHECK(state.completed_iterations == 4);

    const TrainLog log = TrainLog::load(dir + "/train_log.txt");
    CHECK(log.same_losses(result.log));

    std::filesystem::remove_all(dir);
}
