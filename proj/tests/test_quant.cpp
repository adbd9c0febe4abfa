#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fitq/data.hpp"
#include "fitq/qat.hpp"
#include "fitq/quant.hpp"
#include "fitq/serialize.hpp"
#include "fitq/tape.hpp"
#include "fitq/train.hpp"

using namespace fitq;

TEST_CASE("scheme: delta formula and validation") {
    QuantScheme s8(8, 0.0, 255.0);
    CHECK(s8.delta == 1.0);  // 255 / (2^8 - 1) exactly
    QuantScheme s2(2, 0.0, 3.0);
    CHECK(s2.delta == 1.0);
    CHECK_THROWS_AS(QuantScheme(8, 1.0, 1.0), ValidationError);
    CHECK_THROWS_AS(QuantScheme(1, 0.0, 1.0), ValidationError);
    CHECK_THROWS_AS(QuantScheme(33, 0.0, 1.0), ValidationError);
}

TEST_CASE("quantize: rounding examples") {
    QuantScheme s(2, 0.0, 3.0);
    CHECK(quantize_value(1.4, s) == 1.0);
    CHECK(quantize_value(2.6, s) == 3.0);
    CHECK(quantize_value(-10.0, s) == 0.0);  // clamped
    CHECK(quantize_value(10.0, s) == 3.0);
}

TEST_CASE("quantize laws: idempotence, grid membership, bounded error") {
    Rng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        const double a = rng.uniform(0.1, 10.0), b = rng.uniform(0.1, 10.0);
        const double lo = -a, hi = b;
        const int bits = static_cast<int>(rng.uniform_int(2, 8));
        QuantScheme s(bits, lo, hi);
        Tensor x = random_uniform({16}, rng, lo - 1.0, hi + 1.0);
        Tensor q = quantize_uniform(x, s);
        Tensor qq = quantize_uniform(q, s);
        const int64_t levels = (int64_t{1} << bits) - 1;
        for (int64_t i = 0; i < x.size(); ++i) {
            CHECK(qq[i] == q[i]);  // bit-exact idempotence
            const double k = std::round((q[i] - s.lo) / s.delta);
            CHECK(k >= 0.0);
            CHECK(k <= static_cast<double>(levels));
            CHECK(q[i] == s.lo + s.delta * k);  // grid membership
            if (x[i] >= lo && x[i] <= hi) CHECK(std::fabs(q[i] - x[i]) <= s.delta / 2.0 + 1e-15);
        }
    }
}

TEST_CASE("noise power: value, degenerate range, scaling, monotonicity") {
    QuantScheme s(8, -1.0, 1.0);
    const double expected = (2.0 / 255.0) * (2.0 / 255.0) / 12.0;
    CHECK(noise_power(s, true) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(noise_power(s, true) == doctest::Approx(5.126e-6).epsilon(1e-3));
    CHECK(noise_power(s, false) == doctest::Approx(expected * 12.0).epsilon(1e-12));

    CHECK(noise_power(0.0, 8) == 0.0);
    CHECK(noise_power(4.0, 8) == doctest::Approx(4.0 * noise_power(2.0, 8)).epsilon(1e-12));

    double prev = noise_power(2.0, 2);
    for (int b = 3; b <= 16; ++b) {
        const double cur = noise_power(2.0, b);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("uniform-noise model: empirical MSE converges to delta^2/12") {
    Rng rng(123);
    QuantScheme s(4, -0.5, 2.0);
    const int64_t n = 200000;
    double mse = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double x = rng.uniform(s.lo, s.hi);
        const double e = quantize_value(x, s) - x;
        mse += e * e;
    }
    mse /= static_cast<double>(n);
    CHECK(mse == doctest::Approx(noise_power(s, true)).epsilon(0.03));
}

TEST_CASE("STE: identity gradient in range, zero outside") {
    QuantScheme s(4, -1.0, 1.0);
    Tensor x({4}, {0.33, -0.71, 2.5, -3.0});
    Tensor c({4}, {1.5, -2.0, 0.5, 1.0});

    Tape t;
    Var xv = t.leaf(x, true);
    Var fq = t.fake_quant(xv, s.lo, s.hi, s.delta);
    Var loss = t.sum_all(t.mul(fq, t.leaf(c, false)));
    auto g = t.grad(loss, std::vector<Var>{xv});
    const Tensor& gx = t.value(g[0]);

    Tape t2;
    Var xv2 = t2.leaf(x, true);
    Var loss2 = t2.sum_all(t2.mul(xv2, t2.leaf(c, false)));
    auto g2 = t2.grad(loss2, std::vector<Var>{xv2});
    const Tensor& gx2 = t2.value(g2[0]);

    CHECK(gx[0] == gx2[0]);  // in range: identical to quantizer-free gradient
    CHECK(gx[1] == gx2[1]);
    CHECK(gx[2] == 0.0);  // clipped
    CHECK(gx[3] == 0.0);

    // forward output is the quantizer output
    CHECK(t.value(fq)[0] == quantize_value(0.33, s));
}

TEST_CASE("range tracker: minmax exhaustive, ema limits, degenerate flag") {
    Rng rng(5);
    RangeTracker mm(RangeTracker::Mode::minmax);
    double lo = 1e300, hi = -1e300;
    for (int b = 0; b < 5; ++b) {
        Tensor batch = random_normal({32}, rng, 2.0);
        for (int64_t i = 0; i < batch.size(); ++i) {
            lo = std::min(lo, batch[i]);
            hi = std::max(hi, batch[i]);
        }
        mm.observe(batch);
    }
    CHECK(mm.range().lo == lo);
    CHECK(mm.range().hi == hi);

    RangeTracker last(RangeTracker::Mode::ema, 1.0);
    last.observe(Tensor({2}, {-5.0, 5.0}));
    last.observe(Tensor({2}, {-1.0, 2.0}));
    CHECK(last.range().lo == -1.0);  // decay 1.0 keeps only the last batch
    CHECK(last.range().hi == 2.0);

    RangeTracker ema(RangeTracker::Mode::ema, 0.5);
    ema.observe(Tensor({2}, {0.0, 4.0}));
    ema.observe(Tensor({2}, {2.0, 2.0}));
    CHECK(ema.range().lo == doctest::Approx(1.0));
    CHECK(ema.range().hi == doctest::Approx(3.0));

    RangeTracker deg(RangeTracker::Mode::minmax);
    deg.observe(Tensor::full({8}, 0.7));
    CHECK(deg.range().degenerate());

    CHECK_THROWS_AS(RangeTracker(RangeTracker::Mode::ema, 0.0), ValidationError);
    CHECK_THROWS_AS((void)RangeTracker(RangeTracker::Mode::minmax).range(), ValidationError);
}

TEST_CASE("sample_bitconfig: singleton, determinism, uniformity") {
    std::vector<std::string> layers{"conv1", "conv2", "conv3", "fc"};
    BitConfig all8 = sample_bitconfig(layers, {8}, 1);
    for (const auto& lb : all8.layers) {
        CHECK(lb.w_bits == 8);
        CHECK(lb.a_bits == 8);
    }

    CHECK(sample_bitconfig(layers, {8, 6, 4, 3}, 42) == sample_bitconfig(layers, {8, 6, 4, 3}, 42));
    CHECK(sample_bitconfig(layers, {8, 6, 4, 3}, 42) != sample_bitconfig(layers, {8, 6, 4, 3}, 43));
    CHECK_THROWS_AS((void)sample_bitconfig(layers, {}, 1), ValidationError);

    // 1e4 draws: every value's frequency within 3 sigma of 0.25 per slot
    const std::vector<int> bit_set{8, 6, 4, 3};
    const int64_t n = 10000;
    std::map<std::pair<size_t, int>, int64_t> w_counts, a_counts;
    for (int64_t i = 0; i < n; ++i) {
        BitConfig c = sample_bitconfig(layers, bit_set, derive_seed(909, "chi", static_cast<uint64_t>(i)));
        for (size_t l = 0; l < layers.size(); ++l) {
            ++w_counts[{l, c.layers[l].w_bits}];
            ++a_counts[{l, c.layers[l].a_bits}];
        }
    }
    const double sigma = std::sqrt(0.25 * 0.75 / static_cast<double>(n));
    for (size_t l = 0; l < layers.size(); ++l)
        for (int b : bit_set) {
            CHECK(std::fabs(static_cast<double>(w_counts[{l, b}]) / n - 0.25) <= 3.0 * sigma);
            CHECK(std::fabs(static_cast<double>(a_counts[{l, b}]) / n - 0.25) <= 3.0 * sigma);
        }
}

TEST_CASE("bitconfig file round-trip is bit-exact") {
    BitConfig cfg = sample_bitconfig({"conv1", "conv2", "fc"}, {8, 6, 4, 3}, 77);
    const auto path = std::filesystem::temp_directory_path() / "fitq_test_bits.json";
    save_bitconfig(cfg, path);
    CHECK(load_bitconfig(path) == cfg);
    std::filesystem::remove(path);
}

namespace {

struct MicroSetup {
    Model model;
    Dataset train, test;
};

// one conv block + head on 6x6 synthetic digits, trained briefly
MicroSetup micro_model(uint64_t seed, int64_t epochs = 6) {
    auto [train_data, test_data] = make_synthetic_split(128, 128, 4, 6, derive_seed(seed, "data"));
    Model m = make_desk_cnn({1, 6, 6}, 4, {4}, false, derive_seed(seed, "init"));
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.lr = 0.01;
    cfg.batch_size = 32;
    cfg.seed = derive_seed(seed, "train");
    fitq::train(m, train_data, cfg);
    return {std::move(m), std::move(train_data), std::move(test_data)};
}

}  // namespace

TEST_CASE("track_ranges: weight extrema exact, activation ranges present") {
    MicroSetup s = micro_model(11, 2);
    Ranges r = track_ranges(s.model, s.train);
    for (const auto& pb : s.model.parameter_blocks()) {
        double lo = pb.weights[0], hi = pb.weights[0];
        for (int64_t i = 1; i < pb.weights.size(); ++i) {
            lo = std::min(lo, pb.weights[i]);
            hi = std::max(hi, pb.weights[i]);
        }
        CHECK(r.weight.at(pb.layer).lo == lo);
        CHECK(r.weight.at(pb.layer).hi == hi);
        CHECK(r.act.count(pb.layer) == 1);
    }
    Dataset empty;
    CHECK_THROWS_AS((void)track_ranges(s.model, empty), ValidationError);
}

TEST_CASE("qat: 32-bit config matches FP, 8-bit recovers FP accuracy") {
    MicroSetup s = micro_model(21);
    const double fp_acc = evaluate(s.model, s.test).accuracy;
    Ranges cal = track_ranges(s.model, s.train);

    TrainConfig qcfg;
    qcfg.epochs = 3;
    qcfg.lr = 0.001;
    qcfg.batch_size = 32;
    qcfg.seed = 99;

    BitConfig b32 = uniform_bitconfig(s.model.block_names(), 32);
    QatResult r32 = qat_finetune(s.model, b32, s.train, s.test, qcfg, cal);
    CHECK(std::fabs(r32.test_accuracy - fp_acc) <= 0.05);

    BitConfig b8 = uniform_bitconfig(s.model.block_names(), 8);
    QatResult r8 = qat_finetune(s.model, b8, s.train, s.test, qcfg, cal);
    CHECK(r8.test_accuracy >= fp_acc - 0.03);

    BitConfig missing;
    missing.layers.push_back({"conv1", 8, 8});
    CHECK_THROWS_AS((void)qat_finetune(s.model, missing, s.train, s.test, qcfg, cal), ValidationError);
}

TEST_CASE("qat: 3-bit scores at or below 8-bit in at least 9 of 10 seeds") {
    MicroSetup s = micro_model(31);
    Ranges cal = track_ranges(s.model, s.train);
    int wins = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        TrainConfig qcfg;
        qcfg.epochs = 2;
        qcfg.lr = 0.001;
        qcfg.batch_size = 32;
        qcfg.seed = derive_seed(1000, "qat-seed", seed);
        QatResult r8 = qat_finetune(s.model, uniform_bitconfig(s.model.block_names(), 8), s.train, s.test, qcfg, cal);
        QatResult r3 = qat_finetune(s.model, uniform_bitconfig(s.model.block_names(), 3), s.train, s.test, qcfg, cal);
        if (r3.test_accuracy <= r8.test_accuracy) ++wins;
    }
    CHECK(wins >= 9);
}
