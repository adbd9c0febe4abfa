#pragma once

// Shared randomized gradient-check harness: every differentiable primitive,
// exercised at random smooth points (kinked ops are sampled away from their
// kinks so central differences are valid).

#include <functional>
#include <string>
#include <vector>

#include "fitq/autodiff_check.hpp"
#include "fitq/common.hpp"
#include "fitq/tape.hpp"

namespace fitq_test {

using fitq::Rng;
using fitq::ScalarFn;
using fitq::Shape;
using fitq::Tape;
using fitq::Tensor;
using fitq::Var;

struct OpCase {
    std::string name;
    // draws inputs at a smooth point
    std::function<std::vector<Tensor>(Rng&)> sample;
    ScalarFn loss;
};

// Keeps values away from 0 so recip/log/sqrt/relu stay smooth under FD.
inline Tensor sample_away_from_zero(Shape s, Rng& rng, double lo, double hi) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.size(); ++i) {
        double v = rng.uniform(lo, hi);
        t[i] = rng.uniform() < 0.5 ? v : -v;
    }
    return t;
}

inline Tensor sample_positive(Shape s, Rng& rng, double lo, double hi) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline std::vector<OpCase> primitive_op_cases() {
    std::vector<OpCase> cases;
    auto push = [&](std::string name, std::function<std::vector<Tensor>(Rng&)> sample, ScalarFn loss) {
        cases.push_back({std::move(name), std::move(sample), std::move(loss)});
    };

    auto two_of = [](Shape s) {
        return [s](Rng& rng) {
            std::vector<Tensor> v;
            v.push_back(sample_away_from_zero(s, rng, 0.2, 2.0));
            v.push_back(sample_away_from_zero(s, rng, 0.2, 2.0));
            return v;
        };
    };
    auto one_of = [](Shape s, double lo, double hi, bool signed_vals) {
        return [s, lo, hi, signed_vals](Rng& rng) {
            std::vector<Tensor> v;
            v.push_back(signed_vals ? sample_away_from_zero(s, rng, lo, hi) : sample_positive(s, rng, lo, hi));
            return v;
        };
    };
    // weight the reduced value so the outer loss is not trivially linear
    auto quad = [](Tape& t, Var x) { return t.sum_all(t.mul(x, x)); };

    push("add", two_of({2, 3}), [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.add(in[0], in[1])); });
    push("sub", two_of({2, 3}), [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.sub(in[0], in[1])); });
    push("mul", two_of({2, 3}), [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.mul(in[0], in[1])); });
    push("neg", one_of({5}, 0.2, 2.0, true), [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.neg(in[0])); });
    push("scale", one_of({5}, 0.2, 2.0, true),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.scale(in[0], -1.7)); });
    push("add_const", one_of({5}, 0.2, 2.0, true),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.add_const(in[0], 0.31)); });
    push("recip", one_of({5}, 0.4, 2.0, true),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.recip(in[0])); });
    push("sqrt", one_of({5}, 0.3, 3.0, false),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.sqrt(in[0])); });
    push("exp", one_of({5}, 0.1, 1.2, true),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.exp(in[0])); });
    push("log", one_of({5}, 0.3, 3.0, false),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.log(in[0])); });
    push("relu", one_of({6}, 0.05, 2.0, true),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.relu(in[0])); });
    push("matmul",
         [](Rng& rng) {
             std::vector<Tensor> v;
             v.push_back(sample_away_from_zero({2, 3}, rng, 0.2, 1.5));
             v.push_back(sample_away_from_zero({3, 2}, rng, 0.2, 1.5));
             return v;
         },
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.matmul(in[0], in[1])); });
    push("transpose", one_of({2, 3}, 0.2, 2.0, true),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.transpose(in[0])); });
    push("row_sum", one_of({3, 4}, 0.2, 2.0, true),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.row_sum(in[0])); });
    push("tile_cols", one_of({3}, 0.2, 2.0, true),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.tile_cols(in[0], 4)); });
    push("col_sum", one_of({3, 4}, 0.2, 2.0, true),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.col_sum(in[0])); });
    push("tile_rows", one_of({3}, 0.2, 2.0, true),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.tile_rows(in[0], 4)); });
    push("sum_all", one_of({2, 3}, 0.2, 2.0, true), [](Tape& t, const std::vector<Var>& in) {
        Var s = t.sum_all(in[0]);
        return t.mul(s, s);
    });
    push("fill_like", one_of({}, 0.2, 2.0, true), [quad](Tape& t, const std::vector<Var>& in) {
        return quad(t, t.fill_like(in[0], Shape{2, 2}));
    });
    push("channel_sum", one_of({2, 3, 2, 2}, 0.2, 1.5, true),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.channel_sum(in[0])); });
    push("channel_bcast", one_of({3}, 0.2, 2.0, true), [quad](Tape& t, const std::vector<Var>& in) {
        return quad(t, t.channel_bcast(in[0], Shape{2, 3, 2, 2}));
    });
    push("conv2d",
         [](Rng& rng) {
             std::vector<Tensor> v;
             v.push_back(sample_away_from_zero({1, 2, 4, 4}, rng, 0.2, 1.2));
             v.push_back(sample_away_from_zero({2, 2, 3, 3}, rng, 0.2, 1.2));
             return v;
         },
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.conv2d(in[0], in[1], 1, 1)); });
    push("conv2d_strided",
         [](Rng& rng) {
             std::vector<Tensor> v;
             v.push_back(sample_away_from_zero({1, 1, 5, 5}, rng, 0.2, 1.2));
             v.push_back(sample_away_from_zero({2, 1, 3, 3}, rng, 0.2, 1.2));
             return v;
         },
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.conv2d(in[0], in[1], 2, 0)); });
    push("maxpool",
         [](Rng& rng) {
             // separate window entries so the argmax is FD-stable
             Tensor x({1, 1, 4, 4});
             std::vector<int> order(16);
             for (int i = 0; i < 16; ++i) order[i] = i;
             rng.shuffle(order);
             for (int i = 0; i < 16; ++i) x[order[i]] = 0.1 * i + rng.uniform(0.0, 0.03);
             return std::vector<Tensor>{x};
         },
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.maxpool(in[0], 2, 2)); });
    push("reshape", one_of({2, 3}, 0.2, 2.0, true),
         [quad](Tape& t, const std::vector<Var>& in) { return quad(t, t.reshape(in[0], Shape{3, 2})); });
    push("select_cols", one_of({3, 4}, 0.2, 2.0, true), [quad](Tape& t, const std::vector<Var>& in) {
        return quad(t, t.select_cols(in[0], {1, 0, 3}));
    });
    push("scatter_cols", one_of({3}, 0.2, 2.0, true), [quad](Tape& t, const std::vector<Var>& in) {
        return quad(t, t.scatter_cols(in[0], {2, 0, 1}, 4));
    });
    push("softmax_cross_entropy", one_of({2, 4}, 0.1, 1.5, true), [](Tape& t, const std::vector<Var>& in) {
        return fitq::softmax_cross_entropy(t, in[0], {2, 0});
    });
    return cases;
}

// Runs `points` random smooth points per primitive op; returns the worst
// grad_check discrepancy observed across all ops.
inline double run_all_op_gradchecks(int points, uint64_t seed, double epsilon,
                                    std::vector<std::pair<std::string, double>>* per_op = nullptr) {
    double worst = 0.0;
    for (const auto& c : primitive_op_cases()) {
        Rng rng(fitq::derive_seed(seed, c.name));
        double op_worst = 0.0;
        for (int i = 0; i < points; ++i) {
            std::vector<Tensor> inputs = c.sample(rng);
            op_worst = std::max(op_worst, fitq::grad_check(c.loss, inputs, epsilon));
        }
        if (per_op) per_op->push_back({c.name, op_worst});
        worst = std::max(worst, op_worst);
    }
    return worst;
}

}  // namespace fitq_test
