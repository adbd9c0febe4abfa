#include "fitq/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

namespace fitq {

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
    const size_t n = xs.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw ValidationError("spearman: length mismatch");
    if (xs.size() < 3) throw ValidationError("spearman: need at least 3 samples");
    const std::vector<double> rx = average_ranks(xs);
    const std::vector<double> ry = average_ranks(ys);
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;  // constant input: indeterminate
    return sxy / std::sqrt(sxx * syy);
}

SweepOutput run_sweep(const Model& fp_model, const Dataset& train_data, const Dataset& test_data,
                      const SweepOptions& opt) {
    if (opt.n_configs < 3) throw ValidationError("run_sweep: need at least 3 configs");
    if (opt.bit_set.empty()) throw ValidationError("run_sweep: empty bit set");

    SweepOutput out;

    // FP-model signals, computed once and shared by every row
    TraceOptions topt = opt.trace_opt;
    topt.seed = derive_seed(opt.seed, "sweep-traces");
    out.weight_traces = ef_weight_trace(fp_model, train_data, topt);
    out.act_traces = ef_activation_trace(fp_model, train_data, topt);
    out.ranges = track_ranges(fp_model, train_data, opt.trace_opt.batch_size);

    const std::map<std::string, double> wt = out.weight_traces.block_means();
    const std::map<std::string, double> at = out.act_traces.block_means();
    std::map<std::string, double> gammas = block_bn_gammas(fp_model);

    HeuristicInputs hin;
    hin.weight_traces = &wt;
    hin.act_traces = &at;
    hin.ranges = &out.ranges;
    hin.bn_gamma = gammas.empty() ? nullptr : &gammas;

    const std::vector<std::string> names = fp_model.block_names();
    out.rows.resize(static_cast<size_t>(opt.n_configs));

    auto run_row = [&](int64_t i) {
        SweepRow& row = out.rows[static_cast<size_t>(i)];
        row.config_id = i;
        row.seed = derive_seed(opt.seed, "sweep-row", static_cast<uint64_t>(i));
        row.bits = sample_bitconfig(names, opt.bit_set, derive_seed(opt.seed, "sweep-bits", static_cast<uint64_t>(i)));

        row.fit = heuristic_score(Heuristic::FIT, hin, row.bits);
        row.fit_w = heuristic_score(Heuristic::FIT_W, hin, row.bits);
        row.fit_a = heuristic_score(Heuristic::FIT_A, hin, row.bits);
        row.qr = heuristic_score(Heuristic::QR, hin, row.bits);
        row.noise = heuristic_score(Heuristic::NoiseOnly, hin, row.bits);
        if (hin.bn_gamma) row.bn = heuristic_score(Heuristic::BN, hin, row.bits);

        const auto t0 = std::chrono::steady_clock::now();
        try {
            TrainConfig qcfg = opt.qat_cfg;
            qcfg.seed = row.seed;
            QatResult qr = qat_finetune(fp_model, row.bits, train_data, test_data, qcfg, out.ranges);
            row.train_accuracy = qr.train_accuracy;
            row.test_accuracy = qr.test_accuracy;
        } catch (const NumericalError&) {
            row.failed = true;
        }
        row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    const int64_t jobs = std::max<int64_t>(1, opt.jobs);
    if (jobs == 1) {
        for (int64_t i = 0; i < opt.n_configs; ++i) run_row(i);
    } else {
        std::atomic<int64_t> next{0};
        std::vector<std::thread> pool;
        for (int64_t w = 0; w < jobs; ++w)
            pool.emplace_back([&]() {
                for (;;) {
                    const int64_t i = next.fetch_add(1);
                    if (i >= opt.n_configs) return;
                    run_row(i);
                }
            });
        for (auto& th : pool) th.join();
    }

    for (const auto& r : out.rows)
        if (r.failed) ++out.failed_count;
    return out;
}

std::vector<CorrelationRow> correlate(const std::vector<SweepRow>& rows) {
    std::vector<const SweepRow*> ok;
    for (const auto& r : rows)
        if (!r.failed) ok.push_back(&r);
    if (ok.size() < 3) throw ValidationError("correlate: need at least 3 successful rows, got " + std::to_string(ok.size()));

    std::vector<double> test_acc, train_acc;
    for (const auto* r : ok) {
        test_acc.push_back(r->test_accuracy);
        train_acc.push_back(r->train_accuracy);
    }

    std::vector<CorrelationRow> out;
    auto add = [&](const std::string& name, auto getter, bool present) {
        if (!present) return;
        std::vector<double> neg;
        for (const auto* r : ok) neg.push_back(-getter(*r));
        CorrelationRow c;
        c.heuristic = name;
        c.rho_test = spearman(neg, test_acc);
        c.rho_train = spearman(neg, train_acc);
        c.samples = static_cast<int64_t>(ok.size());
        out.push_back(std::move(c));
    };
    add("FIT", [](const SweepRow& r) { return r.fit; }, true);
    add("QR", [](const SweepRow& r) { return r.qr; }, true);
    add("Noise", [](const SweepRow& r) { return r.noise; }, true);
    add("FIT_W", [](const SweepRow& r) { return r.fit_w; }, true);
    add("FIT_A", [](const SweepRow& r) { return r.fit_a; }, true);
    add("BN", [](const SweepRow& r) { return r.bn.value_or(0.0); }, ok.front()->bn.has_value());
    return out;
}

double estimator_speedup(double var_ef, double var_h, double t_ef, double t_h) {
    return (var_h * t_h) / (var_ef * t_ef);
}

EstimatorBenchmark benchmark_estimators(const Model& model, const Dataset& data, int64_t batch_size, int64_t iters,
                                        int64_t repeats, uint64_t seed) {
    if (repeats < 3) throw ValidationError("benchmark_estimators: need at least 3 repeats to report dispersion");
    EstimatorBenchmark bench;
    bench.iters = iters;
    bench.repeats = repeats;

    auto normalized_variance = [](const TraceReport& rep) {
        // per-block variance of per-iteration values divided by the squared
        // block mean, averaged over blocks
        double acc = 0.0;
        int64_t used = 0;
        for (const auto& b : rep.blocks) {
            if (b.mean_trace == 0.0) continue;
            acc += b.variance / (b.mean_trace * b.mean_trace);
            ++used;
        }
        return used ? acc / static_cast<double>(used) : 0.0;
    };

    for (int64_t r = 0; r < repeats; ++r) {
        TraceOptions opt;
        opt.batch_size = batch_size;
        opt.max_iters = iters;
        opt.tolerance = 0.0;  // fixed iteration count for comparable statistics
        opt.seed = derive_seed(seed, "bench", static_cast<uint64_t>(r));

        auto t0 = std::chrono::steady_clock::now();
        TraceReport ef = ef_weight_trace(model, data, opt);
        auto t1 = std::chrono::steady_clock::now();
        TraceReport hu = hutchinson_trace(model, data, opt);
        auto t2 = std::chrono::steady_clock::now();

        bench.ef_variance_repeats.push_back(normalized_variance(ef));
        bench.hutchinson_variance_repeats.push_back(normalized_variance(hu));
        bench.ef_time_repeats.push_back(std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(iters));
        bench.hutchinson_time_repeats.push_back(std::chrono::duration<double>(t2 - t1).count() /
                                                static_cast<double>(iters));
    }

    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto median_of = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };

    bench.ef_variance = mean_of(bench.ef_variance_repeats);
    bench.hutchinson_variance = mean_of(bench.hutchinson_variance_repeats);
    bench.ef_iter_seconds = median_of(bench.ef_time_repeats);
    bench.hutchinson_iter_seconds = median_of(bench.hutchinson_time_repeats);
    bench.speedup =
        estimator_speedup(bench.ef_variance, bench.hutchinson_variance, bench.ef_iter_seconds, bench.hutchinson_iter_seconds);
    return bench;
}

RankResult rank_configs(const std::vector<QuantBlockInfo>& blocks, const std::map<std::string, double>& weight_traces,
                        const std::map<std::string, double>& act_traces, const Ranges& ranges,
                        const std::vector<BitConfig>& candidates, int64_t budget_bits) {
    if (candidates.empty()) throw ValidationError("rank_configs: no candidates");
    if (budget_bits <= 0) throw ValidationError("rank_configs: budget must be positive");

    RankResult out;
    int64_t min_excess = std::numeric_limits<int64_t>::max();
    for (const auto& cand : candidates) {
        int64_t total = 0;
        for (const auto& b : blocks) {
            const LayerBits* lb = cand.find(b.name);
            if (!lb) throw ValidationError("rank_configs: candidate missing layer '" + b.name + "'");
            total += b.n * lb->w_bits;
        }
        if (total > budget_bits) {
            min_excess = std::min(min_excess, total - budget_bits);
            continue;
        }
        RankedConfig rc;
        rc.bits = cand;
        rc.total_weight_bits = total;
        rc.omega = fit_metric(weight_traces, act_traces, cand, ranges).omega;
        out.feasible.push_back(std::move(rc));
    }
    std::stable_sort(out.feasible.begin(), out.feasible.end(), [](const RankedConfig& a, const RankedConfig& b) {
        if (a.omega != b.omega) return a.omega < b.omega;
        return a.bits < b.bits;  // lexicographic tie-break
    });
    if (out.feasible.empty()) out.tightest_violation = min_excess;
    return out;
}

}  // namespace fitq
