#pragma once

#include <optional>

#include "fitq/fit_metric.hpp"
#include "fitq/trace.hpp"

namespace fitq {

// Spearman rank correlation with average ranks for ties. Constant inputs are
// indeterminate (nullopt).
std::optional<double> spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct SweepRow {
    int64_t config_id = 0;
    BitConfig bits;
    double fit = 0.0, fit_w = 0.0, fit_a = 0.0, qr = 0.0, noise = 0.0;
    std::optional<double> bn;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    bool failed = false;
    uint64_t seed = 0;
    double wall_seconds = 0.0;
};

struct SweepOptions {
    int64_t n_configs = 24;
    std::vector<int> bit_set{8, 6, 4, 3};
    uint64_t seed = 0;
    TrainConfig qat_cfg;
    TraceOptions trace_opt;
    int64_t jobs = 1;
};

struct SweepOutput {
    std::vector<SweepRow> rows;
    TraceReport weight_traces;
    TraceReport act_traces;
    Ranges ranges;
    int64_t failed_count = 0;
};

// For each sampled BitConfig: score every heuristic from the FP model's
// traces and ranges, then QAT-fine-tune from the identical FP checkpoint and
// record final accuracies. Rows are seed-isolated and may run on `jobs`
// worker threads; results are reduced in config order.
SweepOutput run_sweep(const Model& fp_model, const Dataset& train_data, const Dataset& test_data,
                      const SweepOptions& opt);

struct CorrelationRow {
    std::string heuristic;
    std::optional<double> rho_test;   // Spearman(-score, test accuracy)
    std::optional<double> rho_train;  // Spearman(-score, train accuracy)
    int64_t samples = 0;
};

// Scores are inverse indicators (higher score, lower accuracy), so the
// negated score is correlated to keep signs positive for good predictors.
std::vector<CorrelationRow> correlate(const std::vector<SweepRow>& rows);

struct EstimatorBenchmark {
    // trace-normalized per-iteration variance, averaged over blocks
    double ef_variance = 0.0;
    double hutchinson_variance = 0.0;
    // median per-iteration wall time over repeats, seconds
    double ef_iter_seconds = 0.0;
    double hutchinson_iter_seconds = 0.0;
    double speedup = 0.0;  // (var_H * t_H) / (var_EF * t_EF), from the fields above
    int64_t iters = 0;
    int64_t repeats = 0;
    std::vector<double> ef_variance_repeats, hutchinson_variance_repeats;
    std::vector<double> ef_time_repeats, hutchinson_time_repeats;
};

EstimatorBenchmark benchmark_estimators(const Model& model, const Dataset& data, int64_t batch_size, int64_t iters,
                                        int64_t repeats, uint64_t seed);

// Speedup recomputed from reported variance/time numbers (formula self-test).
double estimator_speedup(double var_ef, double var_h, double t_ef, double t_h);

struct RankedConfig {
    BitConfig bits;
    double omega = 0.0;
    int64_t total_weight_bits = 0;
};

struct RankResult {
    std::vector<RankedConfig> feasible;  // ascending omega, lexicographic tie-break
    // when nothing is feasible: the smallest budget excess over all candidates
    std::optional<int64_t> tightest_violation;
};

RankResult rank_configs(const std::vector<QuantBlockInfo>& blocks, const std::map<std::string, double>& weight_traces,
                        const std::map<std::string, double>& act_traces, const Ranges& ranges,
                        const std::vector<BitConfig>& candidates, int64_t budget_bits);

}  // namespace fitq
