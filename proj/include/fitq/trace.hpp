#pragma once

#include <deque>

#include "fitq/autodiff_check.hpp"
#include "fitq/data.hpp"
#include "fitq/model.hpp"

namespace fitq {

// Stops once the relative standard error of the running mean has stayed
// below `tolerance` for a full trailing window. A running mean of exactly
// zero with nonzero spread falls back to the absolute criterion (flagged).
// tolerance == 0 disables stopping (every iteration runs).
class ConvergenceMonitor {
  public:
    ConvergenceMonitor(double tolerance, int64_t window);

    void add(double v);
    bool converged() const;
    int64_t count() const { return count_; }
    double mean() const { return mean_; }
    double variance() const;  // sample variance of per-iteration estimates
    double rel_se() const;
    bool absolute_fallback_used() const { return fallback_; }

  private:
    double tolerance_;
    int64_t window_;
    int64_t count_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
    std::deque<double> recent_ok_;
    mutable bool fallback_ = false;
};

struct BlockTrace {
    std::string name;
    double mean_trace = 0.0;
    double variance = 0.0;     // sample variance of per-iteration estimates
    int64_t iterations = 0;    // iterations contributing to this block
    int64_t n = 0;             // weight count, or activation elements per example
};

struct TraceOptions {
    int64_t batch_size = 32;
    double tolerance = 0.01;
    int64_t max_iters = 200;
    int64_t window = 20;
    uint64_t seed = 0;
    bool per_parameter = false;  // divide block traces by n(l)
    bool record_iterations = false;
};

struct TraceReport {
    std::string estimator;  // ef_weight | ef_activation | hutchinson
    std::vector<BlockTrace> blocks;
    int64_t batch_size = 0;
    uint64_t seed = 0;
    double tolerance = 0.0;
    int64_t max_iters = 0;
    int64_t window = 0;
    bool per_parameter = false;
    bool converged = false;
    int64_t iterations = 0;
    // per-iteration per-block values when record_iterations was set
    std::vector<std::vector<double>> iteration_values;

    std::map<std::string, double> block_means() const;
    const BlockTrace* find(const std::string& name) const;
};

// Tr per block of the empirical Fisher over block weights: the running mean,
// over sampled batches, of per-example squared gradient norms.
TraceReport ef_weight_trace(const Model& model, const Dataset& data, const TraceOptions& opt);

// Same estimator with derivatives taken at the activation sites; a block's
// per-example contribution is the summed squared gradient over site elements.
TraceReport ef_activation_trace(const Model& model, const Dataset& data, const TraceOptions& opt);

// Hutchinson estimator of per-block Hessian traces via Rademacher probes
// restricted to each block's weight coordinates.
TraceReport hutchinson_trace(const Model& model, const Dataset& data, const TraceOptions& opt);

// Hutchinson on an explicit symmetric matrix (oracle route).
TraceReport hutchinson_trace_matrix(const Tensor& H, int64_t m, uint64_t seed, double tolerance = 0.0,
                                    int64_t window = 20);

// 2 (||H||_F^2 - sum_i H_ii^2) for symmetric H.
double hutchinson_variance_predict(const Tensor& H);

// Explicit (1/N) sum g g^T over per-example gradients of the block weights,
// flattened in block order. Oracle-scale only.
Tensor empirical_fisher_matrix(const Model& model, const Dataset& data);

struct FisherHessianGap {
    double gap = 0.0;  // |Tr F - Tr H| / |Tr H|
    double tr_fisher = 0.0;
    double tr_hessian = 0.0;
    bool indeterminate = false;  // Tr H ~ 0
};

// Realizable-regime agreement check: labels are sampled from the model's own
// predictive distribution on `inputs`, the empirical Fisher trace is compared
// against the exact Hessian trace over the same inputs.
FisherHessianGap fisher_hessian_agreement(const Model& model, const Tensor& inputs, uint64_t label_seed);

// Same comparison with caller-fixed labels (misspecified regime).
FisherHessianGap fisher_hessian_gap_with_labels(const Model& model, const Tensor& inputs,
                                                const std::vector<int64_t>& labels);

}  // namespace fitq
