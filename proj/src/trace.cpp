#include "fitq/trace.hpp"

#include <cmath>

namespace fitq {

ConvergenceMonitor::ConvergenceMonitor(double tolerance, int64_t window) : tolerance_(tolerance), window_(window) {
    if (tolerance < 0.0) throw ValidationError("convergence monitor: tolerance must be >= 0");
    if (window < 2) throw ValidationError("convergence monitor: window must be >= 2");
}

void ConvergenceMonitor::add(double v) {
    ++count_;
    const double d = v - mean_;
    mean_ += d / static_cast<double>(count_);
    m2_ += d * (v - mean_);
    if (tolerance_ <= 0.0) return;  // stopping disabled
    recent_ok_.push_back(rel_se());
    if (static_cast<int64_t>(recent_ok_.size()) > window_) recent_ok_.pop_front();
}

double ConvergenceMonitor::variance() const {
    return count_ > 1 ? m2_ / static_cast<double>(count_ - 1) : 0.0;
}

double ConvergenceMonitor::rel_se() const {
    const double se = std::sqrt(variance() / static_cast<double>(count_));
    if (mean_ == 0.0) {
        if (se > 0.0) fallback_ = true;  // absolute-tolerance fallback
        return se;
    }
    return se / std::fabs(mean_);
}

bool ConvergenceMonitor::converged() const {
    if (tolerance_ <= 0.0) return false;
    if (static_cast<int64_t>(recent_ok_.size()) < window_) return false;
    for (double r : recent_ok_)
        if (!(r < tolerance_)) return false;
    return true;
}

std::map<std::string, double> TraceReport::block_means() const {
    std::map<std::string, double> out;
    for (const auto& b : blocks) out[b.name] = b.mean_trace;
    return out;
}

const BlockTrace* TraceReport::find(const std::string& name) const {
    for (const auto& b : blocks)
        if (b.name == name) return &b;
    return nullptr;
}

namespace {

// Seeded batch sampler: shuffled epochs, wrap-around reshuffle.
class BatchSampler {
  public:
    BatchSampler(int64_t n, int64_t batch, uint64_t seed) : n_(n), batch_(std::min(batch, n)), rng_(seed) {
        order_.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) order_[static_cast<size_t>(i)] = i;
        rng_.shuffle(order_);
    }

    std::vector<int64_t> next() {
        std::vector<int64_t> idx;
        idx.reserve(static_cast<size_t>(batch_));
        for (int64_t k = 0; k < batch_; ++k) {
            if (pos_ == n_) {
                rng_.shuffle(order_);
                pos_ = 0;
            }
            idx.push_back(order_[static_cast<size_t>(pos_++)]);
        }
        return idx;
    }

  private:
    int64_t n_, batch_;
    Rng rng_;
    std::vector<int64_t> order_;
    int64_t pos_ = 0;
};

struct EstimatorLoop {
    TraceReport report;
    std::vector<ConvergenceMonitor> monitors;
    std::vector<std::string> names;

    EstimatorLoop(std::string kind, const std::vector<std::string>& block_names, const TraceOptions& opt) {
        names = block_names;
        report.estimator = std::move(kind);
        report.batch_size = opt.batch_size;
        report.seed = opt.seed;
        report.tolerance = opt.tolerance;
        report.max_iters = opt.max_iters;
        report.window = opt.window;
        report.per_parameter = opt.per_parameter;
        for (size_t i = 0; i < block_names.size(); ++i) monitors.emplace_back(opt.tolerance, opt.window);
    }

    // returns true when all blocks satisfied the stopping criterion
    bool add(const std::vector<double>& values, const TraceOptions& opt) {
        if (opt.record_iterations) report.iteration_values.push_back(values);
        for (size_t b = 0; b < monitors.size(); ++b) monitors[b].add(values[b]);
        for (const auto& m : monitors)
            if (!m.converged()) return false;
        return true;
    }

    TraceReport finish(const std::vector<int64_t>& block_n, int64_t iters, bool converged) {
        report.iterations = iters;
        report.converged = converged;
        for (size_t b = 0; b < monitors.size(); ++b) {
            BlockTrace bt;
            bt.name = names[b];
            bt.n = block_n[b];
            const double scale = report.per_parameter ? 1.0 / static_cast<double>(block_n[b]) : 1.0;
            bt.mean_trace = monitors[b].mean() * scale;
            bt.variance = monitors[b].variance() * scale * scale;
            bt.iterations = monitors[b].count();
            report.blocks.push_back(std::move(bt));
        }
        return std::move(report);
    }
};

void validate_trace_inputs(const Model&, const Dataset& data, const TraceOptions& opt) {
    data.validate();
    if (opt.batch_size < 1) throw ValidationError("trace: batch_size must be >= 1");
    if (opt.max_iters < 1) throw ValidationError("trace: max_iters must be >= 1");
}

// per-example squared gradient norms, summed into `acc` per block
template <typename SiteSelector>
void accumulate_example_sq_norms(const Model& model, const Tensor& x, int64_t label, SiteSelector select,
                                 std::vector<double>& acc, int64_t batch_index) {
    Tape t;
    ModelForward fwd = model.build_forward(t, x, false);
    Var loss = softmax_cross_entropy(t, fwd.logits, {label});
    std::vector<Var> wrt = select(fwd);
    std::vector<Var> gvars = t.grad(loss, wrt);
    for (size_t b = 0; b < gvars.size(); ++b) {
        const Tensor& g = t.value(gvars[b]);
        if (!g.all_finite())
            throw NumericalError("non-finite gradient in block " + std::to_string(b) + " at batch " +
                                 std::to_string(batch_index));
        acc[b] += squared_norm(g);
    }
}

}  // namespace

TraceReport ef_weight_trace(const Model& model, const Dataset& data, const TraceOptions& opt) {
    validate_trace_inputs(model, data, opt);
    std::vector<std::string> names = model.block_names();
    std::vector<int64_t> block_n;
    for (const auto& b : model.blocks()) block_n.push_back(b.n);

    EstimatorLoop loop("ef_weight", names, opt);
    BatchSampler sampler(data.size(), opt.batch_size, derive_seed(opt.seed, "ef-weight"));
    int64_t iter = 0;
    bool converged = false;
    for (; iter < opt.max_iters && !converged; ) {
        std::vector<int64_t> idx = sampler.next();
        std::vector<double> acc(names.size(), 0.0);
        for (int64_t i : idx) {
            accumulate_example_sq_norms(
                model, data.example(i), data.labels[static_cast<size_t>(i)],
                [](const ModelForward& f) {
                    std::vector<Var> w;
                    for (const auto& [name, v] : f.weight_vars) w.push_back(v);
                    return w;
                },
                acc, iter);
        }
        for (auto& a : acc) a /= static_cast<double>(idx.size());
        ++iter;
        converged = loop.add(acc, opt);
    }
    return loop.finish(block_n, iter, converged);
}

TraceReport ef_activation_trace(const Model& model, const Dataset& data, const TraceOptions& opt) {
    validate_trace_inputs(model, data, opt);
    std::vector<std::string> names = model.block_names();

    // site element counts per example
    std::vector<int64_t> site_n(names.size(), 0);
    {
        Tape t;
        ModelForward fwd = model.build_forward(t, data.example(0), false);
        for (size_t b = 0; b < fwd.sites.size(); ++b) site_n[b] = t.value(fwd.sites[b].second).size();
    }

    EstimatorLoop loop("ef_activation", names, opt);
    BatchSampler sampler(data.size(), opt.batch_size, derive_seed(opt.seed, "ef-activation"));
    int64_t iter = 0;
    bool converged = false;
    for (; iter < opt.max_iters && !converged; ) {
        std::vector<int64_t> idx = sampler.next();
        std::vector<double> acc(names.size(), 0.0);
        for (int64_t i : idx) {
            accumulate_example_sq_norms(
                model, data.example(i), data.labels[static_cast<size_t>(i)],
                [](const ModelForward& f) {
                    std::vector<Var> s;
                    for (const auto& [name, v] : f.sites) s.push_back(v);
                    return s;
                },
                acc, iter);
        }
        for (auto& a : acc) a /= static_cast<double>(idx.size());
        ++iter;
        converged = loop.add(acc, opt);
    }
    return loop.finish(site_n, iter, converged);
}

TraceReport hutchinson_trace(const Model& model, const Dataset& data, const TraceOptions& opt) {
    validate_trace_inputs(model, data, opt);
    std::vector<std::string> names = model.block_names();
    std::vector<int64_t> block_n;
    for (const auto& b : model.blocks()) block_n.push_back(b.n);

    EstimatorLoop loop("hutchinson", names, opt);
    BatchSampler sampler(data.size(), opt.batch_size, derive_seed(opt.seed, "hutchinson-batches"));
    Rng probe_rng(derive_seed(opt.seed, "hutchinson-probes"));
    int64_t iter = 0;
    bool converged = false;
    for (; iter < opt.max_iters && !converged; ) {
        std::vector<int64_t> idx = sampler.next();
        Tensor x = data.batch(idx);
        std::vector<int64_t> y = data.batch_labels(idx);

        Tape t;
        ModelForward fwd = model.build_forward(t, x, false);
        Var loss = softmax_cross_entropy(t, fwd.logits, y);
        std::vector<Var> wvars;
        for (const auto& [name, v] : fwd.weight_vars) wvars.push_back(v);
        std::vector<Var> gvars = t.grad(loss, wvars);

        std::vector<double> vals(names.size(), 0.0);
        for (size_t b = 0; b < wvars.size(); ++b) {
            Tensor probe(t.value(wvars[b]).shape());
            for (int64_t j = 0; j < probe.size(); ++j) probe[j] = probe_rng.rademacher();
            Var pv = t.leaf(probe, false);
            Var inner = t.sum_all(t.mul(gvars[b], pv));
            std::vector<Var> hv = t.grad(inner, std::vector<Var>{wvars[b]});
            const Tensor& hvv = t.value(hv[0]);
            if (!hvv.all_finite())
                throw NumericalError("non-finite Hessian-vector product in block " + names[b] + " at batch " +
                                     std::to_string(iter));
            vals[b] = dot(probe, hvv);
        }
        ++iter;
        converged = loop.add(vals, opt);
    }
    return loop.finish(block_n, iter, converged);
}

TraceReport hutchinson_trace_matrix(const Tensor& H, int64_t m, uint64_t seed, double tolerance, int64_t window) {
    if (H.rank() != 2 || H.dim(0) != H.dim(1)) throw ValidationError("hutchinson: H must be square");
    const int64_t n = H.dim(0);
    TraceOptions opt;
    opt.batch_size = 1;
    opt.tolerance = tolerance;
    opt.max_iters = m;
    opt.window = window;
    opt.seed = seed;
    EstimatorLoop loop("hutchinson", {"matrix"}, opt);
    Rng rng(seed);
    std::vector<double> r(static_cast<size_t>(n));
    int64_t iter = 0;
    bool converged = false;
    for (; iter < m && !converged; ) {
        for (auto& v : r) v = rng.rademacher();
        // r^T H r
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            double hr = 0.0;
            for (int64_t j = 0; j < n; ++j) hr += H[i * n + j] * r[static_cast<size_t>(j)];
            acc += r[static_cast<size_t>(i)] * hr;
        }
        ++iter;
        converged = loop.add({acc}, opt);
    }
    return loop.finish({n}, iter, converged);
}

double hutchinson_variance_predict(const Tensor& H) {
    if (H.rank() != 2 || H.dim(0) != H.dim(1)) throw ValidationError("hutchinson_variance_predict: H must be square");
    const int64_t n = H.dim(0);
    double frob2 = 0.0, diag2 = 0.0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            const double v = H[i * n + j];
            frob2 += v * v;
            if (i == j) diag2 += v * v;
        }
    return 2.0 * (frob2 - diag2);
}

Tensor empirical_fisher_matrix(const Model& model, const Dataset& data) {
    data.validate();
    const int64_t n = model.total_quantizable_params();
    if (n > kExactHessianLimit)
        throw ValidationError("empirical_fisher_matrix: " + std::to_string(n) + " parameters exceeds oracle limit " +
                              std::to_string(kExactHessianLimit));
    Tensor F(Shape{n, n});
    const int64_t N = data.size();
    for (int64_t i = 0; i < N; ++i) {
        Tape t;
        ModelForward fwd = model.build_forward(t, data.example(i), false);
        Var loss = softmax_cross_entropy(t, fwd.logits, {data.labels[static_cast<size_t>(i)]});
        std::vector<Var> wvars;
        for (const auto& [name, v] : fwd.weight_vars) wvars.push_back(v);
        Tensor g = flatten_all(t.values(t.grad(loss, wvars)));
        for (int64_t a = 0; a < n; ++a) {
            if (g[a] == 0.0) continue;
            for (int64_t b = 0; b < n; ++b) F[a * n + b] += g[a] * g[b];
        }
    }
    for (int64_t i = 0; i < n * n; ++i) F[i] /= static_cast<double>(N);
    return F;
}

namespace {

FisherHessianGap gap_from(const Model& model, const Tensor& inputs, const std::vector<int64_t>& labels) {
    const int64_t N = inputs.dim(0);

    // Tr F = mean per-example squared gradient norm over block weights
    double tr_f = 0.0;
    const Shape in_chw = model.input_shape();
    const int64_t stride = in_chw[0] * in_chw[1] * in_chw[2];
    for (int64_t i = 0; i < N; ++i) {
        Tensor xi(Shape{1, in_chw[0], in_chw[1], in_chw[2]});
        for (int64_t j = 0; j < stride; ++j) xi[j] = inputs[i * stride + j];
        Tape t;
        ModelForward fwd = model.build_forward(t, xi, false);
        Var loss = softmax_cross_entropy(t, fwd.logits, {labels[static_cast<size_t>(i)]});
        std::vector<Var> wvars;
        for (const auto& [name, v] : fwd.weight_vars) wvars.push_back(v);
        for (Var g : t.grad(loss, wvars)) tr_f += squared_norm(t.value(g));
    }
    tr_f /= static_cast<double>(N);

    // Tr H of the mean loss over the same inputs, via exact HVP columns
    std::vector<Tensor> block_weights;
    for (const auto& pb : model.parameter_blocks()) block_weights.push_back(pb.weights);
    ScalarFn loss_fn = [&model, &inputs, &labels](Tape& t, const std::vector<Var>& params) {
        ModelForward fwd = model.build_forward(t, inputs, false, nullptr, &params);
        return softmax_cross_entropy(t, fwd.logits, labels);
    };
    double tr_h = 0.0;
    {
        int64_t n = 0;
        for (const auto& w : block_weights) n += w.size();
        Tensor e(Shape{n});
        for (int64_t j = 0; j < n; ++j) {
            e[j] = 1.0;
            Tensor col = hessian_vector_product(loss_fn, block_weights, e);
            e[j] = 0.0;
            tr_h += col[j];
        }
    }

    FisherHessianGap out;
    out.tr_fisher = tr_f;
    out.tr_hessian = tr_h;
    if (std::fabs(tr_h) < 1e-12) {
        out.indeterminate = true;
        out.gap = 0.0;
        return out;
    }
    out.gap = std::fabs(tr_f - tr_h) / std::fabs(tr_h);
    return out;
}

}  // namespace

FisherHessianGap fisher_hessian_agreement(const Model& model, const Tensor& inputs, uint64_t label_seed) {
    const int64_t N = inputs.dim(0);
    Tensor probs = model.predict_probs(inputs);
    const int64_t k = probs.dim(1);
    Rng rng(label_seed);
    std::vector<int64_t> labels(static_cast<size_t>(N));
    for (int64_t i = 0; i < N; ++i) {
        const double u = rng.uniform();
        double cum = 0.0;
        int64_t cls = k - 1;
        for (int64_t j = 0; j < k; ++j) {
            cum += probs[i * k + j];
            if (u < cum) {
                cls = j;
                break;
            }
        }
        labels[static_cast<size_t>(i)] = cls;
    }
    return gap_from(model, inputs, labels);
}

FisherHessianGap fisher_hessian_gap_with_labels(const Model& model, const Tensor& inputs,
                                                const std::vector<int64_t>& labels) {
    return gap_from(model, inputs, labels);
}

}  // namespace fitq
