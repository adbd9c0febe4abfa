#include "fitq/train.hpp"

#include <cmath>

namespace fitq {

void TrainConfig::validate() const {
    if (epochs < 1) throw ValidationError("train config: epochs must be >= 1, got " + std::to_string(epochs));
    if (batch_size < 1) throw ValidationError("train config: batch size must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("train config: learning rate must be >= 0");
}

double scheduled_lr(const TrainConfig& cfg, int64_t epoch) {
    if (cfg.schedule == ScheduleKind::constant) return cfg.lr;
    const double frac = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
    return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

std::map<std::string, Range> tracker_ranges(const std::map<std::string, RangeTracker>& trackers) {
    std::map<std::string, Range> out;
    for (const auto& [name, tr] : trackers)
        if (tr.seen()) out[name] = tr.range();
    return out;
}

namespace {

class AdamState {
  public:
    void init(const std::vector<Tensor*>& params) {
        m_.clear();
        v_.clear();
        for (Tensor* p : params) {
            m_.emplace_back(p->shape());
            v_.emplace_back(p->shape());
        }
        step_ = 0;
    }

    void update(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr) {
        ++step_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = grads[i];
            for (int64_t j = 0; j < p.size(); ++j) {
                m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * g[j];
                v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * g[j] * g[j];
                p[j] -= lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps);
            }
        }
    }

  private:
    std::vector<Tensor> m_, v_;
    int64_t step_ = 0;
};

}  // namespace

TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg, QatTraining* qat) {
    cfg.validate();
    data.validate();

    std::vector<Tensor*> params = model.trainable_params();
    AdamState adam;
    if (cfg.optimizer == OptimizerKind::adam) adam.init(params);

    Rng shuffle_rng(derive_seed(cfg.seed, "batch-order"));
    std::vector<int64_t> order(static_cast<size_t>(data.size()));
    for (int64_t i = 0; i < data.size(); ++i) order[static_cast<size_t>(i)] = i;

    TrainResult result;
    result.epoch_loss.reserve(static_cast<size_t>(cfg.epochs));

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = scheduled_lr(cfg, epoch);
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        int64_t batches = 0;
        for (int64_t start = 0; start < data.size(); start += cfg.batch_size) {
            const int64_t end = std::min<int64_t>(start + cfg.batch_size, data.size());
            std::vector<int64_t> idx(order.begin() + start, order.begin() + end);
            Tensor x = data.batch(idx);
            std::vector<int64_t> y = data.batch_labels(idx);

            Tape t;
            QatForward qfwd;
            std::map<std::string, Range> act_ranges;
            if (qat) {
                act_ranges = tracker_ranges(*qat->act_trackers);
                qfwd.bits = qat->bits;
                qfwd.act_ranges = &act_ranges;
            }
            ModelForward fwd = model.build_forward(t, x, true, qat ? &qfwd : nullptr);
            Var loss = softmax_cross_entropy(t, fwd.logits, y);
            const double loss_val = t.value(loss).item();
            if (!std::isfinite(loss_val))
                throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ": non-finite loss");
            loss_sum += loss_val;
            ++batches;

            std::vector<Var> gvars = t.grad(loss, fwd.trainables);
            std::vector<Tensor> grads = t.values(gvars);
            for (size_t i = 0; i < params.size(); ++i) params[i]->set_grad(grads[i]);

            if (cfg.optimizer == OptimizerKind::adam) {
                adam.update(params, grads, lr);
            } else {
                for (size_t i = 0; i < params.size(); ++i) {
                    Tensor& p = *params[i];
                    for (int64_t j = 0; j < p.size(); ++j) p[j] -= lr * grads[i][j];
                }
            }
            model.update_bn_running(t, fwd);

            if (qat) {
                // observe the pre-quantizer site values from this batch
                for (const auto& [name, site] : fwd.sites) {
                    auto it = qat->act_trackers->find(name);
                    if (it != qat->act_trackers->end()) it->second.observe(t.value(site));
                }
            }
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    }
    return result;
}

EvalResult evaluate(const Model& model, const Dataset& data, const QatForward* qat) {
    data.validate();
    if (model.num_classes() != data.num_classes)
        throw ValidationError("evaluate: model outputs " + std::to_string(model.num_classes()) +
                              " classes, dataset has " + std::to_string(data.num_classes));

    const int64_t chunk = 256;
    int64_t correct = 0;
    long double loss_sum = 0.0L;
    for (int64_t start = 0; start < data.size(); start += chunk) {
        const int64_t end = std::min<int64_t>(start + chunk, data.size());
        std::vector<int64_t> idx;
        idx.reserve(static_cast<size_t>(end - start));
        for (int64_t i = start; i < end; ++i) idx.push_back(i);
        Tensor x = data.batch(idx);
        std::vector<int64_t> y = data.batch_labels(idx);

        Tape t;
        ModelForward fwd = model.build_forward(t, x, false, qat);
        const Tensor& z = t.value(fwd.logits);
        const int64_t m = z.dim(0), k = z.dim(1);
        for (int64_t i = 0; i < m; ++i) {
            int64_t best = 0;
            for (int64_t j = 1; j < k; ++j)
                if (z[i * k + j] > z[i * k + best]) best = j;
            if (best == y[static_cast<size_t>(i)]) ++correct;
            // per-example CE accumulated at full precision
            double mx = z[i * k];
            for (int64_t j = 1; j < k; ++j) mx = std::max(mx, z[i * k + j]);
            double lse = 0.0;
            for (int64_t j = 0; j < k; ++j) lse += std::exp(z[i * k + j] - mx);
            loss_sum += std::log(lse) + mx - z[i * k + y[static_cast<size_t>(i)]];
        }
    }
    EvalResult r;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    r.mean_loss = static_cast<double>(loss_sum / static_cast<long double>(data.size()));
    return r;
}

}  // namespace fitq
