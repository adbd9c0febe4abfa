#include "fitq/qat.hpp"

namespace fitq {

Ranges track_ranges(const Model& model, const Dataset& calibration, int64_t batch_size, double ema_decay) {
    calibration.validate();
    Ranges r;
    r.ema_decay = ema_decay;

    for (const auto& block : model.parameter_blocks()) {
        RangeTracker tr(RangeTracker::Mode::minmax);
        tr.observe(block.weights);
        r.weight[block.layer] = tr.range();
    }

    std::map<std::string, RangeTracker> act;
    for (const auto& name : model.block_names()) act.emplace(name, RangeTracker(RangeTracker::Mode::ema, ema_decay));
    for (int64_t start = 0; start < calibration.size(); start += batch_size) {
        const int64_t end = std::min<int64_t>(start + batch_size, calibration.size());
        std::vector<int64_t> idx;
        for (int64_t i = start; i < end; ++i) idx.push_back(i);
        Tape t;
        ModelForward fwd = model.build_forward(t, calibration.batch(idx), false);
        for (const auto& [name, site] : fwd.sites) act.at(name).observe(t.value(site));
    }
    r.act = tracker_ranges(act);
    return r;
}

QatResult qat_finetune(const Model& fp_model, const BitConfig& bits, const Dataset& train_data,
                       const Dataset& test_data, const TrainConfig& cfg, const Ranges& calibrated) {
    for (const auto& name : fp_model.block_names())
        if (!bits.find(name)) throw ValidationError("qat_finetune: bit config missing layer '" + name + "'");

    QatResult out;
    out.model = fp_model;

    std::map<std::string, RangeTracker> trackers;
    for (const auto& name : out.model.block_names()) {
        RangeTracker tr(RangeTracker::Mode::ema, calibrated.ema_decay);
        auto it = calibrated.act.find(name);
        if (it != calibrated.act.end()) {
            Tensor seedvals({2}, {it->second.lo, it->second.hi});
            tr.observe(seedvals);
        }
        trackers.emplace(name, std::move(tr));
    }

    QatTraining qt;
    qt.bits = &bits;
    qt.act_trackers = &trackers;
    TrainResult tr = train(out.model, train_data, cfg, &qt);
    out.epoch_loss = std::move(tr.epoch_loss);

    out.final_ranges.weight = track_ranges(out.model, train_data, cfg.batch_size, calibrated.ema_decay).weight;
    out.final_ranges.act = tracker_ranges(trackers);
    out.final_ranges.ema_decay = calibrated.ema_decay;

    std::map<std::string, Range> act_ranges = out.final_ranges.act;
    QatForward qf;
    qf.bits = &bits;
    qf.act_ranges = &act_ranges;
    out.train_accuracy = evaluate(out.model, train_data, &qf).accuracy;
    out.test_accuracy = evaluate(out.model, test_data, &qf).accuracy;
    return out;
}

}  // namespace fitq
