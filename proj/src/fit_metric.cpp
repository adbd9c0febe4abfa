#include "fitq/fit_metric.hpp"

#include <cmath>

namespace fitq {

namespace {

double lookup(const std::map<std::string, double>& m, const std::string& layer, const char* what) {
    auto it = m.find(layer);
    if (it == m.end()) throw ValidationError(std::string("fit_metric: missing ") + what + " for layer '" + layer + "'");
    return it->second;
}

Range lookup_range(const std::map<std::string, Range>& m, const std::string& layer, const char* what) {
    auto it = m.find(layer);
    if (it == m.end()) throw ValidationError(std::string("fit_metric: missing ") + what + " range for layer '" + layer + "'");
    return it->second;
}

}  // namespace

FITReport fit_metric(const std::map<std::string, double>& weight_traces,
                     const std::map<std::string, double>& act_traces, const BitConfig& bits, const Ranges& ranges,
                     const FitOptions& opt) {
    if (bits.layers.empty()) throw ValidationError("fit_metric: empty bit config");
    if (opt.weights_only && opt.acts_only) throw ValidationError("fit_metric: weights_only and acts_only both set");

    FITReport rep;
    rep.bits = bits;
    rep.include_twelfth = opt.include_twelfth;
    rep.weights_only = opt.weights_only;
    rep.acts_only = opt.acts_only;

    for (const auto& lb : bits.layers) {
        BlockContribution c;
        c.layer = lb.layer;
        if (!opt.acts_only) {
            const double tr = lookup(weight_traces, lb.layer, "weight trace");
            const Range r = lookup_range(ranges.weight, lb.layer, "weight");
            c.weight_term = tr * noise_power(r.width(), lb.w_bits, opt.include_twelfth);
        }
        if (!opt.weights_only) {
            const double tr = lookup(act_traces, lb.layer, "activation trace");
            const Range r = lookup_range(ranges.act, lb.layer, "activation");
            c.act_term = tr * noise_power(r.width(), lb.a_bits, opt.include_twelfth);
        }
        rep.blocks.push_back(std::move(c));
    }
    double omega = 0.0;
    for (const auto& c : rep.blocks) omega += c.weight_term;
    for (const auto& c : rep.blocks) omega += c.act_term;
    rep.omega = omega;
    return rep;
}

const char* heuristic_name(Heuristic h) {
    switch (h) {
        case Heuristic::FIT: return "FIT";
        case Heuristic::QR: return "QR";
        case Heuristic::BN: return "BN";
        case Heuristic::NoiseOnly: return "Noise";
        case Heuristic::FIT_W: return "FIT_W";
        case Heuristic::FIT_A: return "FIT_A";
    }
    return "?";
}

double heuristic_score(Heuristic h, const HeuristicInputs& in, const BitConfig& bits) {
    if (!in.ranges) throw ValidationError("heuristic_score: ranges required");
    const Ranges& ranges = *in.ranges;

    auto np_w = [&](const LayerBits& lb) {
        return noise_power(lookup_range(ranges.weight, lb.layer, "weight").width(), lb.w_bits, in.include_twelfth);
    };
    auto np_a = [&](const LayerBits& lb) -> double {
        auto it = ranges.act.find(lb.layer);
        if (it == ranges.act.end()) return 0.0;
        return noise_power(it->second.width(), lb.a_bits, in.include_twelfth);
    };

    switch (h) {
        case Heuristic::FIT:
        case Heuristic::FIT_W:
        case Heuristic::FIT_A: {
            if (!in.weight_traces || !in.act_traces) throw ValidationError("heuristic_score: traces required for FIT");
            FitOptions opt;
            opt.include_twelfth = in.include_twelfth;
            opt.weights_only = (h == Heuristic::FIT_W);
            opt.acts_only = (h == Heuristic::FIT_A);
            return fit_metric(*in.weight_traces, *in.act_traces, bits, ranges, opt).omega;
        }
        case Heuristic::QR: {
            double s = 0.0;
            for (const auto& lb : bits.layers) {
                const Range rw = lookup_range(ranges.weight, lb.layer, "weight");
                if (rw.width() > 0.0) s += (1.0 / std::fabs(rw.width())) * np_w(lb);
                auto it = ranges.act.find(lb.layer);
                if (it != ranges.act.end() && it->second.width() > 0.0)
                    s += (1.0 / std::fabs(it->second.width())) * np_a(lb);
            }
            return s;
        }
        case Heuristic::BN: {
            if (!in.bn_gamma || in.bn_gamma->empty())
                throw ValidationError("heuristic_score: BN baseline requested on a batchnorm-free model");
            double s = 0.0;
            for (const auto& lb : bits.layers) {
                auto it = in.bn_gamma->find(lb.layer);
                if (it == in.bn_gamma->end()) continue;  // blocks without attached batchnorm are skipped
                if (it->second == 0.0) continue;
                s += (1.0 / it->second) * (np_w(lb) + np_a(lb));
            }
            return s;
        }
        case Heuristic::NoiseOnly: {
            double s = 0.0;
            for (const auto& lb : bits.layers) s += np_w(lb) + np_a(lb);
            return s;
        }
    }
    throw ValidationError("heuristic_score: unknown heuristic");
}

std::map<std::string, double> block_bn_gammas(const Model& model) {
    std::map<std::string, double> out;
    for (const auto& pb : model.parameter_blocks()) {
        if (!pb.bn_gamma) continue;
        const Tensor& g = *pb.bn_gamma;
        double s = 0.0;
        for (int64_t i = 0; i < g.size(); ++i) s += std::fabs(g[i]);
        out[pb.layer] = s / static_cast<double>(g.size());
    }
    return out;
}

}  // namespace fitq
