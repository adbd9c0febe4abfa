#include "fitq/quant.hpp"

#include <cmath>

namespace fitq {

QuantScheme::QuantScheme(int bits_, double lo_, double hi_) : bits(bits_), lo(lo_), hi(hi_) {
    if (bits < kMinBits || bits > kMaxBits)
        throw ValidationError("QuantScheme: bits must be in [" + std::to_string(kMinBits) + "," +
                              std::to_string(kMaxBits) + "], got " + std::to_string(bits));
    if (!(hi > lo)) throw ValidationError("QuantScheme: degenerate range [" + std::to_string(lo) + "," + std::to_string(hi) + "]");
    delta = (hi - lo) / (std::exp2(static_cast<double>(bits)) - 1.0);
}

double quantize_value(double x, const QuantScheme& s) {
    const double v = std::min(std::max(x, s.lo), s.hi);
    // round half away from zero, matching std::round
    return s.lo + s.delta * std::round((v - s.lo) / s.delta);
}

Tensor quantize_uniform(const Tensor& x, const QuantScheme& s) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out[i] = quantize_value(x[i], s);
    return out;
}

double noise_power(const QuantScheme& s, bool include_twelfth) {
    const double d2 = s.delta * s.delta;
    return include_twelfth ? d2 / 12.0 : d2;
}

double noise_power(double range_width, int bits, bool include_twelfth) {
    if (range_width < 0.0) throw ValidationError("noise_power: negative range width");
    if (range_width == 0.0) return 0.0;
    const double delta = range_width / (std::exp2(static_cast<double>(bits)) - 1.0);
    return include_twelfth ? delta * delta / 12.0 : delta * delta;
}

RangeTracker::RangeTracker(Mode mode, double decay) : mode_(mode), decay_(decay) {
    if (mode_ == Mode::ema && !(decay_ > 0.0 && decay_ <= 1.0))
        throw ValidationError("RangeTracker: ema decay must be in (0,1], got " + std::to_string(decay_));
}

void RangeTracker::observe(const Tensor& batch) {
    if (batch.size() == 0) return;
    double lo = batch[0], hi = batch[0];
    for (int64_t i = 1; i < batch.size(); ++i) {
        lo = std::min(lo, batch[i]);
        hi = std::max(hi, batch[i]);
    }
    if (!seen_) {
        lo_ = lo;
        hi_ = hi;
        seen_ = true;
        return;
    }
    if (mode_ == Mode::minmax) {
        lo_ = std::min(lo_, lo);
        hi_ = std::max(hi_, hi);
    } else {
        lo_ = (1.0 - decay_) * lo_ + decay_ * lo;
        hi_ = (1.0 - decay_) * hi_ + decay_ * hi;
    }
}

Range RangeTracker::range() const {
    if (!seen_) throw ValidationError("RangeTracker: no observations");
    return {lo_, hi_};
}

const LayerBits* BitConfig::find(const std::string& layer) const {
    for (const auto& lb : layers)
        if (lb.layer == layer) return &lb;
    return nullptr;
}

BitConfig sample_bitconfig(const std::vector<std::string>& layers, const std::vector<int>& bit_set, uint64_t seed) {
    if (bit_set.empty()) throw ValidationError("sample_bitconfig: empty bit set");
    Rng rng(seed);
    BitConfig cfg;
    cfg.layers.reserve(layers.size());
    for (const auto& name : layers) {
        const int w = bit_set[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(bit_set.size()) - 1))];
        const int a = bit_set[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(bit_set.size()) - 1))];
        cfg.layers.push_back({name, w, a});
    }
    return cfg;
}

BitConfig uniform_bitconfig(const std::vector<std::string>& layers, int bits) {
    BitConfig cfg;
    for (const auto& name : layers) cfg.layers.push_back({name, bits, bits});
    return cfg;
}

}  // namespace fitq
