#pragma once

#include <map>
#include <string>
#include <vector>

#include "fitq/tensor.hpp"

namespace fitq {

// Uniform affine quantizer grid: 2^bits levels spanning [lo, hi],
// step = (hi - lo) / (2^bits - 1).
struct QuantScheme {
    int bits;
    double lo, hi;
    double delta;

    QuantScheme(int bits_, double lo_, double hi_);
    static constexpr int kMinBits = 2;
    static constexpr int kMaxBits = 32;
};

double quantize_value(double x, const QuantScheme& s);
Tensor quantize_uniform(const Tensor& x, const QuantScheme& s);

// Expected squared quantization error per value under the uniform-error
// model. The 1/12 factor is dropped unless include_twelfth is set; ranking
// metrics are invariant to it.
double noise_power(const QuantScheme& s, bool include_twelfth = false);
// Degenerate-range extension: zero width gives zero noise.
double noise_power(double range_width, int bits, bool include_twelfth = false);

struct Range {
    double lo = 0.0, hi = 0.0;
    double width() const { return hi - lo; }
    bool degenerate() const { return !(hi > lo); }
};

// minmax: running extrema over everything observed.
// ema: exponential moving average of per-batch extrema; the new batch is
// weighted by `decay`, so decay 1.0 degenerates to the last batch.
class RangeTracker {
  public:
    enum class Mode { minmax, ema };

    explicit RangeTracker(Mode mode, double decay = 0.9);
    void observe(const Tensor& batch);
    bool seen() const { return seen_; }
    Range range() const;

  private:
    Mode mode_;
    double decay_;
    double lo_ = 0.0, hi_ = 0.0;
    bool seen_ = false;
};

struct LayerBits {
    std::string layer;
    int w_bits;
    int a_bits;
    auto operator<=>(const LayerBits&) const = default;
};

struct BitConfig {
    std::vector<LayerBits> layers;
    const LayerBits* find(const std::string& layer) const;
    auto operator<=>(const BitConfig&) const = default;
};

// Independent uniform draws per layer for weight and activation bits.
BitConfig sample_bitconfig(const std::vector<std::string>& layers, const std::vector<int>& bit_set, uint64_t seed);

// Uniform BitConfig (same bits everywhere), for degenerate sweeps.
BitConfig uniform_bitconfig(const std::vector<std::string>& layers, int bits);

}  // namespace fitq
