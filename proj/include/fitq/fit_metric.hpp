#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fitq/qat.hpp"
#include "fitq/quant.hpp"

namespace fitq {

struct FitOptions {
    bool include_twelfth = false;  // restore the 1/12 factor for absolute-noise studies
    bool weights_only = false;     // FIT_W: drop the activation sum
    bool acts_only = false;        // FIT_A: drop the weight sum
};

struct BlockContribution {
    std::string layer;
    double weight_term = 0.0;
    double act_term = 0.0;
};

struct FITReport {
    double omega = 0.0;  // exactly the sum of the stored contributions
    std::vector<BlockContribution> blocks;
    BitConfig bits;
    bool include_twelfth = false;
    bool weights_only = false;
    bool acts_only = false;
};

// Omega = sum_l Tr_w(l) * noise_power(w range, w bits)
//       + sum_l Tr_a(l) * noise_power(a range, a bits)
// Every layer in `bits` must be covered by traces and ranges.
FITReport fit_metric(const std::map<std::string, double>& weight_traces,
                     const std::map<std::string, double>& act_traces, const BitConfig& bits, const Ranges& ranges,
                     const FitOptions& opt = {});

enum class Heuristic { FIT, QR, BN, NoiseOnly, FIT_W, FIT_A };

const char* heuristic_name(Heuristic h);

struct HeuristicInputs {
    const std::map<std::string, double>* weight_traces = nullptr;
    const std::map<std::string, double>* act_traces = nullptr;
    const Ranges* ranges = nullptr;
    // per-block mean |gamma| of the attached batchnorm, when present
    const std::map<std::string, double>* bn_gamma = nullptr;
    bool include_twelfth = false;
};

// QR replaces the trace with 1/|range|; BN with 1/mean|gamma| (blocks without
// an attached batchnorm are skipped); NoiseOnly sums the noise powers alone.
double heuristic_score(Heuristic h, const HeuristicInputs& in, const BitConfig& bits);

// mean |gamma| per quantizable block, for models that carry batchnorm
std::map<std::string, double> block_bn_gammas(const Model& model);

}  // namespace fitq
