#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fitq/quant.hpp"
#include "fitq/tape.hpp"

namespace fitq {

enum class LayerKind { conv, maxpool, batchnorm, relu, flatten, dense };

struct LayerSpec {
    LayerKind kind;
    std::string name;
    int64_t out_channels = 0;  // conv
    int64_t kernel = 0;        // conv
    int64_t stride = 1;        // conv / maxpool
    int64_t pad = 0;           // conv
    int64_t pool = 2;          // maxpool window
    int64_t units = 0;         // dense

    static LayerSpec Conv(std::string name, int64_t out_channels, int64_t kernel, int64_t stride = 1, int64_t pad = 0);
    static LayerSpec MaxPool(std::string name, int64_t window = 2, int64_t stride = 2);
    static LayerSpec BatchNorm(std::string name);
    static LayerSpec Relu(std::string name);
    static LayerSpec Flatten(std::string name);
    static LayerSpec Dense(std::string name, int64_t units);
};

struct LayerParams {
    Tensor W, b;                  // conv [O,I,kh,kw]+[O]; dense [in,out]+[out]
    Tensor gamma, beta;           // batchnorm
    Tensor run_mean, run_var;     // batchnorm running statistics
};

// Named view of one quantizable layer's parameters.
struct ParameterBlock {
    std::string layer;
    Tensor weights;
    std::optional<Tensor> bias;
    int64_t n = 0;  // quantizable weight count; biases excluded
    std::optional<Tensor> bn_gamma;
};

struct QuantBlockInfo {
    std::string name;
    size_t layer_index = 0;
    int64_t n = 0;
};

// Quantized-forward context: weight schemes are recomputed from the current
// weights at build time (max-min); activation schemes come from the supplied
// ranges. Degenerate ranges fall back to the identity.
struct QatForward {
    const BitConfig* bits = nullptr;
    const std::map<std::string, Range>* act_ranges = nullptr;
    bool quantize_weights = true;
    bool quantize_acts = true;
};

struct ModelForward {
    Var logits;
    // quantizable block name -> activation site (post-layer, pre-quantizer)
    std::vector<std::pair<std::string, Var>> sites;
    // quantizable block name -> weight leaf (pre-quantizer)
    std::vector<std::pair<std::string, Var>> weight_vars;
    std::vector<Var> trainables;  // every trainable leaf, fixed order
    struct BnBatchStat {
        size_t layer_index;
        Var mean, var;
    };
    std::vector<BnBatchStat> bn_stats;
};

class Model {
  public:
    static Model build(std::vector<LayerSpec> specs, Shape input_chw, int64_t num_classes, uint64_t seed);

    // When `external_weights` is given (one var per quantizable block, in
    // block order) those vars are spliced in as the block weights instead of
    // fresh leaves; used by oracles that differentiate w.r.t. caller-owned
    // parameter leaves.
    ModelForward build_forward(Tape& t, const Tensor& x, bool training, const QatForward* qat = nullptr,
                               const std::vector<Var>* external_weights = nullptr) const;

    // Fold freshly computed batch statistics into the running estimates
    // (momentum 0.1). Call once per training step.
    void update_bn_running(const Tape& t, const ModelForward& fwd);

    const std::vector<LayerSpec>& specs() const { return specs_; }
    const std::vector<LayerParams>& params() const { return params_; }
    std::vector<LayerParams>& params() { return params_; }
    const Shape& input_shape() const { return input_chw_; }
    int64_t num_classes() const { return num_classes_; }
    bool has_batchnorm() const;

    const std::vector<QuantBlockInfo>& blocks() const { return blocks_; }
    std::vector<std::string> block_names() const;
    std::vector<ParameterBlock> parameter_blocks() const;
    int64_t total_quantizable_params() const;

    // trainable tensors in the same order as ModelForward::trainables
    std::vector<Tensor*> trainable_params();

    // batched class-probability forward in eval mode
    Tensor predict_probs(const Tensor& x, const QatForward* qat = nullptr) const;

  private:
    std::vector<LayerSpec> specs_;
    std::vector<LayerParams> params_;
    Shape input_chw_;
    int64_t num_classes_ = 0;
    std::vector<QuantBlockInfo> blocks_;
    std::map<std::string, std::string> bn_owner_;  // bn layer name -> quant block name
    friend struct ModelSerde;
};

// The small convolutional classifier used throughout the experiments:
// three conv blocks (optionally batch-normalized), max-pool after the first
// two, ReLU activations, and a dense head.
Model make_desk_cnn(Shape input_chw, int64_t num_classes, const std::vector<int64_t>& conv_channels, bool batchnorm,
                    uint64_t seed, int64_t kernel = 3);

}  // namespace fitq
