#include "fitq/model.hpp"

#include <cmath>
#include <set>

namespace fitq {

LayerSpec LayerSpec::Conv(std::string name, int64_t out_channels, int64_t kernel, int64_t stride, int64_t pad) {
    LayerSpec s;
    s.kind = LayerKind::conv;
    s.name = std::move(name);
    s.out_channels = out_channels;
    s.kernel = kernel;
    s.stride = stride;
    s.pad = pad;
    return s;
}

LayerSpec LayerSpec::MaxPool(std::string name, int64_t window, int64_t stride) {
    LayerSpec s;
    s.kind = LayerKind::maxpool;
    s.name = std::move(name);
    s.pool = window;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::BatchNorm(std::string name) {
    LayerSpec s;
    s.kind = LayerKind::batchnorm;
    s.name = std::move(name);
    return s;
}

LayerSpec LayerSpec::Relu(std::string name) {
    LayerSpec s;
    s.kind = LayerKind::relu;
    s.name = std::move(name);
    return s;
}

LayerSpec LayerSpec::Flatten(std::string name) {
    LayerSpec s;
    s.kind = LayerKind::flatten;
    s.name = std::move(name);
    return s;
}

LayerSpec LayerSpec::Dense(std::string name, int64_t units) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.name = std::move(name);
    s.units = units;
    return s;
}

namespace {
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
}  // namespace

Model Model::build(std::vector<LayerSpec> specs, Shape input_chw, int64_t num_classes, uint64_t seed) {
    if (input_chw.size() != 3) throw ValidationError("build_model: input shape must be [C,H,W]");
    if (num_classes < 2) throw ValidationError("build_model: need at least 2 classes");
    if (specs.empty()) throw ValidationError("build_model: empty layer list");

    Model m;
    m.input_chw_ = input_chw;
    m.num_classes_ = num_classes;

    std::set<std::string> names;
    int64_t C = input_chw[0], H = input_chw[1], W = input_chw[2];
    bool flat = (H == 1 && W == 1);
    int64_t F = C;  // flattened feature count when flat

    Rng rng(seed);
    std::string pending_block;  // conv/dense block awaiting its bn attachment

    for (size_t li = 0; li < specs.size(); ++li) {
        const LayerSpec& s = specs[li];
        if (s.name.empty() || !names.insert(s.name).second)
            throw ValidationError("build_model: duplicate or empty layer name '" + s.name + "'");
        LayerParams p;
        switch (s.kind) {
            case LayerKind::conv: {
                if (flat) throw ValidationError("build_model: layer '" + s.name + "': conv needs spatial input");
                if (s.out_channels < 1 || s.kernel < 1 || s.stride < 1 || s.pad < 0)
                    throw ValidationError("build_model: layer '" + s.name + "': bad conv hyperparameters");
                const int64_t Ho = (H + 2 * s.pad - s.kernel) / s.stride + 1;
                const int64_t Wo = (W + 2 * s.pad - s.kernel) / s.stride + 1;
                if (Ho < 1 || Wo < 1)
                    throw ValidationError("build_model: layer '" + s.name + "': kernel exceeds padded input");
                const double stddev = std::sqrt(2.0 / static_cast<double>(C * s.kernel * s.kernel));
                p.W = random_normal({s.out_channels, C, s.kernel, s.kernel}, rng, stddev);
                p.b = Tensor(Shape{s.out_channels});
                m.blocks_.push_back({s.name, li, p.W.size()});
                pending_block = s.name;
                C = s.out_channels;
                H = Ho;
                W = Wo;
                break;
            }
            case LayerKind::maxpool: {
                if (flat) throw ValidationError("build_model: layer '" + s.name + "': maxpool needs spatial input");
                if (s.pool < 1 || s.stride < 1 || H < s.pool || W < s.pool)
                    throw ValidationError("build_model: layer '" + s.name + "': pool window exceeds input");
                H = (H - s.pool) / s.stride + 1;
                W = (W - s.pool) / s.stride + 1;
                break;
            }
            case LayerKind::batchnorm: {
                if (flat) throw ValidationError("build_model: layer '" + s.name + "': batchnorm needs spatial input");
                p.gamma = Tensor::ones({C});
                p.beta = Tensor(Shape{C});
                p.run_mean = Tensor(Shape{C});
                p.run_var = Tensor::ones({C});
                if (!pending_block.empty()) m.bn_owner_[s.name] = pending_block;
                break;
            }
            case LayerKind::relu:
                break;
            case LayerKind::flatten:
                if (flat) throw ValidationError("build_model: layer '" + s.name + "': input already flat");
                F = C * H * W;
                flat = true;
                break;
            case LayerKind::dense: {
                if (!flat) {
                    if (H == 1 && W == 1) {
                        F = C;
                        flat = true;
                    } else {
                        throw ValidationError("build_model: layer '" + s.name + "': dense needs flattened input " +
                                              std::to_string(C) + "x" + std::to_string(H) + "x" + std::to_string(W));
                    }
                }
                if (s.units < 1) throw ValidationError("build_model: layer '" + s.name + "': bad unit count");
                const double stddev = std::sqrt(2.0 / static_cast<double>(F));
                p.W = random_normal({F, s.units}, rng, stddev);
                p.b = Tensor(Shape{s.units});
                m.blocks_.push_back({s.name, li, p.W.size()});
                pending_block = s.name;
                F = s.units;
                break;
            }
        }
        m.params_.push_back(std::move(p));
    }
    if (specs.back().kind != LayerKind::dense || !flat)
        throw ValidationError("build_model: model must end in a dense head");
    if (F != num_classes)
        throw ValidationError("build_model: head outputs " + std::to_string(F) + " but num_classes is " +
                              std::to_string(num_classes));
    m.specs_ = std::move(specs);
    return m;
}

bool Model::has_batchnorm() const {
    for (const auto& s : specs_)
        if (s.kind == LayerKind::batchnorm) return true;
    return false;
}

std::vector<std::string> Model::block_names() const {
    std::vector<std::string> out;
    out.reserve(blocks_.size());
    for (const auto& b : blocks_) out.push_back(b.name);
    return out;
}

int64_t Model::total_quantizable_params() const {
    int64_t n = 0;
    for (const auto& b : blocks_) n += b.n;
    return n;
}

std::vector<ParameterBlock> Model::parameter_blocks() const {
    std::vector<ParameterBlock> out;
    for (const auto& b : blocks_) {
        ParameterBlock pb;
        pb.layer = b.name;
        pb.weights = params_[b.layer_index].W;
        pb.bias = params_[b.layer_index].b;
        pb.n = b.n;
        for (const auto& [bn_name, owner] : bn_owner_) {
            if (owner != b.name) continue;
            for (size_t li = 0; li < specs_.size(); ++li)
                if (specs_[li].name == bn_name) pb.bn_gamma = params_[li].gamma;
        }
        out.push_back(std::move(pb));
    }
    return out;
}

std::vector<Tensor*> Model::trainable_params() {
    std::vector<Tensor*> out;
    for (size_t li = 0; li < specs_.size(); ++li) {
        switch (specs_[li].kind) {
            case LayerKind::conv:
            case LayerKind::dense:
                out.push_back(&params_[li].W);
                out.push_back(&params_[li].b);
                break;
            case LayerKind::batchnorm:
                out.push_back(&params_[li].gamma);
                out.push_back(&params_[li].beta);
                break;
            default:
                break;
        }
    }
    return out;
}

namespace {

std::optional<QuantScheme> scheme_from_range(double lo, double hi, int bits) {
    if (!(hi > lo)) return std::nullopt;  // degenerate: identity
    return QuantScheme(bits, lo, hi);
}

std::optional<QuantScheme> weight_scheme(const Tensor& W, int bits) {
    double lo = W[0], hi = W[0];
    for (int64_t i = 1; i < W.size(); ++i) {
        lo = std::min(lo, W[i]);
        hi = std::max(hi, W[i]);
    }
    return scheme_from_range(lo, hi, bits);
}

}  // namespace

ModelForward Model::build_forward(Tape& t, const Tensor& x, bool training, const QatForward* qat,
                                  const std::vector<Var>* external_weights) const {
    if (x.rank() != 4 || x.dim(1) != input_chw_[0] || x.dim(2) != input_chw_[1] || x.dim(3) != input_chw_[2])
        throw ValidationError("forward: input shape " + shape_str(x.shape()) + " does not match model input " +
                              shape_str(input_chw_));
    if (external_weights && external_weights->size() != blocks_.size())
        throw ValidationError("forward: expected " + std::to_string(blocks_.size()) + " external weight vars");
    const int64_t N = x.dim(0);
    size_t block_counter = 0;

    ModelForward fwd;
    Var cur = t.leaf(x, false);
    bool flat = (input_chw_[1] == 1 && input_chw_[2] == 1);
    if (flat) cur = t.reshape(cur, Shape{N, input_chw_[0]});

    // tentative activation site of the most recent quantizable block; a
    // following relu (or batchnorm) refines it, pool/flatten do not
    int open_block = -1;  // index into fwd.sites

    auto quantize_site = [&](int site_index, Var v) -> Var {
        if (!qat || !qat->quantize_acts || !qat->act_ranges) return v;
        const std::string& name = fwd.sites[static_cast<size_t>(site_index)].first;
        auto it = qat->act_ranges->find(name);
        if (it == qat->act_ranges->end()) return v;
        const LayerBits* lb = qat->bits ? qat->bits->find(name) : nullptr;
        if (!lb) return v;
        auto s = scheme_from_range(it->second.lo, it->second.hi, lb->a_bits);
        if (!s) return v;
        return t.fake_quant(v, s->lo, s->hi, s->delta);
    };

    for (size_t li = 0; li < specs_.size(); ++li) {
        const LayerSpec& s = specs_[li];
        const LayerParams& p = params_[li];
        switch (s.kind) {
            case LayerKind::conv:
            case LayerKind::dense: {
                // close the previous block's site before consuming it
                if (open_block >= 0) {
                    cur = quantize_site(open_block, cur);
                    open_block = -1;
                }
                Var Wv;
                if (external_weights) {
                    Wv = (*external_weights)[block_counter++];
                    if (!t.value(Wv).same_shape(p.W))
                        throw ValidationError("forward: external weight shape mismatch for '" + s.name + "'");
                } else {
                    Wv = t.leaf(p.W, true);
                    fwd.trainables.push_back(Wv);
                }
                Var bv = t.leaf(p.b, true);
                fwd.trainables.push_back(bv);
                fwd.weight_vars.push_back({s.name, Wv});
                Var Wq = Wv;
                if (qat && qat->quantize_weights && qat->bits) {
                    if (const LayerBits* lb = qat->bits->find(s.name)) {
                        if (auto sch = weight_scheme(p.W, lb->w_bits))
                            Wq = t.fake_quant(Wv, sch->lo, sch->hi, sch->delta);
                    }
                }
                if (s.kind == LayerKind::conv) {
                    cur = t.conv2d(cur, Wq, s.stride, s.pad);
                    cur = t.add(cur, t.channel_bcast(bv, t.value(cur).shape()));
                } else {
                    cur = t.add(t.matmul(cur, Wq), t.tile_rows(bv, t.value(cur).dim(0)));
                }
                fwd.sites.push_back({s.name, cur});
                open_block = static_cast<int>(fwd.sites.size()) - 1;
                break;
            }
            case LayerKind::batchnorm: {
                Var gv = t.leaf(p.gamma, true);
                Var bv = t.leaf(p.beta, true);
                fwd.trainables.push_back(gv);
                fwd.trainables.push_back(bv);
                const Shape xs = t.value(cur).shape();
                const double inv_m = 1.0 / static_cast<double>(xs[0] * xs[2] * xs[3]);
                Var mean{}, var{};
                if (training) {
                    mean = t.scale(t.channel_sum(cur), inv_m);
                    Var centered = t.sub(cur, t.channel_bcast(mean, xs));
                    var = t.scale(t.channel_sum(t.mul(centered, centered)), inv_m);
                    Var inv_std = t.recip(t.sqrt(t.add_const(var, kBnEps)));
                    cur = t.add(t.mul(t.mul(centered, t.channel_bcast(inv_std, xs)), t.channel_bcast(gv, xs)),
                                t.channel_bcast(bv, xs));
                    fwd.bn_stats.push_back({li, mean, var});
                } else {
                    Var rm = t.leaf(p.run_mean, false);
                    Var rv = t.leaf(p.run_var, false);
                    Var centered = t.sub(cur, t.channel_bcast(rm, xs));
                    Var inv_std = t.recip(t.sqrt(t.add_const(rv, kBnEps)));
                    cur = t.add(t.mul(t.mul(centered, t.channel_bcast(inv_std, xs)), t.channel_bcast(gv, xs)),
                                t.channel_bcast(bv, xs));
                }
                if (open_block >= 0) fwd.sites[static_cast<size_t>(open_block)].second = cur;
                break;
            }
            case LayerKind::relu: {
                cur = t.relu(cur);
                if (open_block >= 0) {
                    fwd.sites[static_cast<size_t>(open_block)].second = cur;
                    cur = quantize_site(open_block, cur);
                    open_block = -1;
                }
                break;
            }
            case LayerKind::maxpool:
                cur = t.maxpool(cur, s.pool, s.stride);
                break;
            case LayerKind::flatten: {
                const Shape xs = t.value(cur).shape();
                cur = t.reshape(cur, Shape{xs[0], xs[1] * xs[2] * xs[3]});
                break;
            }
        }
    }
    if (open_block >= 0) cur = quantize_site(open_block, cur);
    fwd.logits = cur;
    return fwd;
}

void Model::update_bn_running(const Tape& t, const ModelForward& fwd) {
    for (const auto& st : fwd.bn_stats) {
        LayerParams& p = params_[st.layer_index];
        const Tensor& mean = t.value(st.mean);
        const Tensor& var = t.value(st.var);
        for (int64_t c = 0; c < mean.size(); ++c) {
            p.run_mean[c] = (1.0 - kBnMomentum) * p.run_mean[c] + kBnMomentum * mean[c];
            p.run_var[c] = (1.0 - kBnMomentum) * p.run_var[c] + kBnMomentum * var[c];
        }
    }
}

Tensor Model::predict_probs(const Tensor& x, const QatForward* qat) const {
    Tape t;
    ModelForward fwd = build_forward(t, x, false, qat);
    const Tensor& z = t.value(fwd.logits);
    const int64_t m = z.dim(0), k = z.dim(1);
    Tensor probs(Shape{m, k});
    for (int64_t i = 0; i < m; ++i) {
        double mx = z[i * k];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, z[i * k + j]);
        double sum = 0.0;
        for (int64_t j = 0; j < k; ++j) {
            probs[i * k + j] = std::exp(z[i * k + j] - mx);
            sum += probs[i * k + j];
        }
        for (int64_t j = 0; j < k; ++j) probs[i * k + j] /= sum;
    }
    return probs;
}

Model make_desk_cnn(Shape input_chw, int64_t num_classes, const std::vector<int64_t>& conv_channels, bool batchnorm,
                    uint64_t seed, int64_t kernel) {
    if (conv_channels.empty()) throw ValidationError("make_desk_cnn: need at least one conv block");
    std::vector<LayerSpec> specs;
    const int64_t pad = kernel / 2;
    for (size_t i = 0; i < conv_channels.size(); ++i) {
        const std::string tag = std::to_string(i + 1);
        specs.push_back(LayerSpec::Conv("conv" + tag, conv_channels[i], kernel, 1, pad));
        if (batchnorm) specs.push_back(LayerSpec::BatchNorm("bn" + tag));
        specs.push_back(LayerSpec::Relu("relu" + tag));
        if (i + 1 < conv_channels.size()) specs.push_back(LayerSpec::MaxPool("pool" + tag));
    }
    specs.push_back(LayerSpec::Flatten("flatten"));
    specs.push_back(LayerSpec::Dense("fc", num_classes));
    return Model::build(std::move(specs), std::move(input_chw), num_classes, seed);
}

}  // namespace fitq
