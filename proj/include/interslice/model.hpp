#pragma once

// The coordinate-conditioned interpolation network.
//
// A shared 3x3 conv encoder turns each bounding frame into per-pixel feature
// vectors; a per-pixel MLP decoder consumes (features_left, features_right,
// positional encoding of t) and predicts a residual on top of the linear
// blend (1-t)*left + t*right. The final decoder layer is zero-initialized,
// so an untrained model reproduces linear interpolation exactly.
//
// Forward/backward are hand-rolled; gradients are checked against finite
// differences in the test suite.

#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "interslice/frame.hpp"

namespace isr {

struct ModelConfig {
    std::vector<int> encoder_channels;  // output channels of each 3x3 conv stage
    int feature_dim = 0;                // channels of the projection conv
    int coord_frequencies = 6;          // sinusoidal bands for t
    std::vector<int> decoder_widths;    // per-pixel MLP widths, last must be 1
    int64_t target_params = 2'100'000;  // construction fails outside +-15%

    static ModelConfig defaults() {
        ModelConfig c;
        c.encoder_channels = {64, 128, 128, 128, 128, 128, 128, 128, 128, 128, 128, 128, 128, 128};
        c.feature_dim = 128;
        c.coord_frequencies = 6;
        c.decoder_widths = {256, 256, 1};
        c.target_params = 2'100'000;
        return c;
    }

    int coord_dim() const { return 1 + 2 * coord_frequencies; }

    void validate() const {
        if (encoder_channels.empty()) throw config_error("ModelConfig: encoder_channels empty");
        for (int c : encoder_channels)
            if (c < 1) throw config_error("ModelConfig: encoder channel counts must be >= 1");
        if (feature_dim < 1) throw config_error("ModelConfig: feature_dim must be >= 1");
        if (coord_frequencies < 0) throw config_error("ModelConfig: coord_frequencies must be >= 0");
        if (decoder_widths.empty()) throw config_error("ModelConfig: decoder_widths empty");
        for (int w : decoder_widths)
            if (w < 1) throw config_error("ModelConfig: decoder widths must be >= 1");
        if (decoder_widths.back() != 1)
            throw config_error("ModelConfig: last decoder width must be 1 (the residual)");
        if (target_params < 1) throw config_error("ModelConfig: target_params must be >= 1");
    }

    std::string canonical_string() const {
        std::ostringstream os;
        os << "enc=";
        for (size_t i = 0; i < encoder_channels.size(); ++i)
            os << (i ? "," : "") << encoder_channels[i];
        os << ";feat=" << feature_dim << ";freq=" << coord_frequencies << ";dec=";
        for (size_t i = 0; i < decoder_widths.size(); ++i) os << (i ? "," : "") << decoder_widths[i];
        os << ";budget=" << target_params;
        return os.str();
    }

    uint64_t fingerprint() const { return fnv1a(canonical_string()); }

    friend bool operator==(const ModelConfig& a, const ModelConfig& b) {
        return a.canonical_string() == b.canonical_string();
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"encoder_channels", c.encoder_channels},
                       {"feature_dim", c.feature_dim},
                       {"coord_frequencies", c.coord_frequencies},
                       {"decoder_widths", c.decoder_widths},
                       {"target_params", c.target_params}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("encoder_channels").get_to(c.encoder_channels);
    j.at("feature_dim").get_to(c.feature_dim);
    j.at("coord_frequencies").get_to(c.coord_frequencies);
    j.at("decoder_widths").get_to(c.decoder_widths);
    j.at("target_params").get_to(c.target_params);
}

// One tensor per encoder/decoder layer weight and bias, shaped by the config.
// Used for the weights themselves, their gradients, and optimizer moments.
class ParamSet {
public:
    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::vector<scalar> data;
        size_t count() const { return data.size(); }
    };

    ParamSet() = default;

    explicit ParamSet(const ModelConfig& cfg) {
        cfg.validate();
        int in_ch = 1;
        for (size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
            const int out_ch = cfg.encoder_channels[i];
            add("enc." + std::to_string(i) + ".w", {out_ch, in_ch, 3, 3});
            add("enc." + std::to_string(i) + ".b", {out_ch});
            in_ch = out_ch;
        }
        add("enc.proj.w", {cfg.feature_dim, in_ch, 3, 3});
        add("enc.proj.b", {cfg.feature_dim});

        int in_dim = 2 * cfg.feature_dim + cfg.coord_dim();
        for (size_t i = 0; i < cfg.decoder_widths.size(); ++i) {
            const int out_dim = cfg.decoder_widths[i];
            add("dec." + std::to_string(i) + ".w", {out_dim, in_dim});
            add("dec." + std::to_string(i) + ".b", {out_dim});
            in_dim = out_dim;
        }
    }

    size_t tensor_count() const { return entries_.size(); }
    Entry& entry(size_t i) { return entries_[i]; }
    const Entry& entry(size_t i) const { return entries_[i]; }

    std::vector<scalar>& operator[](const std::string& name) {
        for (auto& e : entries_)
            if (e.name == name) return e.data;
        throw value_error("ParamSet: no tensor named '" + name + "'");
    }
    const std::vector<scalar>& operator[](const std::string& name) const {
        return const_cast<ParamSet*>(this)->operator[](name);
    }

    size_t count() const {
        size_t n = 0;
        for (const auto& e : entries_) n += e.count();
        return n;
    }

    void fill(scalar v) {
        for (auto& e : entries_) std::fill(e.data.begin(), e.data.end(), v);
    }

    bool all_finite() const {
        for (const auto& e : entries_)
            for (scalar v : e.data)
                if (!std::isfinite(v)) return false;
        return true;
    }

private:
    void add(std::string name, std::vector<int> shape) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        entries_.push_back({std::move(name), std::move(shape), std::vector<scalar>(n, 0.0)});
    }

    std::vector<Entry> entries_;
};

inline size_t param_count_for(const ModelConfig& cfg) { return ParamSet(cfg).count(); }

// Weights plus the metadata the archive format carries.
struct ModelParams {
    ModelConfig config;
    ParamSet tensors;
    std::string stage_tag = "init";
    int64_t step = 0;

    uint64_t fingerprint() const { return config.fingerprint(); }
};

namespace nn {

// y = conv3x3(x) + b, zero padding, CHW layout, stride 1.
inline void conv3x3_forward(const scalar* x, int cin, int h, int w, const scalar* wgt,
                            const scalar* bias, int cout, scalar* y) {
    const size_t plane = static_cast<size_t>(h) * w;
    for (int o = 0; o < cout; ++o) {
        scalar* yo = y + o * plane;
        std::fill(yo, yo + plane, bias[o]);
    }
    for (int o = 0; o < cout; ++o) {
        scalar* yo = y + o * plane;
        for (int c = 0; c < cin; ++c) {
            const scalar* xc = x + c * plane;
            const scalar* wk = wgt + (static_cast<size_t>(o) * cin + c) * 9;
            for (int u = 0; u < 3; ++u) {
                const int i_lo = std::max(0, 1 - u), i_hi = std::min(h, h + 1 - u);
                for (int v = 0; v < 3; ++v) {
                    const scalar wv = wk[u * 3 + v];
                    if (wv == 0.0) continue;
                    const int j_lo = std::max(0, 1 - v), j_hi = std::min(w, w + 1 - v);
                    for (int i = i_lo; i < i_hi; ++i) {
                        scalar* yrow = yo + static_cast<size_t>(i) * w;
                        const scalar* xrow = xc + static_cast<size_t>(i + u - 1) * w + (v - 1);
                        for (int j = j_lo; j < j_hi; ++j) yrow[j] += wv * xrow[j];
                    }
                }
            }
        }
    }
}

// Accumulates dL/dx given dL/dy; dx must be zero-initialized by the caller.
inline void conv3x3_backward_data(const scalar* g, int cout, int h, int w, const scalar* wgt,
                                  int cin, scalar* dx) {
    const size_t plane = static_cast<size_t>(h) * w;
    for (int o = 0; o < cout; ++o) {
        const scalar* go = g + o * plane;
        for (int c = 0; c < cin; ++c) {
            scalar* dxc = dx + c * plane;
            const scalar* wk = wgt + (static_cast<size_t>(o) * cin + c) * 9;
            for (int u = 0; u < 3; ++u) {
                const int i_lo = std::max(0, 1 - u), i_hi = std::min(h, h + 1 - u);
                for (int v = 0; v < 3; ++v) {
                    const scalar wv = wk[u * 3 + v];
                    if (wv == 0.0) continue;
                    const int j_lo = std::max(0, 1 - v), j_hi = std::min(w, w + 1 - v);
                    for (int i = i_lo; i < i_hi; ++i) {
                        const scalar* grow = go + static_cast<size_t>(i) * w;
                        scalar* dxrow = dxc + static_cast<size_t>(i + u - 1) * w + (v - 1);
                        for (int j = j_lo; j < j_hi; ++j) dxrow[j] += wv * grow[j];
                    }
                }
            }
        }
    }
}

// Accumulates weight/bias gradients.
inline void conv3x3_backward_params(const scalar* x, int cin, int h, int w, const scalar* g,
                                    int cout, scalar* dw, scalar* db) {
    const size_t plane = static_cast<size_t>(h) * w;
    for (int o = 0; o < cout; ++o) {
        const scalar* go = g + o * plane;
        scalar acc = 0.0;
        for (size_t p = 0; p < plane; ++p) acc += go[p];
        db[o] += acc;
        for (int c = 0; c < cin; ++c) {
            const scalar* xc = x + c * plane;
            scalar* wk = dw + (static_cast<size_t>(o) * cin + c) * 9;
            for (int u = 0; u < 3; ++u) {
                const int i_lo = std::max(0, 1 - u), i_hi = std::min(h, h + 1 - u);
                for (int v = 0; v < 3; ++v) {
                    const int j_lo = std::max(0, 1 - v), j_hi = std::min(w, w + 1 - v);
                    scalar s = 0.0;
                    for (int i = i_lo; i < i_hi; ++i) {
                        const scalar* grow = go + static_cast<size_t>(i) * w;
                        const scalar* xrow = xc + static_cast<size_t>(i + u - 1) * w + (v - 1);
                        for (int j = j_lo; j < j_hi; ++j) s += grow[j] * xrow[j];
                    }
                    wk[u * 3 + v] += s;
                }
            }
        }
    }
}

inline void relu_forward(std::vector<scalar>& z) {
    for (auto& v : z)
        if (v < 0.0) v = 0.0;
}

}  // namespace nn

// Sinusoidal positional encoding of t: [t, sin(pi 2^f t), cos(pi 2^f t), ...].
inline std::vector<scalar> positional_encoding(scalar t, int frequencies) {
    std::vector<scalar> pe;
    pe.reserve(static_cast<size_t>(1 + 2 * frequencies));
    pe.push_back(t);
    scalar freq = M_PI;
    for (int f = 0; f < frequencies; ++f) {
        pe.push_back(std::sin(freq * t));
        pe.push_back(std::cos(freq * t));
        freq *= 2.0;
    }
    return pe;
}

class SRModel {
public:
    // Activations recorded during a traced forward pass, consumed by backward().
    struct Trace {
        int h = 0, w = 0;
        scalar t = 0.0;
        std::vector<scalar> pe;
        // per side, per encoder layer: pre-activation output (post-conv);
        // act[side][0] is the input frame plane
        std::vector<std::vector<scalar>> pre[2];
        std::vector<std::vector<scalar>> act[2];  // act[side][i]: input to conv i
        std::vector<scalar> feat[2];              // projection output
        std::vector<std::vector<scalar>> dec_pre;  // per decoder layer, [P x width]
        std::vector<scalar> dec_in;                // [P x in_dim] concat inputs
    };

    explicit SRModel(const ModelConfig& cfg, uint64_t init_seed = 0x15eed)
        : params_{cfg, ParamSet(cfg), "init", 0} {
        check_budget(cfg);
        init_weights(init_seed);
    }

    explicit SRModel(ModelParams params) : params_(std::move(params)) {
        check_budget(params_.config);
        if (!params_.tensors.all_finite())
            throw value_error("SRModel: loaded parameters contain non-finite values");
    }

    const ModelConfig& config() const { return params_.config; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }

    size_t param_count() const { return params_.tensors.count(); }

    Frame forward(const Frame& left, const Frame& right, const TargetCoordinate& coord) const {
        Trace trace;
        return forward_trace(left, right, coord.t, trace, /*record=*/false);
    }

    std::vector<Frame> forward_batch(const std::vector<InterpolationSample>& samples) const {
        std::vector<Frame> out;
        out.reserve(samples.size());
        for (size_t i = 0; i < samples.size(); ++i) {
            if (!samples[i].left.same_shape(samples[0].left))
                throw shape_error("forward_batch: sample " + std::to_string(i) +
                                  " has a different frame shape");
            out.push_back(forward(samples[i].left, samples[i].right, samples[i].coord));
        }
        return out;
    }

    // Forward pass that records activations for backprop.
    Frame forward_trace(const Frame& left, const Frame& right, scalar t, Trace& trace,
                        bool record = true) const {
        require_same_shape(left, right, "SRModel::forward");
        if (t < 0.0 || t > 1.0)
            throw value_error("SRModel::forward: t must lie in [0,1], got " + std::to_string(t));

        const ModelConfig& cfg = params_.config;
        const int h = left.height(), w = left.width();
        const size_t plane = static_cast<size_t>(h) * w;
        trace.h = h;
        trace.w = w;
        trace.t = t;
        trace.pe = positional_encoding(t, cfg.coord_frequencies);

        for (int side = 0; side < 2; ++side) {
            const Frame& f = side == 0 ? left : right;
            encode(f.data(), h, w, trace.feat[side],
                   record ? &trace.act[side] : nullptr, record ? &trace.pre[side] : nullptr);
        }

        // decoder input: [P x (2*feat + coord_dim)]
        const int fd = cfg.feature_dim;
        const int cd = cfg.coord_dim();
        const int in_dim = 2 * fd + cd;
        std::vector<scalar> cur(plane * static_cast<size_t>(in_dim));
        for (size_t p = 0; p < plane; ++p) {
            scalar* row = cur.data() + p * in_dim;
            for (int c = 0; c < fd; ++c) row[c] = trace.feat[0][c * plane + p];
            for (int c = 0; c < fd; ++c) row[fd + c] = trace.feat[1][c * plane + p];
            for (int c = 0; c < cd; ++c) row[2 * fd + c] = trace.pe[static_cast<size_t>(c)];
        }
        if (record) trace.dec_in = cur;

        if (record) trace.dec_pre.clear();
        int d_in = in_dim;
        for (size_t li = 0; li < cfg.decoder_widths.size(); ++li) {
            const int d_out = cfg.decoder_widths[li];
            const auto& wgt = params_.tensors["dec." + std::to_string(li) + ".w"];
            const auto& bias = params_.tensors["dec." + std::to_string(li) + ".b"];
            std::vector<scalar> next(plane * static_cast<size_t>(d_out));
            for (size_t p = 0; p < plane; ++p) {
                const scalar* xin = cur.data() + p * d_in;
                scalar* yout = next.data() + p * d_out;
                for (int o = 0; o < d_out; ++o) {
                    const scalar* wrow = wgt.data() + static_cast<size_t>(o) * d_in;
                    scalar acc = bias[static_cast<size_t>(o)];
                    for (int d = 0; d < d_in; ++d) acc += wrow[d] * xin[d];
                    yout[o] = acc;
                }
            }
            if (record) trace.dec_pre.push_back(next);
            if (li + 1 < cfg.decoder_widths.size()) nn::relu_forward(next);
            cur = std::move(next);
            d_in = d_out;
        }

        Frame out(h, w);
        const scalar a = 1.0 - t;
        for (size_t p = 0; p < plane; ++p)
            out.data()[p] = a * left.data()[p] + t * right.data()[p] + cur[p];
        return out;
    }

    // Accumulates parameter gradients for one traced sample. The caller owns
    // zeroing `grads` between optimizer steps.
    void backward(const Trace& trace, const Frame& dloss_dpred, ParamSet& grads) const {
        const ModelConfig& cfg = params_.config;
        const int h = trace.h, w = trace.w;
        const size_t plane = static_cast<size_t>(h) * w;
        if (dloss_dpred.height() != h || dloss_dpred.width() != w)
            throw shape_error("SRModel::backward: gradient frame shape mismatch");

        const int fd = cfg.feature_dim;
        const int cd = cfg.coord_dim();
        const int in_dim = 2 * fd + cd;
        const size_t n_dec = cfg.decoder_widths.size();

        // residual head receives dL/dout directly
        std::vector<scalar> g(plane);
        std::copy(dloss_dpred.data(), dloss_dpred.data() + plane, g.begin());

        // decoder backward
        for (size_t li = n_dec; li-- > 0;) {
            const int d_out = cfg.decoder_widths[li];
            const int d_in = li == 0 ? in_dim : cfg.decoder_widths[li - 1];
            const auto& wgt = params_.tensors["dec." + std::to_string(li) + ".w"];
            auto& dw = grads["dec." + std::to_string(li) + ".w"];
            auto& db = grads["dec." + std::to_string(li) + ".b"];

            // layer input: relu(dec_pre[li-1]) or the concat block
            const std::vector<scalar>& pre_in = li == 0 ? trace.dec_in : trace.dec_pre[li - 1];
            std::vector<scalar> gin(plane * static_cast<size_t>(d_in), 0.0);
            for (size_t p = 0; p < plane; ++p) {
                const scalar* grow = g.data() + p * d_out;
                const scalar* xrow = pre_in.data() + p * d_in;
                scalar* girow = gin.data() + p * d_in;
                for (int o = 0; o < d_out; ++o) {
                    const scalar go = grow[o];
                    if (go == 0.0) continue;
                    const scalar* wrow = wgt.data() + static_cast<size_t>(o) * d_in;
                    scalar* dwrow = dw.data() + static_cast<size_t>(o) * d_in;
                    db[static_cast<size_t>(o)] += go;
                    if (li == 0) {
                        for (int d = 0; d < d_in; ++d) {
                            dwrow[d] += go * xrow[d];
                            girow[d] += go * wrow[d];
                        }
                    } else {
                        for (int d = 0; d < d_in; ++d) {
                            const scalar act = xrow[d] > 0.0 ? xrow[d] : 0.0;  // relu(pre)
                            dwrow[d] += go * act;
                            girow[d] += go * wrow[d];
                        }
                    }
                }
            }
            if (li > 0) {
                // push through the relu of the previous layer
                const std::vector<scalar>& pre = trace.dec_pre[li - 1];
                for (size_t i = 0; i < gin.size(); ++i)
                    if (pre[i] <= 0.0) gin[i] = 0.0;
            }
            g = std::move(gin);
        }

        // split the concat gradient into the two feature maps (pe has no params)
        std::vector<scalar> dfeat[2];
        dfeat[0].assign(plane * static_cast<size_t>(fd), 0.0);
        dfeat[1].assign(plane * static_cast<size_t>(fd), 0.0);
        for (size_t p = 0; p < plane; ++p) {
            const scalar* grow = g.data() + p * in_dim;
            for (int c = 0; c < fd; ++c) {
                dfeat[0][c * plane + p] = grow[c];
                dfeat[1][c * plane + p] = grow[fd + c];
            }
        }

        for (int side = 0; side < 2; ++side)
            encoder_backward(trace, side, dfeat[side], grads);
    }

private:
    void check_budget(const ModelConfig& cfg) const {
        cfg.validate();
        const auto count = static_cast<int64_t>(param_count_for(cfg));
        const double rel =
            std::abs(static_cast<double>(count - cfg.target_params)) / cfg.target_params;
        if (rel > 0.15)
            throw config_error("ModelConfig: instantiated parameter count " +
                               std::to_string(count) + " is outside +-15% of target_params " +
                               std::to_string(cfg.target_params));
    }

    void init_weights(uint64_t seed) {
        Rng rng(mix_seed(seed, 0xA11));
        auto& t = params_.tensors;
        const std::string head = "dec." + std::to_string(params_.config.decoder_widths.size() - 1);
        size_t last_fan_in = 1;  // biases reuse the fan-in of their weight tensor
        for (size_t i = 0; i < t.tensor_count(); ++i) {
            auto& e = t.entry(i);
            // final decoder layer stays zero so the model starts at the blend
            if (e.name == head + ".w" || e.name == head + ".b") continue;
            size_t fan_in;
            if (e.shape.size() == 4)
                fan_in = static_cast<size_t>(e.shape[1]) * 9;
            else if (e.shape.size() == 2)
                fan_in = static_cast<size_t>(e.shape[1]);
            else
                fan_in = last_fan_in;
            last_fan_in = fan_in;
            const scalar bound = 1.0 / std::sqrt(static_cast<scalar>(fan_in));
            for (auto& v : e.data) v = rng.uniform(-bound, bound);
        }
    }

    void encode(const scalar* frame, int h, int w, std::vector<scalar>& feat,
                std::vector<std::vector<scalar>>* acts, std::vector<std::vector<scalar>>* pres) const {
        const ModelConfig& cfg = params_.config;
        const size_t plane = static_cast<size_t>(h) * w;
        std::vector<scalar> cur(frame, frame + plane);
        int cin = 1;
        if (acts) {
            acts->clear();
            pres->clear();
        }
        for (size_t li = 0; li < cfg.encoder_channels.size(); ++li) {
            const int cout = cfg.encoder_channels[li];
            const auto& wgt = params_.tensors["enc." + std::to_string(li) + ".w"];
            const auto& bias = params_.tensors["enc." + std::to_string(li) + ".b"];
            std::vector<scalar> next(plane * static_cast<size_t>(cout));
            nn::conv3x3_forward(cur.data(), cin, h, w, wgt.data(), bias.data(), cout, next.data());
            if (acts) {
                acts->push_back(std::move(cur));
                pres->push_back(next);  // pre-activation copy
            }
            nn::relu_forward(next);
            cur = std::move(next);
            cin = cout;
        }
        const auto& wgt = params_.tensors["enc.proj.w"];
        const auto& bias = params_.tensors["enc.proj.b"];
        feat.assign(plane * static_cast<size_t>(cfg.feature_dim), 0.0);
        nn::conv3x3_forward(cur.data(), cin, h, w, wgt.data(), bias.data(), cfg.feature_dim,
                            feat.data());
        if (acts) acts->push_back(std::move(cur));  // input to the projection conv
    }

    void encoder_backward(const Trace& trace, int side, const std::vector<scalar>& dfeat,
                          ParamSet& grads) const {
        const ModelConfig& cfg = params_.config;
        const int h = trace.h, w = trace.w;
        const size_t plane = static_cast<size_t>(h) * w;
        const size_t n_enc = cfg.encoder_channels.size();

        // projection conv (no relu after it)
        const auto& acts = trace.act[side];
        const auto& pres = trace.pre[side];
        int cin = cfg.encoder_channels.back();
        std::vector<scalar> g(plane * static_cast<size_t>(cin), 0.0);
        nn::conv3x3_backward_params(acts[n_enc].data(), cin, h, w, dfeat.data(), cfg.feature_dim,
                                    grads["enc.proj.w"].data(), grads["enc.proj.b"].data());
        nn::conv3x3_backward_data(dfeat.data(), cfg.feature_dim, h, w,
                                  params_.tensors["enc.proj.w"].data(), cin, g.data());

        for (size_t li = n_enc; li-- > 0;) {
            const int cout = cfg.encoder_channels[li];
            const int cin_l = li == 0 ? 1 : cfg.encoder_channels[li - 1];
            // g currently holds dL/d relu(pre[li]); mask it
            const auto& pre = pres[li];
            for (size_t i = 0; i < g.size(); ++i)
                if (pre[i] <= 0.0) g[i] = 0.0;

            nn::conv3x3_backward_params(acts[li].data(), cin_l, h, w, g.data(), cout,
                                        grads["enc." + std::to_string(li) + ".w"].data(),
                                        grads["enc." + std::to_string(li) + ".b"].data());
            if (li > 0) {
                std::vector<scalar> gin(plane * static_cast<size_t>(cin_l), 0.0);
                nn::conv3x3_backward_data(g.data(), cout, h, w,
                                          params_.tensors["enc." + std::to_string(li) + ".w"].data(),
                                          cin_l, gin.data());
                g = std::move(gin);
            }
        }
    }

    ModelParams params_;
};

// ---------------------------------------------------------------------------
// Parameter archive: "ISRPARAM" | u32 version | u64 json_len | json | payload.
// The JSON header lists every tensor (name, dtype, shape, count) in payload
// order together with the config, its fingerprint, stage tag and step count.
// Payload is little-endian float64, bit-exact round trip.
// ---------------------------------------------------------------------------

inline void save_params(const ModelParams& p, const std::string& path) {
    nlohmann::json meta;
    meta["format"] = "interslice-params";
    meta["config"] = p.config;
    {
        char fp[32];
        std::snprintf(fp, sizeof(fp), "%016llx", static_cast<unsigned long long>(p.fingerprint()));
        meta["fingerprint"] = fp;
    }
    meta["stage"] = p.stage_tag;
    meta["step"] = p.step;
    meta["tensors"] = nlohmann::json::array();
    for (size_t i = 0; i < p.tensors.tensor_count(); ++i) {
        const auto& e = p.tensors.entry(i);
        meta["tensors"].push_back({{"name", e.name},
                                   {"dtype", "f64"},
                                   {"shape", e.shape},
                                   {"count", e.count()}});
    }
    const std::string js = meta.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open '" + path + "' for writing");
    f.write("ISRPARAM", 8);
    const uint32_t version = 1;
    f.write(reinterpret_cast<const char*>(&version), 4);
    const uint64_t len = js.size();
    f.write(reinterpret_cast<const char*>(&len), 8);
    f.write(js.data(), static_cast<std::streamsize>(js.size()));
    for (size_t i = 0; i < p.tensors.tensor_count(); ++i) {
        const auto& e = p.tensors.entry(i);
        f.write(reinterpret_cast<const char*>(e.data.data()),
                static_cast<std::streamsize>(e.count() * sizeof(scalar)));
    }
    if (!f) throw io_error("short write to '" + path + "'");
}

inline ModelParams load_params(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open '" + path + "' for reading");
    char magic[8];
    f.read(magic, 8);
    if (f.gcount() != 8 || std::memcmp(magic, "ISRPARAM", 8) != 0)
        throw format_error("'" + path + "' is not a parameter archive");
    uint32_t version = 0;
    uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&len), 8);
    if (!f || version != 1)
        throw format_error("'" + path + "': unsupported archive version " + std::to_string(version));
    if (len > (1ull << 24)) throw format_error("'" + path + "': implausible metadata size");
    std::string js(len, '\0');
    f.read(js.data(), static_cast<std::streamsize>(len));
    if (static_cast<uint64_t>(f.gcount()) != len)
        throw format_error("'" + path + "': truncated metadata");

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
        throw format_error("'" + path + "': corrupt metadata: " + e.what());
    }
    if (meta.value("format", "") != "interslice-params")
        throw format_error("'" + path + "': not an interslice parameter archive");

    ModelParams p;
    p.config = meta.at("config").get<ModelConfig>();
    p.stage_tag = meta.value("stage", "init");
    p.step = meta.value("step", int64_t{0});
    {
        char fp[32];
        std::snprintf(fp, sizeof(fp), "%016llx",
                      static_cast<unsigned long long>(p.config.fingerprint()));
        if (meta.value("fingerprint", "") != fp)
            throw format_error("'" + path + "': fingerprint does not match the stored config");
    }

    p.tensors = ParamSet(p.config);
    const auto& tensors = meta.at("tensors");
    if (tensors.size() != p.tensors.tensor_count())
        throw format_error("'" + path + "': tensor list does not match the config layout");
    for (size_t i = 0; i < p.tensors.tensor_count(); ++i) {
        auto& e = p.tensors.entry(i);
        const auto& tj = tensors[i];
        if (tj.at("name") != e.name || tj.at("count") != e.count() || tj.at("dtype") != "f64")
            throw format_error("'" + path + "': tensor '" + e.name + "' metadata mismatch");
        f.read(reinterpret_cast<char*>(e.data.data()),
               static_cast<std::streamsize>(e.count() * sizeof(scalar)));
        if (static_cast<size_t>(f.gcount()) != e.count() * sizeof(scalar))
            throw format_error("'" + path + "': truncated payload at tensor '" + e.name + "'");
    }
    return p;
}

// Load against an expected configuration; mismatch is a compatibility error.
inline ModelParams load_params(const std::string& path, const ModelConfig& expected) {
    ModelParams p = load_params(path);
    if (p.config.fingerprint() != expected.fingerprint())
        throw compat_error("'" + path + "': archive was built for config [" +
                           p.config.canonical_string() + "], expected [" +
                           expected.canonical_string() + "]");
    return p;
}

}  // namespace isr
