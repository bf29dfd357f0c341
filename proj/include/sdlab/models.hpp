// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdlab/diffusion.hpp"
#include "sdlab/ops.hpp"
#include "sdlab/optim.hpp"
#include "sdlab/spectral.hpp"

namespace sdlab {

// ------------------------------------------------------------------ layers

namespace detail {
inline Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::uniform(std::move(shape), rng, -bound, bound);
}
}  // namespace detail

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    static Linear create(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                         bool zero = false) {
        Linear l;
        l.weight = ps.add(name + ".weight", zero ? Tensor::zeros({in, out}) : detail::init_uniform({in, out}, in, rng));
        l.bias = ps.add(name + ".bias", Tensor::zeros({out}));
        return l;
    }

    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct Conv {
    Tensor weight;  // [out, in, k, k]
    Tensor bias;    // [out]
    std::size_t stride = 1;
    std::size_t pad = 0;

    static Conv create(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                       Rng& rng, std::size_t stride = 1, bool zero = false) {
        Conv c;
        const Shape shape{out, in, k, k};
        c.weight = ps.add(name + ".weight", zero ? Tensor::zeros(shape) : detail::init_uniform(shape, in * k * k, rng));
        c.bias = ps.add(name + ".bias", Tensor::zeros({out}));
        c.stride = stride;
        c.pad = k / 2;
        return c;
    }

    std::size_t out_channels() const { return weight.size(0); }

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }
};

/// Sinusoidal features [N, dim]: sin(t w_i) for the first half, cos(t w_i) for
/// the second, with w_i = 10000^(-i / (dim/2)).
inline Tensor sinusoidal_embedding(std::span<const int> t, std::size_t dim) {
    if (dim % 2) throw InvalidArgument("sinusoidal_embedding: dim must be even");
    const std::size_t half = dim / 2;
    std::vector<double> out(t.size() * dim);
    for (std::size_t n = 0; n < t.size(); ++n)
        for (std::size_t i = 0; i < half; ++i) {
            const double w = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
            out[n * dim + i] = std::sin(t[n] * w);
            out[n * dim + half + i] = std::cos(t[n] * w);
        }
    return Tensor({t.size(), dim}, std::move(out));
}

// ---------------------------------------------------------- wavelet gating

/// Per-band, per-channel gates in (0,1), each [N, C, 1, 1].
struct GatingVector {
    Tensor ll, lh, hl, hh;

    const Tensor& operator[](Band b) const {
        switch (b) {
            case Band::LL: return ll;
            case Band::LH: return lh;
            case Band::HL: return hl;
            default: return hh;
        }
    }

    /// Constant gates, for ablations and identities.
    static GatingVector constant(std::size_t N, std::size_t C, double g_ll, double g_lh, double g_hl, double g_hh) {
        return {Tensor::full({N, C, 1, 1}, g_ll), Tensor::full({N, C, 1, 1}, g_lh), Tensor::full({N, C, 1, 1}, g_hl),
                Tensor::full({N, C, 1, 1}, g_hh)};
    }
};

/// sigmoid(FFN(avgpool(X))): a two-layer FFN (SiLU between) from the pooled
/// input channels to 4 x band_channels logits, ordered (LL, LH, HL, HH).
struct WaveletGate {
    Linear fc1;
    Linear fc2;
    std::size_t in_channels = 0;
    std::size_t band_channels = 0;

    static WaveletGate create(ParameterSet& ps, const std::string& name, std::size_t in_channels,
                              std::size_t band_channels, Rng& rng) {
        WaveletGate g;
        g.fc1 = Linear::create(ps, name + ".fc1", in_channels, band_channels, rng);
        g.fc2 = Linear::create(ps, name + ".fc2", band_channels, 4 * band_channels, rng);
        g.in_channels = in_channels;
        g.band_channels = band_channels;
        return g;
    }
};

namespace detail {
inline Tensor as_batched(const Tensor& x) {
    if (x.rank() == 4) return x;
    if (x.rank() == 3) return reshape(x, {1, x.size(0), x.size(1), x.size(2)});
    throw ShapeError("wavelet gating", "expected [C,H,W] or [N,C,H,W], got " + shape_str(x.shape()));
}
inline Tensor unbatch_like(const Tensor& y, const Tensor& like) {
    if (like.rank() == 4) return y;
    return reshape(y, {y.size(1), y.size(2), y.size(3)});
}
}  // namespace detail

inline GatingVector wavelet_gate(const Tensor& X, const WaveletGate& gate) {
    const Tensor xb = detail::as_batched(X);
    if (xb.size(1) != gate.in_channels)
        throw ShapeError("wavelet_gate", xb.shape(), Shape{gate.in_channels, 4 * gate.band_channels});
    const std::size_t N = xb.size(0), C = gate.band_channels;
    const Tensor logits = gate.fc2(silu(gate.fc1(avgpool_global(xb))));
    const Tensor g = sigmoid(logits);
    auto band = [&](std::size_t i) { return reshape(slice(g, 1, i * C, C), {N, C, 1, 1}); };
    return {band(0), band(1), band(2), band(3)};
}

/// sum_i g_i * DWT(X)_i with explicit gates.
inline Tensor wg_down_gated(const Tensor& X, const GatingVector& g) {
    detail::check_even_2d("wg_down", X.shape());
    const Tensor xb = detail::as_batched(X);
    const WaveletBands b = dwt_haar_2d(xb);
    Tensor out = add(add(mul(b.ll, g.ll), mul(b.lh, g.lh)), add(mul(b.hl, g.hl), mul(b.hh, g.hh)));
    return detail::unbatch_like(out, X);
}

inline Tensor wg_down(const Tensor& X, const WaveletGate& gate, GatingVector* gates_out = nullptr) {
    detail::check_even_2d("wg_down", X.shape());
    GatingVector g = wavelet_gate(X, gate);
    if (gates_out) *gates_out = g;
    return wg_down_gated(X, g);
}

/// IDWT of the four channel chunks (LL, LH, HL, HH) of X, each gated.
inline Tensor wg_up_gated(const Tensor& X, const GatingVector& g) {
    const Tensor xb = detail::as_batched(X);
    if (xb.size(1) % 4) throw ShapeError("wg_up", "channel count must be divisible by 4, got " + shape_str(X.shape()));
    const std::size_t C = xb.size(1) / 4;
    auto chunk = [&](std::size_t i) { return slice(xb, 1, i * C, C); };
    Tensor out = idwt_haar_2d(
        {mul(chunk(0), g.ll), mul(chunk(1), g.lh), mul(chunk(2), g.hl), mul(chunk(3), g.hh)});
    return detail::unbatch_like(out, X);
}

inline Tensor wg_up(const Tensor& X, const WaveletGate& gate, GatingVector* gates_out = nullptr) {
    const std::size_t channels = X.rank() == 4 ? X.size(1) : X.rank() == 3 ? X.size(0) : 0;
    if (channels % 4 || channels == 0) throw ShapeError("wg_up", "channel count must be divisible by 4, got " + shape_str(X.shape()));
    GatingVector g = wavelet_gate(X, gate);
    if (gates_out) *gates_out = g;
    return wg_up_gated(X, g);
}

/// Gate values observed during forward passes, for gating-dynamics reports.
struct GateRecord {
    int layer = 0;
    bool up = false;
    std::vector<int> t;              // per batch row
    std::vector<double> band_means;  // [N][4]: channel-mean gate per band
};

struct GateRecorder {
    std::vector<GateRecord> records;
};

// ------------------------------------------------------------------- MLP

struct MlpConfig {
    std::size_t signal_length = 64;
    std::size_t hidden = 64;
    std::size_t time_dim = 32;
};

/// x_t concatenated with a sinusoidal step embedding, then
/// Linear -> SiLU -> Linear. The output layer starts at zero.
class MlpDenoiser : public Denoiser {
public:
    MlpDenoiser(const MlpConfig& cfg, Rng& rng) : cfg_(cfg) {
        fc1_ = Linear::create(params_, "fc1", cfg.signal_length + cfg.time_dim, cfg.hidden, rng);
        fc2_ = Linear::create(params_, "fc2", cfg.hidden, cfg.signal_length, rng, /*zero=*/true);
    }

    Tensor forward(const Tensor& x_t, std::span<const int> t, std::span<const int> = {}) const override {
        if (x_t.rank() != 2 || x_t.size(1) != cfg_.signal_length || x_t.size(0) != t.size())
            throw ShapeError("MlpDenoiser", x_t.shape(), Shape{t.size(), cfg_.signal_length});
        const Tensor h = concat({x_t, sinusoidal_embedding(t, cfg_.time_dim)}, 1);
        return fc2_(silu(fc1_(h)));
    }

    ParameterSet& parameters() override { return params_; }
    const ParameterSet& parameters() const override { return params_; }

    nlohmann::json descriptor() const override {
        return {{"kind", "mlp"}, {"signal_length", cfg_.signal_length}, {"hidden", cfg_.hidden}, {"time_dim", cfg_.time_dim}};
    }

    const MlpConfig& config() const { return cfg_; }

private:
    MlpConfig cfg_;
    ParameterSet params_;
    Linear fc1_, fc2_;
};

// --------------------------------------------------------------- WG-UNet

enum class Resampler { Wavelet, Plain };

struct UnetConfig {
    std::size_t in_channels = 1;
    std::vector<std::size_t> widths{8, 16};  // one per resolution; widths.size() - 1 down/up levels
    std::size_t time_dim = 32;
    std::size_t n_classes = 0;                // 0: unconditional
    Resampler resampler = Resampler::Wavelet;

    std::size_t levels() const { return widths.size() - 1; }
};

/// A small epsilon-prediction UNet. Down-sampling is WG-Down (or a stride-2
/// conv for the plain baseline); up-sampling is a 1x1 expansion to 4C
/// channels followed by WG-Up (or nearest-neighbour + conv). Skips are
/// additive. Time (plus optional class) embedding is projected into every
/// residual block.
class WgUnet : public Denoiser {
public:
    WgUnet(const UnetConfig& cfg, Rng& rng) : cfg_(cfg) {
        if (cfg.widths.size() < 2) throw InvalidArgument("WgUnet: need at least two widths");
        const std::size_t E = cfg.time_dim;
        time1_ = Linear::create(params_, "time.fc1", E, E, rng);
        time2_ = Linear::create(params_, "time.fc2", E, E, rng);
        if (cfg.n_classes > 0)
            class_table_ = params_.add("class_embedding", Tensor::randn({cfg.n_classes + 1, E}, rng, 0.1));
        in_conv_ = Conv::create(params_, "in_conv", cfg.in_channels, cfg.widths[0], 3, rng);
        const std::size_t L = cfg.levels();
        for (std::size_t l = 0; l < L; ++l) {
            const std::string p = "down" + std::to_string(l);
            const std::size_t w = cfg.widths[l];
            enc_.push_back(ResBlock::create(params_, p + ".block", l == 0 ? w : cfg.widths[l - 1], w, E, rng));
            if (cfg.resampler == Resampler::Wavelet)
                down_gate_.push_back(WaveletGate::create(params_, p + ".gate", w, w, rng));
            else
                down_conv_.push_back(Conv::create(params_, p + ".conv", w, w, 3, rng, 2));
        }
        mid1_ = ResBlock::create(params_, "mid.block1", cfg.widths[L - 1], cfg.widths[L], E, rng);
        mid2_ = ResBlock::create(params_, "mid.block2", cfg.widths[L], cfg.widths[L], E, rng);
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t l = L - 1 - i;
            const std::string p = "up" + std::to_string(l);
            const std::size_t w = cfg.widths[l], wi = cfg.widths[l + 1];
            if (cfg.resampler == Resampler::Wavelet) {
                up_expand_.push_back(Conv::create(params_, p + ".expand", wi, 4 * w, 1, rng));
                up_gate_.push_back(WaveletGate::create(params_, p + ".gate", 4 * w, w, rng));
            } else {
                up_conv_.push_back(Conv::create(params_, p + ".conv", wi, w, 3, rng));
            }
            dec_.push_back(ResBlock::create(params_, p + ".block", w, w, E, rng));
        }
        out_conv_ = Conv::create(params_, "out_conv", cfg.widths[0], cfg.in_channels, 3, rng, 1, /*zero=*/true);
    }

    Tensor forward(const Tensor& x_t, std::span<const int> t, std::span<const int> labels = {}) const override {
        return forward_features(x_t, t, labels, nullptr);
    }

    /// Forward pass that also collects distillation features: each down
    /// resampler output (fine to coarse), each up resampler output (coarse to
    /// fine), then the final prediction.
    Tensor forward_features(const Tensor& x_t, std::span<const int> t, std::span<const int> labels,
                            std::vector<Tensor>* features) const {
        if (x_t.rank() != 4 || x_t.size(1) != cfg_.in_channels || x_t.size(0) != t.size())
            throw ShapeError("WgUnet", x_t.shape(), Shape{t.size(), cfg_.in_channels, 0, 0});
        const std::size_t L = cfg_.levels();
        const std::size_t H = x_t.size(2), W = x_t.size(3);
        if (H % (std::size_t{1} << L) || W % (std::size_t{1} << L))
            throw ShapeError("WgUnet", "spatial dims " + shape_str(x_t.shape()) + " not divisible by 2^" + std::to_string(L));
        if (!labels.empty() && labels.size() != t.size()) throw ShapeError("WgUnet", x_t.shape(), Shape{labels.size()});

        Tensor emb = time2_(silu(time1_(sinusoidal_embedding(t, cfg_.time_dim))));
        if (cfg_.n_classes > 0) {
            std::vector<int> ids(labels.begin(), labels.end());
            if (ids.empty()) ids.assign(t.size(), null_label());
            emb = add(emb, gather_rows(class_table_, ids));
        }
        const Tensor emb_act = silu(emb);

        Tensor h = in_conv_(x_t);
        std::vector<Tensor> skips;
        for (std::size_t l = 0; l < L; ++l) {
            h = enc_[l](h, emb_act);
            skips.push_back(h);
            if (cfg_.resampler == Resampler::Wavelet) {
                GatingVector g;
                h = wg_down(h, down_gate_[l], &g);
                record(static_cast<int>(l), false, t, g);
            } else {
                h = down_conv_[l](h);
            }
            if (features) features->push_back(h);
        }
        h = mid2_(mid1_(h, emb_act), emb_act);
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t l = L - 1 - i;
            if (cfg_.resampler == Resampler::Wavelet) {
                GatingVector g;
                h = wg_up(up_expand_[i](h), up_gate_[i], &g);
                record(static_cast<int>(l), true, t, g);
            } else {
                h = up_conv_[i](upsample_nearest2x(h));
            }
            if (features) features->push_back(h);
            h = dec_[i](add(h, skips[l]), emb_act);
        }
        Tensor out = out_conv_(silu(h));
        if (features) features->push_back(out);
        return out;
    }

    /// Channel counts of the tensors forward_features() collects, in order.
    std::vector<std::size_t> feature_channels() const {
        std::vector<std::size_t> c;
        const std::size_t L = cfg_.levels();
        for (std::size_t l = 0; l < L; ++l) c.push_back(cfg_.widths[l]);
        for (std::size_t i = 0; i < L; ++i) c.push_back(cfg_.widths[L - 1 - i]);
        c.push_back(cfg_.in_channels);
        return c;
    }

    ParameterSet& parameters() override { return params_; }
    const ParameterSet& parameters() const override { return params_; }

    nlohmann::json descriptor() const override {
        return {{"kind", cfg_.resampler == Resampler::Wavelet ? "wg_unet" : "plain_unet"},
                {"in_channels", cfg_.in_channels},
                {"widths", cfg_.widths},
                {"time_dim", cfg_.time_dim},
                {"n_classes", cfg_.n_classes}};
    }

    int null_label() const override { return cfg_.n_classes > 0 ? static_cast<int>(cfg_.n_classes) : -1; }

    const UnetConfig& config() const { return cfg_; }

    /// Scalar count of the resampler parameters alone.
    std::size_t resampler_parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_.items())
            if (p.name.find(".gate.") != std::string::npos || p.name.find(".expand.") != std::string::npos ||
                p.name.find(".conv.") != std::string::npos)
                n += p.value.numel();
        return n;
    }

    void set_gate_recorder(GateRecorder* r) const { recorder_ = r; }

private:
    struct ResBlock {
        Conv conv1, conv2;
        Linear time_proj;
        std::optional<Conv> skip;

        static ResBlock create(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                               std::size_t emb_dim, Rng& rng) {
            ResBlock b;
            b.conv1 = Conv::create(ps, name + ".conv1", in, out, 3, rng);
            b.time_proj = Linear::create(ps, name + ".time", emb_dim, out, rng);
            b.conv2 = Conv::create(ps, name + ".conv2", out, out, 3, rng);
            if (in != out) b.skip = Conv::create(ps, name + ".skip", in, out, 1, rng);
            return b;
        }

        Tensor operator()(const Tensor& x, const Tensor& emb_act) const {
            Tensor h = conv1(silu(x));
            const std::size_t N = emb_act.size(0), C = h.size(1);
            h = add(h, reshape(time_proj(emb_act), {N, C, 1, 1}));
            h = conv2(silu(h));
            return add(skip ? (*skip)(x) : x, h);
        }
    };

    void record(int layer, bool up, std::span<const int> t, const GatingVector& g) const {
        if (!recorder_) return;
        GateRecord r{layer, up, std::vector<int>(t.begin(), t.end()), {}};
        const std::size_t N = g.ll.size(0), C = g.ll.size(1);
        r.band_means.assign(N * 4, 0.0);
        for (int b = 0; b < 4; ++b) {
            const Tensor& gb = g[static_cast<Band>(b)];
            for (std::size_t n = 0; n < N; ++n) {
                double s = 0;
                for (std::size_t c = 0; c < C; ++c) s += gb[n * C + c];
                r.band_means[n * 4 + static_cast<std::size_t>(b)] = s / static_cast<double>(C);
            }
        }
        recorder_->records.push_back(std::move(r));
    }

    UnetConfig cfg_;
    ParameterSet params_;
    Linear time1_, time2_;
    Tensor class_table_;
    Conv in_conv_, out_conv_;
    std::vector<ResBlock> enc_, dec_;
    ResBlock mid1_, mid2_;
    std::vector<WaveletGate> down_gate_, up_gate_;
    std::vector<Conv> down_conv_, up_expand_, up_conv_;
    mutable GateRecorder* recorder_ = nullptr;
};

// ----------------------------------------------------------------- factory

inline std::unique_ptr<Denoiser> make_denoiser(const nlohmann::json& d, Rng& rng) {
    const std::string kind = d.at("kind").get<std::string>();
    if (kind == "mlp") {
        MlpConfig c;
        c.signal_length = d.at("signal_length").get<std::size_t>();
        c.hidden = d.at("hidden").get<std::size_t>();
        c.time_dim = d.at("time_dim").get<std::size_t>();
        return std::make_unique<MlpDenoiser>(c, rng);
    }
    if (kind == "wg_unet" || kind == "plain_unet") {
        UnetConfig c;
        c.in_channels = d.at("in_channels").get<std::size_t>();
        c.widths = d.at("widths").get<std::vector<std::size_t>>();
        c.time_dim = d.at("time_dim").get<std::size_t>();
        c.n_classes = d.value("n_classes", std::size_t{0});
        c.resampler = kind == "wg_unet" ? Resampler::Wavelet : Resampler::Plain;
        return std::make_unique<WgUnet>(c, rng);
    }
    throw ConfigError("unknown model kind '" + kind + "'");
}

}  // namespace sdlab
