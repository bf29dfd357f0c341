// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "sdlab/diffusion.hpp"
#include "sdlab/spectral.hpp"

namespace sdlab {

// ----------------------------------------------------------- Wiener filters

/// Optimal linear noise-estimation response per radial frequency.
struct WienerResponse {
    std::vector<double> freqs;
    std::vector<double> response;
    double alpha_bar = 0.0;
};

inline double wiener_gain(double power, double alpha_bar) { return 1.0 / (alpha_bar * power + 1.0 - alpha_bar); }

/// H*(f) = 1 / (ab |X0(f)|^2 + 1 - ab) for a power-law spectrum.
inline WienerResponse wiener_response(const PowerLawSpectrum& ps, std::span<const double> freqs, double alpha_bar) {
    if (alpha_bar < 0.0 || alpha_bar > 1.0) throw InvalidArgument("wiener_response: alpha_bar must lie in [0,1]");
    WienerResponse w{{freqs.begin(), freqs.end()}, {}, alpha_bar};
    for (double f : freqs) {
        if (!(f > 0.0)) throw InvalidArgument("wiener_response: power-law response requested at f <= 0");
        w.response.push_back(wiener_gain(ps.power(f), alpha_bar));
    }
    return w;
}

/// Same response from a tabulated (e.g. radially binned empirical) power spectrum.
inline WienerResponse wiener_response(std::span<const double> freqs, std::span<const double> power, double alpha_bar) {
    if (alpha_bar < 0.0 || alpha_bar > 1.0) throw InvalidArgument("wiener_response: alpha_bar must lie in [0,1]");
    if (freqs.size() != power.size()) throw ShapeError("wiener_response", Shape{freqs.size()}, Shape{power.size()});
    WienerResponse w{{freqs.begin(), freqs.end()}, {}, alpha_bar};
    for (double p : power) w.response.push_back(wiener_gain(p, alpha_bar));
    return w;
}

/// Two closed forms for the signal-reconstruction response built from H*:
/// Caption = 1 - (1 - ab) H*^2, Text = 1 - sqrt(1 - ab) H*.
enum class ReconstructionVariant { Caption, Text };

inline ReconstructionVariant parse_reconstruction_variant(std::string_view s) {
    if (s == "caption") return ReconstructionVariant::Caption;
    if (s == "text") return ReconstructionVariant::Text;
    throw InvalidArgument("unknown reconstruction variant '" + std::string(s) + "'");
}

inline std::vector<double> reconstruction_response(const WienerResponse& wr, ReconstructionVariant variant) {
    std::vector<double> out;
    const double ab = wr.alpha_bar;
    for (double h : wr.response)
        out.push_back(variant == ReconstructionVariant::Caption ? 1.0 - (1.0 - ab) * h * h : 1.0 - std::sqrt(1.0 - ab) * h);
    return out;
}

/// Least-squares fit of a per-frequency linear filter x_t -> eps, pooled per radial bin.
struct FittedFilter {
    RadialProfile bins;                 // geometry; mean_magnitude unused
    std::vector<double> raw;            // bin-mean of E[conj(X_t) E] / E[|X_t|^2]
    std::vector<double> response;       // raw / sqrt(1 - ab): gain per unit noise amplitude
    std::vector<double> closed_form;    // bin-mean of H*(f) from the batch's own power spectrum
    std::vector<double> power;          // bin-mean per-coefficient power |X0|^2 / (H W)
    double alpha_bar = 0.0;
};

/// Fits h(f) = sum conj(X_t) E / sum |X_t|^2 per DFT coefficient from sampled
/// (x_t, eps) pairs built on `signals` ([H,W] each), then averages per radial
/// bin. The power spectrum is normalized so unit white noise has power 1.
inline FittedFilter fit_optimal_linear_filter(const std::vector<Tensor>& signals, double alpha_bar, Rng& rng,
                                              std::size_t n_bins = 8, std::size_t min_samples = 1000) {
    if (signals.size() < min_samples)
        throw InvalidArgument("fit_optimal_linear_filter: need at least " + std::to_string(min_samples) + " samples, got " +
                              std::to_string(signals.size()));
    if (!(alpha_bar >= 0.0 && alpha_bar < 1.0)) throw InvalidArgument("fit_optimal_linear_filter: alpha_bar must lie in [0,1)");
    const std::size_t H = signals[0].size(0), W = signals[0].size(1), P = H * W;
    const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
    std::vector<Complex> cross(P, 0.0);
    std::vector<double> energy(P, 0.0), power(P, 0.0);
    double total_variance = 0.0;
    for (const auto& x0 : signals) {
        if (x0.shape() != signals[0].shape()) throw ShapeError("fit_optimal_linear_filter", signals[0].shape(), x0.shape());
        double mu = 0.0, var = 0.0;
        for (double v : x0.data()) mu += v;
        mu /= static_cast<double>(P);
        for (double v : x0.data()) var += (v - mu) * (v - mu);
        total_variance += var;
        std::vector<double> eps(P), xt(P);
        for (std::size_t i = 0; i < P; ++i) {
            eps[i] = rng.normal();
            xt[i] = a * x0[i] + b * eps[i];
        }
        const auto X0 = dft2(x0.data(), H, W);
        const auto Xt = dft2(xt, H, W);
        const auto E = dft2(eps, H, W);
        for (std::size_t k = 0; k < P; ++k) {
            cross[k] += std::conj(Xt.coefficients[k]) * E.coefficients[k];
            energy[k] += std::norm(Xt.coefficients[k]);
            power[k] += std::norm(X0.coefficients[k]);
        }
    }
    if (!(total_variance > 1e-12 * static_cast<double>(signals.size())))
        throw InvalidArgument("fit_optimal_linear_filter: signals have zero variance; no stationary spectrum to fit");

    FittedFilter out;
    out.alpha_bar = alpha_bar;
    std::vector<double> dummy(P, 0.0);
    out.bins = radial_profile(dummy, H, W, n_bins);
    out.raw.assign(n_bins, 0.0);
    out.closed_form.assign(n_bins, 0.0);
    out.power.assign(n_bins, 0.0);
    const double r_max = max_radial_frequency(H, W);
    const double n = static_cast<double>(signals.size());
    for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) {
            const int bin = radial_bin(radial_frequency(u, v, H, W), r_max, n_bins);
            if (bin < 0) continue;
            const std::size_t k = u * W + v;
            const double pk = power[k] / (n * static_cast<double>(P));
            out.raw[static_cast<std::size_t>(bin)] += cross[k].real() / energy[k];
            out.closed_form[static_cast<std::size_t>(bin)] += wiener_gain(pk, alpha_bar);
            out.power[static_cast<std::size_t>(bin)] += pk;
        }
    out.response.assign(n_bins, 0.0);
    for (std::size_t i = 0; i < n_bins; ++i) {
        const double c = static_cast<double>(out.bins.count[i]);
        if (c == 0) continue;
        out.raw[i] /= c;
        out.closed_form[i] /= c;
        out.power[i] /= c;
        out.response[i] = out.raw[i] / b;
    }
    return out;
}

// ------------------------------------------------------- frequency error

struct FreqErrorReport {
    double cutoff = 0.0;
    double low_error = 0.0;
    double high_error = 0.0;
    std::size_t n_real = 0;
    std::size_t n_gen = 0;

    /// `cutoff,low_error,high_error,n_real,n_gen` header plus one row.
    void write_csv(std::ostream& os) const {
        os << "cutoff,low_error,high_error,n_real,n_gen\n";
        os.precision(17);
        os << cutoff << ',' << low_error << ',' << high_error << ',' << n_real << ',' << n_gen << '\n';
    }
};

/// Per-coefficient E|F| over a batch of [..., H, W] images (all leading dims
/// are treated as separate images).
inline std::vector<double> mean_magnitude_spectrum(const Tensor& batch) {
    if (batch.rank() < 2) throw ShapeError("mean_magnitude_spectrum", "rank must be >= 2, got " + shape_str(batch.shape()));
    const std::size_t H = batch.size(batch.rank() - 2), W = batch.size(batch.rank() - 1), P = H * W;
    const std::size_t images = batch.numel() / P;
    if (images == 0) throw InvalidArgument("mean_magnitude_spectrum: empty batch");
    std::vector<double> acc(P, 0.0);
    for (std::size_t i = 0; i < images; ++i) {
        const auto g = dft2(batch.data().subspan(i * P, P), H, W);
        for (std::size_t k = 0; k < P; ++k) acc[k] += std::abs(g.coefficients[k]);
    }
    for (auto& v : acc) v /= static_cast<double>(images);
    return acc;
}

/// Signed mean of E|F_real| - E|F_gen| over non-DC coefficients with radius
/// below (low) and at-or-above (high) the cutoff, in cycles per image.
inline FreqErrorReport freq_error(const Tensor& real, const Tensor& gen, double cutoff) {
    if (real.rank() < 2 || gen.rank() < 2) throw ShapeError("freq_error", real.shape(), gen.shape());
    const std::size_t H = real.size(real.rank() - 2), W = real.size(real.rank() - 1);
    if (gen.size(gen.rank() - 2) != H || gen.size(gen.rank() - 1) != W) throw ShapeError("freq_error", real.shape(), gen.shape());
    if (real.numel() == 0 || gen.numel() == 0) throw InvalidArgument("freq_error: empty batch");
    const double r_max = max_radial_frequency(H, W);
    if (!(cutoff > 0.0 && cutoff < r_max)) throw InvalidArgument("freq_error: cutoff must lie in (0, r_max)");
    const auto mr = mean_magnitude_spectrum(real);
    const auto mg = mean_magnitude_spectrum(gen);
    FreqErrorReport rep;
    rep.cutoff = cutoff;
    rep.n_real = real.numel() / (H * W);
    rep.n_gen = gen.numel() / (H * W);
    double lo = 0, hi = 0;
    std::size_t nlo = 0, nhi = 0;
    for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) {
            const double r = radial_frequency(u, v, H, W);
            if (r == 0.0) continue;
            const double d = mr[u * W + v] - mg[u * W + v];
            if (r < cutoff) {
                lo += d;
                ++nlo;
            } else {
                hi += d;
                ++nhi;
            }
        }
    rep.low_error = nlo ? lo / static_cast<double>(nlo) : 0.0;
    rep.high_error = nhi ? hi / static_cast<double>(nhi) : 0.0;
    return rep;
}

/// A 28-per-128 split of the half-width, i.e. 28 Hz on 256-pixel images.
inline double scaled_cutoff(std::size_t image_size) { return 28.0 / 128.0 * static_cast<double>(image_size) / 2.0; }

// ------------------------------------------------- frequency evolution

struct EvolutionSnapshot {
    int step = 0;
    int t = 0;
    std::vector<double> profile;  // radial mean |F| of x0_hat, averaged over the batch
    std::vector<double> ratio;    // profile / final profile
};

struct EvolutionReport {
    std::vector<double> bin_centers;
    std::vector<EvolutionSnapshot> snapshots;  // last entry is the final sample

    /// `snapshot,step,t,freq_bin,value,ratio`
    void write_csv(std::ostream& os) const {
        os << "snapshot,step,t,freq_bin,value,ratio\n";
        os.precision(17);
        for (std::size_t s = 0; s < snapshots.size(); ++s)
            for (std::size_t b = 0; b < bin_centers.size(); ++b)
                os << s << ',' << snapshots[s].step << ',' << snapshots[s].t << ',' << bin_centers[b] << ','
                   << snapshots[s].profile[b] << ',' << snapshots[s].ratio[b] << '\n';
    }

    /// Mean of profile over bins [lo, hi) divided by the same for the final snapshot.
    double band_ratio(std::size_t snapshot, std::size_t lo, std::size_t hi) const {
        double a = 0, f = 0;
        for (std::size_t b = lo; b < hi; ++b) {
            a += snapshots[snapshot].profile[b];
            f += snapshots.back().profile[b];
        }
        return a / f;
    }

    /// First snapshot from which the band stays within `tol` of its final
    /// magnitude (ratio in [1 - tol, 1 / (1 - tol)]) through the end.
    std::size_t convergence_snapshot(std::size_t lo, std::size_t hi, double tol = 0.1) const {
        std::size_t first = snapshots.size() - 1;
        for (std::size_t s = snapshots.size(); s-- > 0;) {
            const double r = band_ratio(s, lo, hi);
            if (r >= 1.0 - tol && r <= 1.0 / (1.0 - tol))
                first = s;
            else
                break;
        }
        return first;
    }
};

/// Radial |F| profile averaged over a batch of [..., H, W] images.
inline std::vector<double> batch_radial_profile(const Tensor& batch, std::size_t n_bins) {
    const std::size_t H = batch.size(batch.rank() - 2), W = batch.size(batch.rank() - 1);
    return radial_profile(mean_magnitude_spectrum(batch), H, W, n_bins).mean_magnitude;
}

/// Samples with snapshot recording and profiles every x0_hat against the final sample.
inline EvolutionReport frequency_evolution_report(const Denoiser& model, const NoiseSchedule& sched,
                                                  const SamplerConfig& sampler, const Shape& shape, Rng& rng,
                                                  int n_snapshots, std::size_t n_bins = 8,
                                                  std::span<const int> labels = {}) {
    if (n_snapshots < 1) throw InvalidArgument("frequency_evolution_report: need at least one snapshot");
    SampleTrace trace{n_snapshots, {}};
    const Tensor final_sample = sample(model, sched, sampler, shape, rng, labels, &trace);
    const std::size_t H = shape[shape.size() - 2], W = shape[shape.size() - 1];
    EvolutionReport rep;
    const auto geometry = radial_profile(std::vector<double>(H * W, 0.0), H, W, n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) rep.bin_centers.push_back(geometry.bin_center(b));
    const auto final_profile = batch_radial_profile(final_sample, n_bins);
    for (const auto& snap : trace.snapshots) {
        EvolutionSnapshot e{snap.step, snap.t, batch_radial_profile(snap.x0_hat, n_bins), {}};
        for (std::size_t b = 0; b < n_bins; ++b) e.ratio.push_back(final_profile[b] > 0 ? e.profile[b] / final_profile[b] : 0.0);
        rep.snapshots.push_back(std::move(e));
    }
    return rep;
}

}  // namespace sdlab
