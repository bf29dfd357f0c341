// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <ostream>
#include <span>
#include <vector>

#include "sdlab/ops.hpp"
#include "sdlab/rng.hpp"
#include "sdlab/tensor.hpp"

namespace sdlab {

using Complex = std::complex<double>;

// ======================================================================
// Fourier transforms
//
// Forward transforms are unnormalized sums; inverses carry 1/N.
// ======================================================================

inline bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

/// O(n^2) transform of a strided sequence, in place. `sign` is -1 forward, +1 inverse.
inline void dft1_direct_inplace(Complex* data, std::size_t n, std::size_t stride, int sign) {
    std::vector<Complex> in(n), out(n);
    for (std::size_t i = 0; i < n; ++i) in[i] = data[i * stride];
    std::vector<Complex> twiddle(n);
    for (std::size_t k = 0; k < n; ++k)
        twiddle[k] = std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
    for (std::size_t k = 0; k < n; ++k) {
        Complex acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += in[i] * twiddle[(k * i) % n];
        out[k] = acc;
    }
    for (std::size_t i = 0; i < n; ++i) data[i * stride] = out[i];
}

/// Iterative radix-2 Cooley-Tukey; n must be a power of two.
inline void fft1_radix2_inplace(Complex* data, std::size_t n, std::size_t stride, int sign) {
    std::vector<Complex> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = data[i * stride];
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
        for (std::size_t i = 0; i < n; i += len)
            for (std::size_t k = 0; k < len / 2; ++k) {
                const Complex w = std::polar(1.0, ang * static_cast<double>(k));
                const Complex u = a[i + k];
                const Complex v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
    }
    for (std::size_t i = 0; i < n; ++i) data[i * stride] = a[i];
}

enum class DftMethod { Auto, Direct };

inline void dft1_inplace(Complex* data, std::size_t n, std::size_t stride, int sign, DftMethod method) {
    if (method == DftMethod::Auto && is_power_of_two(n))
        fft1_radix2_inplace(data, n, stride, sign);
    else
        dft1_direct_inplace(data, n, stride, sign);
}

inline std::vector<Complex> dft1(std::span<const double> x, DftMethod method = DftMethod::Auto) {
    std::vector<Complex> out(x.begin(), x.end());
    dft1_inplace(out.data(), out.size(), 1, -1, method);
    return out;
}

inline std::vector<Complex> idft1(std::span<const Complex> X, DftMethod method = DftMethod::Auto) {
    std::vector<Complex> out(X.begin(), X.end());
    dft1_inplace(out.data(), out.size(), 1, +1, method);
    for (auto& v : out) v /= static_cast<double>(out.size());
    return out;
}

/// 2D complex transform of an H x W row-major plane, in place.
inline void dft2_inplace(std::vector<Complex>& plane, std::size_t H, std::size_t W, int sign,
                         DftMethod method = DftMethod::Auto) {
    for (std::size_t r = 0; r < H; ++r) dft1_inplace(plane.data() + r * W, W, 1, sign, method);
    for (std::size_t c = 0; c < W; ++c) dft1_inplace(plane.data() + c, H, W, sign, method);
}

/// Complex DFT coefficients of a real 2D signal.
struct SpectrumGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<Complex> coefficients;
    bool dc_centered = false;

    Complex at(std::size_t u, std::size_t v) const { return coefficients[u * width + v]; }

    /// Signed frequency index of storage row u (or column v).
    static long signed_freq(std::size_t index, std::size_t n, bool centered) {
        const long i = static_cast<long>(index);
        const long N = static_cast<long>(n);
        if (centered) return i - N / 2;
        return i <= N / 2 ? i : i - N;
    }

    std::vector<double> magnitudes() const {
        std::vector<double> m(coefficients.size());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::abs(coefficients[i]);
        return m;
    }

    /// Copy with DC moved to (H/2, W/2).
    SpectrumGrid centered() const {
        if (dc_centered) return *this;
        SpectrumGrid out{height, width, std::vector<Complex>(coefficients.size()), true};
        for (std::size_t u = 0; u < height; ++u)
            for (std::size_t v = 0; v < width; ++v)
                out.coefficients[((u + height / 2) % height) * width + (v + width / 2) % width] = at(u, v);
        return out;
    }
};

inline SpectrumGrid dft2(std::span<const double> x, std::size_t H, std::size_t W, DftMethod method = DftMethod::Auto) {
    if (x.size() != H * W || H == 0 || W == 0)
        throw ShapeError("dft2", "expected " + std::to_string(H) + "x" + std::to_string(W) + " values, got " +
                                     std::to_string(x.size()));
    SpectrumGrid g{H, W, std::vector<Complex>(x.begin(), x.end()), false};
    dft2_inplace(g.coefficients, H, W, -1, method);
    return g;
}

/// DFT of a [H,W] tensor.
inline SpectrumGrid dft2(const Tensor& x, DftMethod method = DftMethod::Auto) {
    if (x.rank() != 2) throw ShapeError("dft2", "expected [H,W], got " + shape_str(x.shape()));
    return dft2(x.data(), x.size(0), x.size(1), method);
}

inline std::vector<Complex> idft2_complex(const SpectrumGrid& g, DftMethod method = DftMethod::Auto) {
    SpectrumGrid s = g;
    if (s.dc_centered) {
        for (std::size_t u = 0; u < g.height; ++u)
            for (std::size_t v = 0; v < g.width; ++v)
                s.coefficients[u * g.width + v] =
                    g.at((u + g.height / 2) % g.height, (v + g.width / 2) % g.width);
    }
    dft2_inplace(s.coefficients, g.height, g.width, +1, method);
    const double inv = 1.0 / static_cast<double>(g.height * g.width);
    for (auto& c : s.coefficients) c *= inv;
    return s.coefficients;
}

/// Real part of the inverse transform as a [H,W] tensor.
inline Tensor idft2(const SpectrumGrid& g, DftMethod method = DftMethod::Auto) {
    auto c = idft2_complex(g, method);
    std::vector<double> re(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) re[i] = c[i].real();
    return Tensor({g.height, g.width}, std::move(re));
}

// ======================================================================
// Haar wavelets (orthonormal, single level)
// ======================================================================

enum class Band { LL = 0, LH = 1, HL = 2, HH = 3 };

namespace detail {
// Signs of (b, c, d) in a band of the 2x2 block (a b / c d); a is always +.
constexpr int kHaarSign[4][3] = {{+1, +1, +1}, {-1, +1, -1}, {+1, -1, -1}, {-1, -1, +1}};

inline void check_even_2d(const char* op, const Shape& s) {
    if (s.size() < 2) throw ShapeError(op, "rank must be >= 2, got " + shape_str(s));
    if (s[s.size() - 1] % 2 || s[s.size() - 2] % 2)
        throw ShapeError(op, "spatial dims must be even, got " + shape_str(s));
}
}  // namespace detail

/// Single band of the orthonormal 2D Haar analysis over the last two dims.
/// On each 2x2 block (a b / c d): ll=(a+b+c+d)/2, lh=(a-b+c-d)/2,
/// hl=(a+b-c-d)/2, hh=(a-b-c+d)/2.
inline Tensor haar_band(const Tensor& x, Band band) {
    detail::check_even_2d("dwt_haar_2d", x.shape());
    const std::size_t H = x.size(x.rank() - 2), W = x.size(x.rank() - 1);
    const std::size_t h = H / 2, w = W / 2, planes = x.numel() / (H * W);
    const int* s = detail::kHaarSign[static_cast<int>(band)];
    const double sb = s[0], sc = s[1], sd = s[2];
    Shape shape = x.shape();
    shape[shape.size() - 2] = h;
    shape[shape.size() - 1] = w;
    std::vector<double> out(planes * h * w);
    const double* X = x.values().data();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const double* r0 = X + (p * H + 2 * i) * W + 2 * j;
                const double* r1 = r0 + W;
                out[(p * h + i) * w + j] = 0.5 * (r0[0] + sb * r0[1] + sc * r1[0] + sd * r1[1]);
            }
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [=](detail::Node& self) {
        double* gx = detail::parent_grad(self, 0);
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    const double g = 0.5 * self.grad[(p * h + i) * w + j];
                    double* r0 = gx + (p * H + 2 * i) * W + 2 * j;
                    double* r1 = r0 + W;
                    r0[0] += g;
                    r0[1] += sb * g;
                    r1[0] += sc * g;
                    r1[1] += sd * g;
                }
    });
}

/// Single-level 2D Haar coefficients, each of shape [..., H/2, W/2].
struct WaveletBands {
    Tensor ll, lh, hl, hh;

    const Tensor& operator[](Band b) const {
        switch (b) {
            case Band::LL: return ll;
            case Band::LH: return lh;
            case Band::HL: return hl;
            default: return hh;
        }
    }
};

inline WaveletBands dwt_haar_2d(const Tensor& x) {
    return {haar_band(x, Band::LL), haar_band(x, Band::LH), haar_band(x, Band::HL), haar_band(x, Band::HH)};
}

/// Exact inverse of dwt_haar_2d; its backward is the analysis transform.
inline Tensor idwt_haar_2d(const WaveletBands& bands) {
    const Shape& bs = bands.ll.shape();
    for (const Tensor* t : {&bands.lh, &bands.hl, &bands.hh})
        if (t->shape() != bs) throw ShapeError("idwt_haar_2d", bs, t->shape());
    if (bs.size() < 2) throw ShapeError("idwt_haar_2d", "rank must be >= 2, got " + shape_str(bs));
    const std::size_t h = bs[bs.size() - 2], w = bs[bs.size() - 1];
    const std::size_t H = 2 * h, W = 2 * w, planes = bands.ll.numel() / (h * w);
    Shape shape = bs;
    shape[shape.size() - 2] = H;
    shape[shape.size() - 1] = W;
    std::vector<double> out(planes * H * W);
    const double* B[4] = {bands.ll.values().data(), bands.lh.values().data(), bands.hl.values().data(),
                          bands.hh.values().data()};
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t k = (p * h + i) * w + j;
                double a = 0, b = 0, c = 0, d = 0;
                for (int band = 0; band < 4; ++band) {
                    const double v = 0.5 * B[band][k];
                    a += v;
                    b += detail::kHaarSign[band][0] * v;
                    c += detail::kHaarSign[band][1] * v;
                    d += detail::kHaarSign[band][2] * v;
                }
                double* r0 = out.data() + (p * H + 2 * i) * W + 2 * j;
                r0[0] = a;
                r0[1] = b;
                r0[W] = c;
                r0[W + 1] = d;
            }
    return Tensor::make_result(std::move(shape), std::move(out), {bands.ll, bands.lh, bands.hl, bands.hh},
                               [=](detail::Node& self) {
                                   for (int band = 0; band < 4; ++band) {
                                       double* gb = detail::parent_grad(self, static_cast<std::size_t>(band));
                                       if (!gb) continue;
                                       const int* s = detail::kHaarSign[band];
                                       for (std::size_t p = 0; p < planes; ++p)
                                           for (std::size_t i = 0; i < h; ++i)
                                               for (std::size_t j = 0; j < w; ++j) {
                                                   const double* r0 = self.grad.data() + (p * H + 2 * i) * W + 2 * j;
                                                   gb[(p * h + i) * w + j] +=
                                                       0.5 * (r0[0] + s[0] * r0[1] + s[1] * r0[W] + s[2] * r0[W + 1]);
                                               }
                                   }
                               });
}

/// 1D orthonormal Haar pair: approx=(a+b)/sqrt2, detail=(a-b)/sqrt2.
struct HaarPair {
    std::vector<double> approx;
    std::vector<double> detail;
};

inline HaarPair dwt_haar_1d(std::span<const double> x) {
    if (x.size() % 2) throw ShapeError("dwt_haar_1d", "length must be even, got " + std::to_string(x.size()));
    HaarPair out;
    const double r = std::numbers::sqrt2 / 2.0;
    for (std::size_t i = 0; i + 1 < x.size(); i += 2) {
        out.approx.push_back(r * (x[i] + x[i + 1]));
        out.detail.push_back(r * (x[i] - x[i + 1]));
    }
    return out;
}

inline std::vector<double> idwt_haar_1d(std::span<const double> approx, std::span<const double> detail) {
    if (approx.size() != detail.size())
        throw ShapeError("idwt_haar_1d", Shape{approx.size()}, Shape{detail.size()});
    const double r = std::numbers::sqrt2 / 2.0;
    std::vector<double> out(2 * approx.size());
    for (std::size_t i = 0; i < approx.size(); ++i) {
        out[2 * i] = r * (approx[i] + detail[i]);
        out[2 * i + 1] = r * (approx[i] - detail[i]);
    }
    return out;
}

// ======================================================================
// Radial profiles
// ======================================================================

struct RadialProfile {
    std::vector<double> bin_edges;  // n_bins + 1 edges over [0, r_max]
    std::vector<double> mean_magnitude;
    std::vector<std::size_t> count;

    std::size_t bins() const { return mean_magnitude.size(); }
    double bin_center(std::size_t b) const { return 0.5 * (bin_edges[b] + bin_edges[b + 1]); }

    /// `bin_center_freq,mean_magnitude,count`
    void write_csv(std::ostream& os) const {
        os << "bin_center_freq,mean_magnitude,count\n";
        os.precision(17);
        for (std::size_t b = 0; b < bins(); ++b) os << bin_center(b) << ',' << mean_magnitude[b] << ',' << count[b] << '\n';
    }
};

/// Radius in cycles per image of storage index (u, v).
inline double radial_frequency(std::size_t u, std::size_t v, std::size_t H, std::size_t W, bool centered = false) {
    const double fu = static_cast<double>(SpectrumGrid::signed_freq(u, H, centered));
    const double fv = static_cast<double>(SpectrumGrid::signed_freq(v, W, centered));
    return std::sqrt(fu * fu + fv * fv);
}

inline double max_radial_frequency(std::size_t H, std::size_t W) {
    double r = 0;
    for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) r = std::max(r, radial_frequency(u, v, H, W));
    return r;
}

/// Bin of radius r among n linear bins over (0, r_max]; DC (r = 0) maps to -1.
inline int radial_bin(double r, double r_max, std::size_t n_bins) {
    if (r <= 0.0) return -1;
    const double width = r_max / static_cast<double>(n_bins);
    long b = static_cast<long>(std::ceil(r / width - 1e-9)) - 1;
    b = std::clamp<long>(b, 0, static_cast<long>(n_bins) - 1);
    return static_cast<int>(b);
}

/// Per-bin mean of a magnitude field laid out like a (non-centered) spectrum.
inline RadialProfile radial_profile(std::span<const double> magnitude, std::size_t H, std::size_t W,
                                    std::size_t n_bins, bool centered = false) {
    if (n_bins < 2) throw InvalidArgument("radial_profile: n_bins must be >= 2");
    if (magnitude.size() != H * W) throw ShapeError("radial_profile", Shape{magnitude.size()}, Shape{H, W});
    const double r_max = max_radial_frequency(H, W);
    RadialProfile p;
    for (std::size_t b = 0; b <= n_bins; ++b) p.bin_edges.push_back(r_max * static_cast<double>(b) / static_cast<double>(n_bins));
    p.mean_magnitude.assign(n_bins, 0.0);
    p.count.assign(n_bins, 0);
    for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) {
            const int b = radial_bin(radial_frequency(u, v, H, W, centered), r_max, n_bins);
            if (b < 0) continue;
            p.mean_magnitude[static_cast<std::size_t>(b)] += magnitude[u * W + v];
            ++p.count[static_cast<std::size_t>(b)];
        }
    for (std::size_t b = 0; b < n_bins; ++b)
        if (p.count[b]) p.mean_magnitude[b] /= static_cast<double>(p.count[b]);
    return p;
}

inline RadialProfile radial_profile(const SpectrumGrid& spec, std::size_t n_bins) {
    const auto m = spec.magnitudes();
    return radial_profile(m, spec.height, spec.width, n_bins, spec.dc_centered);
}

// ======================================================================
// Power-law random fields
// ======================================================================

/// Expected power E|X(f)|^2 = amplitude / f^exponent, for f > 0.
struct PowerLawSpectrum {
    double amplitude = 1.0;
    double exponent = 2.0;

    double power(double f) const {
        if (!(f > 0.0)) throw InvalidArgument("PowerLawSpectrum: frequency must be positive");
        return amplitude / std::pow(f, exponent);
    }
    double magnitude(double f) const { return std::sqrt(power(f)); }
};

/// Zero-mean, unit-variance real field with deterministic magnitude
/// sqrt(A) f^(-alpha/2) at every non-DC frequency and uniform random phases.
inline Tensor sample_power_law_field(const PowerLawSpectrum& spec, std::size_t H, std::size_t W, Rng& rng) {
    if (!(spec.amplitude > 0.0)) throw InvalidArgument("sample_power_law_field: amplitude must be positive");
    if (spec.exponent < 0.0) throw InvalidArgument("sample_power_law_field: exponent must be non-negative");
    SpectrumGrid g{H, W, std::vector<Complex>(H * W, 0.0), false};
    for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) {
            if (u == 0 && v == 0) continue;
            const std::size_t pu = (H - u) % H, pv = (W - v) % W;
            const std::size_t self_idx = u * W + v, pair_idx = pu * W + pv;
            if (pair_idx < self_idx) continue;
            const double m = spec.magnitude(radial_frequency(u, v, H, W));
            if (pair_idx == self_idx) {
                g.coefficients[self_idx] = rng.uniform() < 0.5 ? m : -m;
            } else {
                const Complex c = std::polar(m, 2.0 * std::numbers::pi * rng.uniform());
                g.coefficients[self_idx] = c;
                g.coefficients[pair_idx] = std::conj(c);
            }
        }
    Tensor field = idft2(g);
    std::vector<double> d(field.values());
    double mu = 0.0;
    for (double v : d) mu += v;
    mu /= static_cast<double>(d.size());
    double var = 0.0;
    for (double v : d) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(var / static_cast<double>(d.size()));
    for (auto& v : d) v = sd > 0 ? (v - mu) / sd : 0.0;
    return Tensor({H, W}, std::move(d));
}

// ======================================================================
// Differentiable spectral energy
// ======================================================================

/// Mean over (n, c, u, v) of weight[n](u,v) * |DFT(x[n,c])(u,v)|^2 for x of
/// shape [N,C,H,W] and weight of shape [N,H,W].
inline Tensor weighted_spectral_energy(const Tensor& x, const Tensor& weight) {
    const auto [N, C, H, W] = detail::as_nchw("weighted_spectral_energy", x.shape());
    if (weight.rank() != 3 || weight.size(0) != N || weight.size(1) != H || weight.size(2) != W)
        throw ShapeError("weighted_spectral_energy", x.shape(), weight.shape());
    const std::size_t plane = H * W;
    const double norm = 1.0 / static_cast<double>(N * C * plane);
    std::vector<std::vector<Complex>> spectra(N * C);
    double total = 0.0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            auto& s = spectra[n * C + c];
            const auto begin = x.values().begin() + static_cast<std::ptrdiff_t>((n * C + c) * plane);
            s.assign(begin, begin + static_cast<std::ptrdiff_t>(plane));
            dft2_inplace(s, H, W, -1);
            for (std::size_t k = 0; k < plane; ++k) total += weight[n * plane + k] * std::norm(s[k]);
        }
    std::vector<double> wv(weight.values());
    return Tensor::make_result(
        {}, {total * norm}, {x, weight},
        [N, C, H, W, plane, norm, spectra = std::move(spectra), wv = std::move(wv)](detail::Node& self) {
            // d/dx sum w|F|^2 = 2 Re( sum_uv w F e^{+j...} ) = 2 HW Re(IDFT(w F)).
            double* gx = detail::parent_grad(self, 0);
            double* gw = detail::parent_grad(self, 1);
            const double g = self.grad[0] * norm;
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const auto& s = spectra[n * C + c];
                    if (gw)
                        for (std::size_t k = 0; k < plane; ++k) gw[n * plane + k] += g * std::norm(s[k]);
                    if (!gx) continue;
                    std::vector<Complex> t(plane);
                    for (std::size_t k = 0; k < plane; ++k) t[k] = wv[n * plane + k] * s[k];
                    dft2_inplace(t, H, W, +1);
                    double* dst = gx + (n * C + c) * plane;
                    for (std::size_t k = 0; k < plane; ++k) dst[k] += 2.0 * g * t[k].real();
                }
        });
}

}  // namespace sdlab
