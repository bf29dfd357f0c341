// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "sdlab/tensor.hpp"

namespace sdlab {

namespace detail {

// Grad buffer of a parent, or nullptr when the parent is not differentiated.
inline double* parent_grad(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

inline const std::vector<double>& parent_value(Node& self, std::size_t i) { return self.parents[i]->value; }

// Number of elements of `a` that share one element of `b` under
// trailing-singleton broadcasting: b's shape, after dropping trailing 1s,
// must be a prefix of a's shape.
inline std::size_t broadcast_inner(const char* op, const Shape& a, const Shape& b) {
    if (a == b) return 1;
    std::size_t kept = b.size();
    while (kept > 0 && b[kept - 1] == 1) --kept;
    bool ok = b.size() <= a.size() && kept <= a.size();
    for (std::size_t i = 0; ok && i < kept; ++i) ok = b[i] == a[i];
    if (!ok) throw ShapeError(op, a, b);
    std::size_t inner = 1;
    for (std::size_t i = kept; i < a.size(); ++i) inner *= a[i];
    return inner;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    const std::size_t inner = detail::broadcast_inner("add", a.shape(), b.shape());
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i / inner];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [inner](detail::Node& self) {
        const auto& g = self.grad;
        if (double* ga = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (double* gb = detail::parent_grad(self, 1))
            for (std::size_t i = 0; i < g.size(); ++i) gb[i / inner] += g[i];
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    const std::size_t inner = detail::broadcast_inner("sub", a.shape(), b.shape());
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i / inner];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [inner](detail::Node& self) {
        const auto& g = self.grad;
        if (double* ga = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (double* gb = detail::parent_grad(self, 1))
            for (std::size_t i = 0; i < g.size(); ++i) gb[i / inner] -= g[i];
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    const std::size_t inner = detail::broadcast_inner("mul", a.shape(), b.shape());
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i / inner];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [inner](detail::Node& self) {
        const auto& g = self.grad;
        const auto& av = detail::parent_value(self, 0);
        const auto& bv = detail::parent_value(self, 1);
        if (double* ga = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i / inner];
        if (double* gb = detail::parent_grad(self, 1))
            for (std::size_t i = 0; i < g.size(); ++i) gb[i / inner] += g[i] * av[i];
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.values());
    for (auto& v : out) v *= s;
    return Tensor::make_result(a.shape(), std::move(out), {a}, [s](detail::Node& self) {
        double* ga = detail::parent_grad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += s * self.grad[i];
    });
}

inline Tensor square(const Tensor& a) {
    std::vector<double> out(a.values());
    for (auto& v : out) v *= v;
    return Tensor::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
        double* ga = detail::parent_grad(self, 0);
        const auto& av = detail::parent_value(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += 2.0 * av[i] * self.grad[i];
    });
}

inline double sigmoid_value(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(a[i]);
    return Tensor::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
        double* ga = detail::parent_grad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value[i];
            ga[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

inline Tensor silu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * sigmoid_value(a[i]);
    return Tensor::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
        double* ga = detail::parent_grad(self, 0);
        const auto& av = detail::parent_value(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double s = sigmoid_value(av[i]);
            ga[i] += self.grad[i] * s * (1.0 + av[i] * (1.0 - s));
        }
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0 ? a[i] : 0.0;
    return Tensor::make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
        double* ga = detail::parent_grad(self, 0);
        const auto& av = detail::parent_value(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (av[i] > 0) ga[i] += self.grad[i];
    });
}

// ----------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return Tensor::make_result({}, {s}, {a}, [](detail::Node& self) {
        double* ga = detail::parent_grad(self, 0);
        const std::size_t n = self.parents[0]->value.size();
        for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

inline Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("mse", a.shape(), b.shape());
    return mean(square(sub(a, b)));
}

// -------------------------------------------------------------------- shaping

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) throw ShapeError("reshape", a.shape(), shape);
    return Tensor::make_result(std::move(shape), a.values(), {a}, [](detail::Node& self) {
        double* ga = detail::parent_grad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

namespace detail {
inline void split_axis(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& inner) {
    outer = 1;
    inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

/// Elements [start, start+len) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
    if (axis >= a.rank() || start + len > a.size(axis))
        throw ShapeError("slice", "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                      ") out of bounds on axis " + std::to_string(axis) + " of " +
                                      shape_str(a.shape()));
    std::size_t outer, inner;
    detail::split_axis(a.shape(), axis, outer, inner);
    const std::size_t full = a.size(axis);
    Shape shape = a.shape();
    shape[axis] = len;
    std::vector<double> out(outer * len * inner);
    const auto& av = a.values();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * full + start) * inner), len * inner,
                    out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
    return Tensor::make_result(std::move(shape), std::move(out), {a},
                               [outer, inner, full, start, len](detail::Node& self) {
                                   double* ga = detail::parent_grad(self, 0);
                                   for (std::size_t o = 0; o < outer; ++o) {
                                       double* dst = ga + (o * full + start) * inner;
                                       const double* src = self.grad.data() + o * len * inner;
                                       for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                                   }
                               });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw InvalidArgument("concat: no inputs");
    Shape shape = parts[0].shape();
    if (axis >= shape.size()) throw ShapeError("concat", "axis out of range for " + shape_str(shape));
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape a = p.shape(), b = shape;
        if (a.size() != b.size()) throw ShapeError("concat", shape, p.shape());
        a[axis] = b[axis] = 0;
        if (a != b) throw ShapeError("concat", shape, p.shape());
        total += p.size(axis);
    }
    shape[axis] = total;
    std::size_t outer, inner;
    detail::split_axis(shape, axis, outer, inner);
    std::vector<std::size_t> widths;
    for (const auto& p : parts) widths.push_back(p.size(axis));
    std::vector<double> out(shape_numel(shape));
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const auto& pv = parts[k].values();
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * widths[k] * inner), widths[k] * inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
            offset += widths[k];
        }
    }
    return Tensor::make_result(std::move(shape), std::move(out), parts,
                               [outer, inner, total, widths](detail::Node& self) {
                                   std::size_t offset = 0;
                                   for (std::size_t k = 0; k < widths.size(); ++k) {
                                       if (double* gk = detail::parent_grad(self, k)) {
                                           for (std::size_t o = 0; o < outer; ++o) {
                                               const double* src =
                                                   self.grad.data() + (o * total + offset) * inner;
                                               double* dst = gk + o * widths[k] * inner;
                                               for (std::size_t i = 0; i < widths[k] * inner; ++i) dst[i] += src[i];
                                           }
                                       }
                                       offset += widths[k];
                                   }
                               });
}

/// Rows of `table` [K,E] selected by `index`, giving [N,E].
inline Tensor gather_rows(const Tensor& table, std::span<const int> index) {
    if (table.rank() != 2) throw ShapeError("gather_rows", "table must be rank 2, got " + shape_str(table.shape()));
    const std::size_t rows = table.size(0), width = table.size(1);
    std::vector<double> out(index.size() * width);
    for (std::size_t n = 0; n < index.size(); ++n) {
        if (index[n] < 0 || static_cast<std::size_t>(index[n]) >= rows)
            throw InvalidArgument("gather_rows: index " + std::to_string(index[n]) + " out of range");
        std::copy_n(table.values().begin() + static_cast<std::ptrdiff_t>(index[n] * width), width,
                    out.begin() + static_cast<std::ptrdiff_t>(n * width));
    }
    std::vector<int> idx(index.begin(), index.end());
    return Tensor::make_result({index.size(), width}, std::move(out), {table}, [idx, width](detail::Node& self) {
        double* gt = detail::parent_grad(self, 0);
        for (std::size_t n = 0; n < idx.size(); ++n)
            for (std::size_t e = 0; e < width; ++e) gt[idx[n] * width + e] += self.grad[n * width + e];
    });
}

// -------------------------------------------------------------------- linear

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0)) throw ShapeError("matmul", a.shape(), b.shape());
    const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
    std::vector<double> out(m * n, 0.0);
    const double* A = a.values().data();
    const double* B = b.values().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            const double* brow = B + p * n;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        const double* G = self.grad.data();
        const double* A = detail::parent_value(self, 0).data();
        const double* B = detail::parent_value(self, 1).data();
        if (double* ga = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
                    ga[i * k + p] += acc;
                }
        if (double* gb = detail::parent_grad(self, 1))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * G[i * n + j];
                }
    });
}

/// x [N,in] · W [in,out] + b [out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (b.rank() != 1 || w.rank() != 2 || b.size(0) != w.size(1)) throw ShapeError("linear", w.shape(), b.shape());
    Tensor y = matmul(x, w);
    const std::size_t rows = y.size(0), cols = y.size(1);
    std::vector<double> out(y.values());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += b[j];
    return Tensor::make_result({rows, cols}, std::move(out), {y, b}, [rows, cols](detail::Node& self) {
        if (double* gy = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) gy[i] += self.grad[i];
        if (double* gb = detail::parent_grad(self, 1))
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) gb[j] += self.grad[i * cols + j];
    });
}

// ------------------------------------------------------------------- spatial

namespace detail {
// Views a [C,H,W] or [N,C,H,W] tensor as (N, C, H, W).
inline std::array<std::size_t, 4> as_nchw(const char* op, const Shape& s) {
    if (s.size() == 3) return {1, s[0], s[1], s[2]};
    if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
    throw ShapeError(op, "expected [C,H,W] or [N,C,H,W], got " + shape_str(s));
}
}  // namespace detail

/// Cross-correlation via im2col. x is [C,H,W] or [N,C,H,W]; w is [O,C,kh,kw].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias = std::nullopt,
                     std::size_t stride = 1, std::size_t pad = 0) {
    const auto [N, C, H, W] = detail::as_nchw("conv2d", x.shape());
    if (w.rank() != 4 || w.size(1) != C) throw ShapeError("conv2d", x.shape(), w.shape());
    const std::size_t O = w.size(0), KH = w.size(2), KW = w.size(3);
    if (KH % 2 == 0 || KW % 2 == 0) throw ShapeError("conv2d", "kernel dims must be odd, got " + shape_str(w.shape()));
    if (stride == 0 || H + 2 * pad < KH || W + 2 * pad < KW) throw ShapeError("conv2d", x.shape(), w.shape());
    if (bias && (bias->rank() != 1 || bias->size(0) != O)) throw ShapeError("conv2d", w.shape(), bias->shape());
    const std::size_t OH = (H + 2 * pad - KH) / stride + 1;
    const std::size_t OW = (W + 2 * pad - KW) / stride + 1;

    const std::size_t K = C * KH * KW, P = OH * OW;

    // col[(c*KH + ky)*KW + kx][oy*OW + ox] = x[c][oy*S - pad + ky][ox*S - pad + kx], zero outside.
    auto im2col = [=](const double* ip, double* col) {
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
                for (std::size_t kx = 0; kx < KW; ++kx) {
                    double* row = col + ((c * KH + ky) * KW + kx) * P;
                    for (std::size_t oy = 0; oy < OH; ++oy) {
                        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                        for (std::size_t ox = 0; ox < OW; ++ox) {
                            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                            row[oy * OW + ox] = (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                                                    ? 0.0
                                                    : ip[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)];
                        }
                    }
                }
    };
    auto col2im_add = [=](const double* col, double* gp) {
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
                for (std::size_t kx = 0; kx < KW; ++kx) {
                    const double* row = col + ((c * KH + ky) * KW + kx) * P;
                    for (std::size_t oy = 0; oy < OH; ++oy) {
                        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                        for (std::size_t ox = 0; ox < OW; ++ox) {
                            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                            if (ix < 0 || ix >= static_cast<long>(W)) continue;
                            gp[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] += row[oy * OW + ox];
                        }
                    }
                }
    };

    std::vector<double> out(N * O * P, 0.0);
    std::vector<double> col(K * P);
    const double* X = x.values().data();
    const double* Wt = w.values().data();
    for (std::size_t n = 0; n < N; ++n) {
        im2col(X + n * C * H * W, col.data());
        for (std::size_t o = 0; o < O; ++o) {
            double* op = out.data() + (n * O + o) * P;
            if (bias) std::fill(op, op + P, (*bias)[o]);
            for (std::size_t k = 0; k < K; ++k) {
                const double wv = Wt[o * K + k];
                const double* cr = col.data() + k * P;
                for (std::size_t p = 0; p < P; ++p) op[p] += wv * cr[p];
            }
        }
    }

    Shape out_shape = x.rank() == 3 ? Shape{O, OH, OW} : Shape{N, O, OH, OW};
    std::vector<Tensor> parents{x, w};
    if (bias) parents.push_back(*bias);
    const bool has_bias = bias.has_value();
    return Tensor::make_result(
        std::move(out_shape), std::move(out), parents,
        [=](detail::Node& self) {
            const double* G = self.grad.data();
            const double* X = detail::parent_value(self, 0).data();
            const double* Wt = detail::parent_value(self, 1).data();
            double* gx = detail::parent_grad(self, 0);
            double* gw = detail::parent_grad(self, 1);
            double* gb = has_bias ? detail::parent_grad(self, 2) : nullptr;
            std::vector<double> col(K * P), colT(gw ? K * P : 0), gcol(gx ? K * P : 0);
            for (std::size_t n = 0; n < N; ++n) {
                const double* gn = G + n * O * P;
                if (gb)
                    for (std::size_t o = 0; o < O; ++o)
                        for (std::size_t p = 0; p < P; ++p) gb[o] += gn[o * P + p];
                if (gw) {
                    im2col(X + n * C * H * W, col.data());
                    for (std::size_t k = 0; k < K; ++k)
                        for (std::size_t p = 0; p < P; ++p) colT[p * K + k] = col[k * P + p];
                    for (std::size_t o = 0; o < O; ++o) {
                        double* gwo = gw + o * K;
                        const double* gr = gn + o * P;
                        for (std::size_t p = 0; p < P; ++p) {
                            const double gv = gr[p];
                            const double* cr = colT.data() + p * K;
                            for (std::size_t k = 0; k < K; ++k) gwo[k] += gv * cr[k];
                        }
                    }
                }
                if (gx) {
                    std::fill(gcol.begin(), gcol.end(), 0.0);
                    for (std::size_t o = 0; o < O; ++o)
                        for (std::size_t k = 0; k < K; ++k) {
                            const double wv = Wt[o * K + k];
                            double* gc = gcol.data() + k * P;
                            const double* gr = gn + o * P;
                            for (std::size_t p = 0; p < P; ++p) gc[p] += wv * gr[p];
                        }
                    col2im_add(gcol.data(), gx + n * C * H * W);
                }
            }
        });
}


/// Per-channel spatial mean: [C,H,W] -> [C], [N,C,H,W] -> [N,C].
inline Tensor avgpool_global(const Tensor& x) {
    const auto [N, C, H, W] = detail::as_nchw("avgpool_global", x.shape());
    if (H == 0 || W == 0) throw ShapeError("avgpool_global", "empty spatial dims " + shape_str(x.shape()));
    const std::size_t plane = H * W;
    std::vector<double> out(N * C, 0.0);
    for (std::size_t i = 0; i < N * C; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < plane; ++j) s += x[i * plane + j];
        out[i] = s / static_cast<double>(plane);
    }
    Shape shape = x.rank() == 3 ? Shape{C} : Shape{N, C};
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [plane](detail::Node& self) {
        double* gx = detail::parent_grad(self, 0);
        const double inv = 1.0 / static_cast<double>(plane);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            for (std::size_t j = 0; j < plane; ++j) gx[i * plane + j] += self.grad[i] * inv;
    });
}

/// Nearest-neighbour 2x upsampling over the last two dims.
inline Tensor upsample_nearest2x(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("upsample_nearest2x", "rank must be >= 2, got " + shape_str(x.shape()));
    const std::size_t H = x.size(x.rank() - 2), W = x.size(x.rank() - 1);
    const std::size_t planes = x.numel() / (H * W);
    Shape shape = x.shape();
    shape[shape.size() - 2] = 2 * H;
    shape[shape.size() - 1] = 2 * W;
    std::vector<double> out(4 * x.numel());
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < 2 * H; ++y)
            for (std::size_t xx = 0; xx < 2 * W; ++xx)
                out[(p * 2 * H + y) * 2 * W + xx] = x[(p * H + y / 2) * W + xx / 2];
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [planes, H, W](detail::Node& self) {
        double* gx = detail::parent_grad(self, 0);
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t y = 0; y < 2 * H; ++y)
                for (std::size_t xx = 0; xx < 2 * W; ++xx)
                    gx[(p * H + y / 2) * W + xx / 2] += self.grad[(p * 2 * H + y) * 2 * W + xx];
    });
}

}  // namespace sdlab
