#include "saanet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kernels.hpp"

SAANET_BEGIN_NAMESPACE

using detail::make_result;
using Impl = std::shared_ptr<TensorImpl>;

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw DimensionError(msg);
}

// Broadcast period of `small` against `big`: equal shapes, trailing-extent
// match, or a single element.
bool broadcastable(const Shape& big, const Shape& small) {
    if (numel(small) == 1) return true;
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class Binary { Add, Sub, Mul };

Tensor binary(const Tensor& a_in, const Tensor& b_in, Binary kind, const char* name) {
    // Put the larger operand first; Sub keeps track of the swap through a sign.
    bool swapped = false;
    const Tensor* a = &a_in;
    const Tensor* b = &b_in;
    if (!broadcastable(a->shape(), b->shape())) {
        if (broadcastable(b->shape(), a->shape())) {
            std::swap(a, b);
            swapped = true;
        } else {
            throw DimensionError(std::string(name) + ": cannot broadcast " + to_string(a_in.shape()) +
                                 " with " + to_string(b_in.shape()));
        }
    }
    const std::size_t n = a->numel();
    const std::size_t period = b->numel();
    const Real* ad = a->ptr();
    const Real* bd = b->ptr();
    std::vector<Real> out(n);
    const Real a_sign = (kind == Binary::Sub && swapped) ? Real(-1) : Real(1);
    const Real b_sign = (kind == Binary::Sub && !swapped) ? Real(-1) : Real(1);
    for (std::size_t i = 0; i < n; ++i) {
        const Real bv = bd[i % period];
        out[i] = kind == Binary::Mul ? ad[i] * bv : a_sign * ad[i] + b_sign * bv;
    }
    Impl ai = a->impl(), bi = b->impl();
    return make_result(name, a->shape(), std::move(out), {*a, *b},
                       [ai, bi, n, period, kind, a_sign, b_sign](const TensorImpl& o) {
                           const auto& g = o.grad;
                           if (ai->requires_grad) {
                               for (std::size_t i = 0; i < n; ++i) {
                                   ai->grad[i] += kind == Binary::Mul ? g[i] * bi->data[i % period]
                                                                      : a_sign * g[i];
                               }
                           }
                           if (bi->requires_grad) {
                               for (std::size_t i = 0; i < n; ++i) {
                                   bi->grad[i % period] += kind == Binary::Mul ? g[i] * ai->data[i]
                                                                               : b_sign * g[i];
                               }
                           }
                       });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
    const std::size_t n = x.numel();
    std::vector<Real> out(n);
    const Real* xd = x.ptr();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xd[i]);
    Impl xi = x.impl();
    return make_result(name, x.shape(), std::move(out), {x}, [xi, n, deriv](const TensorImpl& o) {
        for (std::size_t i = 0; i < n; ++i) xi->grad[i] += o.grad[i] * deriv(xi->data[i], o.data[i]);
    });
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    require(axis < shape.size(), "axis " + std::to_string(axis) + " out of range for " + to_string(shape));
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.dim() == 2 && b.dim() == 2 && a.size(1) == b.size(0),
            "matmul: shape mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
    const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
    std::vector<Real> out(m * n, Real(0));
    kernels::gemm_nn(m, n, k, a.ptr(), b.ptr(), out.data());
    Impl ai = a.impl(), bi = b.impl();
    return make_result("matmul", {m, n}, std::move(out), {a, b}, [ai, bi, m, n, k](const TensorImpl& o) {
        if (ai->requires_grad) kernels::gemm_nt(m, k, n, o.grad.data(), bi->data.data(), ai->grad.data());
        if (bi->requires_grad) kernels::gemm_tn(k, n, m, ai->data.data(), o.grad.data(), bi->grad.data());
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require(x.dim() == 2 && w.dim() == 2 && x.size(1) == w.size(0),
            "linear: shape mismatch " + to_string(x.shape()) + " x " + to_string(w.shape()));
    const std::size_t m = x.size(0), k = x.size(1), n = w.size(1);
    const bool has_bias = bias.defined();
    if (has_bias) require(bias.numel() == n, "linear: bias " + to_string(bias.shape()) + " for width " + std::to_string(n));
    std::vector<Real> out(m * n, Real(0));
    if (has_bias) {
        for (std::size_t i = 0; i < m; ++i) std::copy(bias.ptr(), bias.ptr() + n, out.begin() + i * n);
    }
    kernels::gemm_nn(m, n, k, x.ptr(), w.ptr(), out.data());
    Impl xi = x.impl(), wi = w.impl();
    Impl bi = has_bias ? bias.impl() : nullptr;
    return make_result("linear", {m, n}, std::move(out), {x, w, bias}, [xi, wi, bi, m, n, k](const TensorImpl& o) {
        const Real* g = o.grad.data();
        if (xi->requires_grad) kernels::gemm_nt(m, k, n, g, wi->data.data(), xi->grad.data());
        if (wi->requires_grad) kernels::gemm_tn(k, n, m, xi->data.data(), g, wi->grad.data());
        if (bi && bi->requires_grad) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) bi->grad[j] += g[i * n + j];
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Mul, "mul"); }

Tensor scale(const Tensor& a, Real s) {
    return unary(a, "scale", [s](Real v) { return v * s; }, [s](Real, Real) { return s; });
}

Tensor add_scalar(const Tensor& a, Real s) {
    return unary(a, "add_scalar", [s](Real v) { return v + s; }, [](Real, Real) { return Real(1); });
}

Tensor reshape(const Tensor& a, Shape shape) {
    require(numel(shape) == a.numel(), "reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
    std::vector<Real> out(a.data().begin(), a.data().end());
    Impl ai = a.impl();
    return make_result("reshape", std::move(shape), std::move(out), {a}, [ai](const TensorImpl& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) ai->grad[i] += o.grad[i];
    });
}

Tensor transpose(const Tensor& a) {
    require(a.dim() == 2, "transpose: expected 2-D tensor, got " + to_string(a.shape()));
    const std::size_t r = a.size(0), c = a.size(1);
    auto out = kernels::transposed(a.ptr(), r, c);
    Impl ai = a.impl();
    return make_result("transpose", {c, r}, std::move(out), {a}, [ai, r, c](const TensorImpl& o) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ai->grad[i * c + j] += o.grad[j * r + i];
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    require(!parts.empty(), "concat: no inputs");
    const Shape& first = parts[0].shape();
    require(axis < first.size(), "concat: axis out of range for " + to_string(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        require(s.size() == first.size(), "concat: rank mismatch " + to_string(first) + " vs " + to_string(s));
        for (std::size_t d = 0; d < s.size(); ++d) {
            if (d != axis) require(s[d] == first[d], "concat: shape mismatch " + to_string(first) + " vs " + to_string(s));
        }
        out_shape[axis] += s[axis];
    }
    const AxisSplit os = split_axis(out_shape, axis);
    std::vector<Real> out(numel(out_shape));
    std::vector<Impl> impls;
    std::vector<std::size_t> extents;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t e = p.shape()[axis];
        const std::size_t block = e * os.inner;
        for (std::size_t o = 0; o < os.outer; ++o) {
            std::copy_n(p.ptr() + o * block, block, out.begin() + o * os.extent * os.inner + offset * os.inner);
        }
        offset += e;
        impls.push_back(p.impl());
        extents.push_back(e);
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_result("concat", out_shape, std::move(out), std::move(inputs),
                       [impls, extents, os](const TensorImpl& o) {
                           std::size_t offset = 0;
                           for (std::size_t p = 0; p < impls.size(); ++p) {
                               const std::size_t block = extents[p] * os.inner;
                               if (impls[p]->requires_grad) {
                                   for (std::size_t q = 0; q < os.outer; ++q) {
                                       const Real* src = o.grad.data() + q * os.extent * os.inner + offset * os.inner;
                                       Real* dst = impls[p]->grad.data() + q * block;
                                       for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                                   }
                               }
                               offset += extents[p];
                           }
                       });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
    const AxisSplit s = split_axis(a.shape(), axis);
    require(length > 0 && start + length <= s.extent,
            "slice: [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " + to_string(a.shape()));
    Shape out_shape = a.shape();
    out_shape[axis] = length;
    std::vector<Real> out(s.outer * length * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(a.ptr() + (o * s.extent + start) * s.inner, length * s.inner, out.begin() + o * length * s.inner);
    }
    Impl ai = a.impl();
    return make_result("slice", out_shape, std::move(out), {a}, [ai, s, start, length](const TensorImpl& o) {
        for (std::size_t q = 0; q < s.outer; ++q) {
            const Real* src = o.grad.data() + q * length * s.inner;
            Real* dst = ai->grad.data() + (q * s.extent + start) * s.inner;
            for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
        }
    });
}

Tensor sum(const Tensor& a, std::size_t axis) {
    const AxisSplit s = split_axis(a.shape(), axis);
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
    std::vector<Real> out(s.outer * s.inner, Real(0));
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += a[(o * s.extent + e) * s.inner + i];
    Impl ai = a.impl();
    return make_result("sum", out_shape, std::move(out), {a}, [ai, s](const TensorImpl& o) {
        for (std::size_t q = 0; q < s.outer; ++q)
            for (std::size_t e = 0; e < s.extent; ++e)
                for (std::size_t i = 0; i < s.inner; ++i) ai->grad[(q * s.extent + e) * s.inner + i] += o.grad[q * s.inner + i];
    });
}

Tensor mean(const Tensor& a, std::size_t axis) {
    const std::size_t extent = split_axis(a.shape(), axis).extent;
    return scale(sum(a, axis), Real(1) / static_cast<Real>(extent));
}

Tensor sum_all(const Tensor& a) {
    Real total = 0;
    for (Real v : a.data()) total += v;
    Impl ai = a.impl();
    return make_result("sum_all", {1}, {total}, {a}, [ai](const TensorImpl& o) {
        const Real g = o.grad[0];
        for (auto& v : ai->grad) v += g;
    });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), Real(1) / static_cast<Real>(a.numel())); }

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
    const std::size_t d = x.shape().back();
    require(gamma.numel() == d && beta.numel() == d,
            "layer_norm: affine width mismatch for input " + to_string(x.shape()));
    const std::size_t rows = x.numel() / d;
    std::vector<Real> out(x.numel());
    std::vector<Real> xhat(x.numel());
    std::vector<Real> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* xr = x.ptr() + r * d;
        Real mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<Real>(d);
        Real var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<Real>(d);
        const Real is = Real(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const Real h = (xr[j] - mu) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma[j] + beta[j];
        }
    }
    Impl xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
    return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                       [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](const TensorImpl& o) {
                           for (std::size_t r = 0; r < rows; ++r) {
                               const Real* g = o.grad.data() + r * d;
                               const Real* h = xhat.data() + r * d;
                               if (gi->requires_grad || bi->requires_grad) {
                                   for (std::size_t j = 0; j < d; ++j) {
                                       if (gi->requires_grad) gi->grad[j] += g[j] * h[j];
                                       if (bi->requires_grad) bi->grad[j] += g[j];
                                   }
                               }
                               if (!xi->requires_grad) continue;
                               Real mean_gh = 0, mean_ghh = 0;
                               for (std::size_t j = 0; j < d; ++j) {
                                   const Real gh = g[j] * gi->data[j];
                                   mean_gh += gh;
                                   mean_ghh += gh * h[j];
                               }
                               mean_gh /= static_cast<Real>(d);
                               mean_ghh /= static_cast<Real>(d);
                               for (std::size_t j = 0; j < d; ++j) {
                                   const Real gh = g[j] * gi->data[j];
                                   xi->grad[r * d + j] += inv_std[r] * (gh - mean_gh - h[j] * mean_ghh);
                               }
                           }
                       });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
    return unary(
        x, "gelu",
        [](Real v) {
            const Real u = Real(kGeluC) * (v + Real(kGeluA) * v * v * v);
            return Real(0.5) * v * (Real(1) + std::tanh(u));
        },
        [](Real v, Real) {
            const Real u = Real(kGeluC) * (v + Real(kGeluA) * v * v * v);
            const Real t = std::tanh(u);
            const Real du = Real(kGeluC) * (Real(1) + Real(3 * kGeluA) * v * v);
            return Real(0.5) * (Real(1) + t) + Real(0.5) * v * (Real(1) - t * t) * du;
        });
}

Tensor relu(const Tensor& x) {
    return unary(x, "relu", [](Real v) { return v > 0 ? v : Real(0); }, [](Real v, Real) { return v > 0 ? Real(1) : Real(0); });
}

Tensor softplus(const Tensor& x) {
    return unary(
        x, "softplus", [](Real v) { return std::max(v, Real(0)) + std::log1p(std::exp(-std::abs(v))); },
        [](Real v, Real) { return Real(1) / (Real(1) + std::exp(-v)); });
}

Tensor abs(const Tensor& x) {
    return unary(
        x, "abs", [](Real v) { return std::abs(v); },
        [](Real v, Real) { return v > 0 ? Real(1) : (v < 0 ? Real(-1) : Real(0)); });
}

Tensor square(const Tensor& x) {
    return unary(x, "square", [](Real v) { return v * v; }, [](Real v, Real) { return 2 * v; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const AxisSplit s = split_axis(x.shape(), axis);
    std::vector<Real> out(x.numel());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            Real mx = x[base];
            for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, x[base + e * s.inner]);
            // double accumulation keeps row sums at 1 within a few ulps of float
            double total = 0;
            for (std::size_t e = 0; e < s.extent; ++e) total += std::exp(static_cast<double>(x[base + e * s.inner] - mx));
            for (std::size_t e = 0; e < s.extent; ++e)
                out[base + e * s.inner] = static_cast<Real>(std::exp(static_cast<double>(x[base + e * s.inner] - mx)) / total);
        }
    }
    Impl xi = x.impl();
    return make_result("softmax", x.shape(), std::move(out), {x}, [xi, s](const TensorImpl& o) {
        for (std::size_t q = 0; q < s.outer; ++q) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = q * s.extent * s.inner + i;
                Real dot = 0;
                for (std::size_t e = 0; e < s.extent; ++e) dot += o.grad[base + e * s.inner] * o.data[base + e * s.inner];
                for (std::size_t e = 0; e < s.extent; ++e) {
                    const std::size_t idx = base + e * s.inner;
                    xi->grad[idx] += o.data[idx] * (o.grad[idx] - dot);
                }
            }
        }
    });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> indices) {
    require(table.dim() == 2, "embedding: table must be 2-D, got " + to_string(table.shape()));
    require(!indices.empty(), "embedding: empty index list");
    const std::size_t v = table.size(0), d = table.size(1);
    std::vector<Real> out(indices.size() * d);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        require(indices[r] < v, "embedding: index " + std::to_string(indices[r]) + " out of range " + std::to_string(v));
        std::copy_n(table.ptr() + indices[r] * d, d, out.begin() + r * d);
    }
    Impl ti = table.impl();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return make_result("embedding", {indices.size(), d}, std::move(out), {table}, [ti, idx, d](const TensorImpl& o) {
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < d; ++j) ti->grad[idx[r] * d + j] += o.grad[r * d + j];
    });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dParams p) {
    require(x.dim() == 3, "conv2d: input must be C x H x W, got " + to_string(x.shape()));
    require(w.dim() == 4 && w.size(2) == w.size(3), "conv2d: weight must be Co x Ci/g x k x k, got " + to_string(w.shape()));
    if (p.stride < 1 || p.groups < 1) throw ConfigError("conv2d: stride and groups must be >= 1");
    const std::size_t cin = x.size(0), h = x.size(1), wd = x.size(2);
    const std::size_t cout = w.size(0), k = w.size(2);
    if (cin % p.groups != 0 || cout % p.groups != 0) {
        throw ConfigError("conv2d: groups " + std::to_string(p.groups) + " must divide channels " +
                          std::to_string(cin) + " and " + std::to_string(cout));
    }
    const std::size_t cin_g = cin / p.groups, cout_g = cout / p.groups;
    require(w.size(1) == cin_g, "conv2d: weight " + to_string(w.shape()) + " does not match input " + to_string(x.shape()));
    const long span_h = static_cast<long>(h + 2 * p.padding) - static_cast<long>(k);
    const long span_w = static_cast<long>(wd + 2 * p.padding) - static_cast<long>(k);
    if (span_h < 0 || span_w < 0) {
        throw ConfigError("conv2d: kernel " + std::to_string(k) + " larger than padded input " + to_string(x.shape()));
    }
    const std::size_t ho = static_cast<std::size_t>(span_h) / p.stride + 1;
    const std::size_t wo = static_cast<std::size_t>(span_w) / p.stride + 1;
    const bool has_bias = bias.defined();
    if (has_bias) require(bias.numel() == cout, "conv2d: bias width mismatch");

    const std::size_t patch = cin_g * k * k;
    const std::size_t npix = ho * wo;
    // Column buffer for every group: [groups][patch x npix].
    std::vector<Real> cols(p.groups * patch * npix, Real(0));
    for (std::size_t g = 0; g < p.groups; ++g) {
        Real* col = cols.data() + g * patch * npix;
        for (std::size_t c = 0; c < cin_g; ++c) {
            const Real* plane = x.ptr() + (g * cin_g + c) * h * wd;
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    Real* row = col + ((c * k + ky) * k + kx) * npix;
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        const long iy = static_cast<long>(oy * p.stride + ky) - static_cast<long>(p.padding);
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            const long ix = static_cast<long>(ox * p.stride + kx) - static_cast<long>(p.padding);
                            if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                            row[oy * wo + ox] = plane[iy * static_cast<long>(wd) + ix];
                        }
                    }
                }
            }
        }
    }
    std::vector<Real> out(cout * npix, Real(0));
    if (has_bias) {
        for (std::size_t c = 0; c < cout; ++c) std::fill_n(out.begin() + c * npix, npix, bias[c]);
    }
    for (std::size_t g = 0; g < p.groups; ++g) {
        kernels::gemm_nn(cout_g, npix, patch, w.ptr() + g * cout_g * patch, cols.data() + g * patch * npix,
                         out.data() + g * cout_g * npix);
    }
    Impl xi = x.impl(), wi = w.impl();
    Impl bi = has_bias ? bias.impl() : nullptr;
    return make_result(
        "conv2d", {cout, ho, wo}, std::move(out), {x, w, bias},
        [xi, wi, bi, cols = std::move(cols), p, cin_g, cout_g, k, h, wd, ho, wo, patch, npix](const TensorImpl& o) {
            const Real* g = o.grad.data();
            if (bi && bi->requires_grad) {
                for (std::size_t c = 0; c < bi->data.size(); ++c)
                    for (std::size_t i = 0; i < npix; ++i) bi->grad[c] += g[c * npix + i];
            }
            for (std::size_t grp = 0; grp < p.groups; ++grp) {
                const Real* gg = g + grp * cout_g * npix;
                const Real* col = cols.data() + grp * patch * npix;
                if (wi->requires_grad) kernels::gemm_nt(cout_g, patch, npix, gg, col, wi->grad.data() + grp * cout_g * patch);
                if (!xi->requires_grad) continue;
                std::vector<Real> dcol(patch * npix, Real(0));
                kernels::gemm_tn(patch, npix, cout_g, wi->data.data() + grp * cout_g * patch, gg, dcol.data());
                for (std::size_t c = 0; c < cin_g; ++c) {
                    Real* plane = xi->grad.data() + (grp * cin_g + c) * h * wd;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const Real* row = dcol.data() + ((c * k + ky) * k + kx) * npix;
                            for (std::size_t oy = 0; oy < ho; ++oy) {
                                const long iy = static_cast<long>(oy * p.stride + ky) - static_cast<long>(p.padding);
                                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                for (std::size_t ox = 0; ox < wo; ++ox) {
                                    const long ix = static_cast<long>(ox * p.stride + kx) - static_cast<long>(p.padding);
                                    if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                                    plane[iy * static_cast<long>(wd) + ix] += row[oy * wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        });
}

Tensor bilinear_sample(const Tensor& feat, const Tensor& loc) {
    require(feat.dim() == 3, "bilinear_sample: feat must be C x H x W, got " + to_string(feat.shape()));
    require(loc.numel() == 2, "bilinear_sample: loc must hold (x, y)");
    const std::size_t c = feat.size(0), h = feat.size(1), w = feat.size(2);
    const auto st = kernels::bilinear_stencil(loc[0], loc[1], h, w);
    std::vector<Real> out(c, Real(0));
    for (const auto& corner : st.c) {
        if (!corner.valid) continue;
        const std::size_t off = static_cast<std::size_t>(corner.y) * w + static_cast<std::size_t>(corner.x);
        for (std::size_t ch = 0; ch < c; ++ch) out[ch] += corner.weight * feat[ch * h * w + off];
    }
    Impl fi = feat.impl(), li = loc.impl();
    return make_result("bilinear_sample", {c}, std::move(out), {feat, loc}, [fi, li, st, c, h, w](const TensorImpl& o) {
        auto value = [&](int i, std::size_t ch) -> Real {
            const auto& cr = st.c[i];
            return cr.valid ? fi->data[ch * h * w + static_cast<std::size_t>(cr.y) * w + static_cast<std::size_t>(cr.x)] : Real(0);
        };
        if (fi->requires_grad) {
            for (const auto& corner : st.c) {
                if (!corner.valid) continue;
                const std::size_t off = static_cast<std::size_t>(corner.y) * w + static_cast<std::size_t>(corner.x);
                for (std::size_t ch = 0; ch < c; ++ch) fi->grad[ch * h * w + off] += corner.weight * o.grad[ch];
            }
        }
        if (li->requires_grad) {
            Real gx = 0, gy = 0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const Real v00 = value(0, ch), v10 = value(1, ch), v01 = value(2, ch), v11 = value(3, ch);
                gx += o.grad[ch] * ((1 - st.fy) * (v10 - v00) + st.fy * (v11 - v01));
                gy += o.grad[ch] * ((1 - st.fx) * (v01 - v00) + st.fx * (v11 - v10));
            }
            li->grad[0] += gx;
            li->grad[1] += gy;
        }
    });
}

Tensor attention_weights(const Tensor& q, const Tensor& k, std::size_t heads) {
    require(q.dim() == 2 && k.dim() == 2 && q.size(1) == k.size(1),
            "attention_weights: shape mismatch " + to_string(q.shape()) + " vs " + to_string(k.shape()));
    const std::size_t nq = q.size(0), nk = k.size(0), d = q.size(1);
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
    }
    const std::size_t dh = d / heads;
    const Real sc = Real(1) / std::sqrt(static_cast<Real>(dh));
    std::vector<Real> out(heads * nq * nk);
    for (std::size_t hd = 0; hd < heads; ++hd) {
        for (std::size_t i = 0; i < nq; ++i) {
            Real* row = out.data() + (hd * nq + i) * nk;
            const Real* qi = q.ptr() + i * d + hd * dh;
            Real mx = -std::numeric_limits<Real>::infinity();
            for (std::size_t j = 0; j < nk; ++j) {
                const Real* kj = k.ptr() + j * d + hd * dh;
                Real s = 0;
                for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                row[j] = s * sc;
                mx = std::max(mx, row[j]);
            }
            double total = 0;
            for (std::size_t j = 0; j < nk; ++j) total += std::exp(static_cast<double>(row[j] - mx));
            for (std::size_t j = 0; j < nk; ++j) row[j] = static_cast<Real>(std::exp(static_cast<double>(row[j] - mx)) / total);
        }
    }
    Impl qi = q.impl(), ki = k.impl();
    return make_result("attention_weights", {heads, nq, nk}, std::move(out), {q, k},
                       [qi, ki, heads, nq, nk, d, dh, sc](const TensorImpl& o) {
                           std::vector<Real> ds(nk);
                           for (std::size_t hd = 0; hd < heads; ++hd) {
                               for (std::size_t i = 0; i < nq; ++i) {
                                   const Real* a = o.data.data() + (hd * nq + i) * nk;
                                   const Real* ga = o.grad.data() + (hd * nq + i) * nk;
                                   Real dot = 0;
                                   for (std::size_t j = 0; j < nk; ++j) dot += a[j] * ga[j];
                                   for (std::size_t j = 0; j < nk; ++j) ds[j] = a[j] * (ga[j] - dot) * sc;
                                   for (std::size_t j = 0; j < nk; ++j) {
                                       if (ds[j] == Real(0)) continue;
                                       for (std::size_t c = 0; c < dh; ++c) {
                                           if (qi->requires_grad) qi->grad[i * d + hd * dh + c] += ds[j] * ki->data[j * d + hd * dh + c];
                                           if (ki->requires_grad) ki->grad[j * d + hd * dh + c] += ds[j] * qi->data[i * d + hd * dh + c];
                                       }
                                   }
                               }
                           }
                       });
}

Tensor attention_apply(const Tensor& weights, const Tensor& v, std::size_t heads) {
    require(weights.dim() == 3 && v.dim() == 2 && weights.size(0) == heads && weights.size(2) == v.size(0),
            "attention_apply: shape mismatch " + to_string(weights.shape()) + " vs " + to_string(v.shape()));
    const std::size_t nq = weights.size(1), nk = v.size(0), d = v.size(1);
    if (d % heads != 0) throw ConfigError("attention: width not divisible by heads");
    const std::size_t dh = d / heads;
    std::vector<Real> out(nq * d, Real(0));
    for (std::size_t hd = 0; hd < heads; ++hd) {
        for (std::size_t i = 0; i < nq; ++i) {
            const Real* a = weights.ptr() + (hd * nq + i) * nk;
            Real* orow = out.data() + i * d + hd * dh;
            for (std::size_t j = 0; j < nk; ++j) {
                const Real* vj = v.ptr() + j * d + hd * dh;
                for (std::size_t c = 0; c < dh; ++c) orow[c] += a[j] * vj[c];
            }
        }
    }
    Impl ai = weights.impl(), vi = v.impl();
    return make_result("attention_apply", {nq, d}, std::move(out), {weights, v},
                       [ai, vi, heads, nq, nk, d, dh](const TensorImpl& o) {
                           for (std::size_t hd = 0; hd < heads; ++hd) {
                               for (std::size_t i = 0; i < nq; ++i) {
                                   const Real* g = o.grad.data() + i * d + hd * dh;
                                   for (std::size_t j = 0; j < nk; ++j) {
                                       const std::size_t aidx = (hd * nq + i) * nk + j;
                                       const Real* vj = vi->data.data() + j * d + hd * dh;
                                       if (ai->requires_grad) {
                                           Real s = 0;
                                           for (std::size_t c = 0; c < dh; ++c) s += g[c] * vj[c];
                                           ai->grad[aidx] += s;
                                       }
                                       if (vi->requires_grad) {
                                           const Real a = ai->data[aidx];
                                           Real* gv = vi->grad.data() + j * d + hd * dh;
                                           for (std::size_t c = 0; c < dh; ++c) gv[c] += a * g[c];
                                       }
                                   }
                               }
                           }
                       });
}

std::uint64_t& deformable_sample_counter() {
    thread_local std::uint64_t counter = 0;
    return counter;
}

Tensor deformable_sample(const Tensor& value, std::span<const Real> reference, const Tensor& offsets,
                         const Tensor& weights, const DeformableSampleLayout& layout) {
    const std::size_t heads = layout.heads, npts = layout.points, nlev = layout.levels.size();
    if (heads == 0 || npts == 0 || nlev == 0) throw ConfigError("deformable_sample: heads, points and levels must be >= 1");
    require(value.dim() == 2, "deformable_sample: value must be N x d, got " + to_string(value.shape()));
    const std::size_t nv = value.size(0), d = value.size(1);
    if (d % heads != 0) throw ConfigError("deformable_sample: width " + std::to_string(d) + " not divisible by heads");
    const std::size_t dh = d / heads;
    for (const auto& lv : layout.levels) {
        require(lv.tokens() > 0 && lv.start + lv.tokens() <= nv, "deformable_sample: level span exceeds value rows");
    }
    require(reference.size() % 2 == 0, "deformable_sample: reference must hold (x, y) pairs");
    const std::size_t nq = reference.size() / 2;
    const std::size_t per_q = heads * nlev * npts;
    if (offsets.numel() != nq * per_q * 2 || weights.numel() != nq * per_q) {
        throw ContractError("deformable_sample: expected offsets " + std::to_string(nq * per_q * 2) + " and weights " +
                            std::to_string(nq * per_q) + " for " + std::to_string(nq) + " queries, got " +
                            to_string(offsets.shape()) + " and " + to_string(weights.shape()));
    }

    std::vector<Real> out(nq * d, Real(0));
    // Sampled value vectors are kept for the weight adjoint.
    std::vector<kernels::BilinearStencil> stencils(nq * per_q);
    for (std::size_t q = 0; q < nq; ++q) {
        const Real rx = reference[2 * q], ry = reference[2 * q + 1];
        for (std::size_t hd = 0; hd < heads; ++hd) {
            Real* orow = out.data() + q * d + hd * dh;
            for (std::size_t l = 0; l < nlev; ++l) {
                const auto& lv = layout.levels[l];
                for (std::size_t k = 0; k < npts; ++k) {
                    const std::size_t s = q * per_q + (hd * nlev + l) * npts + k;
                    const Real px = rx * static_cast<Real>(lv.width) - Real(0.5) + offsets[2 * s];
                    const Real py = ry * static_cast<Real>(lv.height) - Real(0.5) + offsets[2 * s + 1];
                    stencils[s] = kernels::bilinear_stencil(px, py, lv.height, lv.width);
                    const Real a = weights[s];
                    for (const auto& cr : stencils[s].c) {
                        if (!cr.valid) continue;
                        const Real* vrow = value.ptr() + (lv.start + static_cast<std::size_t>(cr.y) * lv.width +
                                                          static_cast<std::size_t>(cr.x)) * d + hd * dh;
                        const Real cw = a * cr.weight;
                        for (std::size_t c = 0; c < dh; ++c) orow[c] += cw * vrow[c];
                    }
                }
            }
        }
    }
    deformable_sample_counter() += nq * per_q;

    Impl vi = value.impl(), oi = offsets.impl(), wi = weights.impl();
    return make_result(
        "deformable_sample", {nq, d}, std::move(out), {value, offsets, weights},
        [vi, oi, wi, stencils = std::move(stencils), levels = layout.levels, heads, npts, nlev, nq, d, dh, per_q](const TensorImpl& o) {
            std::vector<Real> sample(dh);
            for (std::size_t q = 0; q < nq; ++q) {
                for (std::size_t hd = 0; hd < heads; ++hd) {
                    const Real* g = o.grad.data() + q * d + hd * dh;
                    for (std::size_t l = 0; l < nlev; ++l) {
                        const auto& lv = levels[l];
                        for (std::size_t k = 0; k < npts; ++k) {
                            const std::size_t s = q * per_q + (hd * nlev + l) * npts + k;
                            const auto& st = stencils[s];
                            const Real a = wi->data[s];
                            const Real* corner_rows[4] = {nullptr, nullptr, nullptr, nullptr};
                            for (int i = 0; i < 4; ++i) {
                                if (!st.c[i].valid) continue;
                                corner_rows[i] = vi->data.data() + (lv.start + static_cast<std::size_t>(st.c[i].y) * lv.width +
                                                                    static_cast<std::size_t>(st.c[i].x)) * d + hd * dh;
                            }
                            if (wi->requires_grad) {
                                Real dot = 0;
                                for (int i = 0; i < 4; ++i) {
                                    if (!corner_rows[i]) continue;
                                    Real part = 0;
                                    for (std::size_t c = 0; c < dh; ++c) part += g[c] * corner_rows[i][c];
                                    dot += st.c[i].weight * part;
                                }
                                wi->grad[s] += dot;
                            }
                            if (vi->requires_grad) {
                                for (int i = 0; i < 4; ++i) {
                                    if (!corner_rows[i]) continue;
                                    const std::size_t row = (corner_rows[i] - vi->data.data());
                                    Real* gv = vi->grad.data() + row;
                                    const Real cw = a * st.c[i].weight;
                                    for (std::size_t c = 0; c < dh; ++c) gv[c] += cw * g[c];
                                }
                            }
                            if (oi->requires_grad) {
                                // Projections of g onto each corner value.
                                Real gv[4] = {0, 0, 0, 0};
                                for (int i = 0; i < 4; ++i) {
                                    if (!corner_rows[i]) continue;
                                    for (std::size_t c = 0; c < dh; ++c) gv[i] += g[c] * corner_rows[i][c];
                                }
                                const Real dx = (1 - st.fy) * (gv[1] - gv[0]) + st.fy * (gv[3] - gv[2]);
                                const Real dy = (1 - st.fx) * (gv[2] - gv[0]) + st.fx * (gv[3] - gv[1]);
                                oi->grad[2 * s] += a * dx;
                                oi->grad[2 * s + 1] += a * dy;
                            }
                        }
                    }
                }
            }
        });
}

Tensor group_scale(const Tensor& x, const Tensor& s) {
    require(x.dim() == 2 && s.dim() == 2 && x.size(0) == s.size(0),
            "group_scale: shape mismatch " + to_string(x.shape()) + " vs " + to_string(s.shape()));
    const std::size_t n = x.size(0), d = x.size(1), groups = s.size(1);
    if (d % groups != 0) {
        throw ConfigError("group_scale: " + std::to_string(groups) + " groups do not divide width " + std::to_string(d));
    }
    const std::size_t gw = d / groups;
    std::vector<Real> out(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) out[i * d + c] = x[i * d + c] * s[i * groups + c / gw];
    Impl xi = x.impl(), si = s.impl();
    return make_result("group_scale", x.shape(), std::move(out), {x, s}, [xi, si, n, d, groups, gw](const TensorImpl& o) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < d; ++c) {
                const Real g = o.grad[i * d + c];
                if (xi->requires_grad) xi->grad[i * d + c] += g * si->data[i * groups + c / gw];
                if (si->requires_grad) si->grad[i * groups + c / gw] += g * xi->data[i * d + c];
            }
        }
    });
}

Tensor map_to_tokens(const Tensor& map) {
    require(map.dim() == 3, "map_to_tokens: expected C x H x W, got " + to_string(map.shape()));
    return transpose(reshape(map, {map.size(0), map.size(1) * map.size(2)}));
}

Tensor tokens_to_map(const Tensor& tokens, std::size_t height, std::size_t width) {
    require(tokens.dim() == 2 && tokens.size(0) == height * width,
            "tokens_to_map: " + to_string(tokens.shape()) + " is not " + std::to_string(height) + "x" + std::to_string(width) + " tokens");
    return reshape(transpose(tokens), {tokens.size(1), height, width});
}

SAANET_END_NAMESPACE
