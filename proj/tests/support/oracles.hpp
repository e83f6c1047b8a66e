#pragma once

// Independent reference implementations written as plain scalar loops in
// double precision. They share no code with the library beyond reading
// parameter values.

#include <cmath>
#include <vector>

#include "saanet/attention.hpp"
#include "saanet/rng.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

template <class T>
Mat to_mat(const T& t, std::size_t rows, std::size_t cols) {
    Mat m(rows, std::vector<double>(cols));
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m[i][j] = static_cast<double>(t[i * cols + j]);
    return m;
}

// y = x W + b with W stored [in x out]
template <class Lin>
std::vector<double> affine(const Lin& lin, const std::vector<double>& x) {
    const std::size_t in = lin.weight.size(0), out = lin.weight.size(1);
    std::vector<double> y(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
        double s = lin.bias.defined() ? static_cast<double>(lin.bias[o]) : 0.0;
        for (std::size_t i = 0; i < in; ++i) s += x[i] * static_cast<double>(lin.weight[i * out + o]);
        y[o] = s;
    }
    return y;
}

inline void softmax_inplace(std::vector<double>& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double tot = 0;
    for (double& x : v) tot += (x = std::exp(x - mx));
    for (double& x : v) x /= tot;
}

// feat given as C x H x W, loc in pixel units; zero outside the grid
template <class T>
std::vector<double> bilinear(const T& feat, std::size_t c, std::size_t h, std::size_t w, double px, double py) {
    std::vector<double> out(c, 0.0);
    const double x0 = std::floor(px), y0 = std::floor(py);
    for (int dy = 0; dy <= 1; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
            const double xx = x0 + dx, yy = y0 + dy;
            const double wgt = (dx ? px - x0 : 1 - (px - x0)) * (dy ? py - y0 : 1 - (py - y0));
            if (xx < 0 || yy < 0 || xx >= static_cast<double>(w) || yy >= static_cast<double>(h)) continue;
            const auto xi = static_cast<std::size_t>(xx), yi = static_cast<std::size_t>(yy);
            for (std::size_t ch = 0; ch < c; ++ch) out[ch] += wgt * static_cast<double>(feat[(ch * h + yi) * w + xi]);
        }
    }
    return out;
}

/// Deformable attention written as: sample raw features, then project with W_V.
/// levels are C x H_l x W_l maps with C == d_model.
template <class Attn, class Tensor>
Mat deformable(const Attn& attn, const Tensor& z, const std::vector<double>& ref_xy, const std::vector<Tensor>& levels) {
    const std::size_t n = z.size(0), d = z.size(1);
    const std::size_t heads = attn.cfg.heads, k_pts = attn.cfg.points, nl = levels.size(), dh = d / heads;
    Mat out(n, std::vector<double>(d, 0.0));
    for (std::size_t q = 0; q < n; ++q) {
        std::vector<double> zq(d);
        for (std::size_t c = 0; c < d; ++c) zq[c] = z[q * d + c];
        const auto off = affine(attn.offsets, zq);
        const auto lg = affine(attn.logits, zq);
        std::vector<double> concat(d, 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
            std::vector<double> a(lg.begin() + static_cast<long>(h * nl * k_pts),
                                  lg.begin() + static_cast<long>((h + 1) * nl * k_pts));
            softmax_inplace(a);
            for (std::size_t l = 0; l < nl; ++l) {
                const auto& f = levels[l];
                const std::size_t hh = f.size(1), ww = f.size(2);
                for (std::size_t k = 0; k < k_pts; ++k) {
                    const std::size_t s = (h * nl + l) * k_pts + k;
                    const double px = ref_xy[2 * q] * static_cast<double>(ww) - 0.5 + off[2 * s];
                    const double py = ref_xy[2 * q + 1] * static_cast<double>(hh) - 0.5 + off[2 * s + 1];
                    const auto sample = bilinear(f, d, hh, ww, px, py);
                    for (std::size_t j = 0; j < dh; ++j) {
                        double v = 0;
                        for (std::size_t c = 0; c < d; ++c) v += sample[c] * attn.value.weight[c * d + h * dh + j];
                        concat[h * dh + j] += a[l * k_pts + k] * v;
                    }
                }
            }
        }
        out[q] = affine(attn.output, concat);
    }
    return out;
}

/// Multi-head scaled dot-product self-attention over z.
template <class Attn, class Tensor>
Mat global(const Attn& attn, const Tensor& z, Mat* weights = nullptr) {
    const std::size_t n = z.size(0), d = z.size(1), heads = attn.cfg.heads, dh = d / heads;
    Mat q(n), k(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> zi(d);
        for (std::size_t c = 0; c < d; ++c) zi[c] = z[i * d + c];
        q[i] = affine(attn.query, zi);
        k[i] = affine(attn.key, zi);
        v[i] = affine(attn.value, zi);
    }
    if (weights) weights->assign(heads * n, std::vector<double>(n));
    Mat out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> concat(d, 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
            std::vector<double> a(n);
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0;
                for (std::size_t c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
                a[j] = s / std::sqrt(static_cast<double>(dh));
            }
            softmax_inplace(a);
            if (weights) (*weights)[h * n + i] = a;
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t c = 0; c < dh; ++c) concat[h * dh + c] += a[j] * v[j][h * dh + c];
        }
        out[i] = affine(attn.output, concat);
    }
    return out;
}

/// Channel group h of token n scaled by N * recal[h][n].
template <class Tensor>
Mat recalibrate(const Tensor& tokens, const Tensor& recal) {
    const std::size_t n = tokens.size(0), d = tokens.size(1), heads = recal.size(0), g = d / heads;
    Mat out(n, std::vector<double>(d));
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t c = 0; c < d; ++c)
            out[t][c] = static_cast<double>(tokens[t * d + c]) * static_cast<double>(n) *
                        static_cast<double>(recal[(c / g) * n + t]);
    return out;
}

template <class Tensor>
double max_abs_diff(const Mat& expect, const Tensor& got) {
    double m = 0;
    const std::size_t cols = expect.empty() ? 0 : expect[0].size();
    for (std::size_t i = 0; i < expect.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) m = std::max(m, std::abs(expect[i][j] - static_cast<double>(got[i * cols + j])));
    return m;
}

}  // namespace oracle
