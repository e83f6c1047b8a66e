#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "saanet/tensor.hpp"

SAANET_BEGIN_NAMESPACE

// Every op below records its adjoint on the current tape when any input
// requires gradients and recording is enabled.
//
// Broadcasting is limited to two cases: an operand whose shape equals the
// trailing extents of the other (e.g. a [d] bias against [N x d]), and a
// single-element operand.

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[N x in] * w[in x out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real s);
Tensor add_scalar(const Tensor& a, Real s);

Tensor reshape(const Tensor& a, Shape shape);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);

/// Reduces `axis` away; a rank-1 input reduces to shape [1].
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

/// Normalizes over the last axis, then applies gamma/beta of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = Real(1e-5));

/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
/// log(1 + exp(x)), evaluated without overflow.
Tensor softplus(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Gathers rows of table[V x d].
Tensor embedding(const Tensor& table, std::span<const std::size_t> indices);

struct Conv2dParams {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;
};

/// x[C_in x H x W], w[C_out x C_in/groups x k x k], bias[C_out] (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dParams params);

/// Samples feat[C x H x W] at continuous pixel location loc = (x, y), where
/// integer coordinates land exactly on grid values. Neighbours outside the
/// grid contribute zero. Differentiable in both feat and loc.
Tensor bilinear_sample(const Tensor& feat, const Tensor& loc);

/// Scaled dot-product attention weights per head: softmax(q_h k_h^T / sqrt(d_h)).
/// q[Nq x d], k[Nk x d] -> [heads x Nq x Nk].
Tensor attention_weights(const Tensor& q, const Tensor& k, std::size_t heads);
/// weights[heads x Nq x Nk], v[Nk x d] -> [Nq x d], head h writing its channel group.
Tensor attention_apply(const Tensor& weights, const Tensor& v, std::size_t heads);

/// One level of a flattened multi-level value set.
struct LevelSpan {
    std::size_t start = 0;  // first token row
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t tokens() const { return height * width; }
};

struct DeformableSampleLayout {
    std::size_t heads = 1;
    std::size_t points = 1;  // K per head per level
    std::vector<LevelSpan> levels;
};

/// Multi-level deformable aggregation. For query q, head h, level l, point k:
///   loc = (ref_x * W_l - 0.5 + dx, ref_y * H_l - 0.5 + dy)   (pixel units of level l)
///   out[q, head h channels] += weight * bilinear(value_l[head h channels], loc)
/// value[Nv x d]; reference[Nq x 2] normalized (x, y), not differentiated;
/// offsets[Nq x heads*L*K*2]; weights[Nq x heads*L*K].
Tensor deformable_sample(const Tensor& value, std::span<const Real> reference, const Tensor& offsets,
                         const Tensor& weights, const DeformableSampleLayout& layout);

/// Running count of bilinear samples taken by deformable_sample on this thread.
std::uint64_t& deformable_sample_counter();

/// y[n, c] = x[n, c] * s[n, c / (d / groups)], x[N x d], s[N x groups].
Tensor group_scale(const Tensor& x, const Tensor& s);

/// [C x H x W] -> [H*W x C]
Tensor map_to_tokens(const Tensor& map);
/// [H*W x C] -> [C x H x W]
Tensor tokens_to_map(const Tensor& tokens, std::size_t height, std::size_t width);

SAANET_END_NAMESPACE
