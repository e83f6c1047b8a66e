#pragma once

#include <string>
#include <utility>
#include <vector>

#include "saanet/ops.hpp"
#include "saanet/rng.hpp"

SAANET_BEGIN_NAMESPACE

/// Ordered (name, tensor) pairs; tensors alias the module's storage.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

inline void add_param(ParamList& out, const std::string& name, const Tensor& t) { out.emplace_back(name, t); }

Tensor make_param(Shape shape);
void fill_uniform(Tensor& t, Rng& rng, double bound);
void fill_normal(Tensor& t, Rng& rng, double stddev);
void fill_value(Tensor& t, Real v);

struct Linear {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
    std::size_t in_features() const { return weight.size(0); }
    std::size_t out_features() const { return weight.size(1); }
    void collect(const std::string& prefix, ParamList& out) const;
    void zero();
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t width);

    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct Conv2d {
    Tensor weight;  // [C_out x C_in/groups x k x k]
    Tensor bias;    // [C_out]
    Conv2dParams params;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Conv2dParams params, Rng& rng);

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, params); }
    void collect(const std::string& prefix, ParamList& out) const;
    void zero();
};

/// Two-layer feed-forward block with tanh-GELU.
struct Mlp {
    Linear fc1;
    Linear fc2;

    Mlp() = default;
    Mlp(std::size_t width, std::size_t hidden, Rng& rng);

    Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
    void collect(const std::string& prefix, ParamList& out) const;
    void zero();
};

std::size_t parameter_count(const ParamList& params);

SAANET_END_NAMESPACE
