#include "saanet/nn.hpp"

#include <cmath>

SAANET_BEGIN_NAMESPACE

Tensor make_param(Shape shape) {
    Tensor t(std::move(shape));
    t.set_requires_grad(true);
    return t;
}

void fill_uniform(Tensor& t, Rng& rng, double bound) {
    for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(-bound, bound));
}

void fill_normal(Tensor& t, Rng& rng, double stddev) {
    for (auto& v : t.data()) v = static_cast<Real>(rng.normal(0.0, stddev));
}

void fill_value(Tensor& t, Real v) {
    for (auto& x : t.data()) x = v;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) : weight(make_param({in, out})) {
    // Xavier-uniform
    fill_uniform(weight, rng, std::sqrt(6.0 / static_cast<double>(in + out)));
    if (with_bias) bias = make_param({out});
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
    add_param(out, prefix + ".weight", weight);
    if (bias.defined()) add_param(out, prefix + ".bias", bias);
}

void Linear::zero() {
    fill_value(weight, 0);
    if (bias.defined()) fill_value(bias, 0);
}

LayerNorm::LayerNorm(std::size_t width) : gamma(make_param({width})), beta(make_param({width})) {
    fill_value(gamma, 1);
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
    add_param(out, prefix + ".gamma", gamma);
    add_param(out, prefix + ".beta", beta);
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Conv2dParams p, Rng& rng)
    : weight(make_param({out, in / p.groups, kernel, kernel})), bias(make_param({out})), params(p) {
    const double fan_in = static_cast<double>(in / p.groups * kernel * kernel);
    fill_uniform(weight, rng, std::sqrt(3.0 / fan_in));
}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
    add_param(out, prefix + ".weight", weight);
    add_param(out, prefix + ".bias", bias);
}

void Conv2d::zero() {
    fill_value(weight, 0);
    fill_value(bias, 0);
}

Mlp::Mlp(std::size_t width, std::size_t hidden, Rng& rng) : fc1(width, hidden, rng), fc2(hidden, width, rng) {}

void Mlp::collect(const std::string& prefix, ParamList& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

void Mlp::zero() {
    fc1.zero();
    fc2.zero();
}

std::size_t parameter_count(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

SAANET_END_NAMESPACE
