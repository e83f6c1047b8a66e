#pragma once

#include <functional>
#include <vector>

#include "saanet/tensor.hpp"

SAANET_BEGIN_NAMESPACE

struct GradCheckReport {
    double max_abs = 0;
    /// |analytic - numeric| / max(1, |analytic|, |numeric|)
    double max_rel = 0;
    std::size_t checked = 0;
    bool passed = false;
};

using ScalarFn = std::function<Tensor()>;

/// Compares the reverse-mode gradient of `f` with central differences for the
/// listed parameters. `f` must return a single-element tensor and read the
/// parameters by reference. When `max_entries_per_param` is nonzero, only an
/// evenly strided subsample of each parameter is perturbed.
GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> params, double step, double tol,
                           std::size_t max_entries_per_param = 0);

/// Single-input convenience form: f is evaluated at x.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step, double tol);

SAANET_END_NAMESPACE
