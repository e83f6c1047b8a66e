#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saanet/geometry.hpp"
#include "saanet/nn.hpp"

SAANET_BEGIN_NAMESPACE

/// Nonnegative density at 1/8 input resolution.
struct DensityMap {
    Tensor values;  // [1 x H/8 x W/8]

    /// Sum of the values (the inference count).
    double count() const;
    /// Differentiable sum.
    Tensor count_tensor() const { return sum_all(values); }
};

/// Two 3x3 convolutions shrinking channels by half each, a 1x1 regression
/// convolution, and a ReLU.
struct DensityHead {
    Conv2d conv1, conv2, conv3;

    DensityHead() = default;
    DensityHead(std::size_t width, Rng& rng);

    DensityMap forward(const Tensor& map) const;
    void collect(const std::string& prefix, ParamList& out) const;
    void zero();
};

DensityMap density_head(const Tensor& map, const DensityHead& head);

inline constexpr std::size_t kDensityStride = 8;

struct GroundTruth {
    std::vector<Point2> points;
    Tensor map;  // [1 x H/8 x W/8], sums to the point count
    double count = 0;
};

/// Places a unit-mass Gaussian (std `sigma` in grid cells) for every point on
/// the 1/8 grid. Each kernel is renormalized after truncation at the border.
GroundTruth render_annotation_map(std::span<const Point2> points, std::size_t height, std::size_t width, double sigma);

/// Density-supervision term; the default is DefaultDensityLoss.
class DensityLoss {
   public:
    virtual ~DensityLoss() = default;
    virtual Tensor operator()(const DensityMap& pred, const GroundTruth& gt) const = 0;
};

/// sum((D - D*)^2) + lambda * |sum(D) - C*|
class DefaultDensityLoss final : public DensityLoss {
   public:
    explicit DefaultDensityLoss(double lambda = 1.0) : lambda_(lambda) {}
    Tensor operator()(const DensityMap& pred, const GroundTruth& gt) const override;
    double lambda() const { return lambda_; }

   private:
    double lambda_;
};

struct LossTerms {
    Tensor total;
    double density = 0;
    double query = 0;
};

/// density_loss(D, D*) + |C - C*|; the query term is dropped when `count_pred` is undefined.
LossTerms loss(const DensityMap& pred, const GroundTruth& gt, const Tensor& count_pred, const DensityLoss& density_loss);

SAANET_END_NAMESPACE

namespace saanet {

struct Metrics {
    double mae = 0;
    double mse = 0;  // root of the mean squared error
    std::optional<double> nae;
    std::size_t n_samples = 0;
    std::size_t n_excluded = 0;  // zero-count samples left out of NAE

    /// {"mae", "mse", "nae" (nullable), "n_samples", "n_excluded"}
    std::string to_json() const;
};

/// MAE, root-MSE and NAE over paired counts. Samples whose ground truth is
/// zero do not enter NAE; if none remain NAE is absent.
Metrics compute_metrics(std::span<const double> preds, std::span<const double> gts);

}  // namespace saanet
