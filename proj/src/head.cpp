#include "saanet/head.hpp"

#include <cmath>

SAANET_BEGIN_NAMESPACE

double DensityMap::count() const {
    double total = 0;
    for (Real v : values.data()) total += v;
    return total;
}

DensityHead::DensityHead(std::size_t width, Rng& rng)
    : conv1(width, width / 2, 3, Conv2dParams{1, 1, 1}, rng),
      conv2(width / 2, width / 4, 3, Conv2dParams{1, 1, 1}, rng),
      conv3(width / 4, 1, 1, Conv2dParams{1, 0, 1}, rng) {
    if (width < 4 || width % 4 != 0) throw ConfigError("density head width must be a positive multiple of 4");
}

DensityMap DensityHead::forward(const Tensor& map) const {
    return {relu(conv3(relu(conv2(relu(conv1(map))))))};
}

void DensityHead::collect(const std::string& prefix, ParamList& out) const {
    conv1.collect(prefix + ".conv1", out);
    conv2.collect(prefix + ".conv2", out);
    conv3.collect(prefix + ".conv3", out);
}

void DensityHead::zero() {
    conv1.zero();
    conv2.zero();
    conv3.zero();
}

DensityMap density_head(const Tensor& map, const DensityHead& head) { return head.forward(map); }

GroundTruth render_annotation_map(std::span<const Point2> points, std::size_t height, std::size_t width, double sigma) {
    if (height % kDensityStride != 0 || width % kDensityStride != 0 || height == 0 || width == 0) {
        throw ConfigError("annotation map: image extents must be positive multiples of 8");
    }
    if (!(sigma > 0)) throw ConfigError("annotation map: sigma must be positive");
    const std::size_t gh = height / kDensityStride, gw = width / kDensityStride;
    GroundTruth gt;
    gt.points.assign(points.begin(), points.end());
    gt.count = static_cast<double>(points.size());
    std::vector<double> acc(gh * gw, 0.0);
    std::vector<double> kernel(gh * gw);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        if (!(p.x >= 0 && p.y >= 0 && p.x < static_cast<double>(width) && p.y < static_cast<double>(height))) {
            throw ContractError("annotation point " + std::to_string(i) + " (" + std::to_string(p.x) + ", " +
                                std::to_string(p.y) + ") lies outside the " + std::to_string(width) + "x" +
                                std::to_string(height) + " image");
        }
        // Grid cell (r, c) has its centre at pixel ((c + 0.5) * 8, (r + 0.5) * 8).
        const double cx = p.x / kDensityStride - 0.5;
        const double cy = p.y / kDensityStride - 0.5;
        double mass = 0;
        for (std::size_t r = 0; r < gh; ++r) {
            for (std::size_t c = 0; c < gw; ++c) {
                const double dx = static_cast<double>(c) - cx, dy = static_cast<double>(r) - cy;
                const double v = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
                kernel[r * gw + c] = v;
                mass += v;
            }
        }
        for (std::size_t k = 0; k < kernel.size(); ++k) acc[k] += kernel[k] / mass;
    }
    gt.map = Tensor({1, gh, gw});
    for (std::size_t k = 0; k < acc.size(); ++k) gt.map[k] = static_cast<Real>(acc[k]);
    return gt;
}

Tensor DefaultDensityLoss::operator()(const DensityMap& pred, const GroundTruth& gt) const {
    if (pred.values.shape() != gt.map.shape()) {
        throw ContractError("loss: density " + to_string(pred.values.shape()) + " vs annotation " + to_string(gt.map.shape()));
    }
    const Tensor pixel = sum_all(square(sub(pred.values, gt.map)));
    const Tensor count = abs(add_scalar(pred.count_tensor(), static_cast<Real>(-gt.count)));
    return add(pixel, scale(count, static_cast<Real>(lambda_)));
}

LossTerms loss(const DensityMap& pred, const GroundTruth& gt, const Tensor& count_pred, const DensityLoss& density_loss) {
    LossTerms terms;
    Tensor total = density_loss(pred, gt);
    terms.density = total.item();
    if (count_pred.defined()) {
        if (count_pred.numel() != 1) throw ContractError("loss: count prediction must be scalar");
        const Tensor q = abs(add_scalar(count_pred, static_cast<Real>(-gt.count)));
        terms.query = q.item();
        total = add(total, q);
    }
    terms.total = total;
    return terms;
}

SAANET_END_NAMESPACE
