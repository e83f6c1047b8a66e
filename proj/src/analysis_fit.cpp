#include <cmath>

#include <boost/math/distributions/students_t.hpp>

#include "saanet/analysis.hpp"
#include "saanet/errors.hpp"

namespace saanet {

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DimensionError("fit_line: x and y differ in length");
    if (x.size() < 3) throw ContractError("fit_line: need at least 3 points");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    LineFit f;
    f.n = x.size();
    if (sxx == 0) return f;  // degenerate x: no slope information
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (syy == 0) {
        f.r = 0;
        f.p_value = 1;
        return f;
    }
    f.r = sxy / std::sqrt(sxx * syy);
    const double dof = n - 2;
    const double rss = std::max(0.0, syy - f.slope * sxy);
    if (rss == 0) {
        f.p_value = 0;
        return f;
    }
    const double se = std::sqrt(rss / dof / sxx);
    const double t = f.slope / se;
    boost::math::students_t dist(dof);
    f.p_value = 2 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    return f;
}

}  // namespace saanet
