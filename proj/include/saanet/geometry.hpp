#pragma once

namespace saanet {

/// Pixel-space location; (0, 0) is the top-left corner of the top-left pixel.
struct Point2 {
    double x = 0;
    double y = 0;
};

}  // namespace saanet
