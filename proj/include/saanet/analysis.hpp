#pragma once

#include <filesystem>
#include <vector>

#include "saanet/backbone.hpp"
#include "saanet/data.hpp"

namespace saanet {

struct LineFit {
    double slope = 0;
    double intercept = 0;
    double r = 0;         // Pearson correlation
    double p_value = 1;   // two-sided, H0: slope == 0
    std::size_t n = 0;
};

/// Ordinary least squares y = slope * x + intercept with a t-test on the slope.
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace saanet

SAANET_BEGIN_NAMESPACE

struct OffsetScaleRow {
    std::size_t scene = 0;
    std::size_t point = 0;
    double box_size = 0;
    double mean_offset = 0;            // over heads and sampling points, image pixels
    std::vector<double> head_offsets;  // per head, image pixels
};

struct OffsetScaleOptions {
    std::size_t stage = 2;  // 1-based
    long block = -1;        // DA block index within the stage; negative counts from the end
};

/// Mean sampling-offset magnitude of the chosen DA block at the token holding
/// each annotated head. One row per annotated point.
std::vector<OffsetScaleRow> offset_scale_analysis(const Deformer& model, const std::vector<Scene>& scenes,
                                                  const OffsetScaleOptions& opt = {});

LineFit fit_offset_scale(const std::vector<OffsetScaleRow>& rows);

void write_offset_scale_csv(const std::filesystem::path& path, const std::vector<OffsetScaleRow>& rows);

SAANET_END_NAMESPACE
