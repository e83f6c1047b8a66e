#include "saanet/analysis.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "saanet/head.hpp"

SAANET_BEGIN_NAMESPACE

std::vector<OffsetScaleRow> offset_scale_analysis(const Deformer& model, const std::vector<Scene>& scenes,
                                                  const OffsetScaleOptions& opt) {
    if (opt.stage < 1 || opt.stage > 4) throw ConfigError("offset_scale_analysis: stage must be 1..4");
    const auto& stage = model.stages()[opt.stage - 1];
    std::size_t n_da = 0;
    std::size_t heads = 0, points = 0;
    for (const auto& b : stage.blocks) {
        if (b.kind != BlockKind::Deformable) continue;
        ++n_da;
        heads = b.deformable.cfg.heads;
        points = b.deformable.cfg.points;
    }
    if (n_da == 0) throw ConfigError("offset_scale_analysis: stage has no deformable blocks");
    const long idx = opt.block < 0 ? static_cast<long>(n_da) + opt.block : opt.block;
    if (idx < 0 || idx >= static_cast<long>(n_da)) throw ConfigError("offset_scale_analysis: block index out of range");

    std::size_t stride = 1;
    for (std::size_t s = 0; s < opt.stage; ++s) stride *= s == 0 ? 4 : 2;

    NoGradGuard guard;
    std::vector<OffsetScaleRow> rows;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
        const Scene& scene = scenes[si];
        if (!scene.points.empty() && scene.box_sizes.size() != scene.points.size())
            throw ContractError("offset_scale_analysis: scene " + std::to_string(si) + " lacks box sizes");
        BackboneTrace trace;
        const BackboneFeatures feats = model.forward(scene.image, &trace);
        const auto& map = feats.stages[opt.stage - 1];
        const std::size_t h = map.height(), w = map.width();
        const Tensor& off = trace.stages[opt.stage - 1].at(static_cast<std::size_t>(idx)).offsets;
        const std::size_t row_len = off.size(1);  // heads * K * 2 (one level)
        const auto data = off.data();
        for (std::size_t pi = 0; pi < scene.points.size(); ++pi) {
            const auto& p = scene.points[pi];
            const std::size_t tx = std::min(w - 1, static_cast<std::size_t>(std::max(0.0, p.x) / stride));
            const std::size_t ty = std::min(h - 1, static_cast<std::size_t>(std::max(0.0, p.y) / stride));
            const Real* o = data.data() + (ty * w + tx) * row_len;
            OffsetScaleRow r;
            r.scene = si;
            r.point = pi;
            r.box_size = scene.box_sizes[pi];
            r.head_offsets.assign(heads, 0.0);
            for (std::size_t hh = 0; hh < heads; ++hh) {
                double acc = 0;
                for (std::size_t k = 0; k < points; ++k) {
                    const double dx = o[(hh * points + k) * 2];
                    const double dy = o[(hh * points + k) * 2 + 1];
                    acc += std::hypot(dx, dy);
                }
                r.head_offsets[hh] = acc / static_cast<double>(points) * static_cast<double>(stride);
                r.mean_offset += r.head_offsets[hh];
            }
            r.mean_offset /= static_cast<double>(heads);
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

LineFit fit_offset_scale(const std::vector<OffsetScaleRow>& rows) {
    std::vector<double> x, y;
    for (const auto& r : rows) {
        x.push_back(r.box_size);
        y.push_back(r.mean_offset);
    }
    return fit_line(x, y);
}

void write_offset_scale_csv(const std::filesystem::path& path, const std::vector<OffsetScaleRow>& rows) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write " + path.string());
    const std::size_t heads = rows.empty() ? 0 : rows.front().head_offsets.size();
    os << "scene,point,box_size,mean_offset";
    for (std::size_t h = 0; h < heads; ++h) os << ",head" << h;
    os << '\n' << std::setprecision(9);
    for (const auto& r : rows) {
        os << r.scene << ',' << r.point << ',' << r.box_size << ',' << r.mean_offset;
        for (double v : r.head_offsets) os << ',' << v;
        os << '\n';
    }
}

SAANET_END_NAMESPACE
