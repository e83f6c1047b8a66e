#include "saanet/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "saanet/rng.hpp"

SAANET_BEGIN_NAMESPACE

void Scene::validate() const {
    if (!image.defined() || image.dim() != 3 || image.size(0) != 3) throw ContractError("scene image must be 3 x H x W");
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        if (!(p.x >= 0 && p.y >= 0 && p.x < static_cast<double>(width()) && p.y < static_cast<double>(height()))) {
            throw ContractError("scene point " + std::to_string(i) + " out of bounds");
        }
    }
    if (!box_sizes.empty() && box_sizes.size() != points.size()) {
        throw ContractError("scene has " + std::to_string(box_sizes.size()) + " box sizes for " +
                            std::to_string(points.size()) + " points");
    }
}

void SceneSpec::validate() const {
    if (height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0) {
        throw ConfigError("scene extents must be positive multiples of 32");
    }
    if (count_min > count_max) throw ConfigError("scene count range is empty");
    if (!(base_size > 0) || perspective_gradient < 0 || clutter < 0 || min_separation < 0) {
        throw ConfigError("scene sizes, gradient, clutter and separation must be nonnegative (base size positive)");
    }
}

std::uint64_t scene_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

// Smooth background: a few random low-frequency waves plus flat rectangles.
void render_clutter(std::vector<double>& img, std::size_t h, std::size_t w, double clutter, Rng& rng) {
    for (std::size_t c = 0; c < 3; ++c) {
        const double base = 0.25 + 0.1 * rng.uniform();
        for (std::size_t i = 0; i < h * w; ++i) img[c * h * w + i] = base;
    }
    if (clutter <= 0) return;
    constexpr int kWaves = 3;
    for (int k = 0; k < kWaves; ++k) {
        const double fx = rng.uniform(0.02, 0.15), fy = rng.uniform(0.02, 0.15);
        const double phase = rng.uniform(0, 6.283185307179586);
        const double amp = clutter * rng.uniform(0.2, 0.5);
        const std::size_t ch = static_cast<std::size_t>(rng.below(3));
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                img[ch * h * w + y * w + x] += amp * std::sin(fx * x * 6.283185307179586 + fy * y * 6.283185307179586 + phase);
    }
    const std::size_t rects = 1 + static_cast<std::size_t>(rng.below(3));
    for (std::size_t r = 0; r < rects; ++r) {
        const std::size_t x0 = rng.below(w), y0 = rng.below(h);
        const std::size_t rw = 2 + rng.below(w / 3), rh = 2 + rng.below(h / 3);
        const double amp = clutter * rng.uniform(-0.6, 0.6);
        for (std::size_t y = y0; y < std::min(h, y0 + rh); ++y)
            for (std::size_t x = x0; x < std::min(w, x0 + rw); ++x)
                for (std::size_t c = 0; c < 3; ++c) img[c * h * w + y * w + x] += amp;
    }
}

// Bright Gaussian head blob; `size` spans roughly +-2 sigma.
void render_head(std::vector<double>& img, std::size_t h, std::size_t w, const Point2& p, double size, Rng& rng) {
    const double sigma = size / 4.0;
    const double amp = rng.uniform(0.5, 0.7);
    const double tint[3] = {rng.uniform(0.8, 1.0), rng.uniform(0.6, 0.9), rng.uniform(0.5, 0.8)};
    const long radius = static_cast<long>(std::ceil(3 * sigma)) + 1;
    const long cx = static_cast<long>(p.x), cy = static_cast<long>(p.y);
    for (long y = std::max(0L, cy - radius); y <= std::min(static_cast<long>(h) - 1, cy + radius); ++y) {
        for (long x = std::max(0L, cx - radius); x <= std::min(static_cast<long>(w) - 1, cx + radius); ++x) {
            const double dx = (x + 0.5) - p.x, dy = (y + 0.5) - p.y;
            const double v = amp * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            for (std::size_t c = 0; c < 3; ++c) img[c * h * w + y * w + x] += v * tint[c];
        }
    }
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t h = spec.height, w = spec.width;
    Scene scene;
    scene.seed = spec.seed;
    const std::size_t count = spec.count_min + rng.below(spec.count_max - spec.count_min + 1);

    std::size_t attempts = 0;
    while (scene.points.size() < count) {
        if (++attempts > spec.max_attempts) {
            std::ostringstream os;
            os << "generate_scene: placed " << scene.points.size() << " of " << count << " heads after "
               << spec.max_attempts << " attempts on a " << w << "x" << h << " canvas (base size " << spec.base_size
               << ", gradient " << spec.perspective_gradient << ", separation " << spec.min_separation << ")";
            throw ConfigError(os.str());
        }
        const Point2 p{rng.uniform(0, static_cast<double>(w)), rng.uniform(0, static_cast<double>(h))};
        const double size = spec.base_size + spec.perspective_gradient * p.y;
        bool ok = true;
        for (std::size_t i = 0; i < scene.points.size() && ok; ++i) {
            const double dx = p.x - scene.points[i].x, dy = p.y - scene.points[i].y;
            const double need = spec.min_separation * 0.5 * (size + scene.box_sizes[i]);
            ok = dx * dx + dy * dy >= need * need;
        }
        if (!ok) continue;
        scene.points.push_back(p);
        scene.box_sizes.push_back(size);
    }

    std::vector<double> img(3 * h * w);
    Rng paint = rng.fork();
    render_clutter(img, h, w, spec.clutter, paint);
    for (std::size_t i = 0; i < scene.points.size(); ++i) render_head(img, h, w, scene.points[i], scene.box_sizes[i], paint);
    scene.image = Tensor({3, h, w});
    for (std::size_t i = 0; i < img.size(); ++i) scene.image[i] = static_cast<Real>(std::clamp(img[i], 0.0, 1.0));
    return scene;
}

std::vector<Scene> generate_dataset(const DatasetSpec& spec) {
    std::vector<Scene> scenes;
    scenes.reserve(spec.size);
    Rng pick(spec.seed);
    for (std::size_t i = 0; i < spec.size; ++i) {
        SceneSpec s = spec.scene;
        s.seed = scene_seed(spec.seed, i);
        if (pick.uniform() < spec.negative_fraction) s.count_min = s.count_max = 0;
        scenes.push_back(generate_scene(s));
    }
    return scenes;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3) throw DimensionError("PPM output needs a 3 x H x W image");
    const std::size_t h = image.size(1), w = image.size(2);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os << "P6\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> bytes(3 * h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = std::clamp(static_cast<double>(image[c * h * w + i]), 0.0, 1.0);
            bytes[3 * i + c] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw FormatError("PPM write failed: " + path.string());
}

namespace {

std::size_t ppm_header_value(std::istream& is) {
    while (true) {
        const int c = is.peek();
        if (c == '#') {
            std::string skip;
            std::getline(is, skip);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            break;
        }
    }
    std::size_t v = 0;
    if (!(is >> v)) throw FormatError("PPM: malformed header");
    return v;
}

}  // namespace

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    std::string magic(2, '\0');
    if (!is.read(magic.data(), 2) || magic != "P6") throw FormatError("PPM: expected P6 magic in " + path.string());
    const std::size_t w = ppm_header_value(is), h = ppm_header_value(is), maxval = ppm_header_value(is);
    if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw FormatError("PPM: unsupported header in " + path.string());
    is.get();  // single whitespace before raster
    std::vector<unsigned char> bytes(3 * h * w);
    if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
        throw FormatError("PPM: truncated raster in " + path.string());
    }
    Tensor img({3, h, w});
    for (std::size_t i = 0; i < h * w; ++i)
        for (std::size_t c = 0; c < 3; ++c) img[c * h * w + i] = static_cast<Real>(bytes[3 * i + c]) / static_cast<Real>(maxval);
    return img;
}

void write_annotations(const std::filesystem::path& path, const Scene& scene) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os << std::setprecision(17);
    for (std::size_t i = 0; i < scene.points.size(); ++i) {
        os << scene.points[i].x << ',' << scene.points[i].y;
        if (!scene.box_sizes.empty()) os << ',' << scene.box_sizes[i];
        os << '\n';
    }
}

void read_annotations(const std::filesystem::path& path, Scene& scene) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path.string());
    scene.points.clear();
    scene.box_sizes.clear();
    std::string line;
    std::size_t lineno = 0;
    std::size_t with_box = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> fields;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                fields.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (lineno == 1) continue;  // header row
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": non-numeric field");
        }
        if (fields.size() < 2 || fields.size() > 3) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected x,y[,box]");
        }
        scene.points.push_back({fields[0], fields[1]});
        if (fields.size() == 3) {
            scene.box_sizes.push_back(fields[2]);
            ++with_box;
        }
    }
    if (with_box != 0 && with_box != scene.points.size()) {
        throw FormatError(path.string() + ": box sizes given for only some points");
    }
}

void save_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        std::ostringstream name;
        name << "scene_" << std::setw(4) << std::setfill('0') << i;
        write_ppm(dir / (name.str() + ".ppm"), scenes[i].image);
        write_annotations(dir / (name.str() + ".csv"), scenes[i]);
    }
}

std::vector<Scene> load_dataset(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> images;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".ppm") images.push_back(entry.path());
    }
    std::sort(images.begin(), images.end());
    std::vector<Scene> scenes;
    for (const auto& img : images) {
        Scene s;
        s.image = read_ppm(img);
        auto csv = img;
        csv.replace_extension(".csv");
        if (std::filesystem::exists(csv)) read_annotations(csv, s);
        s.validate();
        scenes.push_back(std::move(s));
    }
    return scenes;
}

SAANET_END_NAMESPACE
