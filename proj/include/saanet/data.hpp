#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "saanet/geometry.hpp"
#include "saanet/tensor.hpp"

SAANET_BEGIN_NAMESPACE

struct Scene {
    Tensor image;  // 3 x H x W, values in [0, 1]
    std::vector<Point2> points;
    std::vector<double> box_sizes;  // empty or one per point
    std::uint64_t seed = 0;

    std::size_t height() const { return image.size(1); }
    std::size_t width() const { return image.size(2); }
    void validate() const;
};

/// Synthetic crowd scene parameters. Head size grows linearly with the row:
/// size(y) = base_size + perspective_gradient * y.
struct SceneSpec {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t count_min = 0;
    std::size_t count_max = 8;
    double base_size = 2.0;
    double perspective_gradient = 0.1;
    double clutter = 0.2;
    double min_separation = 0.5;  // minimum distance in units of the mean of the two head sizes
    std::size_t max_attempts = 2000;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Deterministic for a given spec. Count range [0, 0] yields a negative
/// (clutter-only) scene.
Scene generate_scene(const SceneSpec& spec);

/// Derives the seed of scene `index` from a base seed (splitmix64).
std::uint64_t scene_seed(std::uint64_t base, std::uint64_t index);

struct DatasetSpec {
    SceneSpec scene;
    std::size_t size = 8;
    double negative_fraction = 0.0;
    std::uint64_t seed = 0;
};

std::vector<Scene> generate_dataset(const DatasetSpec& spec);

// Binary PPM (P6), 8 bits per channel.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

// Annotation CSV: "x,y[,box]" one point per line.
void write_annotations(const std::filesystem::path& path, const Scene& scene);
void read_annotations(const std::filesystem::path& path, Scene& scene);

/// Writes scene_NNNN.ppm / scene_NNNN.csv pairs.
void save_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes);
/// Loads every scene_*.ppm with its .csv, sorted by name.
std::vector<Scene> load_dataset(const std::filesystem::path& dir);

SAANET_END_NAMESPACE
