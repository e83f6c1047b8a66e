#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "saanet/tensor.hpp"

SAANET_BEGIN_NAMESPACE

// SAAT container: "SAAT", u8 version, u8 rank, rank x u64 LE extents, then
// f32 LE data in row-major order. Several records may follow each other.
inline constexpr unsigned char kSaatVersion = 1;

void write_saat(std::ostream& os, const Tensor& t);
Tensor read_saat(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
/// Reads every record in the file, in order.
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

SAANET_END_NAMESPACE
