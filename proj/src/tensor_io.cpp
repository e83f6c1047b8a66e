#include "saanet/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

SAANET_BEGIN_NAMESPACE

namespace {

constexpr std::array<char, 4> kMagic = {'S', 'A', 'A', 'T'};

void put_u64(std::ostream& os, std::uint64_t v) {
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b.data(), 8);
}

std::uint64_t get_u64(std::istream& is) {
    std::array<unsigned char, 8> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 8)) throw FormatError("SAAT: truncated extent");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_f32(std::ostream& os, float f) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    std::array<char, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(b.data(), 4);
}

}  // namespace

void write_saat(std::ostream& os, const Tensor& t) {
    if (t.dim() > 255) throw FormatError("SAAT: rank exceeds 255");
    os.write(kMagic.data(), 4);
    os.put(static_cast<char>(kSaatVersion));
    os.put(static_cast<char>(t.dim()));
    for (auto e : t.shape()) put_u64(os, e);
    for (Real v : t.data()) put_f32(os, static_cast<float>(v));
    if (!os) throw FormatError("SAAT: write failed");
}

Tensor read_saat(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), 4) || magic != kMagic) throw FormatError("SAAT: bad magic");
    const int version = is.get();
    if (version != kSaatVersion) throw FormatError("SAAT: unsupported version " + std::to_string(version));
    const int rank = is.get();
    if (rank <= 0) throw FormatError("SAAT: bad rank");
    Shape shape(static_cast<std::size_t>(rank));
    for (auto& e : shape) {
        e = get_u64(is);
        if (e == 0) throw FormatError("SAAT: zero extent");
    }
    const std::size_t n = numel(shape);
    std::vector<unsigned char> raw(n * 4);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        throw FormatError("SAAT: truncated data");
    }
    std::vector<Real> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[i * 4 + b]) << (8 * b);
        data[i] = static_cast<Real>(std::bit_cast<float>(bits));
    }
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    write_saat(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    return read_saat(is);
}

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    for (const auto& [name, t] : tensors) write_saat(os, t);
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    std::vector<Tensor> out;
    while (is.peek() != std::char_traits<char>::eof()) out.push_back(read_saat(is));
    return out;
}

SAANET_END_NAMESPACE
