#pragma once

// IDX (MNIST-style) reader/writer. Big-endian header: two zero bytes, a type
// code, the number of dimensions, then one u32 extent per dimension.
// Images use 0x00000803 (u8, scaled to [0,1] on load) or 0x00000E03
// (float64, stored exactly); labels use 0x00000801.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"

namespace msplab {

inline constexpr std::uint32_t kIdxImagesU8 = 0x00000803;
inline constexpr std::uint32_t kIdxImagesF64 = 0x00000E03;
inline constexpr std::uint32_t kIdxLabelsU8 = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset) {
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline void put_be32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v >> 24));
    out.push_back(static_cast<char>(v >> 16));
    out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v));
}

inline std::string hex32(std::uint32_t v) {
    std::ostringstream os;
    os << "0x" << std::hex;
    os.width(8);
    os.fill('0');
    os << v;
    return os.str();
}

inline void require_size(const std::vector<unsigned char>& buf, std::size_t need, const std::filesystem::path& path) {
    if (buf.size() < need) {
        throw FormatError(path.string() + ": truncated, expected " + std::to_string(need) + " bytes, found " +
                          std::to_string(buf.size()));
    }
}

} // namespace detail

/// Loads an image/label IDX pair. Features are [1 x rows x cols].
inline LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);

    detail::require_size(img, 16, images_path);
    const std::uint32_t img_magic = detail::read_be32(img, 0);
    if (img_magic != kIdxImagesU8 && img_magic != kIdxImagesF64) {
        throw FormatError(images_path.string() + ": bad magic number, expected " + detail::hex32(kIdxImagesU8) +
                          " or " + detail::hex32(kIdxImagesF64) + ", found " + detail::hex32(img_magic));
    }
    detail::require_size(lab, 8, labels_path);
    const std::uint32_t lab_magic = detail::read_be32(lab, 0);
    if (lab_magic != kIdxLabelsU8) {
        throw FormatError(labels_path.string() + ": bad magic number, expected " + detail::hex32(kIdxLabelsU8) +
                          ", found " + detail::hex32(lab_magic));
    }

    const std::size_t count = detail::read_be32(img, 4);
    const std::size_t rows = detail::read_be32(img, 8);
    const std::size_t cols = detail::read_be32(img, 12);
    const std::size_t label_count = detail::read_be32(lab, 4);
    if (count != label_count) {
        throw FormatError("image file holds " + std::to_string(count) + " items but label file holds " +
                          std::to_string(label_count));
    }
    const std::size_t width = img_magic == kIdxImagesU8 ? 1 : 8;
    const std::size_t pixels = rows * cols;
    detail::require_size(img, 16 + count * pixels * width, images_path);
    detail::require_size(lab, 8 + count, labels_path);
    if (img.size() != 16 + count * pixels * width) throw FormatError(images_path.string() + ": trailing bytes");
    if (lab.size() != 8 + count) throw FormatError(labels_path.string() + ": trailing bytes");

    LabeledDataset out;
    out.feature_shape = {1, rows == 0 ? 1 : rows, cols == 0 ? 1 : cols};
    out.features.reserve(count);
    out.labels.reserve(count);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<double> x(pixels);
        for (std::size_t p = 0; p < pixels; ++p) {
            if (width == 1) {
                x[p] = static_cast<double>(img[16 + i * pixels + p]) / 255.0;
            } else {
                std::uint64_t bits = 0;
                for (std::size_t b = 0; b < 8; ++b) bits = (bits << 8) | img[16 + (i * pixels + p) * 8 + b];
                x[p] = std::bit_cast<double>(bits);
            }
        }
        out.features.push_back(std::move(x));
        out.labels.push_back(lab[8 + i]);
        max_label = std::max<std::size_t>(max_label, lab[8 + i]);
    }
    out.class_count = count == 0 ? 0 : max_label + 1;
    return out;
}

/// Serialises images in exact float64 form. Features must be [1 x rows x cols],
/// [rows x cols] or flat [d] (stored as 1 x d).
inline std::string encode_idx_images_f64(const std::vector<std::vector<double>>& features, const Shape& shape) {
    std::size_t rows = 1, cols = 0;
    if (shape.size() == 1) {
        cols = shape[0];
    } else if (shape.size() == 2) {
        rows = shape[0];
        cols = shape[1];
    } else if (shape.size() == 3 && shape[0] == 1) {
        rows = shape[1];
        cols = shape[2];
    } else {
        throw DimensionError("IDX images need single-channel features, got " + shape_str(shape));
    }
    std::string out;
    detail::put_be32(out, kIdxImagesF64);
    detail::put_be32(out, static_cast<std::uint32_t>(features.size()));
    detail::put_be32(out, static_cast<std::uint32_t>(rows));
    detail::put_be32(out, static_cast<std::uint32_t>(cols));
    for (const auto& x : features) {
        if (x.size() != rows * cols) throw DimensionError("IDX images: feature row of wrong length");
        for (double v : x) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            for (int b = 7; b >= 0; --b) out.push_back(static_cast<char>(bits >> (8 * b)));
        }
    }
    return out;
}

/// 8-bit images; values are clamped to [0,1] and rounded to 1/255 steps.
inline std::string encode_idx_images_u8(const std::vector<std::vector<double>>& features, std::size_t rows,
                                        std::size_t cols) {
    std::string out;
    detail::put_be32(out, kIdxImagesU8);
    detail::put_be32(out, static_cast<std::uint32_t>(features.size()));
    detail::put_be32(out, static_cast<std::uint32_t>(rows));
    detail::put_be32(out, static_cast<std::uint32_t>(cols));
    for (const auto& x : features) {
        if (x.size() != rows * cols) throw DimensionError("IDX images: feature row of wrong length");
        for (double v : x) out.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
    return out;
}

inline std::string encode_idx_labels(const std::vector<std::size_t>& labels) {
    std::string out;
    detail::put_be32(out, kIdxLabelsU8);
    detail::put_be32(out, static_cast<std::uint32_t>(labels.size()));
    for (auto l : labels) {
        if (l > 255) throw FormatError("IDX labels hold at most 256 classes");
        out.push_back(static_cast<char>(l));
    }
    return out;
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace msplab
