#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "lsopt/errors.hpp"
#include "lsopt/weighting.hpp"

namespace lsopt {

// A 64x64 binary raster stored as packed bits, MSB-first within each byte,
// row-major — the same layout the SHP1 codec writes, so serialization is a
// straight copy and equality is bytewise.
class BinaryImage {
 public:
  static constexpr int kWidth = 64;
  static constexpr int kHeight = 64;
  static constexpr std::size_t kPixelCount =
      static_cast<std::size_t>(kWidth) * kHeight;
  static constexpr std::size_t kPackedBytes = kPixelCount / 8;

  BinaryImage() : bytes_{} {}

  static BinaryImage from_packed(std::span<const std::uint8_t> packed);

  bool pixel(int row, int col) const {
    const std::size_t bit = bit_index(row, col);
    return (bytes_[bit >> 3] >> (7 - (bit & 7))) & 1u;
  }

  void set_pixel(int row, int col, bool on) {
    const std::size_t bit = bit_index(row, col);
    const std::uint8_t mask = static_cast<std::uint8_t>(1u << (7 - (bit & 7)));
    if (on)
      bytes_[bit >> 3] |= mask;
    else
      bytes_[bit >> 3] &= static_cast<std::uint8_t>(~mask);
  }

  const std::array<std::uint8_t, kPackedBytes>& packed() const { return bytes_; }

  // FNV-1a over the packed bytes; used for run-record provenance and as the
  // novelty-filter hash bucket.
  std::uint64_t content_hash() const;

  friend bool operator==(const BinaryImage&, const BinaryImage&) = default;

 private:
  static std::size_t bit_index(int row, int col) {
    if (row < 0 || row >= kHeight || col < 0 || col >= kWidth)
      throw InvalidInputError("BinaryImage: pixel index out of range");
    return static_cast<std::size_t>(row) * kWidth + static_cast<std::size_t>(col);
  }

  std::array<std::uint8_t, kPackedBytes> bytes_;
};

// Count of 1-pixels: the shapes-task objective f(x).
int area(const BinaryImage& image);

// Input points paired with objective scores and a normalized weight vector.
struct WeightedDataset {
  std::vector<BinaryImage> points;
  std::vector<double> scores;
  WeightVector weights;

  std::size_t size() const { return points.size(); }
};

struct SquaresDatasetConfig {
  std::size_t count = 10000;
  int min_side = 1;
  int max_side = 20;
  std::uint64_t rng_seed = 0;
};

// `count` images, each one axis-aligned filled square: side uniform on
// [min_side, max_side], top-left corner uniform among in-frame positions.
// Weights initialized uniform (SumToOne).  Per-index substreams make the
// output independent of generation order.
WeightedDataset generate_squares_dataset(const SquaresDatasetConfig& config);

// SHP1 codec (little-endian): magic "SHP1", count u32, width u16, height u16,
// CRC-32 of the record payload u32, then per record 512 packed pixel bytes
// followed by the score as an IEEE-754 binary64.
void write_shp1(const std::filesystem::path& path,
                std::span<const BinaryImage> images,
                std::span<const double> scores);

std::pair<std::vector<BinaryImage>, std::vector<double>> read_shp1(
    const std::filesystem::path& path);

}  // namespace lsopt
