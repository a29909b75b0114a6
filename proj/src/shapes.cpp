#include "lsopt/shapes.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "lsopt/crc32.hpp"
#include "lsopt/rng.hpp"

namespace lsopt {
namespace {

constexpr std::size_t kHeaderBytes = 16;
constexpr std::size_t kRecordBytes = BinaryImage::kPackedBytes + 8;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t at) {
  return static_cast<std::uint16_t>(in[at] | (in[at + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  return static_cast<std::uint32_t>(in[at]) |
         (static_cast<std::uint32_t>(in[at + 1]) << 8) |
         (static_cast<std::uint32_t>(in[at + 2]) << 16) |
         (static_cast<std::uint32_t>(in[at + 3]) << 24);
}

double get_f64(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i)
    bits = (bits << 8) | in[at + static_cast<std::size_t>(i)];
  return std::bit_cast<double>(bits);
}

}  // namespace

BinaryImage BinaryImage::from_packed(std::span<const std::uint8_t> packed) {
  if (packed.size() != kPackedBytes)
    throw InvalidInputError("BinaryImage: packed payload must be 512 bytes");
  BinaryImage image;
  std::memcpy(image.bytes_.data(), packed.data(), kPackedBytes);
  return image;
}

std::uint64_t BinaryImage::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a offset basis
  for (std::uint8_t byte : bytes_) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int area(const BinaryImage& image) {
  int total = 0;
  for (std::uint8_t byte : image.packed()) total += std::popcount(byte);
  return total;
}

WeightedDataset generate_squares_dataset(const SquaresDatasetConfig& config) {
  if (config.count < 1)
    throw InvalidInputError("generate_squares_dataset: count must be >= 1");
  if (config.min_side < 1 || config.min_side > config.max_side ||
      config.max_side > 20)
    throw InvalidInputError(
        "generate_squares_dataset: require 1 <= min_side <= max_side <= 20");

  WeightedDataset dataset;
  dataset.points.reserve(config.count);
  dataset.scores.reserve(config.count);
  const int side_choices = config.max_side - config.min_side + 1;
  for (std::size_t i = 0; i < config.count; ++i) {
    Rng rng(split_seed(config.rng_seed, i));  // per-index substream
    const int side =
        config.min_side + static_cast<int>(rng.next_index(side_choices));
    const int max_corner = BinaryImage::kWidth - side;  // inclusive
    const int top = static_cast<int>(rng.next_index(max_corner + 1));
    const int left = static_cast<int>(rng.next_index(max_corner + 1));
    BinaryImage image;
    for (int r = top; r < top + side; ++r)
      for (int c = left; c < left + side; ++c) image.set_pixel(r, c, true);
    dataset.points.push_back(image);
    dataset.scores.push_back(static_cast<double>(area(image)));
  }
  dataset.weights = {std::vector<double>(config.count, 1.0 / config.count),
                     Normalization::SumToOne};
  return dataset;
}

void write_shp1(const std::filesystem::path& path,
                std::span<const BinaryImage> images,
                std::span<const double> scores) {
  if (images.size() != scores.size())
    throw InvalidInputError("write_shp1: images/scores length mismatch");
  if (images.size() > 0xFFFFFFFFull)
    throw InvalidInputError("write_shp1: too many records for a u32 count");

  std::vector<std::uint8_t> payload;
  payload.reserve(images.size() * kRecordBytes);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& packed = images[i].packed();
    payload.insert(payload.end(), packed.begin(), packed.end());
    put_f64(payload, scores[i]);
  }

  std::vector<std::uint8_t> file;
  file.reserve(kHeaderBytes + payload.size());
  file.push_back('S');
  file.push_back('H');
  file.push_back('P');
  file.push_back('1');
  put_u32(file, static_cast<std::uint32_t>(images.size()));
  put_u16(file, BinaryImage::kWidth);
  put_u16(file, BinaryImage::kHeight);
  put_u32(file, crc32(payload));
  file.insert(file.end(), payload.begin(), payload.end());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error("write_shp1: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(file.data()),
            static_cast<std::streamsize>(file.size()));
  if (!out) throw Error("write_shp1: short write to " + path.string());
}

std::pair<std::vector<BinaryImage>, std::vector<double>> read_shp1(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_shp1: cannot open " + path.string());
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());

  if (file.size() < kHeaderBytes)
    throw FormatError("read_shp1: truncated header in " + path.string(),
                      file.size());
  if (std::memcmp(file.data(), "SHP1", 4) != 0)
    throw FormatError("read_shp1: bad magic in " + path.string(), 0);
  const std::uint32_t count = get_u32(file, 4);
  const std::uint16_t width = get_u16(file, 8);
  const std::uint16_t height = get_u16(file, 10);
  if (width != BinaryImage::kWidth)
    throw FormatError("read_shp1: unsupported width " + std::to_string(width), 8);
  if (height != BinaryImage::kHeight)
    throw FormatError("read_shp1: unsupported height " + std::to_string(height),
                      10);
  const std::uint32_t stored_crc = get_u32(file, 12);

  const std::size_t expected =
      kHeaderBytes + static_cast<std::size_t>(count) * kRecordBytes;
  if (file.size() != expected)
    throw FormatError("read_shp1: expected " + std::to_string(expected) +
                          " bytes, got " + std::to_string(file.size()),
                      std::min(file.size(), expected));

  const std::span<const std::uint8_t> payload(file.data() + kHeaderBytes,
                                              file.size() - kHeaderBytes);
  const std::uint32_t actual_crc = crc32(payload);
  if (actual_crc != stored_crc)
    throw FormatError("read_shp1: checksum mismatch in " + path.string(), 12);

  std::vector<BinaryImage> images;
  std::vector<double> scores;
  images.reserve(count);
  scores.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = kHeaderBytes + static_cast<std::size_t>(i) * kRecordBytes;
    images.push_back(BinaryImage::from_packed(
        std::span<const std::uint8_t>(file.data() + at, BinaryImage::kPackedBytes)));
    scores.push_back(get_f64(file, at + BinaryImage::kPackedBytes));
  }
  return {std::move(images), std::move(scores)};
}

}  // namespace lsopt
