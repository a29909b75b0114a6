#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "doctest.h"
#include "lsopt/rng.hpp"
#include "lsopt/shapes.hpp"

using namespace lsopt;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "lsopt_shapes_tests";
  fs::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  REQUIRE(out.good());
}

BinaryImage random_image(Rng& rng, double fill = 0.5) {
  BinaryImage img;
  for (int r = 0; r < BinaryImage::kHeight; ++r)
    for (int c = 0; c < BinaryImage::kWidth; ++c)
      if (rng.next_unit() < fill) img.set_pixel(r, c, true);
  return img;
}

}  // namespace

TEST_SUITE_BEGIN("shapes");

TEST_CASE("area: closed-form oracles") {
  BinaryImage empty;
  CHECK(area(empty) == 0);

  BinaryImage square;  // 20x20 filled block anywhere scores 400
  for (int r = 11; r < 31; ++r)
    for (int c = 40; c < 60; ++c) square.set_pixel(r, c, true);
  CHECK(area(square) == 400);

  BinaryImage full;
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) full.set_pixel(r, c, true);
  CHECK(area(full) == 4096);
}

TEST_CASE("area: matches a per-pixel loop on 1000 random images") {
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const BinaryImage img = random_image(rng, 0.05 + 0.9 * rng.next_unit());
    int manual = 0;
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) manual += img.pixel(r, c) ? 1 : 0;
    REQUIRE(area(img) == manual);
  }
}

TEST_CASE("area: invariant under pixel permutations") {
  Rng rng(5);
  std::mt19937_64 shuffler(99);
  for (int rep = 0; rep < 20; ++rep) {
    const BinaryImage img = random_image(rng, 0.3);
    std::vector<bool> bits(BinaryImage::kPixelCount);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) bits[r * 64 + c] = img.pixel(r, c);
    std::shuffle(bits.begin(), bits.end(), shuffler);
    BinaryImage permuted;
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) permuted.set_pixel(r, c, bits[r * 64 + c]);
    CHECK(area(permuted) == area(img));
  }
}

TEST_CASE("generate_squares_dataset: every image is one filled square") {
  SquaresDatasetConfig config;
  config.count = 500;
  config.min_side = 1;
  config.max_side = 20;
  config.rng_seed = 3;
  const WeightedDataset data = generate_squares_dataset(config);
  REQUIRE(data.size() == 500);
  REQUIRE(data.scores.size() == 500);
  REQUIRE(data.weights.values.size() == 500);

  for (std::size_t i = 0; i < data.size(); ++i) {
    const BinaryImage& img = data.points[i];
    // Bounding box of the on-pixels.
    int rmin = 64, rmax = -1, cmin = 64, cmax = -1, count = 0;
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c)
        if (img.pixel(r, c)) {
          ++count;
          rmin = std::min(rmin, r);
          rmax = std::max(rmax, r);
          cmin = std::min(cmin, c);
          cmax = std::max(cmax, c);
        }
    REQUIRE(count > 0);
    const int h = rmax - rmin + 1;
    const int w = cmax - cmin + 1;
    REQUIRE(h == w);                 // square bounding box
    REQUIRE(count == h * w);         // fully filled
    REQUIRE(h >= config.min_side);
    REQUIRE(h <= config.max_side);
    REQUIRE(data.scores[i] == static_cast<double>(count));  // score is area
    REQUIRE(data.weights.values[i] == 1.0 / 500.0);         // uniform init
  }
}

TEST_CASE("generate_squares_dataset: fixed side 20 pins area and corners") {
  SquaresDatasetConfig config;
  config.count = 2000;
  config.min_side = 20;
  config.max_side = 20;
  config.rng_seed = 11;
  const WeightedDataset data = generate_squares_dataset(config);

  int corner_min_r = 64, corner_max_r = -1, corner_min_c = 64, corner_max_c = -1;
  for (const BinaryImage& img : data.points) {
    REQUIRE(area(img) == 400);
    int rmin = 64, cmin = 64;
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c)
        if (img.pixel(r, c)) {
          rmin = std::min(rmin, r);
          cmin = std::min(cmin, c);
        }
    // With side 20, valid top-left corners span [0, 44]^2 — (64-s+1)^2 choices.
    CHECK(rmin >= 0);
    CHECK(rmin <= 44);
    CHECK(cmin >= 0);
    CHECK(cmin <= 44);
    corner_min_r = std::min(corner_min_r, rmin);
    corner_max_r = std::max(corner_max_r, rmin);
    corner_min_c = std::min(corner_min_c, cmin);
    corner_max_c = std::max(corner_max_c, cmin);
  }
  // 2000 draws over 45 values per axis: extremes show up with overwhelming
  // probability; missing both ends would indicate a biased position draw.
  CHECK(corner_min_r == 0);
  CHECK(corner_max_r == 44);
  CHECK(corner_min_c == 0);
  CHECK(corner_max_c == 44);
}

TEST_CASE("generate_squares_dataset: count=1 and max area bound") {
  SquaresDatasetConfig one;
  one.count = 1;
  one.min_side = 20;
  one.max_side = 20;
  const WeightedDataset single = generate_squares_dataset(one);
  REQUIRE(single.size() == 1);
  CHECK(area(single.points[0]) == 400);

  SquaresDatasetConfig many;
  many.count = 10000;
  many.rng_seed = 1;
  const WeightedDataset data = generate_squares_dataset(many);
  double best = 0.0;
  for (double s : data.scores) best = std::max(best, s);
  CHECK(best <= 400.0);   // max_side 20 caps the objective at 400
  CHECK(best >= 361.0);   // side 19+ shows up in 10k draws w.h.p.
}

TEST_CASE("generate_squares_dataset: per-index substreams give prefix stability") {
  SquaresDatasetConfig small;
  small.count = 50;
  small.rng_seed = 77;
  SquaresDatasetConfig large = small;
  large.count = 200;
  const WeightedDataset a = generate_squares_dataset(small);
  const WeightedDataset b = generate_squares_dataset(large);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.points[i] == b.points[i]);
    CHECK(a.scores[i] == b.scores[i]);
  }
}

TEST_CASE("generate_squares_dataset: validation") {
  SquaresDatasetConfig config;
  config.count = 0;
  CHECK_THROWS_AS(generate_squares_dataset(config), InvalidInputError);
  config.count = 1;
  config.min_side = 0;
  CHECK_THROWS_AS(generate_squares_dataset(config), InvalidInputError);
  config.min_side = 10;
  config.max_side = 9;
  CHECK_THROWS_AS(generate_squares_dataset(config), InvalidInputError);
  config.min_side = 1;
  config.max_side = 65;
  CHECK_THROWS_AS(generate_squares_dataset(config), InvalidInputError);
}

TEST_CASE("shp1: empty round-trip and size formula") {
  const fs::path path = temp_dir() / "empty.shp1";
  write_shp1(path, {}, {});
  CHECK(fs::file_size(path) == 16);
  const auto [images, scores] = read_shp1(path);
  CHECK(images.empty());
  CHECK(scores.empty());

  Rng rng(1);
  std::vector<BinaryImage> three{random_image(rng), random_image(rng),
                                 random_image(rng)};
  std::vector<double> vals{1.0, -2.5, 4096.0};
  const fs::path path3 = temp_dir() / "three.shp1";
  write_shp1(path3, three, vals);
  CHECK(fs::file_size(path3) == 16 + 3 * 520);

  const auto [back_images, back_scores] = read_shp1(path3);
  REQUIRE(back_images.size() == 3);
  CHECK(back_images[0] == three[0]);
  CHECK(back_images[1] == three[1]);
  CHECK(back_images[2] == three[2]);
  CHECK(back_scores == vals);
}

TEST_CASE("shp1: all-ones image serializes as 512 0xFF payload bytes") {
  BinaryImage full;
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) full.set_pixel(r, c, true);
  const fs::path path = temp_dir() / "full.shp1";
  write_shp1(path, std::vector<BinaryImage>{full}, std::vector<double>{4096.0});
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  REQUIRE(bytes.size() == 16 + 520);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SHP1");
  for (std::size_t i = 16; i < 16 + 512; ++i) REQUIRE(bytes[i] == 0xFF);
}

TEST_CASE("shp1: same seed writes a byte-identical file") {
  SquaresDatasetConfig config;
  config.count = 64;
  config.rng_seed = 123;
  const WeightedDataset a = generate_squares_dataset(config);
  const WeightedDataset b = generate_squares_dataset(config);
  const fs::path pa = temp_dir() / "det_a.shp1";
  const fs::path pb = temp_dir() / "det_b.shp1";
  write_shp1(pa, a.points, a.scores);
  write_shp1(pb, b.points, b.scores);
  CHECK(read_bytes(pa) == read_bytes(pb));

  config.rng_seed = 124;
  const WeightedDataset c = generate_squares_dataset(config);
  const fs::path pc = temp_dir() / "det_c.shp1";
  write_shp1(pc, c.points, c.scores);
  CHECK(read_bytes(pa) != read_bytes(pc));
}

TEST_CASE("shp1: corruption is rejected with the failing byte offset") {
  Rng rng(9);
  std::vector<BinaryImage> imgs{random_image(rng), random_image(rng)};
  std::vector<double> vals{3.0, 7.0};
  const fs::path good = temp_dir() / "good.shp1";
  write_shp1(good, imgs, vals);
  const std::vector<std::uint8_t> bytes = read_bytes(good);
  const fs::path bad = temp_dir() / "bad.shp1";

  SUBCASE("bad magic -> offset 0") {
    std::vector<std::uint8_t> mutated = bytes;
    mutated[0] = 'X';
    write_bytes(bad, mutated);
    try {
      read_shp1(bad);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.byte_offset() == 0);
    }
  }
  SUBCASE("bad width -> offset 8") {
    std::vector<std::uint8_t> mutated = bytes;
    mutated[8] = 63;  // little-endian u16 width
    mutated[9] = 0;
    write_bytes(bad, mutated);
    try {
      read_shp1(bad);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.byte_offset() == 8);
    }
  }
  SUBCASE("bad height -> offset 10") {
    std::vector<std::uint8_t> mutated = bytes;
    mutated[10] = 32;
    mutated[11] = 0;
    write_bytes(bad, mutated);
    try {
      read_shp1(bad);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.byte_offset() == 10);
    }
  }
  SUBCASE("payload flip -> checksum mismatch at offset 12") {
    std::vector<std::uint8_t> mutated = bytes;
    mutated[100] ^= 0x01;
    write_bytes(bad, mutated);
    try {
      read_shp1(bad);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.byte_offset() == 12);
    }
  }
  SUBCASE("truncated payload") {
    std::vector<std::uint8_t> mutated = bytes;
    mutated.resize(mutated.size() - 8);
    write_bytes(bad, mutated);
    CHECK_THROWS_AS(read_shp1(bad), FormatError);
  }
  SUBCASE("truncated header") {
    std::vector<std::uint8_t> mutated(bytes.begin(), bytes.begin() + 10);
    write_bytes(bad, mutated);
    CHECK_THROWS_AS(read_shp1(bad), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_shp1(temp_dir() / "no_such.shp1"), Error);
  }
}

TEST_CASE("from_packed and pixel bounds") {
  std::vector<std::uint8_t> wrong(511, 0);
  CHECK_THROWS_AS(BinaryImage::from_packed(wrong), InvalidInputError);

  Rng rng(2);
  const BinaryImage img = random_image(rng);
  const BinaryImage copy = BinaryImage::from_packed(img.packed());
  CHECK(copy == img);

  CHECK_THROWS_AS(img.pixel(-1, 0), InvalidInputError);
  CHECK_THROWS_AS(img.pixel(0, 64), InvalidInputError);
  CHECK_THROWS_AS(img.pixel(64, 0), InvalidInputError);
}

TEST_CASE("content_hash: stable, equality-consistent, discriminating") {
  Rng rng(4);
  const BinaryImage a = random_image(rng);
  const BinaryImage b = BinaryImage::from_packed(a.packed());
  CHECK(a.content_hash() == a.content_hash());
  CHECK(a.content_hash() == b.content_hash());
  BinaryImage c = a;
  c.set_pixel(10, 10, !a.pixel(10, 10));
  CHECK(c.content_hash() != a.content_hash());
}

TEST_SUITE_END();
