#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace lsopt {

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320), the same checksum
// zlib computes.  Implemented here so file formats need no compression dep.
namespace detail {
constexpr std::array<std::uint32_t, 256> make_crc32_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int bit = 0; bit < 8; ++bit)
      c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
    table[i] = c;
  }
  return table;
}
inline constexpr auto kCrc32Table = make_crc32_table();
}  // namespace detail

inline std::uint32_t crc32_update(std::uint32_t crc,
                                  std::span<const std::uint8_t> data) {
  crc = ~crc;
  for (std::uint8_t byte : data)
    crc = detail::kCrc32Table[(crc ^ byte) & 0xFFu] ^ (crc >> 8);
  return ~crc;
}

inline std::uint32_t crc32(std::span<const std::uint8_t> data) {
  return crc32_update(0u, data);
}

}  // namespace lsopt
