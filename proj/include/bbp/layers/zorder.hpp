#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bbp/error.hpp"

namespace bbp {

namespace detail {

// Spread the low 32 bits of v so bit i lands at bit 2i.
constexpr std::uint64_t spread2(std::uint64_t v) {
  v &= 0xffffffffULL;
  v = (v | (v << 16)) & 0x0000ffff0000ffffULL;
  v = (v | (v << 8)) & 0x00ff00ff00ff00ffULL;
  v = (v | (v << 4)) & 0x0f0f0f0f0f0f0f0fULL;
  v = (v | (v << 2)) & 0x3333333333333333ULL;
  v = (v | (v << 1)) & 0x5555555555555555ULL;
  return v;
}

// Spread the low 21 bits of v so bit i lands at bit 3i.
constexpr std::uint64_t spread3(std::uint64_t v) {
  v &= 0x1fffffULL;
  v = (v | (v << 32)) & 0x001f00000000ffffULL;
  v = (v | (v << 16)) & 0x001f0000ff0000ffULL;
  v = (v | (v << 8)) & 0x100f00f00f00f00fULL;
  v = (v | (v << 4)) & 0x10c30c30c30c30c3ULL;
  v = (v | (v << 2)) & 0x1249249249249249ULL;
  return v;
}

}  // namespace detail

// Morton code of a block coordinate, x in the lowest bit.
constexpr std::uint64_t zorder_index(std::span<const std::uint32_t> coords) {
  switch (coords.size()) {
    case 0: return 0;
    case 1: return coords[0];
    case 2: return detail::spread2(coords[0]) | (detail::spread2(coords[1]) << 1);
    case 3:
      return detail::spread3(coords[0]) | (detail::spread3(coords[1]) << 1) |
             (detail::spread3(coords[2]) << 2);
    default: break;
  }
  // Generic interleave for higher dimensions; stops at 64 output bits.
  std::uint64_t z = 0;
  const std::size_t n = coords.size();
  for (std::size_t bit = 0; bit * n < 64; ++bit) {
    for (std::size_t d = 0; d < n && bit * n + d < 64; ++d) {
      z |= ((std::uint64_t{coords[d]} >> bit) & 1U) << (bit * n + d);
    }
  }
  return z;
}

constexpr std::uint64_t zorder_index(std::uint32_t x, std::uint32_t y) {
  const std::uint32_t c[2] = {x, y};
  return zorder_index(std::span<const std::uint32_t>(c, 2));
}

struct ZBlock {
  std::uint32_t id = 0;
  std::uint64_t zindex = 0;
};

// Sort by zindex and cut into `parallelism` contiguous runs whose sizes differ
// by at most one; earlier runs take the remainder.
inline std::vector<std::vector<std::uint32_t>> assign_blocks(std::vector<ZBlock> blocks,
                                                             std::size_t parallelism) {
  if (parallelism == 0) throw Error(ErrorCode::InvalidConfig, "parallelism must be >= 1");
  std::stable_sort(blocks.begin(), blocks.end(),
                   [](const ZBlock& a, const ZBlock& b) { return a.zindex < b.zindex; });
  std::vector<std::vector<std::uint32_t>> out(parallelism);
  const std::size_t base = blocks.size() / parallelism;
  const std::size_t extra = blocks.size() % parallelism;
  std::size_t cursor = 0;
  for (std::size_t t = 0; t < parallelism; ++t) {
    const std::size_t n = base + (t < extra ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) out[t].push_back(blocks[cursor++].id);
  }
  return out;
}

}  // namespace bbp
