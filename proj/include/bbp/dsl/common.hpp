#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "bbp/error.hpp"
#include "bbp/geometry.hpp"
#include "bbp/layers/zorder.hpp"
#include "bbp/runtime.hpp"

namespace bbp::dsl {

enum class InitPattern { Constant, HotSpot, Random };

inline InitPattern parse_init(const std::string& s) {
  if (s == "constant") return InitPattern::Constant;
  if (s == "hotspot") return InitPattern::HotSpot;
  if (s == "random") return InitPattern::Random;
  throw Error(ErrorCode::InvalidConfig, "unknown init pattern '" + s + "'");
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Initial value of grid point (x, y) on a w x h region. Pure, so every Env
// copy and the baselines agree.
inline double initial_value(InitPattern p, double value, std::uint64_t seed, Coord x, Coord y, Coord w, Coord h) {
  switch (p) {
    case InitPattern::Constant: return value;
    case InitPattern::HotSpot: {
      const Coord cx = w / 2, cy = h / 2, r = std::max<Coord>(1, std::min(w, h) / 8);
      const auto dx = static_cast<std::int64_t>(x - cx), dy = static_cast<std::int64_t>(y - cy);
      return dx * dx + dy * dy <= static_cast<std::int64_t>(r) * r ? value : 0.0;
    }
    case InitPattern::Random: {
      const std::uint64_t k = splitmix64(seed ^ splitmix64((static_cast<std::uint64_t>(y) << 32) | std::uint32_t(x)));
      return value * static_cast<double>(k >> 11) * 0x1.0p-53;
    }
  }
  return 0.0;
}

// Reassembles deposited 2-D blocks into one row-major array (index y*w+x).
template <class Item>
std::vector<Item> assemble(const std::vector<BlockSnapshot>& blocks, Coords<2> domain, Coords<2> block) {
  std::vector<Item> out(static_cast<std::size_t>(domain[0]) * domain[1]);
  const std::size_t bv = static_cast<std::size_t>(block[0]) * block[1];
  for (const auto& b : blocks) {
    if (b.bytes.size() != bv * sizeof(Item)) throw Error(ErrorCode::InvalidGeometry, "snapshot size mismatch");
    for (Coord j = 0; j < block[1]; ++j) {
      for (Coord i = 0; i < block[0]; ++i) {
        const std::size_t li = static_cast<std::size_t>(j) * block[0] + i;
        const std::size_t x = static_cast<std::size_t>(b.block_coord[0]) * block[0] + i;
        const std::size_t y = static_cast<std::size_t>(b.block_coord[1]) * block[1] + j;
        std::memcpy(&out[y * domain[0] + x], b.bytes.data() + li * sizeof(Item), sizeof(Item));
      }
    }
  }
  return out;
}

// Hash a row-major array exactly as the runtime hashes deposited blocks:
// blocks in zindex order, items in local linear order.
template <class Item>
std::uint64_t blocked_hash(const std::vector<Item>& dense, Coords<2> domain, Coords<2> block) {
  const Coord bx = domain[0] / block[0], by = domain[1] / block[1];
  std::vector<std::pair<std::uint64_t, Coords<2>>> order;
  for (Coord y = 0; y < by; ++y) {
    for (Coord x = 0; x < bx; ++x) {
      order.push_back({zorder_index(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)), {x, y}});
    }
  }
  std::sort(order.begin(), order.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<std::byte> tmp(sizeof(Item));
  for (const auto& [z, bc] : order) {
    for (Coord j = 0; j < block[1]; ++j) {
      for (Coord i = 0; i < block[0]; ++i) {
        const std::size_t x = static_cast<std::size_t>(bc[0]) * block[0] + i;
        const std::size_t y = static_cast<std::size_t>(bc[1]) * block[1] + j;
        std::memcpy(tmp.data(), &dense[y * domain[0] + x], sizeof(Item));
        h = fnv1a(tmp, h);
      }
    }
  }
  return h;
}

}  // namespace bbp::dsl
