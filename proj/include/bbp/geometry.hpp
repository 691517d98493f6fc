#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>

namespace bbp {

using Coord = std::int32_t;

template <std::size_t Dim>
using Coords = std::array<Coord, Dim>;

// Address in whole-domain coordinates.
template <std::size_t Dim>
struct GlobalAddress {
  Coords<Dim> c{};

  Coord operator[](std::size_t d) const { return c[d]; }
  Coord& operator[](std::size_t d) { return c[d]; }
  friend bool operator==(const GlobalAddress&, const GlobalAddress&) = default;
  friend auto operator<=>(const GlobalAddress&, const GlobalAddress&) = default;
};

// Address relative to a block origin. May lie outside the block.
template <std::size_t Dim>
struct LocalAddress {
  Coords<Dim> c{};

  Coord operator[](std::size_t d) const { return c[d]; }
  Coord& operator[](std::size_t d) { return c[d]; }
  friend bool operator==(const LocalAddress&, const LocalAddress&) = default;
};

template <std::size_t Dim>
std::ostream& operator<<(std::ostream& os, const GlobalAddress<Dim>& g) {
  os << "G(";
  for (std::size_t d = 0; d < Dim; ++d) os << (d ? "," : "") << g.c[d];
  return os << ")";
}

// Half-open axis-aligned box [origin, origin + size).
template <std::size_t Dim>
struct Box {
  Coords<Dim> origin{};
  Coords<Dim> size{};

  bool contains(const Coords<Dim>& p) const {
    for (std::size_t d = 0; d < Dim; ++d) {
      if (p[d] < origin[d] || p[d] >= origin[d] + size[d]) return false;
    }
    return true;
  }
  bool contains(const GlobalAddress<Dim>& g) const { return contains(g.c); }

  std::int64_t volume() const {
    std::int64_t v = 1;
    for (auto s : size) v *= s;
    return v;
  }

  bool intersects(const Box& o) const {
    for (std::size_t d = 0; d < Dim; ++d) {
      if (origin[d] + size[d] <= o.origin[d] || o.origin[d] + o.size[d] <= origin[d]) return false;
    }
    return true;
  }

  Box grown(Coord by) const {
    Box b = *this;
    for (std::size_t d = 0; d < Dim; ++d) {
      b.origin[d] -= by;
      b.size[d] += 2 * by;
    }
    return b;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

template <std::size_t Dim>
Box<Dim> bounding_union(const Box<Dim>& a, const Box<Dim>& b) {
  Box<Dim> r;
  for (std::size_t d = 0; d < Dim; ++d) {
    Coord lo = std::min(a.origin[d], b.origin[d]);
    Coord hi = std::max(a.origin[d] + a.size[d], b.origin[d] + b.size[d]);
    r.origin[d] = lo;
    r.size[d] = hi - lo;
  }
  return r;
}

// Region a virtual block answers for: `outer` (unbounded when absent) minus `hole`.
template <std::size_t Dim>
struct Coverage {
  std::optional<Box<Dim>> outer;
  std::optional<Box<Dim>> hole;

  static Coverage box(const Box<Dim>& b) { return {b, std::nullopt}; }
  static Coverage complement_of(const Box<Dim>& domain) { return {std::nullopt, domain}; }
  static Coverage ring(const Box<Dim>& domain, Coord thickness) {
    return {domain.grown(thickness), domain};
  }
  // Everything outside `domain` grown by `thickness`.
  static Coverage beyond(const Box<Dim>& domain, Coord thickness) {
    return {std::nullopt, domain.grown(thickness)};
  }

  bool covers(const GlobalAddress<Dim>& g) const {
    if (outer && !outer->contains(g)) return false;
    if (hole && hole->contains(g)) return false;
    return true;
  }
};

}  // namespace bbp
