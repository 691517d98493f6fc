#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <vector>

#include "bbp/dsl/common.hpp"
#include "bbp/dsl/sgrid.hpp"
#include "bbp/envtree.hpp"
#include "bbp/runtime.hpp"

namespace bbp::dsl {

// One grid point: its value and the global addresses of its neighbors in
// N, W, E, S order.
struct USGridItem {
  double value = 0.0;
  std::array<std::array<std::int32_t, 2>, 4> nbr{};

  static USGridItem poison() {
    USGridItem it;
    it.value = std::numeric_limits<double>::quiet_NaN();
    return it;
  }
};
static_assert(sizeof(USGridItem) == 40);

enum class USGridCase { C, R };

struct USGridParams {
  Coord width = 256;
  Coord height = 256;
  Coord block_x = 256;
  Coord block_y = 256;
  std::size_t items_per_page = 256;
  double alpha = 0.0;
  double beta = 0.25;
  double boundary = 0.0;
  InitPattern init = InitPattern::HotSpot;
  double init_value = 1.0;
  std::uint64_t seed = 1;
  USGridCase topology = USGridCase::C;
  // Seed of the point permutation; 0 is the identity.
  std::uint64_t perm_seed = 12345;
  std::size_t loops = 10;
  std::size_t pool_bytes = 300u << 20;
  std::size_t chunk_bytes = MemoryPool::kDefaultChunkBytes;

  Coords<2> domain() const { return {width, height}; }
  Coords<2> block() const { return {block_x, block_y}; }
  double initial(Coord x, Coord y) const { return initial_value(init, init_value, seed, x, y, width, height); }

  SGridParams as_sgrid() const {
    SGridParams s;
    s.width = width;
    s.height = height;
    s.block_x = block_x;
    s.block_y = block_y;
    s.items_per_page = items_per_page;
    s.alpha = alpha;
    s.beta = beta;
    s.boundary = boundary;
    s.init = init;
    s.init_value = init_value;
    s.seed = seed;
    s.loops = loops;
    s.pool_bytes = pool_bytes;
    s.chunk_bytes = chunk_bytes;
    return s;
  }
};

// Seeded Fisher-Yates permutation of point ids; perm[p] is where point p is
// stored. Seed 0 gives the identity.
inline std::vector<std::uint32_t> caser_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::uint32_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
  if (seed == 0) return perm;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i-- > 1;) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

// Neighbor table indexed by storage position, plus the inverse map.
struct USGridTopology {
  Coord width = 0;
  Coord height = 0;
  std::vector<std::uint32_t> perm;
  std::vector<std::uint32_t> inverse;

  std::uint32_t id(Coord x, Coord y) const { return static_cast<std::uint32_t>(y) * width + x; }
  bool inside(Coord x, Coord y) const { return x >= 0 && y >= 0 && x < width && y < height; }

  // Stored address of lattice point (x, y); out-of-region points keep their
  // own coordinates so the boundary block answers for them.
  std::array<std::int32_t, 2> address(Coord x, Coord y) const {
    if (!inside(x, y)) return {x, y};
    const std::uint32_t q = perm[id(x, y)];
    return {static_cast<std::int32_t>(q % width), static_cast<std::int32_t>(q / width)};
  }

  // The item stored at position (qx, qy), apart from its value.
  std::array<std::array<std::int32_t, 2>, 4> neighbors_at(Coord qx, Coord qy) const {
    const std::uint32_t p = inverse[id(qx, qy)];
    const Coord x = static_cast<Coord>(p % width), y = static_cast<Coord>(p / width);
    return {address(x, y - 1), address(x - 1, y), address(x + 1, y), address(x, y + 1)};
  }
  std::array<Coord, 2> lattice_of(Coord qx, Coord qy) const {
    const std::uint32_t p = inverse[id(qx, qy)];
    return {static_cast<Coord>(p % width), static_cast<Coord>(p / width)};
  }
};

inline USGridTopology caser_topology(Coord width, Coord height, std::uint64_t seed) {
  USGridTopology t;
  t.width = width;
  t.height = height;
  t.perm = caser_permutation(static_cast<std::size_t>(width) * height, seed);
  t.inverse.resize(t.perm.size());
  for (std::size_t p = 0; p < t.perm.size(); ++p) t.inverse[t.perm[p]] = static_cast<std::uint32_t>(p);
  return t;
}

inline USGridTopology usgrid_topology(const USGridParams& p) {
  return caser_topology(p.width, p.height, p.topology == USGridCase::C ? 0 : p.perm_seed);
}

// Mean |id(a) - id(b)| over lattice edges, in storage positions.
inline double locality_metric(const USGridTopology& t) {
  double sum = 0;
  std::size_t edges = 0;
  for (Coord y = 0; y < t.height; ++y) {
    for (Coord x = 0; x < t.width; ++x) {
      const double a = t.perm[t.id(x, y)];
      if (x + 1 < t.width) {
        sum += std::abs(a - static_cast<double>(t.perm[t.id(x + 1, y)]));
        ++edges;
      }
      if (y + 1 < t.height) {
        sum += std::abs(a - static_cast<double>(t.perm[t.id(x, y + 1)]));
        ++edges;
      }
    }
  }
  return edges ? sum / static_cast<double>(edges) : 0.0;
}

inline USGridItem usgrid_initial_item(const USGridParams& p, const USGridTopology& t, Coord qx, Coord qy) {
  USGridItem it;
  const auto l = t.lattice_of(qx, qy);
  it.value = p.initial(l[0], l[1]);
  it.nbr = t.neighbors_at(qx, qy);
  return it;
}

// Same arithmetic as SGrid, every neighbor read through its stored address.
class USGridApp : public Application<USGridItem, 2> {
 public:
  explicit USGridApp(USGridParams p) : p_(p), topo_(usgrid_topology(p)) {}

  std::size_t loops() const override { return p_.loops; }

  std::unique_ptr<Env<USGridItem, 2>> build_env() override {
    StorageConfig sc;
    sc.pool_bytes = p_.pool_bytes;
    sc.chunk_bytes = p_.chunk_bytes;
    sc.items_per_page = p_.items_per_page;
    VirtualSpec<USGridItem, 2> wall;
    wall.kind = BlockKind::StaticData;
    wall.coverage = Coverage<2>::complement_of(Box<2>{{0, 0}, p_.domain()});
    StaticTable<USGridItem, 2> table;
    table.fallback.value = p_.boundary;
    wall.payload = std::move(table);
    wall.label = "boundary";
    std::vector<VirtualSpec<USGridItem, 2>> boundary;
    boundary.push_back(std::move(wall));
    return std::make_unique<Env<USGridItem, 2>>(p_.domain(), p_.block(), sc, std::move(boundary));
  }

  void initialize(TaskT& t) override {
    auto& env = t.env();
    for (BlockId b : t.get_blocks()) {
      const auto& o = env.origin(b);
      for (Coord j = 0; j < p_.block_y; ++j) {
        for (Coord i = 0; i < p_.block_x; ++i) {
          env.init_item(b, {{i, j}}, usgrid_initial_item(p_, topo_, o[0] + i, o[1] + j));
        }
      }
    }
  }

  bool kernel(TaskT& t) override {
    for (BlockId el : t.get_blocks()) {
      auto v = t.view(el);
      for (Coord j = 0; j < p_.block_y; ++j) {
        for (Coord i = 0; i < p_.block_x; ++i) {
          USGridItem self = v.get_local({{i, j}});
          const double e_n = v.get_global({{self.nbr[0][0], self.nbr[0][1]}}).value;
          const double e_w = v.get_global({{self.nbr[1][0], self.nbr[1][1]}}).value;
          const double e = self.value;
          const double e_e = v.get_global({{self.nbr[2][0], self.nbr[2][1]}}).value;
          const double e_s = v.get_global({{self.nbr[3][0], self.nbr[3][1]}}).value;
          self.value = stencil(p_.alpha, p_.beta, e, e_e, e_w, e_s, e_n);
          v.set({{i, j}}, self);
        }
      }
    }
    return t.refresh();
  }

 private:
  USGridParams p_;
  USGridTopology topo_;
};

// Dense double-buffered serial implementation over storage positions.
class USGridBaseline {
 public:
  explicit USGridBaseline(const USGridParams& p) : p_(p), topo_(usgrid_topology(p)) {
    const std::size_t n = static_cast<std::size_t>(p.width) * p.height;
    buf_[0].resize(n);
    for (Coord y = 0; y < p.height; ++y) {
      for (Coord x = 0; x < p.width; ++x) buf_[0][idx(x, y)] = usgrid_initial_item(p, topo_, x, y);
    }
    buf_[1] = buf_[0];
  }

  USGridItem get(std::array<std::int32_t, 2> a) const {
    if (!topo_.inside(a[0], a[1])) {
      USGridItem b;
      b.value = p_.boundary;
      return b;
    }
    return buf_[read_][idx(a[0], a[1])];
  }

  void step() {
    for (Coord y = 0; y < p_.height; ++y) {
      for (Coord x = 0; x < p_.width; ++x) {
        USGridItem self = buf_[read_][idx(x, y)];
        const double e_n = get(self.nbr[0]).value;
        const double e_w = get(self.nbr[1]).value;
        const double e = self.value;
        const double e_e = get(self.nbr[2]).value;
        const double e_s = get(self.nbr[3]).value;
        self.value = stencil(p_.alpha, p_.beta, e, e_e, e_w, e_s, e_n);
        buf_[1 - read_][idx(x, y)] = self;
      }
    }
    read_ = 1 - read_;
  }

  void run(std::size_t steps) {
    for (std::size_t s = 0; s < steps; ++s) step();
  }

  const std::vector<USGridItem>& state() const { return buf_[read_]; }
  const USGridTopology& topology() const { return topo_; }

 private:
  std::size_t idx(Coord x, Coord y) const { return static_cast<std::size_t>(y) * p_.width + x; }

  USGridParams p_;
  USGridTopology topo_;
  std::vector<USGridItem> buf_[2];
  int read_ = 0;
};

inline std::vector<USGridItem> usgrid_baseline(const USGridParams& p) {
  USGridBaseline b(p);
  b.run(p.loops);
  return b.state();
}

inline RunResult<USGridItem, 2> run_usgrid(const USGridParams& p, const LayerStack& stack,
                                          const RuntimeOptions& opts = {}) {
  return run<USGridApp>([&] { return std::make_unique<USGridApp>(p); }, stack, opts);
}

// Values in lattice order, undoing the storage permutation.
inline std::vector<double> usgrid_lattice_values(const std::vector<USGridItem>& dense, const USGridTopology& t) {
  std::vector<double> out(dense.size());
  for (std::size_t p = 0; p < dense.size(); ++p) out[p] = dense[t.perm[p]].value;
  return out;
}

}  // namespace bbp::dsl
