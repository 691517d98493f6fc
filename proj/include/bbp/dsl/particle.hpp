#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "bbp/dsl/common.hpp"
#include "bbp/envtree.hpp"
#include "bbp/runtime.hpp"

namespace bbp::dsl {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

struct Particle {
  std::uint64_t id = 0;
  Vec3 pos, vel, acc;
};

inline constexpr std::size_t kBucketCapacity = 16;

struct Bucket {
  std::uint32_t count = 0;
  std::uint32_t reserved = 0;
  std::array<Particle, kBucketCapacity> p{};

  static Bucket poison() { return Bucket{}; }
};
static_assert(sizeof(Bucket) == 8 + kBucketCapacity * 80);

struct ParticleParams {
  Coord buckets_x = 32;
  Coord buckets_y = 32;
  Coord block_x = 8;
  Coord block_y = 8;
  std::size_t items_per_page = 8;
  std::size_t per_bucket = kBucketCapacity;
  double dt = 1e-3;
  double radius = 1.0;  // cut-off, equal to the bucket width
  double stiffness = 1.0;
  double jitter = 0.05;
  double speed = 0.01;
  bool walls = true;
  std::size_t wall_per_bucket = 4;
  std::uint64_t seed = 1;
  std::size_t loops = 10;
  std::size_t pool_bytes = 300u << 20;
  std::size_t chunk_bytes = MemoryPool::kDefaultChunkBytes;
  // Replaces the default fill of interior bucket (bx, by) when set.
  std::function<void(Coord, Coord, Bucket&)> fill;

  Coords<2> domain() const { return {buckets_x, buckets_y}; }
  Coords<2> block() const { return {block_x, block_y}; }

  // Square bucket grid holding `n` particles at `per_bucket` each.
  static ParticleParams for_count(std::size_t n, std::size_t per_bucket = kBucketCapacity) {
    ParticleParams p;
    if (per_bucket == 0 || per_bucket > kBucketCapacity || n % per_bucket != 0) {
      throw Error(ErrorCode::InvalidConfig, "particle count must be a multiple of the bucket fill");
    }
    const std::size_t buckets = n / per_bucket;
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(buckets))));
    if (side * side != buckets || side % 8 != 0) {
      throw Error(ErrorCode::InvalidConfig, "particle count " + std::to_string(n) +
                                                " does not fill a square grid of 8x8-bucket blocks");
    }
    p.per_bucket = per_bucket;
    p.buckets_x = p.buckets_y = static_cast<Coord>(side);
    return p;
  }
};

namespace detail {

inline double unit(std::uint64_t seed, std::uint64_t key) {
  return static_cast<double>(splitmix64(seed ^ splitmix64(key)) >> 11) * 0x1.0p-53;
}

inline Bucket default_fill(const ParticleParams& p, Coord bx, Coord by) {
  Bucket b;
  const std::size_t n = p.per_bucket;
  std::size_t side = 1;
  while (side * side < n) ++side;
  const double cell = 1.0 / static_cast<double>(side);
  const std::uint64_t base = (static_cast<std::uint64_t>(by) * p.buckets_x + bx) * kBucketCapacity;
  for (std::size_t k = 0; k < n; ++k) {
    Particle& q = b.p[k];
    q.id = base + k;
    const double jx = (unit(p.seed, q.id * 4 + 0) * 2 - 1) * p.jitter;
    const double jy = (unit(p.seed, q.id * 4 + 1) * 2 - 1) * p.jitter;
    q.pos.x = bx + (static_cast<double>(k % side) + 0.5) * cell + jx;
    q.pos.y = by + (static_cast<double>(k / side) + 0.5) * cell + jy;
    q.vel.x = (unit(p.seed, q.id * 4 + 2) * 2 - 1) * p.speed;
    q.vel.y = (unit(p.seed, q.id * 4 + 3) * 2 - 1) * p.speed;
  }
  b.count = static_cast<std::uint32_t>(n);
  return b;
}

inline Bucket wall_bucket(const ParticleParams& p, Coord bx, Coord by) {
  Bucket b;
  const std::size_t n = std::min(p.wall_per_bucket, kBucketCapacity);
  std::size_t side = 1;
  while (side * side < n) ++side;
  const double cell = 1.0 / static_cast<double>(side);
  const std::uint64_t base =
      (std::uint64_t{1} << 48) + (static_cast<std::uint64_t>(by + 1) * (p.buckets_x + 2) + (bx + 1)) * kBucketCapacity;
  for (std::size_t k = 0; k < n; ++k) {
    b.p[k].id = base + k;
    b.p[k].pos.x = bx + (static_cast<double>(k % side) + 0.5) * cell;
    b.p[k].pos.y = by + (static_cast<double>(k / side) + 0.5) * cell;
  }
  b.count = static_cast<std::uint32_t>(n);
  return b;
}

// Accumulates the repulsive force on `a` from every particle of `other`,
// in slot order.
inline void accumulate(const ParticleParams& p, const Particle& a, const Bucket& other, Vec3& f) {
  for (std::uint32_t s = 0; s < other.count; ++s) {
    const Particle& b = other.p[s];
    if (b.id == a.id) continue;
    const double dx = a.pos.x - b.pos.x, dy = a.pos.y - b.pos.y, dz = a.pos.z - b.pos.z;
    const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
    if (r <= 0.0 || r >= p.radius) continue;
    const double q = 1.0 - r / p.radius;
    const double w = p.stiffness * q * q / r;
    f.x += w * dx;
    f.y += w * dy;
    f.z += w * dz;
  }
}

// New state of bucket `self` given its 3x3 neighborhood in row-major order
// (dy = -1..1, dx = -1..1). Returns false if a particle left the bucket.
inline bool advance(const ParticleParams& p, Coord bx, Coord by, const std::array<Bucket, 9>& hood, Bucket& out) {
  out = hood[4];
  bool inside = true;
  for (std::uint32_t s = 0; s < out.count; ++s) {
    Particle& a = out.p[s];
    Vec3 f;
    for (const Bucket& nb : hood) accumulate(p, hood[4].p[s], nb, f);
    a.acc = f;
    a.vel.x += a.acc.x * p.dt;
    a.vel.y += a.acc.y * p.dt;
    a.vel.z += a.acc.z * p.dt;
    a.pos.x += a.vel.x * p.dt;
    a.pos.y += a.vel.y * p.dt;
    a.pos.z += a.vel.z * p.dt;
    if (a.pos.x < bx || a.pos.x >= bx + 1 || a.pos.y < by || a.pos.y >= by + 1) inside = false;
  }
  return inside;
}

inline Error overflow(Coord bx, Coord by) {
  return Error(ErrorCode::BucketOverflow,
               "a particle left bucket (" + std::to_string(bx) + "," + std::to_string(by) + "); reduce dt");
}

}  // namespace detail

inline Bucket initial_bucket(const ParticleParams& p, Coord bx, Coord by) {
  if (p.fill) {
    Bucket b;
    p.fill(bx, by, b);
    return b;
  }
  return detail::default_fill(p, bx, by);
}

// Bucketed particle method; particles never change bucket.
class ParticleApp : public Application<Bucket, 2> {
 public:
  explicit ParticleApp(ParticleParams p) : p_(std::move(p)) {}

  std::size_t loops() const override { return p_.loops; }

  std::unique_ptr<Env<Bucket, 2>> build_env() override {
    StorageConfig sc;
    sc.pool_bytes = p_.pool_bytes;
    sc.chunk_bytes = p_.chunk_bytes;
    sc.items_per_page = p_.items_per_page;
    const Box<2> domain{{0, 0}, p_.domain()};

    VirtualSpec<Bucket, 2> wall;
    wall.kind = BlockKind::StaticData;
    wall.coverage = Coverage<2>::ring(domain, 1);
    StaticTable<Bucket, 2> table;
    if (p_.walls) {
      for (Coord y = -1; y <= p_.buckets_y; ++y) {
        for (Coord x = -1; x <= p_.buckets_x; ++x) {
          if (domain.contains(GlobalAddress<2>{{x, y}})) continue;
          table.entries[{x, y}] = detail::wall_bucket(p_, x, y);
        }
      }
    }
    wall.payload = std::move(table);
    wall.label = "walls";

    VirtualSpec<Bucket, 2> dummy;
    dummy.kind = BlockKind::Arithmetic;
    dummy.coverage = Coverage<2>::beyond(domain, 1);
    dummy.payload = ArithmeticExpr<Bucket, 2>::constant(Bucket{});
    dummy.label = "dummy";

    std::vector<VirtualSpec<Bucket, 2>> boundary;
    boundary.push_back(std::move(wall));
    boundary.push_back(std::move(dummy));
    return std::make_unique<Env<Bucket, 2>>(p_.domain(), p_.block(), sc, std::move(boundary));
  }

  void initialize(TaskT& t) override {
    auto& env = t.env();
    for (BlockId b : t.get_blocks()) {
      const auto& o = env.origin(b);
      for (Coord j = 0; j < p_.block_y; ++j) {
        for (Coord i = 0; i < p_.block_x; ++i) env.init_item(b, {{i, j}}, initial_bucket(p_, o[0] + i, o[1] + j));
      }
    }
  }

  bool kernel(TaskT& t) override {
    for (BlockId el : t.get_blocks()) {
      auto v = t.view(el);
      const auto& o = v.origin();
      for (Coord j = 0; j < p_.block_y; ++j) {
        for (Coord i = 0; i < p_.block_x; ++i) {
          const auto missed_before = t.access().counters.missing_reads;
          std::array<Bucket, 9> hood;
          std::size_t k = 0;
          for (Coord dy = -1; dy <= 1; ++dy) {
            for (Coord dx = -1; dx <= 1; ++dx) {
              const Coord x = i + dx, y = j + dy;
              hood[k++] = v.get({{x, y}}, x >= 0 && y >= 0 && x < p_.block_x && y < p_.block_y);
            }
          }
          Bucket out;
          const bool ok = detail::advance(p_, o[0] + i, o[1] + j, hood, out);
          // A bucket computed from absent pages is discarded with the step.
          if (!ok && t.access().counters.missing_reads == missed_before) throw detail::overflow(o[0] + i, o[1] + j);
          v.set({{i, j}}, out);
        }
      }
    }
    return t.refresh();
  }

 private:
  ParticleParams p_;
};

// Dense double-buffered serial implementation.
class ParticleBaseline {
 public:
  explicit ParticleBaseline(const ParticleParams& p) : p_(p) {
    const std::size_t n = static_cast<std::size_t>(p.buckets_x) * p.buckets_y;
    buf_[0].resize(n);
    for (Coord y = 0; y < p.buckets_y; ++y) {
      for (Coord x = 0; x < p.buckets_x; ++x) buf_[0][idx(x, y)] = initial_bucket(p, x, y);
    }
    buf_[1] = buf_[0];
  }

  Bucket get(Coord x, Coord y) const {
    if (x >= 0 && y >= 0 && x < p_.buckets_x && y < p_.buckets_y) return buf_[read_][idx(x, y)];
    if (p_.walls && x >= -1 && y >= -1 && x <= p_.buckets_x && y <= p_.buckets_y) return detail::wall_bucket(p_, x, y);
    return Bucket{};
  }

  void step() {
    for (Coord y = 0; y < p_.buckets_y; ++y) {
      for (Coord x = 0; x < p_.buckets_x; ++x) {
        std::array<Bucket, 9> hood;
        std::size_t k = 0;
        for (Coord dy = -1; dy <= 1; ++dy) {
          for (Coord dx = -1; dx <= 1; ++dx) hood[k++] = get(x + dx, y + dy);
        }
        if (!detail::advance(p_, x, y, hood, buf_[1 - read_][idx(x, y)])) throw detail::overflow(x, y);
      }
    }
    read_ = 1 - read_;
  }

  void run(std::size_t steps) {
    for (std::size_t s = 0; s < steps; ++s) step();
  }

  const std::vector<Bucket>& state() const { return buf_[read_]; }

 private:
  std::size_t idx(Coord x, Coord y) const { return static_cast<std::size_t>(y) * p_.buckets_x + x; }

  ParticleParams p_;
  std::vector<Bucket> buf_[2];
  int read_ = 0;
};

inline std::vector<Bucket> particle_baseline(const ParticleParams& p) {
  ParticleBaseline b(p);
  b.run(p.loops);
  return b.state();
}

inline RunResult<Bucket, 2> run_particle(const ParticleParams& p, const LayerStack& stack,
                                        const RuntimeOptions& opts = {}) {
  return run<ParticleApp>([&] { return std::make_unique<ParticleApp>(p); }, stack, opts);
}

inline Vec3 total_momentum(const std::vector<Bucket>& buckets) {
  Vec3 m;
  for (const auto& b : buckets) {
    for (std::uint32_t s = 0; s < b.count; ++s) {
      m.x += b.p[s].vel.x;
      m.y += b.p[s].vel.y;
      m.z += b.p[s].vel.z;
    }
  }
  return m;
}

}  // namespace bbp::dsl
