#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "bbp/dsl/particle.hpp"
#include "bbp/layers/message_passing.hpp"
#include "bbp/layers/shared_memory.hpp"

using namespace bbp;
using namespace bbp::dsl;

namespace {

ParticleParams small(std::size_t loops = 5) {
  ParticleParams p;
  p.buckets_x = p.buckets_y = 16;
  p.loops = loops;
  p.pool_bytes = 16u << 20;
  return p;
}

std::vector<Bucket> platform_state(const ParticleParams& p, const LayerStack& s) {
  return assemble<Bucket>(run_particle(p, s).blocks, p.domain(), p.block());
}

bool bitwise_equal(const std::vector<Bucket>& a, const std::vector<Bucket>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(Bucket)) == 0;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidConfig;
}

// Only bucket (cx, cy) holds particles, given by `place`.
ParticleParams lonely(std::function<void(Bucket&)> place, Coord cx = 3, Coord cy = 4) {
  auto p = small(1);
  p.walls = false;
  p.fill = [=](Coord bx, Coord by, Bucket& b) {
    if (bx == cx && by == cy) place(b);
  };
  return p;
}

}  // namespace

TEST(ParticleParams, ForCount) {
  const auto p = ParticleParams::for_count(1 << 14);
  EXPECT_EQ(p.buckets_x, 32);
  EXPECT_EQ(p.buckets_y, 32);
  EXPECT_EQ(code_of([] { ParticleParams::for_count(1000); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { ParticleParams::for_count(16 * 100); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(sizeof(Bucket), 1288u);
  EXPECT_EQ(p.items_per_page, 8u);
}

TEST(ParticleKernel, SingleParticleMovesStraight) {
  const Vec3 v0{0.1, -0.05, 0.02};
  auto p = lonely([&](Bucket& b) {
    b.count = 1;
    b.p[0].id = 1;
    b.p[0].pos = {3.5, 4.5, 0.0};
    b.p[0].vel = v0;
  });
  p.loops = 20;
  const auto out = platform_state(p, LayerStack{});
  const Particle& q = out[4 * 16 + 3].p[0];
  Vec3 x{3.5, 4.5, 0.0};
  for (std::size_t s = 0; s < p.loops; ++s) {
    x.x += v0.x * p.dt;
    x.y += v0.y * p.dt;
    x.z += v0.z * p.dt;
  }
  EXPECT_EQ(q.pos.x, x.x);
  EXPECT_EQ(q.pos.y, x.y);
  EXPECT_EQ(q.pos.z, x.z);
  EXPECT_EQ(q.vel.x, v0.x);
  EXPECT_EQ(q.acc.x, 0.0);
  EXPECT_EQ(q.acc.y, 0.0);
}

TEST(ParticleKernel, SymmetricPairConservesMomentum) {
  auto p = lonely([](Bucket& b) {
    b.count = 2;
    b.p[0].id = 1;
    b.p[0].pos = {3.3, 4.4, 0.0};
    b.p[1].id = 2;
    b.p[1].pos = {3.7, 4.6, 0.0};
  });
  ParticleBaseline base(p);
  for (int s = 0; s < 50; ++s) {
    const Vec3 before = total_momentum(base.state());
    base.step();
    const Vec3 after = total_momentum(base.state());
    EXPECT_LE(std::abs(after.x - before.x), 1e-12);
    EXPECT_LE(std::abs(after.y - before.y), 1e-12);
  }
  const auto& b = base.state()[4 * 16 + 3];
  EXPECT_EQ(b.p[0].acc.x, -b.p[1].acc.x);
  EXPECT_EQ(b.p[0].acc.y, -b.p[1].acc.y);
  EXPECT_LT(b.p[0].acc.x, 0.0);
  EXPECT_LT(b.p[0].pos.x, 3.3);
}

TEST(ParticleKernel, MomentumDriftWithoutWalls) {
  auto p = small(10);
  p.walls = false;
  const auto init = total_momentum(ParticleBaseline(p).state());
  const auto fin = total_momentum(platform_state(p, LayerStack{}));
  EXPECT_LE(std::abs(fin.x - init.x), 1e-9);
  EXPECT_LE(std::abs(fin.y - init.y), 1e-9);
}

TEST(ParticleKernel, ParticlesStayInTheirBucket) {
  const auto p = small(10);
  const auto out = platform_state(p, LayerStack{});
  for (Coord y = 0; y < p.buckets_y; ++y) {
    for (Coord x = 0; x < p.buckets_x; ++x) {
      const auto& b = out[static_cast<std::size_t>(y) * p.buckets_x + x];
      EXPECT_EQ(b.count, p.per_bucket);
      for (std::uint32_t s = 0; s < b.count; ++s) {
        EXPECT_GE(b.p[s].pos.x, x);
        EXPECT_LT(b.p[s].pos.x, x + 1);
        EXPECT_GE(b.p[s].pos.y, y);
        EXPECT_LT(b.p[s].pos.y, y + 1);
      }
    }
  }
}

TEST(ParticleKernel, WallsPushBack) {
  // A particle close to the west wall is repelled by the wall particles.
  auto p = lonely(
      [](Bucket& b) {
        b.count = 1;
        b.p[0].id = 1;
        b.p[0].pos = {0.1, 4.5, 0.0};
      },
      0, 4);
  p.walls = true;
  const auto out = platform_state(p, LayerStack{});
  EXPECT_GT(out[4 * 16].p[0].acc.x, 0.0);
}

TEST(ParticleKernel, MatchesBaselineUnderLayers) {
  const auto p = small(6);
  const auto base = particle_baseline(p);
  EXPECT_TRUE(bitwise_equal(platform_state(p, LayerStack{}), base));
  for (auto [r, t] : {std::pair{1u, 4u}, {2u, 2u}, {4u, 1u}}) {
    const LayerStack s({std::make_shared<MessagePassingLayer>(r), std::make_shared<SharedMemoryLayer>(t)});
    EXPECT_TRUE(bitwise_equal(platform_state(p, s), base)) << r << "x" << t;
  }
}

TEST(ParticleKernel, LargeStepOverflowsBucket) {
  auto p = small(3);
  p.dt = 5.0;
  EXPECT_EQ(code_of([&] { particle_baseline(p); }), ErrorCode::BucketOverflow);
  EXPECT_EQ(code_of([&] { run_particle(p, LayerStack{}); }), ErrorCode::BucketOverflow);
  EXPECT_EQ(code_of([&] { run_particle(p, LayerStack({std::make_shared<MessagePassingLayer>(2)})); }),
            ErrorCode::BucketOverflow);
  EXPECT_EQ(code_of([&] { run_particle(p, LayerStack({std::make_shared<SharedMemoryLayer>(2)})); }),
            ErrorCode::BucketOverflow);
}
