#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <set>
#include <vector>

#include "bbp/mempool.hpp"

using namespace bbp;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidConfig;
}

void expect_conserved(const MemoryPool& p) {
  EXPECT_EQ(p.used_chunks() + p.free_chunks(), p.capacity_bytes() / p.chunk_bytes());
  EXPECT_LE(p.used_bytes(), p.capacity_bytes());
}

}  // namespace

TEST(PoolCreate, ChunkCounts) {
  EXPECT_EQ(MemoryPool(1024, 256).free_chunks(), 4u);
  EXPECT_EQ(MemoryPool(300u << 20, 16384).free_chunks(), 19200u);
  EXPECT_EQ(code_of([] { MemoryPool(1000, 300); }), ErrorCode::InvalidGeometry);
  EXPECT_EQ(code_of([] { MemoryPool(0, 256); }), ErrorCode::InvalidGeometry);
}

TEST(PoolAlloc, ExhaustAndOverRequest) {
  MemoryPool p(1024, 256);
  EXPECT_EQ(code_of([&] { p.alloc(5); }), ErrorCode::OutOfPool);
  EXPECT_EQ(p.free_chunks(), 4u);
  auto h = p.alloc(4);
  EXPECT_EQ(h.size(), 4u);
  EXPECT_EQ(p.free_chunks(), 0u);
  EXPECT_EQ(code_of([&] { p.alloc(1); }), ErrorCode::OutOfPool);
  EXPECT_EQ(code_of([&] { p.alloc(0); }), ErrorCode::InvalidConfig);
}

TEST(PoolAlloc, SuccessiveAllocsAreDisjoint) {
  MemoryPool p(1024, 256);
  auto a = p.alloc(2);
  auto b = p.alloc(2);
  std::set<ChunkHandle> all(a.begin(), a.end());
  all.insert(b.begin(), b.end());
  EXPECT_EQ(all.size(), 4u);
  std::set<const std::byte*> ptrs;
  for (const auto& h : all) ptrs.insert(p.data(h));
  EXPECT_EQ(ptrs.size(), 4u);
}

TEST(PoolFree, RoundTripAndDoubleFree) {
  MemoryPool p(1024, 256);
  auto h = p.alloc(3);
  p.free(h);
  EXPECT_EQ(p.free_chunks(), 4u);
  EXPECT_EQ(code_of([&] { p.free(h); }), ErrorCode::DoubleFree);

  auto one = p.alloc(1);
  std::vector<ChunkHandle> twice{one[0], one[0]};
  EXPECT_EQ(code_of([&] { p.free(twice); }), ErrorCode::DoubleFree);
  EXPECT_EQ(p.used_chunks(), 1u);
}

TEST(PoolFree, ForeignHandleRejected) {
  MemoryPool a(1024, 256, 0), b(1024, 256, 1);
  auto h = a.alloc(1);
  EXPECT_EQ(code_of([&] { b.free(h); }), ErrorCode::InvalidConfig);
}

TEST(PoolProperty, FuzzedConservation) {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    std::mt19937_64 rng(seed);
    MemoryPool p(64 * 128, 128);
    std::vector<std::vector<ChunkHandle>> live;
    std::size_t model_used = 0;
    for (int op = 0; op < 2000; ++op) {
      if (live.empty() || rng() % 2 == 0) {
        const std::size_t n = 1 + rng() % 8;
        if (n > p.free_chunks()) {
          EXPECT_EQ(code_of([&] { p.alloc(n); }), ErrorCode::OutOfPool);
        } else {
          live.push_back(p.alloc(n));
          model_used += n;
        }
      } else {
        const std::size_t k = rng() % live.size();
        p.free(live[k]);
        model_used -= live[k].size();
        live.erase(live.begin() + static_cast<std::ptrdiff_t>(k));
      }
      ASSERT_EQ(p.used_chunks(), model_used);
      expect_conserved(p);
    }
  }
}

TEST(BufferCreate, SGridBlockGeometry) {
  MemoryPool p(300u << 20, 16384);
  MemoryPool* pools[] = {&p};
  BlockBuffer b(pools, 256, 256, sizeof(double));
  EXPECT_EQ(b.slot_count(), 2u);
  EXPECT_EQ(b.page_count(), 256u);
  EXPECT_EQ(b.page_bytes(), 2048u);
  EXPECT_EQ(p.used_chunks(), 2u * 256u);
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t q = 0; q < 256; ++q) {
      EXPECT_FALSE(b.page(s, q).valid);
      EXPECT_FALSE(b.page(s, q).dirty);
    }
  }
}

TEST(BufferCreate, ExactFitAndOneShort) {
  {
    MemoryPool p(2 * 256, 256);
    MemoryPool* pools[] = {&p};
    BlockBuffer b(pools, 1, 32, 8);
    EXPECT_EQ(p.free_chunks(), 0u);
  }
  MemoryPool p(256, 256);
  MemoryPool* pools[] = {&p};
  EXPECT_EQ(code_of([&] { BlockBuffer(pools, 1, 32, 8); }), ErrorCode::OutOfPool);
  EXPECT_EQ(p.free_chunks(), 1u);
  EXPECT_EQ(code_of([&] { BlockBuffer(pools, 1, 32, 8, 1); }), ErrorCode::InvalidGeometry);
}

TEST(BufferCreate, PagesSpanChunksAcrossPools) {
  MemoryPool a(3 * 64, 64, 0), b(5 * 64, 64, 1);
  MemoryPool* pools[] = {&a, &b};
  {
    // 16 items of 8 bytes = 2 chunks per page.
    BlockBuffer buf(pools, 2, 16, 8);
    EXPECT_EQ(buf.chunks_per_page(), 2u);
    EXPECT_EQ(a.free_chunks() + b.free_chunks(), 0u);
    for (std::size_t i = 0; i < 2 * 16; ++i) {
      const double v = static_cast<double>(i);
      std::memcpy(buf.item_ptr(buf.write_slot(), i), &v, sizeof v);
    }
    buf.swap();
    for (std::size_t i = 0; i < 2 * 16; ++i) {
      double v;
      std::memcpy(&v, buf.item_ptr(buf.read_slot(), i), sizeof v);
      EXPECT_EQ(v, static_cast<double>(i));
    }
  }
  EXPECT_EQ(a.free_chunks(), 3u);
  EXPECT_EQ(b.free_chunks(), 5u);
}

TEST(BufferSwap, TwoSlots) {
  MemoryPool p(1024, 256);
  MemoryPool* pools[] = {&p};
  BlockBuffer b(pools, 1, 4, 8);
  EXPECT_EQ(b.read_slot(), 0u);
  EXPECT_EQ(b.write_slot(), 1u);
  b.swap();
  EXPECT_EQ(b.read_slot(), 1u);
  EXPECT_EQ(b.write_slot(), 0u);
  b.swap();
  EXPECT_EQ(b.read_slot(), 0u);
  EXPECT_EQ(b.write_slot(), 1u);
}

TEST(BufferSwap, ThreeSlotsRotate) {
  MemoryPool p(1024, 256);
  MemoryPool* pools[] = {&p};
  BlockBuffer b(pools, 1, 4, 8, 3);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (int i = 0; i < 3; ++i) {
    EXPECT_NE(b.read_slot(), b.write_slot());
    seen.insert({b.read_slot(), b.write_slot()});
    b.swap();
  }
  EXPECT_EQ(seen.size(), 3u);
  EXPECT_EQ(b.read_slot(), 0u);
}

TEST(BufferSwap, WriteBecomesReadable) {
  MemoryPool p(4096, 256);
  MemoryPool* pools[] = {&p};
  BlockBuffer b(pools, 4, 8, 8);
  const double v = 42.5;
  std::memcpy(b.item_ptr(b.write_slot(), 2 * 8 + 3), &v, sizeof v);
  b.swap();
  double got;
  std::memcpy(&got, b.item_ptr(b.read_slot(), 2 * 8 + 3), sizeof got);
  EXPECT_EQ(got, v);
}

TEST(BufferProperty, WritesNeverReachReadSlot) {
  std::mt19937_64 rng(7);
  MemoryPool p(64 * 1024, 512);
  MemoryPool* pools[] = {&p};
  BlockBuffer b(pools, 8, 24, 8);
  const std::size_t n = b.page_count() * b.items_per_page();
  const double sentinel = -1.0;
  b.fill_slot(b.read_slot(), std::as_bytes(std::span{&sentinel, 1}));
  std::vector<std::byte> before(n * 8);
  for (std::size_t i = 0; i < n; ++i) std::memcpy(before.data() + i * 8, b.item_ptr(b.read_slot(), i), 8);
  for (int k = 0; k < 10000; ++k) {
    const double v = static_cast<double>(rng());
    std::memcpy(b.item_ptr(b.write_slot(), rng() % n), &v, sizeof v);
  }
  for (std::size_t i = 0; i < n; ++i) {
    ASSERT_EQ(std::memcmp(before.data() + i * 8, b.item_ptr(b.read_slot(), i), 8), 0) << "item " << i;
  }
}

TEST(BufferPages, CopyOutIn) {
  MemoryPool p(64 * 1024, 256);
  MemoryPool* pools[] = {&p};
  BlockBuffer src(pools, 3, 10, 8), dst(pools, 3, 10, 8);
  for (std::size_t i = 0; i < 30; ++i) {
    const double v = i * 1.5;
    std::memcpy(src.item_ptr(0, i), &v, 8);
  }
  std::vector<std::byte> page(src.page_bytes());
  src.copy_page_out(0, 1, page);
  dst.copy_page_in(1, 1, page);
  for (std::size_t i = 10; i < 20; ++i) EXPECT_EQ(std::memcmp(src.item_ptr(0, i), dst.item_ptr(1, i), 8), 0);
  EXPECT_EQ(dst.page_index(19), 1u);
}

TEST(PageOf, FloorDivision) {
  EXPECT_EQ(page_of(0, 256), 0u);
  EXPECT_EQ(page_of(255, 256), 0u);
  EXPECT_EQ(page_of(256, 256), 1u);
  EXPECT_EQ(page_of(70000, 256), 273u);
  for (std::size_t i = 0; i < 5000; i += 7) {
    for (std::size_t per : {1u, 3u, 256u, 1000u}) EXPECT_EQ(page_of(i, per) * per + i % per, i);
  }
}
