#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <numeric>
#include <set>
#include <vector>

#include "bbp/dsl/usgrid.hpp"
#include "bbp/layers/message_passing.hpp"
#include "bbp/layers/shared_memory.hpp"

using namespace bbp;
using namespace bbp::dsl;

namespace {

USGridParams mesh(Coord side, Coord block, std::size_t loops, USGridCase c, std::uint64_t perm_seed = 99) {
  USGridParams p;
  p.width = p.height = side;
  p.block_x = p.block_y = block;
  p.items_per_page = static_cast<std::size_t>(block);
  p.loops = loops;
  p.topology = c;
  p.perm_seed = perm_seed;
  p.init = InitPattern::Random;
  p.pool_bytes = 16u << 20;
  p.chunk_bytes = 4096;
  return p;
}

std::vector<USGridItem> platform_state(const USGridParams& p, const LayerStack& s, const RuntimeOptions& o = {}) {
  return assemble<USGridItem>(run_usgrid(p, s, o).blocks, p.domain(), p.block());
}

std::vector<double> values(const std::vector<USGridItem>& items) {
  std::vector<double> v;
  for (const auto& it : items) v.push_back(it.value);
  return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(CaseRTopology, Bijective) {
  const auto perm = caser_permutation(256 * 256, 12345);
  auto sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::uint32_t> ids(perm.size());
  std::iota(ids.begin(), ids.end(), 0u);
  EXPECT_EQ(sorted, ids);
  EXPECT_NE(perm, ids);
  EXPECT_EQ(caser_permutation(100, 0), std::vector<std::uint32_t>(ids.begin(), ids.begin() + 100));
  EXPECT_EQ(caser_permutation(1000, 7), caser_permutation(1000, 7));
}

TEST(CaseRTopology, FourNeighboursConjugated) {
  const auto t = caser_topology(16, 16, 3);
  for (Coord y = 0; y < 16; ++y) {
    for (Coord x = 0; x < 16; ++x) {
      const auto q = t.address(x, y);
      const auto nbr = t.neighbors_at(q[0], q[1]);
      EXPECT_EQ(nbr.size(), 4u);
      EXPECT_EQ(nbr[0], t.address(x, y - 1));
      EXPECT_EQ(nbr[1], t.address(x - 1, y));
      EXPECT_EQ(nbr[2], t.address(x + 1, y));
      EXPECT_EQ(nbr[3], t.address(x, y + 1));
      EXPECT_EQ(t.lattice_of(q[0], q[1]), (std::array<Coord, 2>{x, y}));
    }
  }
  EXPECT_EQ(t.address(-1, 4), (std::array<std::int32_t, 2>{-1, 4}));
}

TEST(CaseRTopology, LocalityMetric) {
  const double c = locality_metric(caser_topology(256, 256, 0));
  const double r = locality_metric(caser_topology(256, 256, 12345));
  EXPECT_DOUBLE_EQ(c, (1.0 * 255 * 256 + 256.0 * 255 * 256) / (2.0 * 255 * 256));
  EXPECT_GE(r, 10.0 * c);
}

TEST(USGridKernel, CaseCEqualsSGrid) {
  const auto p = mesh(64, 32, 12, USGridCase::C);
  const auto sg = sgrid_baseline(p.as_sgrid());
  EXPECT_TRUE(bitwise_equal(values(usgrid_baseline(p)), sg));
  EXPECT_TRUE(bitwise_equal(values(platform_state(p, LayerStack{})), sg));
}

TEST(USGridKernel, CaseRIsConjugatedCaseC) {
  const auto pc = mesh(64, 32, 12, USGridCase::C);
  const auto pr = mesh(64, 32, 12, USGridCase::R);
  const auto c = values(platform_state(pc, LayerStack{}));
  const auto r = platform_state(pr, LayerStack{});
  const auto topo = usgrid_topology(pr);
  EXPECT_TRUE(bitwise_equal(usgrid_lattice_values(r, topo), c));
  EXPECT_FALSE(bitwise_equal(values(r), c));
}

TEST(USGridKernel, IdentitySeedMakesCaseRCaseC) {
  const auto pc = mesh(32, 16, 4, USGridCase::C);
  const auto pr = mesh(32, 16, 4, USGridCase::R, 0);
  EXPECT_EQ(run_usgrid(pc, LayerStack{}).report.hash, run_usgrid(pr, LayerStack{}).report.hash);
}

TEST(USGridKernel, NeverUsesFastPathForNeighbours) {
  const auto p = mesh(32, 16, 3, USGridCase::C);
  const auto rep = run_usgrid(p, LayerStack{}).report;
  const std::uint64_t points = 32 * 32;
  // One get_local per point per pass, four indirect reads.
  EXPECT_EQ(rep.fast_reads, points * (p.loops + rep.warmup_passes));
  EXPECT_EQ(rep.slow_reads, 4 * points * (p.loops + rep.warmup_passes));
}

TEST(USGridKernel, MmatRemovesSearchesAfterFirstIteration) {
  const auto p = mesh(64, 32, 6, USGridCase::R);
  RuntimeOptions on;
  on.mmat = true;
  const auto off_rep = run_usgrid(p, LayerStack{}).report;
  const auto on_rep = run_usgrid(p, LayerStack{}, on).report;
  EXPECT_EQ(off_rep.hash, on_rep.hash);
  const std::uint64_t per_iteration = 4 * 64 * 64;
  EXPECT_EQ(off_rep.env_searches, per_iteration * (p.loops + 1));
  EXPECT_EQ(on_rep.env_searches, per_iteration);
  EXPECT_EQ(on_rep.mmat_hits, per_iteration * p.loops);
}

TEST(USGridKernel, LayersAreTransparent) {
  for (auto c : {USGridCase::C, USGridCase::R}) {
    const auto p = mesh(64, 16, 5, c);
    const auto ref = run_usgrid(p, LayerStack{}).report.hash;
    for (std::size_t r : {2u, 4u}) {
      const LayerStack s({std::make_shared<MessagePassingLayer>(r), std::make_shared<SharedMemoryLayer>(2)});
      const auto rep = run_usgrid(p, s).report;
      EXPECT_EQ(rep.hash, ref);
      EXPECT_EQ(rep.requests, rep.replies);
      EXPECT_EQ(rep.reexecs, 0u);
    }
  }
}

TEST(USGridItemLayout, PoisonIsNaN) {
  EXPECT_TRUE(std::isnan(poison_value<USGridItem>().value));
  EXPECT_EQ(sizeof(USGridItem), 40u);
}
