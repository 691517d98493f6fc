// Steady heat conduction on a square plate whose rim is held at T = x / W.
// The exact steady state is that same linear profile, so the printed error
// shrinks as the Jacobi sweeps go on.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "bbp/layers/message_passing.hpp"
#include "bbp/layers/shared_memory.hpp"
#include "bbp/runtime.hpp"

namespace {

constexpr bbp::Coord kSide = 32;
constexpr bbp::Coord kBlock = 16;

class HeatPlate : public bbp::Application<double, 2> {
 public:
  explicit HeatPlate(std::size_t sweeps) : sweeps_(sweeps) {}

  std::size_t loops() const override { return sweeps_; }

  std::unique_ptr<bbp::Env<double, 2>> build_env() override {
    bbp::StorageConfig sc;
    sc.pool_bytes = 8u << 20;
    sc.chunk_bytes = 1024;
    sc.items_per_page = kBlock;
    bbp::VirtualSpec<double, 2> rim;
    rim.kind = bbp::BlockKind::Arithmetic;
    rim.coverage = bbp::Coverage<2>::complement_of(bbp::Box<2>{{0, 0}, {kSide, kSide}});
    rim.payload = bbp::ArithmeticExpr<double, 2>::affine(0.0, {1.0 / kSide, 0.0});
    rim.label = "rim";
    std::vector<bbp::VirtualSpec<double, 2>> boundary;
    boundary.push_back(std::move(rim));
    return std::make_unique<bbp::Env<double, 2>>(bbp::Coords<2>{kSide, kSide}, bbp::Coords<2>{kBlock, kBlock}, sc,
                                                 std::move(boundary));
  }

  void initialize(TaskT& t) override {
    for (bbp::BlockId b : t.get_blocks()) {
      for (bbp::Coord j = 0; j < kBlock; ++j) {
        for (bbp::Coord i = 0; i < kBlock; ++i) t.env().init_item(b, {{i, j}}, 0.0);
      }
    }
  }

  bool kernel(TaskT& t) override {
    for (bbp::BlockId b : t.get_blocks()) {
      auto v = t.view(b);
      for (bbp::Coord j = 0; j < kBlock; ++j) {
        for (bbp::Coord i = 0; i < kBlock; ++i) {
          const double sum = v.get({{i - 1, j}}, i > 0) + v.get({{i + 1, j}}, i + 1 < kBlock) +
                             v.get({{i, j - 1}}, j > 0) + v.get({{i, j + 1}}, j + 1 < kBlock);
          v.set({{i, j}}, 0.25 * sum);
        }
      }
    }
    return t.refresh();
  }

 private:
  std::size_t sweeps_;
};

double max_error(const bbp::RunResult<double, 2>& r) {
  double err = 0;
  for (std::size_t k = 0; k < r.blocks.size(); ++k) {
    const auto items = r.items(k);
    const auto& bc = r.blocks[k].block_coord;
    for (bbp::Coord j = 0; j < kBlock; ++j) {
      for (bbp::Coord i = 0; i < kBlock; ++i) {
        const double x = static_cast<double>(bc[0] * kBlock + i);
        err = std::max(err, std::abs(items[j * kBlock + i] - x / kSide));
      }
    }
  }
  return err;
}

}  // namespace

int main() {
  const bbp::LayerStack stack({std::make_shared<bbp::MessagePassingLayer>(2), std::make_shared<bbp::SharedMemoryLayer>(2)});
  for (std::size_t sweeps : {10u, 100u, 1000u}) {
    const auto r = bbp::run<HeatPlate>([&] { return std::make_unique<HeatPlate>(sweeps); }, stack);
    std::printf("%5zu sweeps  max error %.3e  pages fetched %llu\n", sweeps, max_error(r),
                static_cast<unsigned long long>(r.report.pages_fetched));
  }
}
