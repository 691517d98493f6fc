#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "bbp/dsl/common.hpp"
#include "bbp/envtree.hpp"
#include "bbp/runtime.hpp"

namespace bbp::dsl {

// 2-D structured grid with a 5-point Jacobi stencil and a Dirichlet boundary.
struct SGridParams {
  Coord width = 512;
  Coord height = 512;
  Coord block_x = 256;
  Coord block_y = 256;
  std::size_t items_per_page = 256;
  double alpha = 0.0;
  double beta = 0.25;
  double boundary = 0.0;
  InitPattern init = InitPattern::HotSpot;
  double init_value = 1.0;
  std::uint64_t seed = 1;
  std::size_t loops = 10;
  std::size_t pool_bytes = 300u << 20;
  std::size_t chunk_bytes = MemoryPool::kDefaultChunkBytes;

  Coords<2> domain() const { return {width, height}; }
  Coords<2> block() const { return {block_x, block_y}; }
  double initial(Coord x, Coord y) const { return initial_value(init, init_value, seed, x, y, width, height); }
};

// Same expression and summation order on every path, so results compare
// bitwise.
inline double stencil(double alpha, double beta, double e, double e_e, double e_w, double e_s, double e_n) {
  return alpha * e + beta * (((e_e + e_w) + e_s) + e_n);
}

class SGridApp : public Application<double, 2> {
 public:
  explicit SGridApp(SGridParams p) : p_(p) {}

  const SGridParams& params() const { return p_; }
  std::size_t loops() const override { return p_.loops; }

  std::unique_ptr<Env<double, 2>> build_env() override {
    StorageConfig sc;
    sc.pool_bytes = p_.pool_bytes;
    sc.chunk_bytes = p_.chunk_bytes;
    sc.items_per_page = p_.items_per_page;
    VirtualSpec<double, 2> dirichlet;
    dirichlet.kind = BlockKind::Arithmetic;
    dirichlet.coverage = Coverage<2>::complement_of(Box<2>{{0, 0}, p_.domain()});
    dirichlet.payload = ArithmeticExpr<double, 2>::constant(p_.boundary);
    dirichlet.label = "dirichlet";
    std::vector<VirtualSpec<double, 2>> boundary;
    boundary.push_back(std::move(dirichlet));
    return std::make_unique<Env<double, 2>>(p_.domain(), p_.block(), sc, std::move(boundary));
  }

  void initialize(TaskT& t) override {
    auto& env = t.env();
    for (BlockId b : t.get_blocks()) {
      const auto& o = env.origin(b);
      for (Coord j = 0; j < p_.block_y; ++j) {
        for (Coord i = 0; i < p_.block_x; ++i) env.init_item(b, {{i, j}}, p_.initial(o[0] + i, o[1] + j));
      }
    }
  }

  bool kernel(TaskT& t) override {
    const Coord bx = p_.block_x, by = p_.block_y;
    for (BlockId el : t.get_blocks()) {
      auto v = t.view(el);
      for (Coord j = 0; j < by; ++j) {
        for (Coord i = 0; i < bx; ++i) {
          const double e_n = v.get({{i, j - 1}}, j > 0);
          const double e_w = v.get({{i - 1, j}}, i > 0);
          const double e = v.get_local({{i, j}});
          const double e_e = v.get({{i + 1, j}}, i + 1 < bx);
          const double e_s = v.get({{i, j + 1}}, j + 1 < by);
          v.set({{i, j}}, stencil(p_.alpha, p_.beta, e, e_e, e_w, e_s, e_n));
        }
      }
    }
    return t.refresh();
  }

 private:
  SGridParams p_;
};

// Dense double-buffered serial implementation; out-of-region reads return the
// boundary value.
class SGridBaseline {
 public:
  explicit SGridBaseline(const SGridParams& p) : p_(p) {
    const std::size_t n = static_cast<std::size_t>(p.width) * p.height;
    buf_[0].resize(n);
    for (Coord y = 0; y < p.height; ++y) {
      for (Coord x = 0; x < p.width; ++x) buf_[0][idx(x, y)] = p.initial(x, y);
    }
    buf_[1] = buf_[0];
  }

  double get(Coord x, Coord y) const {
    if (x < 0 || y < 0 || x >= p_.width || y >= p_.height) return p_.boundary;
    return buf_[read_][idx(x, y)];
  }
  void set(Coord x, Coord y, double v) { buf_[1 - read_][idx(x, y)] = v; }
  void refresh() { read_ = 1 - read_; }

  void step() {
    for (Coord y = 0; y < p_.height; ++y) {
      for (Coord x = 0; x < p_.width; ++x) {
        set(x, y, stencil(p_.alpha, p_.beta, get(x, y), get(x + 1, y), get(x - 1, y), get(x, y + 1), get(x, y - 1)));
      }
    }
    refresh();
  }

  void run(std::size_t steps) {
    for (std::size_t s = 0; s < steps; ++s) step();
  }

  const std::vector<double>& state() const { return buf_[read_]; }

 private:
  std::size_t idx(Coord x, Coord y) const { return static_cast<std::size_t>(y) * p_.width + x; }

  SGridParams p_;
  std::vector<double> buf_[2];
  int read_ = 0;
};

inline std::vector<double> sgrid_baseline(const SGridParams& p) {
  SGridBaseline b(p);
  b.run(p.loops);
  return b.state();
}

inline RunResult<double, 2> run_sgrid(const SGridParams& p, const LayerStack& stack, const RuntimeOptions& opts = {}) {
  return run<SGridApp>([&] { return std::make_unique<SGridApp>(p); }, stack, opts);
}

}  // namespace bbp::dsl
