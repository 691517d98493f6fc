#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "bbp/dsl/sgrid.hpp"
#include "bbp/layers/message_passing.hpp"
#include "bbp/layers/shared_memory.hpp"
#include "bbp/runtime.hpp"

using namespace bbp;
using bbp::dsl::SGridApp;
using bbp::dsl::SGridParams;

namespace {

std::shared_ptr<Layer> sm(std::size_t n) { return std::make_shared<SharedMemoryLayer>(n); }
std::shared_ptr<Layer> mp(std::size_t n) { return std::make_shared<MessagePassingLayer>(n); }

// 64x64 grid in 16 blocks of 16x16, 16 items per page.
SGridParams small_grid(std::size_t loops = 4) {
  SGridParams p;
  p.width = p.height = 64;
  p.block_x = p.block_y = 16;
  p.items_per_page = 16;
  p.loops = loops;
  p.pool_bytes = 4u << 20;
  p.chunk_bytes = 1024;
  return p;
}

struct Recorder {
  std::mutex mu;
  std::vector<std::string> calls;
  std::map<TaskId, std::size_t> blocks_per_task;

  void add(std::string s) {
    std::lock_guard lock(mu);
    calls.push_back(std::move(s));
  }
};

class RecordingApp : public SGridApp {
 public:
  RecordingApp(SGridParams p, Recorder* rec) : SGridApp(p), rec_(rec) {}

  void initialize(TaskT& t) override {
    rec_->add("Init");
    SGridApp::initialize(t);
  }
  void processing(TaskT& t) override {
    rec_->add("Proc " + t.id().str());
    {
      std::lock_guard lock(rec_->mu);
      rec_->blocks_per_task[t.id()] = t.get_blocks().size();
    }
    SGridApp::processing(t);
  }
  void finalize(TaskT& t) override {
    rec_->add("Fin");
    SGridApp::finalize(t);
  }

 private:
  Recorder* rec_;
};

RunResult<double, 2> run_recorded(const SGridParams& p, const LayerStack& s, Recorder& rec,
                                  const RuntimeOptions& o = {}) {
  return run<RecordingApp>([&] { return std::make_unique<RecordingApp>(p, &rec); }, s, o);
}

// Fires Before at ProgramStart and After at ProgramEnd, nothing else.
class ProbeLayer final : public Layer {
 public:
  explicit ProbeLayer(std::string name) : Layer(std::move(name), LayerKind::SharedMemory, 1) {
    advise(HookPoint::ProgramStart, AdviceKind::Before, [](JoinPoint&) {});
    advise(HookPoint::ProgramEnd, AdviceKind::After, [](JoinPoint&) {});
  }
};

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidConfig;
}

std::uint64_t serial_hash(const SGridParams& p) { return dsl::run_sgrid(p, LayerStack{}).report.hash; }

}  // namespace

TEST(StackCompose, LeafCountsAndNesting) {
  EXPECT_EQ(LayerStack{}.leaf_task_count(), 1u);
  EXPECT_EQ(LayerStack{}.describe(), "serial");
  const LayerStack s({mp(4), sm(4)});
  EXPECT_EQ(s.leaf_task_count(), 16u);
  EXPECT_EQ(s.describe(), "mp:4,sm:4");
  EXPECT_EQ(code_of([] { LayerStack({sm(2), mp(2)}); }), ErrorCode::InvalidNesting);
  EXPECT_EQ(code_of([] { LayerStack({mp(2), mp(2)}); }), ErrorCode::InvalidNesting);
  EXPECT_EQ(code_of([] { sm(0); }), ErrorCode::InvalidConfig);
}

TEST(StackCompose, LeafTaskIds) {
  Recorder rec;
  run_recorded(small_grid(1), LayerStack({mp(4), sm(4)}), rec);
  std::set<TaskId> ids;
  for (const auto& [tid, n] : rec.blocks_per_task) ids.insert(tid);
  std::set<TaskId> expected;
  for (std::uint32_t r = 0; r < 4; ++r) {
    for (std::uint32_t t = 0; t < 4; ++t) expected.insert(TaskId{r, t});
  }
  EXPECT_EQ(ids, expected);
  for (const auto& [tid, n] : rec.blocks_per_task) EXPECT_EQ(n, 1u) << tid;
}

TEST(Run, SerialCallOrder) {
  Recorder rec;
  const auto r = run_recorded(small_grid(), LayerStack{}, rec);
  EXPECT_EQ(rec.calls, (std::vector<std::string>{"Init", "Proc ()", "Fin"}));
  EXPECT_EQ(r.report.groups, 1u);
  EXPECT_EQ(r.report.messages, 0u);
  EXPECT_EQ(r.report.reexecs, 0u);
  EXPECT_EQ(r.report.hash, serial_hash(small_grid()));
}

TEST(Run, SharedMemoryFour) {
  Recorder rec;
  const auto r = run_recorded(small_grid(), LayerStack({sm(4)}), rec);
  EXPECT_EQ(std::count(rec.calls.begin(), rec.calls.end(), "Init"), 1);
  EXPECT_EQ(std::count(rec.calls.begin(), rec.calls.end(), "Fin"), 1);
  EXPECT_EQ(r.report.processing_calls, 4u);
  EXPECT_EQ(rec.calls.front(), "Init");
  EXPECT_EQ(rec.calls.back(), "Fin");
  for (const auto& [tid, n] : rec.blocks_per_task) EXPECT_EQ(n, 4u);
  EXPECT_EQ(r.report.hash, serial_hash(small_grid()));
  EXPECT_EQ(r.report.pages_fetched, 0u);
}

TEST(Run, SharedMemoryOneIsTransparent) {
  const auto a = dsl::run_sgrid(small_grid(), LayerStack{});
  const auto b = dsl::run_sgrid(small_grid(), LayerStack({sm(1)}));
  EXPECT_EQ(a.report.hash, b.report.hash);
  EXPECT_EQ(a.report.env_searches, b.report.env_searches);
}

TEST(Run, MessagePassingTwo) {
  Recorder rec;
  const auto r = run_recorded(small_grid(), LayerStack({mp(2)}), rec);
  EXPECT_EQ(std::count(rec.calls.begin(), rec.calls.end(), "Init"), 2);
  EXPECT_EQ(r.report.groups, 2u);
  EXPECT_GT(r.report.pages_fetched, 0u);
  EXPECT_EQ(r.report.hash, serial_hash(small_grid()));
}

TEST(Run, SingleRankSendsNoRequests) {
  const auto r = dsl::run_sgrid(small_grid(), LayerStack({mp(1)}));
  EXPECT_EQ(r.report.requests, 0u);
  EXPECT_EQ(r.report.pages_fetched, 0u);
  EXPECT_EQ(r.report.hash, serial_hash(small_grid()));
}

TEST(Run, NestedSplitArithmetic) {
  Recorder rec;
  run_recorded(small_grid(1), LayerStack({mp(2), sm(4)}), rec);
  ASSERT_EQ(rec.blocks_per_task.size(), 8u);
  for (const auto& [tid, n] : rec.blocks_per_task) EXPECT_EQ(n, 2u) << tid;
}

TEST(Trace, ProgramStartOuterFirstProgramEndInnerFirst) {
  RuntimeOptions o;
  o.trace = true;
  const auto r = dsl::run_sgrid(small_grid(1),
                                LayerStack({std::make_shared<ProbeLayer>("a"), std::make_shared<ProbeLayer>("b")}), o);
  EXPECT_EQ(r.report.trace,
            (std::vector<std::string>{"ProgramStart a#0 ()", "ProgramStart b#1 ()", "ProgramEnd b#1 ()",
                                      "ProgramEnd a#0 ()"}));
}

TEST(Trace, GetBlocksWovenFromTheLeaf) {
  RuntimeOptions o;
  o.trace = true;
  const auto r = dsl::run_sgrid(small_grid(1), LayerStack({mp(2), sm(2)}), o);
  std::vector<std::string> gb;
  for (const auto& l : r.report.trace) {
    if (l.rfind("GetBlocks", 0) == 0 && l.find(" (1") != std::string::npos) gb.push_back(l);
  }
  ASSERT_GE(gb.size(), 2u);
  EXPECT_EQ(gb[0].rfind("GetBlocks sm#1 ", 0), 0u) << gb[0];
  EXPECT_NE(std::find(gb.begin(), gb.end(), "GetBlocks sm#1 (1,1)"), gb.end());
  EXPECT_NE(std::find(gb.begin(), gb.end(), "GetBlocks mp#0 (1)"), gb.end());
}

TEST(Property, LayerTransparencyGrid) {
  const auto p = small_grid(6);
  const auto ref = serial_hash(p);
  for (std::size_t r : {1u, 2u, 4u}) {
    for (std::size_t t : {1u, 2u, 4u}) {
      EXPECT_EQ(dsl::run_sgrid(p, LayerStack({sm(t)})).report.hash, ref) << "sm:" << t;
      EXPECT_EQ(dsl::run_sgrid(p, LayerStack({mp(r)})).report.hash, ref) << "mp:" << r;
      EXPECT_EQ(dsl::run_sgrid(p, LayerStack({mp(r), sm(t)})).report.hash, ref) << "mp:" << r << ",sm:" << t;
    }
  }
}

TEST(Property, MessageConservation) {
  for (std::size_t r : {2u, 4u}) {
    const auto rep = dsl::run_sgrid(small_grid(10), LayerStack({mp(r), sm(2)})).report;
    EXPECT_EQ(rep.requests, rep.replies);
    EXPECT_GT(rep.requests, 0u);
    EXPECT_EQ(rep.messages_after_shutdown, 0u);
    EXPECT_EQ(rep.shutdowns, r * (r - 1));
    ASSERT_EQ(rep.refresh_outcomes.size(), r);
    for (const auto& o : rep.refresh_outcomes) EXPECT_EQ(o, rep.refresh_outcomes.front());
  }
}

TEST(Property, SteadyStateHasNoReexecution) {
  const auto rep = dsl::run_sgrid(small_grid(20), LayerStack({mp(4)})).report;
  EXPECT_EQ(rep.reexecs, 0u);
  EXPECT_GE(rep.warmup_reexecs, 1u);
  const auto& per_step = rep.pages_fetched_per_step;
  ASSERT_EQ(per_step.size(), 21u);
  for (std::size_t k = 2; k < per_step.size(); ++k) EXPECT_EQ(per_step[k], per_step[1]);
}

namespace {

// Reads a different remote page on every warm-up pass, so the remote set
// never stops growing.
class DivergingApp : public Application<double, 2> {
 public:
  std::size_t loops() const override { return 1; }
  std::unique_ptr<Env<double, 2>> build_env() override {
    StorageConfig sc;
    sc.pool_bytes = 1u << 20;
    sc.chunk_bytes = 512;
    sc.items_per_page = 16;
    std::vector<VirtualSpec<double, 2>> b;
    return std::make_unique<Env<double, 2>>(Coords<2>{32, 16}, Coords<2>{16, 16}, sc, std::move(b));
  }
  void initialize(TaskT&) override {}
  bool kernel(TaskT& t) override {
    for (BlockId b : t.get_blocks()) {
      auto v = t.view(b);
      const Coord other = v.origin()[0] == 0 ? 16 : 0;
      v.get_global(GlobalAddress<2>{{other, static_cast<Coord>(pass_ % 16)}});
    }
    ++pass_;
    return t.refresh();
  }

 private:
  std::size_t pass_ = 0;
};

}  // namespace

TEST(Failure, WarmUpNonConvergence) {
  RuntimeOptions o;
  o.warmup_cap = 8;
  EXPECT_EQ(code_of([&] { run<DivergingApp>([] { return std::make_unique<DivergingApp>(); }, LayerStack({mp(2)}), o); }),
            ErrorCode::NonConvergence);
}

namespace {

class ThrowingApp : public SGridApp {
 public:
  using SGridApp::SGridApp;
  bool kernel(TaskT& t) override {
    if (t.id().indices().back() == 1) throw std::runtime_error("boom");
    return SGridApp::kernel(t);
  }
};

}  // namespace

TEST(Failure, TaskErrorCarriesTaskId) {
  for (const auto& stack : {LayerStack({sm(2)}), LayerStack({mp(2)}), LayerStack({mp(2), sm(2)})}) {
    try {
      run<ThrowingApp>([] { return std::make_unique<ThrowingApp>(small_grid()); }, stack);
      ADD_FAILURE() << "no error from " << stack.describe();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::TaskFailure) << stack.describe();
      EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
      EXPECT_EQ(e.detail().rfind("task (", 0), 0u) << e.detail();
    }
  }
}

TEST(Failure, PoisonedWriteSlotsDoNotLeak) {
  RuntimeOptions o;
  o.poison_write_slots = true;
  for (const auto& stack : {LayerStack{}, LayerStack({mp(2), sm(2)})}) {
    EXPECT_EQ(dsl::run_sgrid(small_grid(), stack, o).report.hash, serial_hash(small_grid()));
  }
}
