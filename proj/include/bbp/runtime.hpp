#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bbp/access.hpp"
#include "bbp/envtree.hpp"
#include "bbp/error.hpp"
#include "bbp/item_traits.hpp"
#include "bbp/layers/hooks.hpp"
#include "bbp/layers/message_passing.hpp"
#include "bbp/layers/shared_memory.hpp"

namespace bbp {

struct BlockSnapshot {
  std::uint64_t zindex = 0;
  std::vector<Coord> block_coord;
  std::vector<std::byte> bytes;
};

// Owned blocks deposited at Finalize by every Env copy.
class ResultSink {
 public:
  void deposit(BlockSnapshot s) {
    std::lock_guard lock(mu_);
    if (!seen_.insert(s.zindex).second) {
      throw Error(ErrorCode::ProtocolError, "block z=" + std::to_string(s.zindex) + " deposited twice");
    }
    blocks_.push_back(std::move(s));
  }

  std::vector<BlockSnapshot> take() {
    std::lock_guard lock(mu_);
    std::sort(blocks_.begin(), blocks_.end(), [](const auto& a, const auto& b) { return a.zindex < b.zindex; });
    return std::move(blocks_);
  }

 private:
  std::mutex mu_;
  std::set<std::uint64_t> seen_;
  std::vector<BlockSnapshot> blocks_;
};

inline std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct RunReport {
  std::string stack;
  double t_init_ms = 0;
  double t_proc_ms = 0;
  double t_fin_ms = 0;

  std::uint64_t env_searches = 0;
  std::uint64_t mmat_hits = 0;
  std::uint64_t missing_reads = 0;
  std::uint64_t slow_reads = 0;
  std::uint64_t fast_reads = 0;
  std::uint64_t reexecs = 0;
  std::uint64_t warmup_reexecs = 0;
  std::uint64_t warmup_passes = 0;
  std::uint64_t pages_fetched = 0;
  std::uint64_t local_fetches = 0;
  std::uint64_t messages = 0;
  std::uint64_t requests = 0;
  std::uint64_t replies = 0;
  std::uint64_t barriers = 0;
  std::uint64_t shutdowns = 0;
  std::uint64_t messages_after_shutdown = 0;
  std::uint64_t initialize_calls = 0;
  std::uint64_t processing_calls = 0;
  std::uint64_t finalize_calls = 0;
  std::uint32_t groups = 0;

  // Index k holds pages fetched right after the k-th committed step.
  std::vector<std::uint64_t> pages_fetched_per_step;
  std::vector<std::vector<bool>> refresh_outcomes;
  PoolUsage pool;
  std::size_t working_bytes = 0;
  std::vector<std::string> trace;

  std::uint64_t hash = 0;
};

template <PageItem Item, std::size_t Dim>
class Task;

template <PageItem Item, std::size_t Dim>
class Application {
 public:
  using item_type = Item;
  static constexpr std::size_t dim = Dim;
  using TaskT = Task<Item, Dim>;

  virtual ~Application() = default;

  virtual std::unique_ptr<Env<Item, Dim>> build_env() = 0;
  virtual void initialize(TaskT& task) = 0;
  virtual bool kernel(TaskT& task) = 0;

  // Number of timed steps.
  virtual std::size_t loops() const = 0;

  virtual void processing(TaskT& task) {
    auto k = [this](TaskT& t) { return kernel(t); };
    task.warmup(k);
    for (std::size_t n = 0; n < loops(); ++n) task.run(k);
  }

  virtual void finalize(TaskT& task) {
    for (BlockId b : task.get_blocks()) task.deposit(b);
  }
};

template <PageItem Item, std::size_t Dim>
class Task {
 public:
  Task(TaskContext& ctx, Env<Item, Dim>& env, ResultSink* sink = nullptr) : ctx_(&ctx), env_(&env), sink_(sink) {
    if (ctx.options && ctx.options->mmat) state_.mmat.control(MmatAction::Enable);
  }
  ~Task() {
    if (ctx_->stats) ctx_->stats->add_counters(state_.counters);
  }
  Task(const Task&) = delete;
  Task& operator=(const Task&) = delete;

  const TaskId& id() const { return ctx_->tid; }
  Env<Item, Dim>& env() { return *env_; }
  AccessState& access() { return state_; }
  AccessMode mode() const { return state_.mode; }
  TaskContext& context() { return *ctx_; }
  std::uint64_t committed_steps() const { return ctx_->group->access.committed_steps; }

  std::vector<BlockId> get_blocks() {
    return ctx_->stack->template weave<std::vector<BlockId>>(HookPoint::AroundGetBlocks, *ctx_, collect_blocks);
  }

  BlockView<Item, Dim> view(BlockId b) { return BlockView<Item, Dim>(*env_, state_, b, ctx_->tid); }

  bool refresh() {
    GroupState& g = *ctx_->group;
    {
      std::lock_guard lock(g.access.mu);
      g.access.ledger.merge_step(state_.ledger);
    }
    state_.ledger.step.clear();
    ctx_->mode = state_.mode;
    return ctx_->stack->template weave<bool>(HookPoint::AroundRefresh, *ctx_, [](TaskContext& c) {
      std::lock_guard lock(c.group->access.mu);
      return commit_step(*c.group->env, c.group->access, c.mode);
    });
  }

  void mmat(MmatAction a) { state_.mmat.control(a); }

  // Dry-run passes until one completes with nothing missing.
  template <class Kernel>
  void warmup(Kernel&& kernel) {
    state_.mmat.control(MmatAction::Reset);
    {
      std::lock_guard lock(ctx_->group->access.mu);
      ctx_->group->access.ledger.persistent.clear();
    }
    const std::size_t cap = ctx_->options ? ctx_->options->warmup_cap : 8;
    state_.mode = AccessMode::WarmUp;
    for (std::size_t pass = 1;; ++pass) {
      if (root() && ctx_->stats) ++ctx_->stats->warmup_passes;
      if (kernel(*this)) break;
      if (root() && ctx_->stats) ++ctx_->stats->warmup_reexecs;
      if (pass >= cap) {
        state_.mode = AccessMode::Normal;
        throw Error(ErrorCode::NonConvergence,
                    "remote page set still growing after " + std::to_string(cap) + " warm-up passes");
      }
    }
    state_.mode = AccessMode::Normal;
  }

  // One step, re-executed until refresh commits.
  template <class Kernel>
  void run(Kernel&& kernel) {
    const std::size_t cap = ctx_->options ? ctx_->options->max_attempts : 16;
    for (std::size_t attempt = 1; attempt <= cap; ++attempt) {
      if (kernel(*this)) return;
      if (root() && ctx_->stats) ++ctx_->stats->reexecs;
    }
    throw Error(ErrorCode::ProtocolError, "step did not commit after " + std::to_string(cap) + " attempts");
  }

  void deposit(BlockId b) {
    if (!sink_) throw Error(ErrorCode::InvalidConfig, "no result sink outside Finalize");
    const auto& n = env_->node(b);
    BlockSnapshot s;
    s.zindex = n.zindex;
    s.block_coord.assign(n.block_coord.begin(), n.block_coord.end());
    const auto& buf = env_->buffer(b);
    s.bytes.resize(env_->block_volume() * sizeof(Item));
    for (std::size_t i = 0; i < env_->block_volume(); ++i) {
      std::memcpy(s.bytes.data() + i * sizeof(Item), buf.item_ptr(buf.read_slot(), i), sizeof(Item));
    }
    sink_->deposit(std::move(s));
  }

 private:
  bool root() const { return ctx_->tid.is_root_task(); }

  TaskContext* ctx_;
  Env<Item, Dim>* env_;
  ResultSink* sink_;
  AccessState state_;
};

template <PageItem Item, std::size_t Dim>
struct RunResult {
  RunReport report;
  // Owned blocks in zindex order.
  std::vector<BlockSnapshot> blocks;

  // Items of block `k` in local linear order.
  std::vector<Item> items(std::size_t k) const {
    std::vector<Item> out(blocks[k].bytes.size() / sizeof(Item));
    std::memcpy(out.data(), blocks[k].bytes.data(), blocks[k].bytes.size());
    return out;
  }
};

// Runs an application under a layer stack. `make_app` is called once per
// Env copy.
template <class App, class Factory>
RunResult<typename App::item_type, App::dim> run(Factory&& make_app, const LayerStack& stack,
                                                 const RuntimeOptions& opts = {}) {
  using Item = typename App::item_type;
  constexpr std::size_t Dim = App::dim;
  using Clock = std::chrono::steady_clock;
  auto ms_since = [](Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };

  RunStats stats;
  Tracer tracer(opts.trace, opts.trace_echo);
  ResultSink sink;

  TaskContext root;
  root.stack = &stack;
  root.layer_state.resize(stack.size());
  root.stats = &stats;
  root.tracer = &tracer;
  root.options = &opts;

  stack.weave<void>(HookPoint::ProgramStart, root, [&](TaskContext& ctx) {
    std::unique_ptr<App> app = make_app();
    auto group = std::make_shared<GroupState>();
    group->index = stats.next_group();
    group->access.poison_writes = opts.poison_write_slots;
    ctx.group = group;
    std::unique_ptr<Env<Item, Dim>> env;

    auto t0 = Clock::now();
    stack.weave<void>(HookPoint::AroundInitialize, ctx, [&](TaskContext& c) {
      env = app->build_env();
      group->env = env.get();
      Task<Item, Dim> t(c, *env);
      app->initialize(t);
      if (opts.poison_write_slots) env->poison_write_slots();
      ++stats.initialize_calls;
    });
    stats.note_phase(0, ms_since(t0));

    t0 = Clock::now();
    stack.weave<void>(HookPoint::AroundProcessing, ctx, [&](TaskContext& c) {
      Task<Item, Dim> t(c, *env);
      app->processing(t);
      ++stats.processing_calls;
    });
    stats.note_phase(1, ms_since(t0));

    t0 = Clock::now();
    stack.weave<void>(HookPoint::AroundFinalize, ctx, [&](TaskContext& c) {
      Task<Item, Dim> t(c, *env, &sink);
      app->finalize(t);
      ++stats.finalize_calls;
    });
    stats.note_phase(2, ms_since(t0));
    stats.note_pool(env->pool_usage(), env->working_bytes_estimate());

    stack.weave<void>(HookPoint::ProgramEnd, ctx, [](TaskContext&) {});
  });

  RunResult<Item, Dim> out;
  RunReport& r = out.report;
  r.stack = stack.describe();
  const auto phases = stats.phase_ms();
  r.t_init_ms = phases[0];
  r.t_proc_ms = phases[1];
  r.t_fin_ms = phases[2];
  r.env_searches = stats.env_searches;
  r.mmat_hits = stats.mmat_hits;
  r.missing_reads = stats.missing_reads;
  r.slow_reads = stats.slow_reads;
  r.fast_reads = stats.fast_reads;
  r.reexecs = stats.reexecs;
  r.warmup_reexecs = stats.warmup_reexecs;
  r.warmup_passes = stats.warmup_passes;
  r.pages_fetched = stats.pages_fetched;
  r.local_fetches = stats.local_fetches;
  r.messages = stats.messages;
  r.requests = stats.requests;
  r.replies = stats.replies;
  r.barriers = stats.barriers;
  r.shutdowns = stats.shutdowns;
  r.messages_after_shutdown = stats.messages_after_shutdown;
  r.initialize_calls = stats.initialize_calls;
  r.processing_calls = stats.processing_calls;
  r.finalize_calls = stats.finalize_calls;
  r.groups = stats.groups();
  r.pages_fetched_per_step = stats.step_fetches();
  r.refresh_outcomes = stats.refresh_outcomes();
  r.pool = stats.pool();
  r.working_bytes = stats.working_bytes();
  r.trace = tracer.lines();

  out.blocks = sink.take();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& b : out.blocks) h = fnv1a(b.bytes, h);
  r.hash = h;
  return out;
}

}  // namespace bbp
