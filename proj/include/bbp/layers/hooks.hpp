#pragma once

#include <algorithm>
#include <any>
#include <array>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bbp/access.hpp"
#include "bbp/envtree.hpp"
#include "bbp/error.hpp"
#include "bbp/task_id.hpp"

namespace bbp {

enum class HookPoint : std::uint8_t {
  ProgramStart,
  ProgramEnd,
  AroundInitialize,
  AroundProcessing,
  AroundFinalize,
  AroundGetBlocks,
  AroundRefresh,
};
inline constexpr std::size_t kHookCount = 7;

inline const char* to_string(HookPoint h) {
  switch (h) {
    case HookPoint::ProgramStart: return "ProgramStart";
    case HookPoint::ProgramEnd: return "ProgramEnd";
    case HookPoint::AroundInitialize: return "Initialize";
    case HookPoint::AroundProcessing: return "Processing";
    case HookPoint::AroundFinalize: return "Finalize";
    case HookPoint::AroundGetBlocks: return "GetBlocks";
    case HookPoint::AroundRefresh: return "Refresh";
  }
  return "?";
}

enum class AdviceKind : std::uint8_t { Before, After, Around };
enum class LayerKind : std::uint8_t { SharedMemory, MessagePassing };

inline const char* to_string(LayerKind k) { return k == LayerKind::SharedMemory ? "sm" : "mp"; }

// One line per advice firing when enabled.
class Tracer {
 public:
  explicit Tracer(bool enabled = false, std::ostream* echo = nullptr) : enabled_(enabled), echo_(echo) {}

  bool enabled() const { return enabled_; }
  void record(std::string line) {
    if (!enabled_) return;
    std::lock_guard lock(mu_);
    if (echo_) *echo_ << line << '\n';
    lines_.push_back(std::move(line));
  }
  std::vector<std::string> lines() const {
    std::lock_guard lock(mu_);
    return lines_;
  }

 private:
  bool enabled_;
  std::ostream* echo_;
  mutable std::mutex mu_;
  std::vector<std::string> lines_;
};

struct RuntimeOptions {
  bool mmat = false;
  bool trace = false;
  std::ostream* trace_echo = nullptr;
  bool poison_write_slots = false;
  std::size_t warmup_cap = 8;
  std::size_t max_attempts = 16;
  std::chrono::milliseconds deadlock_timeout{60000};
};

// Counters shared by every task of one run.
class RunStats {
 public:
  std::atomic<std::uint64_t> env_searches{0};
  std::atomic<std::uint64_t> mmat_hits{0};
  std::atomic<std::uint64_t> missing_reads{0};
  std::atomic<std::uint64_t> slow_reads{0};
  std::atomic<std::uint64_t> fast_reads{0};
  std::atomic<std::uint64_t> reexecs{0};
  std::atomic<std::uint64_t> warmup_reexecs{0};
  std::atomic<std::uint64_t> warmup_passes{0};
  std::atomic<std::uint64_t> pages_fetched{0};
  std::atomic<std::uint64_t> local_fetches{0};
  std::atomic<std::uint64_t> messages{0};
  std::atomic<std::uint64_t> requests{0};
  std::atomic<std::uint64_t> replies{0};
  std::atomic<std::uint64_t> barriers{0};
  std::atomic<std::uint64_t> shutdowns{0};
  std::atomic<std::uint64_t> messages_after_shutdown{0};
  std::atomic<std::uint64_t> initialize_calls{0};
  std::atomic<std::uint64_t> processing_calls{0};
  std::atomic<std::uint64_t> finalize_calls{0};

  std::uint32_t next_group() { return groups_++; }
  std::uint32_t groups() const { return groups_.load(); }

  void add_counters(const AccessCounters& c) {
    env_searches += c.env_searches;
    mmat_hits += c.mmat_hits;
    missing_reads += c.missing_reads;
    slow_reads += c.slow_reads;
    fast_reads += c.fast_reads;
  }

  // `step` is the number of committed steps of the group after the commit.
  void add_step_fetches(std::uint64_t step, std::uint64_t pages) {
    std::lock_guard lock(mu_);
    if (step_fetches_.size() <= step) step_fetches_.resize(step + 1, 0);
    step_fetches_[step] += pages;
  }
  std::vector<std::uint64_t> step_fetches() const {
    std::lock_guard lock(mu_);
    return step_fetches_;
  }

  void add_refresh_outcome(std::uint32_t group, bool ok) {
    std::lock_guard lock(mu_);
    if (outcomes_.size() <= group) outcomes_.resize(group + 1);
    outcomes_[group].push_back(ok);
  }
  std::vector<std::vector<bool>> refresh_outcomes() const {
    std::lock_guard lock(mu_);
    return outcomes_;
  }

  void note_phase(int phase, double ms) {
    std::lock_guard lock(mu_);
    phase_ms_[phase] = std::max(phase_ms_[phase], ms);
  }
  std::array<double, 3> phase_ms() const {
    std::lock_guard lock(mu_);
    return phase_ms_;
  }

  void note_pool(const PoolUsage& u, std::size_t working) {
    std::lock_guard lock(mu_);
    pool_.used_bytes += u.used_bytes;
    pool_.free_bytes += u.free_bytes;
    working_bytes_ += working;
  }
  PoolUsage pool() const {
    std::lock_guard lock(mu_);
    return pool_;
  }
  std::size_t working_bytes() const {
    std::lock_guard lock(mu_);
    return working_bytes_;
  }

 private:
  std::atomic<std::uint32_t> groups_{0};
  mutable std::mutex mu_;
  std::vector<std::uint64_t> step_fetches_;
  std::vector<std::vector<bool>> outcomes_;
  std::array<double, 3> phase_ms_{};
  PoolUsage pool_;
  std::size_t working_bytes_ = 0;
};

// State of one Env copy and the tasks sharing it.
struct GroupState {
  PageInterface* env = nullptr;
  GroupAccess access;
  std::uint32_t index = 0;
  std::mutex assign_mu;
  std::vector<bool> assigned_levels;
};

class LayerStack;

struct TaskContext {
  TaskId tid;
  const LayerStack* stack = nullptr;
  std::vector<std::shared_ptr<void>> layer_state;
  std::shared_ptr<GroupState> group;
  RunStats* stats = nullptr;
  Tracer* tracer = nullptr;
  const RuntimeOptions* options = nullptr;
  AccessMode mode = AccessMode::Normal;

  template <class T>
  T* state(std::size_t pos) const {
    return pos < layer_state.size() ? static_cast<T*>(layer_state[pos].get()) : nullptr;
  }
};

// Join point body of get_blocks: the Data Blocks of the caller's subtree in
// zindex order.
inline std::vector<BlockId> collect_blocks(TaskContext& ctx) {
  std::vector<BlockId> out;
  const PageInterface& env = *ctx.group->env;
  for (BlockId b : env.data_blocks()) {
    const auto& ch = env.ch_tid(b);
    if (ch && ch->matches_prefix(ctx.tid)) out.push_back(b);
  }
  return out;
}

class Layer;
class JoinPoint;

struct Advice {
  AdviceKind kind = AdviceKind::Around;
  std::function<void(JoinPoint&)> fn;
};

namespace detail {

struct WovenAdvice {
  const Layer* layer;
  std::size_t position;
  const Advice* advice;
};

struct Chain {
  HookPoint hook;
  std::vector<WovenAdvice> advices;
  std::function<void(JoinPoint&)> body;

  void invoke(std::size_t level, TaskContext& ctx, std::any* result) const;
};

}  // namespace detail

class JoinPoint {
 public:
  HookPoint hook() const { return chain_->hook; }
  TaskContext& context() const { return *ctx_; }
  // Stack position of the layer whose advice is running.
  std::size_t position() const { return chain_->advices[level_].position; }

  void proceed() { proceed(*ctx_); }
  void proceed(TaskContext& ctx) { chain_->invoke(level_ + 1, ctx, result_); }

  template <class T>
  T& result() {
    return std::any_cast<T&>(*result_);
  }

 private:
  friend struct detail::Chain;
  JoinPoint(const detail::Chain* chain, std::size_t level, TaskContext* ctx, std::any* result)
      : chain_(chain), level_(level), ctx_(ctx), result_(result) {}

  const detail::Chain* chain_;
  std::size_t level_;
  TaskContext* ctx_;
  std::any* result_;
};

class Layer {
 public:
  Layer(std::string name, LayerKind kind, std::size_t parallelism)
      : name_(std::move(name)), kind_(kind), parallelism_(parallelism) {
    if (parallelism == 0) throw Error(ErrorCode::InvalidConfig, "layer parallelism must be >= 1");
  }
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const { return name_; }
  LayerKind kind() const { return kind_; }
  std::size_t parallelism() const { return parallelism_; }

  const Advice* advice(HookPoint h) const {
    const auto& a = advice_[static_cast<std::size_t>(h)];
    return a ? &*a : nullptr;
  }

 protected:
  void advise(HookPoint h, AdviceKind kind, std::function<void(JoinPoint&)> fn) {
    auto& slot = advice_[static_cast<std::size_t>(h)];
    if (slot) throw Error(ErrorCode::InvalidConfig, name_ + " advises " + to_string(h) + " twice");
    slot = Advice{kind, std::move(fn)};
  }

 private:
  std::string name_;
  LayerKind kind_;
  std::size_t parallelism_;
  std::array<std::optional<Advice>, kHookCount> advice_;
};

inline void detail::Chain::invoke(std::size_t level, TaskContext& ctx, std::any* result) const {
  JoinPoint jp(this, level, &ctx, result);
  if (level == advices.size()) {
    body(jp);
    return;
  }
  const auto& w = advices[level];
  auto fire = [&] {
    if (ctx.tracer && ctx.tracer->enabled()) {
      ctx.tracer->record(std::string(to_string(hook)) + " " + w.layer->name() + "#" + std::to_string(w.position) +
                         " " + ctx.tid.str());
    }
    w.advice->fn(jp);
  };
  switch (w.advice->kind) {
    case AdviceKind::Before:
      fire();
      jp.proceed();
      break;
    case AdviceKind::After:
      jp.proceed();
      fire();
      break;
    case AdviceKind::Around: fire(); break;
  }
}

class LayerStack {
 public:
  LayerStack() = default;

  // Layers outermost first. Message passing may only appear once, outermost.
  explicit LayerStack(std::vector<std::shared_ptr<Layer>> layers) : layers_(std::move(layers)) {
    bool seen_sm = false;
    bool seen_mp = false;
    for (const auto& l : layers_) {
      if (!l) throw Error(ErrorCode::InvalidConfig, "null layer");
      if (l->kind() == LayerKind::MessagePassing) {
        if (seen_sm) throw Error(ErrorCode::InvalidNesting, "message passing layer inside a shared memory layer");
        if (seen_mp) throw Error(ErrorCode::InvalidNesting, "only one message passing layer is supported");
        seen_mp = true;
      } else {
        seen_sm = true;
      }
    }
  }

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  std::size_t leaf_task_count() const {
    std::size_t n = 1;
    for (const auto& l : layers_) n *= l->parallelism();
    return n;
  }

  std::string describe() const {
    if (layers_.empty()) return "serial";
    std::string s;
    for (const auto& l : layers_) {
      if (!s.empty()) s += ",";
      s += std::string(to_string(l->kind())) + ":" + std::to_string(l->parallelism());
    }
    return s;
  }

  // Lifecycle hooks wrap outermost first; GetBlocks and Refresh start at a
  // leaf task and wrap innermost first.
  template <class R>
  R weave(HookPoint h, TaskContext& ctx, std::function<R(TaskContext&)> body) const {
    detail::Chain chain;
    chain.hook = h;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (const Advice* a = layers_[i]->advice(h)) chain.advices.push_back({layers_[i].get(), i, a});
    }
    if (h == HookPoint::AroundGetBlocks || h == HookPoint::AroundRefresh) {
      std::reverse(chain.advices.begin(), chain.advices.end());
    }
    std::any result;
    if constexpr (std::is_void_v<R>) {
      chain.body = [&](JoinPoint& jp) { body(jp.context()); };
      chain.invoke(0, ctx, &result);
    } else {
      result = R{};
      chain.body = [&](JoinPoint& jp) { jp.result<R>() = body(jp.context()); };
      chain.invoke(0, ctx, &result);
      return std::any_cast<R>(std::move(result));
    }
  }

 private:
  std::vector<std::shared_ptr<Layer>> layers_;
};

}  // namespace bbp
