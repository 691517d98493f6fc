#pragma once

#include <condition_variable>
#include <exception>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "bbp/error.hpp"
#include "bbp/layers/hooks.hpp"
#include "bbp/layers/zorder.hpp"

namespace bbp {

// Reusable barrier that can be torn down when a team member fails.
class TeamBarrier {
 public:
  explicit TeamBarrier(std::size_t n) : n_(n) {}

  void arrive_and_wait() {
    std::unique_lock lock(mu_);
    if (aborted_) throw Error(ErrorCode::TaskFailure, "team aborted");
    const std::uint64_t gen = generation_;
    if (++waiting_ == n_) {
      waiting_ = 0;
      ++generation_;
      cv_.notify_all();
      return;
    }
    cv_.wait(lock, [&] { return generation_ != gen || aborted_; });
    if (generation_ == gen) throw Error(ErrorCode::TaskFailure, "team aborted");
  }

  void abort() {
    std::lock_guard lock(mu_);
    aborted_ = true;
    cv_.notify_all();
  }

 private:
  std::size_t n_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t waiting_ = 0;
  std::uint64_t generation_ = 0;
  bool aborted_ = false;
};

// Threads of one shared-memory layer instance; they share the Env.
struct Team {
  explicit Team(std::size_t n) : barrier(n) {}

  TeamBarrier barrier;
  bool refresh_result = false;

  std::mutex error_mu;
  std::exception_ptr error;
  TaskId failed;

  void fail(std::exception_ptr e, const TaskId& tid) {
    {
      std::lock_guard lock(error_mu);
      if (!error) {
        error = std::move(e);
        failed = tid;
      }
    }
    barrier.abort();
  }
};

// Rethrows the first failure with the failing task id attached.
inline void rethrow_task_failure(std::exception_ptr e, const TaskId& tid) {
  try {
    std::rethrow_exception(e);
  } catch (const Error& err) {
    if (err.detail().rfind("task ", 0) == 0) throw;
    throw Error(err.code(), "task " + tid.str() + ": " + err.detail());
  } catch (const std::exception& ex) {
    throw Error(ErrorCode::TaskFailure, "task " + tid.str() + ": " + ex.what());
  }
}

// Runs `parallelism` threads over one shared Env.
class SharedMemoryLayer final : public Layer {
 public:
  explicit SharedMemoryLayer(std::size_t parallelism, std::string name = "sm")
      : Layer(std::move(name), LayerKind::SharedMemory, parallelism) {
    advise(HookPoint::AroundProcessing, AdviceKind::Around, [this](JoinPoint& jp) { processing(jp); });
    advise(HookPoint::AroundGetBlocks, AdviceKind::Around, [this](JoinPoint& jp) { get_blocks(jp); });
    advise(HookPoint::AroundRefresh, AdviceKind::Around, [this](JoinPoint& jp) { refresh(jp); });
  }

 private:
  void processing(JoinPoint& jp) {
    TaskContext& ctx = jp.context();
    const std::size_t pos = jp.position();
    const std::size_t n = parallelism();

    // Subdivide the upper allocation before any thread starts, so the tree
    // is read-only while the team runs.
    const auto upper = ctx.stack->weave<std::vector<BlockId>>(HookPoint::AroundGetBlocks, ctx, collect_blocks);
    PageInterface& env = *ctx.group->env;
    std::vector<ZBlock> z;
    z.reserve(upper.size());
    for (BlockId b : upper) z.push_back({b, env.zindex(b)});
    const auto runs = assign_blocks(z, n);
    for (std::size_t t = 0; t < n; ++t) {
      for (BlockId b : runs[t]) env.assign(b, pos, static_cast<std::uint32_t>(t));
    }

    auto team = std::make_shared<Team>(n);
    std::vector<TaskContext> children(n, ctx);
    for (std::size_t t = 0; t < n; ++t) {
      children[t].tid = ctx.tid.child(static_cast<std::uint32_t>(t));
      children[t].layer_state[pos] = team;
    }
    auto body = [&](std::size_t t) {
      try {
        jp.proceed(children[t]);
      } catch (...) {
        team->fail(std::current_exception(), children[t].tid);
      }
    };
    if (n == 1) {
      body(0);
    } else {
      std::vector<std::jthread> threads;
      threads.reserve(n);
      for (std::size_t t = 0; t < n; ++t) threads.emplace_back(body, t);
    }
    if (team->error) rethrow_task_failure(team->error, team->failed);
  }

  // Takes this thread's share of the upper layer's allocation.
  void get_blocks(JoinPoint& jp) {
    TaskContext& ctx = jp.context();
    const std::size_t pos = jp.position();
    if (!ctx.tid.has(pos)) {
      jp.proceed();
      return;
    }
    TaskContext upper = ctx;
    upper.tid = TaskId(std::vector<std::uint32_t>(ctx.tid.indices().begin(), ctx.tid.indices().begin() + pos));
    jp.proceed(upper);
    auto& blocks = jp.result<std::vector<BlockId>>();
    const PageInterface& env = *ctx.group->env;
    std::erase_if(blocks, [&](BlockId b) {
      const auto& ch = env.ch_tid(b);
      return !ch || !ch->has(pos) || (*ch)[pos] != ctx.tid[pos];
    });
  }

  // Team rendezvous; the first thread runs the inner refresh for everyone.
  void refresh(JoinPoint& jp) {
    TaskContext& ctx = jp.context();
    const std::size_t pos = jp.position();
    Team* team = ctx.state<Team>(pos);
    if (!team || !ctx.tid.has(pos)) {
      jp.proceed();
      return;
    }
    team->barrier.arrive_and_wait();
    if (ctx.tid[pos] == 0) {
      jp.proceed();
      team->refresh_result = jp.result<bool>();
    }
    team->barrier.arrive_and_wait();
    jp.result<bool>() = team->refresh_result;
  }
};

}  // namespace bbp
