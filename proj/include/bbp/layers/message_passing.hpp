#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "bbp/access.hpp"
#include "bbp/error.hpp"
#include "bbp/layers/hooks.hpp"
#include "bbp/layers/shared_memory.hpp"
#include "bbp/layers/zorder.hpp"

namespace bbp {

struct PageMessage {
  enum class Kind : std::uint8_t { Request, Reply, Barrier, Shutdown };
  // Barrier messages carry either a refresh vote or the end of a fetch phase.
  enum class Phase : std::uint8_t { None, Vote, FetchDone };

  Kind kind = Kind::Barrier;
  Phase phase = Phase::None;
  std::uint64_t round = 0;
  bool flag = false;
  BlockId block = kNoBlock;
  std::uint32_t page = 0;
  std::vector<std::byte> payload;
  std::uint32_t sender = 0;
};

inline const char* to_string(PageMessage::Kind k) {
  switch (k) {
    case PageMessage::Kind::Request: return "Request";
    case PageMessage::Kind::Reply: return "Reply";
    case PageMessage::Kind::Barrier: return "Barrier";
    case PageMessage::Kind::Shutdown: return "Shutdown";
  }
  return "?";
}

// Reliable FIFO inbox of one rank.
class Channel {
 public:
  void push(PageMessage m) {
    {
      std::lock_guard lock(mu_);
      q_.push_back(std::move(m));
    }
    cv_.notify_one();
  }

  // False on timeout. Throws once the world is aborted.
  bool pop(PageMessage& out, std::chrono::milliseconds timeout, const std::atomic<bool>& aborted) {
    std::unique_lock lock(mu_);
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (q_.empty()) {
      if (aborted.load()) throw Error(ErrorCode::TaskFailure, "world aborted");
      if (cv_.wait_until(lock, std::min(deadline, std::chrono::steady_clock::now() + std::chrono::milliseconds(20))) ==
              std::cv_status::timeout &&
          std::chrono::steady_clock::now() >= deadline && q_.empty()) {
        return false;
      }
    }
    out = std::move(q_.front());
    q_.pop_front();
    return true;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return q_.size();
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<PageMessage> q_;
};

// The set of in-process ranks of one message passing layer.
class World {
 public:
  World(std::size_t ranks, std::chrono::milliseconds timeout) : timeout_(timeout) {
    for (std::size_t r = 0; r < ranks; ++r) inboxes_.push_back(std::make_unique<Channel>());
  }

  std::size_t ranks() const { return inboxes_.size(); }
  std::chrono::milliseconds timeout() const { return timeout_; }
  Channel& inbox(std::size_t r) { return *inboxes_[r]; }

  void abort() { aborted_ = true; }
  const std::atomic<bool>& aborted() const { return aborted_; }

  std::size_t residual() const {
    std::size_t n = 0;
    for (const auto& c : inboxes_) n += c->size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Channel>> inboxes_;
  std::chrono::milliseconds timeout_;
  std::atomic<bool> aborted_{false};
};

// One rank's view of the world: its inbox plus messages set aside for later
// rounds.
class RankEndpoint {
 public:
  RankEndpoint(std::shared_ptr<World> world, std::uint32_t rank, RunStats* stats)
      : world_(std::move(world)), rank_(rank), stats_(stats) {}

  std::uint32_t rank() const { return rank_; }
  std::size_t ranks() const { return world_->ranks(); }
  std::uint64_t next_round() { return ++round_; }
  std::uint64_t round() const { return round_; }
  bool shut_down() const { return shut_down_; }
  std::size_t deferred() const { return deferred_.size(); }

  void send(std::uint32_t to, PageMessage m) {
    if (shut_down_) throw Error(ErrorCode::ProtocolError, "rank " + std::to_string(rank_) + " sends after shutdown");
    m.sender = rank_;
    if (stats_) {
      ++stats_->messages;
      switch (m.kind) {
        case PageMessage::Kind::Request: ++stats_->requests; break;
        case PageMessage::Kind::Reply: ++stats_->replies; break;
        case PageMessage::Kind::Barrier: ++stats_->barriers; break;
        case PageMessage::Kind::Shutdown: ++stats_->shutdowns; break;
      }
    }
    world_->inbox(to).push(std::move(m));
  }

  // Next message accepted by `want`; others are kept for later.
  PageMessage receive(const std::function<bool(const PageMessage&)>& want, const char* waiting_for) {
    for (auto it = deferred_.begin(); it != deferred_.end(); ++it) {
      if (want(*it)) {
        PageMessage m = std::move(*it);
        deferred_.erase(it);
        return m;
      }
    }
    for (;;) {
      PageMessage m;
      if (!world_->inbox(rank_).pop(m, world_->timeout(), world_->aborted())) {
        throw Error(ErrorCode::ProtocolError, "deadlock suspected: rank " + std::to_string(rank_) + " waiting for " +
                                                  waiting_for + " in round " + std::to_string(round_));
      }
      if (m.kind != PageMessage::Kind::Shutdown && m.round < round_) {
        throw Error(ErrorCode::ProtocolError, "stale " + std::string(to_string(m.kind)) + " from round " +
                                                  std::to_string(m.round) + " in round " + std::to_string(round_));
      }
      if (want(m)) return m;
      deferred_.push_back(std::move(m));
    }
  }

  // All-to-all vote: true iff every rank voted true.
  bool vote(bool ok) {
    const std::uint64_t r = round_;
    for (std::uint32_t p = 0; p < ranks(); ++p) {
      if (p == rank_) continue;
      PageMessage m;
      m.kind = PageMessage::Kind::Barrier;
      m.phase = PageMessage::Phase::Vote;
      m.round = r;
      m.flag = ok;
      send(p, std::move(m));
    }
    bool all = ok;
    for (std::size_t i = 1; i < ranks(); ++i) {
      auto m = receive(
          [r](const PageMessage& x) {
            return x.kind == PageMessage::Kind::Barrier && x.phase == PageMessage::Phase::Vote && x.round == r;
          },
          "votes");
      all = all && m.flag;
    }
    return all;
  }

  // Fetches `keys` from their owners and serves peers' requests until every
  // rank has finished the phase. Returns the number of pages received.
  std::uint64_t fetch(PageInterface& env, std::size_t level, const std::set<PageKey>& keys) {
    const std::uint64_t r = round_;
    std::uint64_t pending = 0;
    for (const auto& k : keys) {
      const auto& owner = env.ch_tid(k.block);
      if (!owner || !owner->has(level)) {
        throw Error(ErrorCode::ProtocolError, "block " + std::to_string(k.block) + " has no owner");
      }
      if ((*owner)[level] == rank_) {
        if (stats_) ++stats_->local_fetches;
        continue;
      }
      PageMessage m;
      m.kind = PageMessage::Kind::Request;
      m.round = r;
      m.block = k.block;
      m.page = k.page;
      send((*owner)[level], std::move(m));
      ++pending;
    }
    for (std::uint32_t p = 0; p < ranks(); ++p) {
      if (p == rank_) continue;
      PageMessage m;
      m.kind = PageMessage::Kind::Barrier;
      m.phase = PageMessage::Phase::FetchDone;
      m.round = r;
      send(p, std::move(m));
    }

    std::uint64_t received = 0;
    std::size_t done = 0;
    while (pending > 0 || done + 1 < ranks()) {
      auto m = receive(
          [r](const PageMessage& x) {
            if (x.round != r) return false;
            return x.kind == PageMessage::Kind::Request || x.kind == PageMessage::Kind::Reply ||
                   (x.kind == PageMessage::Kind::Barrier && x.phase == PageMessage::Phase::FetchDone);
          },
          "pages");
      switch (m.kind) {
        case PageMessage::Kind::Request: {
          PageMessage reply;
          reply.kind = PageMessage::Kind::Reply;
          reply.round = r;
          reply.block = m.block;
          reply.page = m.page;
          reply.payload.resize(env.page_bytes());
          env.read_page(m.block, m.page, reply.payload);
          send(m.sender, std::move(reply));
          break;
        }
        case PageMessage::Kind::Reply:
          if (m.payload.size() != env.page_bytes()) {
            throw Error(ErrorCode::ProtocolError, "reply of " + std::to_string(m.payload.size()) +
                                                      " bytes, page holds " + std::to_string(env.page_bytes()));
          }
          if (pending == 0) throw Error(ErrorCode::ProtocolError, "unrequested reply");
          env.install_page(m.block, m.page, m.payload);
          --pending;
          ++received;
          break;
        case PageMessage::Kind::Barrier: ++done; break;
        case PageMessage::Kind::Shutdown: break;
      }
    }
    return received;
  }

  void shutdown() {
    for (std::uint32_t p = 0; p < ranks(); ++p) {
      if (p == rank_) continue;
      PageMessage m;
      m.kind = PageMessage::Kind::Shutdown;
      m.round = round_;
      send(p, std::move(m));
    }
    for (std::size_t i = 1; i < ranks(); ++i) {
      receive([](const PageMessage& x) { return x.kind == PageMessage::Kind::Shutdown; }, "shutdown");
    }
    shut_down_ = true;
    if (!deferred_.empty()) {
      throw Error(ErrorCode::ProtocolError,
                  std::to_string(deferred_.size()) + " unconsumed messages at shutdown of rank " + std::to_string(rank_));
    }
  }

 private:
  std::shared_ptr<World> world_;
  std::uint32_t rank_;
  RunStats* stats_;
  std::uint64_t round_ = 0;
  bool shut_down_ = false;
  std::deque<PageMessage> deferred_;
};

// Isolated ranks, each with its own Env copy, talking only through
// PageMessages.
class MessagePassingLayer final : public Layer {
 public:
  explicit MessagePassingLayer(std::size_t ranks, std::string name = "mp")
      : Layer(std::move(name), LayerKind::MessagePassing, ranks) {
    advise(HookPoint::ProgramStart, AdviceKind::Around, [this](JoinPoint& jp) { program_start(jp); });
    advise(HookPoint::ProgramEnd, AdviceKind::After, [](JoinPoint& jp) { program_end(jp); });
    advise(HookPoint::AroundGetBlocks, AdviceKind::Before, [](JoinPoint& jp) { specialize(jp); });
    advise(HookPoint::AroundRefresh, AdviceKind::Around, [](JoinPoint& jp) { refresh(jp); });
  }

 private:
  void program_start(JoinPoint& jp) {
    TaskContext& ctx = jp.context();
    const std::size_t pos = jp.position();
    const std::size_t n = parallelism();
    auto world = std::make_shared<World>(n, ctx.options ? ctx.options->deadlock_timeout : std::chrono::seconds(60));

    std::vector<TaskContext> ranks(n, ctx);
    for (std::size_t r = 0; r < n; ++r) {
      ranks[r].tid = ctx.tid.child(static_cast<std::uint32_t>(r));
      ranks[r].layer_state[pos] = std::make_shared<RankEndpoint>(world, static_cast<std::uint32_t>(r), ctx.stats);
      ranks[r].group.reset();
    }
    std::mutex error_mu;
    std::exception_ptr error;
    TaskId failed;
    auto body = [&](std::size_t r) {
      try {
        jp.proceed(ranks[r]);
      } catch (...) {
        {
          std::lock_guard lock(error_mu);
          if (!error) {
            error = std::current_exception();
            failed = ranks[r].tid;
          }
        }
        world->abort();
      }
    };
    {
      std::vector<std::jthread> threads;
      threads.reserve(n);
      for (std::size_t r = 0; r < n; ++r) threads.emplace_back(body, r);
    }
    if (error) rethrow_task_failure(error, failed);
    if (ctx.stats) ctx.stats->messages_after_shutdown += world->residual();
  }

  static void program_end(JoinPoint& jp) {
    auto* ep = jp.context().state<RankEndpoint>(jp.position());
    if (ep) ep->shutdown();
  }

  // Block assignment and Env specialization, once per rank.
  static void specialize(JoinPoint& jp) {
    TaskContext& ctx = jp.context();
    const std::size_t pos = jp.position();
    if (!ctx.tid.has(pos)) return;
    GroupState& g = *ctx.group;
    std::lock_guard lock(g.assign_mu);
    if (g.assigned_levels.size() <= pos) g.assigned_levels.resize(pos + 1, false);
    if (g.assigned_levels[pos]) return;
    PageInterface& env = *g.env;
    TaskId upper(std::vector<std::uint32_t>(ctx.tid.indices().begin(), ctx.tid.indices().begin() + pos));
    std::vector<ZBlock> z;
    for (BlockId b : env.storage_blocks()) {
      const auto& ch = env.ch_tid(b);
      if (ch && ch->matches_prefix(upper)) z.push_back({b, env.zindex(b)});
    }
    const auto runs = assign_blocks(z, ranks_of(jp));
    for (std::size_t r = 0; r < runs.size(); ++r) {
      for (BlockId b : runs[r]) env.assign(b, pos, static_cast<std::uint32_t>(r));
    }
    const std::uint32_t me = ctx.tid[pos];
    env.specialize([&](const TaskId& t) { return t.has(pos) && t[pos] == me; });
    g.assigned_levels[pos] = true;
  }

  static std::size_t ranks_of(JoinPoint& jp) {
    return jp.context().stack->layer(jp.position()).parallelism();
  }

  static void refresh(JoinPoint& jp) {
    TaskContext& ctx = jp.context();
    const std::size_t pos = jp.position();
    auto* ep = ctx.state<RankEndpoint>(pos);
    if (!ep) {
      jp.proceed();
      return;
    }
    GroupState& g = *ctx.group;
    PageInterface& env = *g.env;
    ep->next_round();

    bool local_ok;
    {
      std::lock_guard lock(g.access.mu);
      local_ok = g.access.ledger.step.empty();
    }
    const bool all_ok = ep->vote(local_ok);
    if (ctx.stats) ctx.stats->add_refresh_outcome(g.index, all_ok);

    if (all_ok) {
      jp.proceed();
      std::set<PageKey> prefetch;
      if (ctx.mode == AccessMode::Normal) {
        std::lock_guard lock(g.access.mu);
        prefetch = g.access.ledger.persistent;
      }
      const auto got = ep->fetch(env, pos, prefetch);
      if (ctx.stats) {
        ctx.stats->pages_fetched += got;
        if (ctx.mode == AccessMode::Normal) ctx.stats->add_step_fetches(g.access.committed_steps, got);
      }
      return;
    }

    // Another rank (or this one) missed pages: fetch ours and re-execute.
    std::set<PageKey> missing;
    {
      std::lock_guard lock(g.access.mu);
      missing = g.access.ledger.step;
    }
    const auto got = ep->fetch(env, pos, missing);
    {
      std::lock_guard lock(g.access.mu);
      g.access.ledger.persistent.insert(missing.begin(), missing.end());
      g.access.ledger.step.clear();
    }
    if (ctx.stats) ctx.stats->pages_fetched += got;
    jp.result<bool>() = false;
  }
};

}  // namespace bbp
