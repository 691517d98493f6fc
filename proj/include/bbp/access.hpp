#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <mutex>
#include <set>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "bbp/envtree.hpp"
#include "bbp/error.hpp"
#include "bbp/item_traits.hpp"
#include "bbp/task_id.hpp"

namespace bbp {

enum class AccessMode { Normal, WarmUp };

enum class MmatAction { Enable, Disable, Reset };

struct PageKey {
  BlockId block = kNoBlock;
  std::uint32_t page = 0;
  friend bool operator==(const PageKey&, const PageKey&) = default;
  friend auto operator<=>(const PageKey&, const PageKey&) = default;
};

// Pages read while absent during the current step, plus the dry-run record
// of every remote page that was ever missed (refetched ahead of each step).
struct MissingPageLedger {
  std::set<PageKey> step;
  std::set<PageKey> persistent;

  void merge_step(const MissingPageLedger& other) { step.insert(other.step.begin(), other.step.end()); }
};

// Memoised outcome of one out-of-fast-path access.
struct Resolution {
  enum class Kind : std::uint8_t { Unset, InBlock, Data, Remote, Virtual };
  Kind kind = Kind::Unset;
  BlockId target = kNoBlock;
  std::uint32_t offset = 0;
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

// Keyed by (block, ordinal of the access within one subkernel execution).
class MmatTable {
 public:
  bool enabled() const { return enabled_; }
  void control(MmatAction action) {
    switch (action) {
      case MmatAction::Enable: enabled_ = true; break;
      case MmatAction::Disable: enabled_ = false; break;
      case MmatAction::Reset: table_.clear(); break;
    }
  }

  std::vector<Resolution>& entries_for(BlockId block) { return table_[block]; }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [b, v] : table_) {
      for (const auto& r : v) n += r.kind != Resolution::Kind::Unset;
    }
    return n;
  }
  bool empty() const { return size() == 0; }

  const std::unordered_map<BlockId, std::vector<Resolution>>& raw() const { return table_; }

  friend bool operator==(const MmatTable& a, const MmatTable& b) { return a.table_ == b.table_; }

 private:
  bool enabled_ = false;
  std::unordered_map<BlockId, std::vector<Resolution>> table_;
};

struct AccessCounters {
  std::uint64_t env_searches = 0;
  std::uint64_t mmat_hits = 0;
  std::uint64_t missing_reads = 0;
  std::uint64_t fast_reads = 0;
  std::uint64_t slow_reads = 0;
};

// Task-local access state: one per leaf task, merged into the group only at
// refresh.
struct AccessState {
  AccessMode mode = AccessMode::Normal;
  MmatTable mmat;
  MissingPageLedger ledger;
  AccessCounters counters;
};

// Per Env copy (task group) state that refresh works on.
struct GroupAccess {
  std::mutex mu;
  MissingPageLedger ledger;
  std::uint64_t committed_steps = 0;
  bool poison_writes = false;
};

// The join point body of refresh: commit if nothing was missing. Warm-up
// rounds never swap, so their writes are discarded.
inline bool commit_step(PageInterface& env, GroupAccess& group, AccessMode mode) {
  if (!group.ledger.step.empty()) {
    group.ledger.step.clear();
    return false;
  }
  if (mode == AccessMode::Normal) {
    env.swap_data_blocks();
    env.invalidate_remote_pages();
    ++group.committed_steps;
  }
  if (group.poison_writes) env.poison_write_slots();
  return true;
}

// Block-based data interface of one block for one task. Creating a view
// starts a new subkernel execution for access ordinals.
template <PageItem Item, std::size_t Dim>
class BlockView {
 public:
  using GA = GlobalAddress<Dim>;
  using LA = LocalAddress<Dim>;

  BlockView(Env<Item, Dim>& env, AccessState& state, BlockId block, const TaskId& caller)
      : env_(&env), state_(&state), block_(block), buf_(nullptr) {
    const auto& n = env.node(block);
    if (!n.placement) throw Error(ErrorCode::InvalidRead, "views need a block with placement");
    buf_ = n.buffer.get();
    origin_ = n.placement->origin;
    if (n.kind != BlockKind::Data) {
      write_error_ = ErrorCode::VirtualWrite;
    } else if (!n.ch_tid || *n.ch_tid != caller) {
      write_error_ = ErrorCode::NotOwner;
    } else {
      writable_ = true;
    }
    if (state.mmat.enabled()) memo_ = &state.mmat.entries_for(block);
  }

  BlockId block() const { return block_; }
  const Coords<Dim>& extent() const { return env_->block_extent(); }
  const Coords<Dim>& origin() const { return origin_; }
  std::uint32_t access_ordinal() const { return seq_; }

  // `known_local` promises the address lies in this block and skips every
  // lookup.
  Item get(const LA& l, bool known_local) {
    if (known_local) return get_local(l);
    return slow_read(to_global(l));
  }
  Item get_local(const LA& l) {
    ++state_->counters.fast_reads;
    return load(buf_->item_ptr(buf_->read_slot(), env_->linear_index(l)));
  }
  Item get_global(const GA& g) { return slow_read(g); }

  void set(const LA& l, const Item& v) {
    if (!writable_) throw Error(write_error_, "block " + std::to_string(block_) + " is not writable by this task");
    const std::size_t idx = env_->linear_index(l);
    std::memcpy(buf_->item_ptr(buf_->write_slot(), idx), &v, sizeof(Item));
    buf_->page(buf_->write_slot(), buf_->page_index(idx)).dirty = true;
  }

  GA to_global(const LA& l) const {
    GA g;
    for (std::size_t d = 0; d < Dim; ++d) g.c[d] = origin_[d] + l.c[d];
    return g;
  }

 private:
  static Item load(const std::byte* p) {
    Item v;
    std::memcpy(&v, p, sizeof(Item));
    return v;
  }

  Item slow_read(const GA& g) {
    ++state_->counters.slow_reads;
    const std::uint32_t seq = seq_++;
    if (memo_) {
      if (memo_->size() <= seq) memo_->resize(seq + 1);
      const Resolution& r = (*memo_)[seq];
      if (r.kind != Resolution::Kind::Unset) {
        ++state_->counters.mmat_hits;
        return apply(r, g);
      }
    }
    ++state_->counters.env_searches;
    const Resolution r = resolve(g);
    if (memo_) (*memo_)[seq] = r;
    return apply(r, g);
  }

  Resolution resolve(const GA& g) const {
    auto found = env_->find_block(block_, g);
    if (!found) throw Error(ErrorCode::OutOfDomain, "no block covers the address");
    BlockId id = *found;
    if (id == block_) {
      return {Resolution::Kind::InBlock, id, static_cast<std::uint32_t>(env_->linear_index(env_->global_to_local(id, g)))};
    }
    BlockId target = id;
    GA tg = g;
    if (env_->kind(id) == BlockKind::Reference) std::tie(target, tg) = env_->resolve_reference(id, g);
    switch (env_->kind(target)) {
      case BlockKind::Data:
        return {Resolution::Kind::Data, target,
                static_cast<std::uint32_t>(env_->linear_index(env_->global_to_local(target, tg)))};
      case BlockKind::BufferOnly:
        return {Resolution::Kind::Remote, target,
                static_cast<std::uint32_t>(env_->linear_index(env_->global_to_local(target, tg)))};
      case BlockKind::StaticData:
      case BlockKind::Arithmetic:
      case BlockKind::Reference:
        return {Resolution::Kind::Virtual, id, 0};
      case BlockKind::Empty: break;
    }
    throw Error(ErrorCode::InvalidRead, "address resolves to an Empty joint");
  }

  Item apply(const Resolution& r, const GA& g) {
    switch (r.kind) {
      case Resolution::Kind::InBlock: return load(buf_->item_ptr(buf_->read_slot(), r.offset));
      case Resolution::Kind::Data: {
        const auto& b = env_->buffer(r.target);
        return load(b.item_ptr(b.read_slot(), r.offset));
      }
      case Resolution::Kind::Remote: {
        const auto& b = env_->buffer(r.target);
        const std::size_t page = b.page_index(r.offset);
        if (b.page(b.read_slot(), page).valid) return load(b.item_ptr(b.read_slot(), r.offset));
        ++state_->counters.missing_reads;
        state_->ledger.step.insert({r.target, static_cast<std::uint32_t>(page)});
        return poison_value<Item>();
      }
      case Resolution::Kind::Virtual: return env_->virtual_read(r.target, g);
      case Resolution::Kind::Unset: break;
    }
    throw Error(ErrorCode::InvalidRead, "unresolved access");
  }

  Env<Item, Dim>* env_;
  AccessState* state_;
  BlockId block_;
  BlockBuffer* buf_;
  Coords<Dim> origin_{};
  std::vector<Resolution>* memo_ = nullptr;
  std::uint32_t seq_ = 0;
  bool writable_ = false;
  ErrorCode write_error_ = ErrorCode::VirtualWrite;
};

}  // namespace bbp
