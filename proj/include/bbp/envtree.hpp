#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "bbp/error.hpp"
#include "bbp/geometry.hpp"
#include "bbp/item_traits.hpp"
#include "bbp/layers/zorder.hpp"
#include "bbp/mempool.hpp"
#include "bbp/task_id.hpp"

namespace bbp {

enum class BlockKind { Data, Empty, BufferOnly, StaticData, Arithmetic, Reference };

constexpr std::string_view to_string(BlockKind k) {
  switch (k) {
    case BlockKind::Data: return "Data";
    case BlockKind::Empty: return "Empty";
    case BlockKind::BufferOnly: return "BufferOnly";
    case BlockKind::StaticData: return "StaticData";
    case BlockKind::Arithmetic: return "Arithmetic";
    case BlockKind::Reference: return "Reference";
  }
  return "?";
}

constexpr bool is_virtual_source(BlockKind k) {
  return k == BlockKind::StaticData || k == BlockKind::Arithmetic || k == BlockKind::Reference;
}

using BlockId = std::uint32_t;
inline constexpr BlockId kNoBlock = std::numeric_limits<BlockId>::max();
inline constexpr std::uint64_t kVirtualZ = std::numeric_limits<std::uint64_t>::max();

// Constant lookup table for StaticData blocks; unknown coordinates fall back.
template <class Item, std::size_t Dim>
struct StaticTable {
  Item fallback{};
  std::map<Coords<Dim>, Item> entries;

  Item lookup(const GlobalAddress<Dim>& g) const {
    auto it = entries.find(g.c);
    return it == entries.end() ? fallback : it->second;
  }
};

// Closed expression set for Arithmetic blocks: constant, or affine in the
// global coordinates (scalar items only).
template <class Item, std::size_t Dim>
class ArithmeticExpr {
 public:
  static ArithmeticExpr constant(Item v) {
    ArithmeticExpr e;
    e.constant_ = v;
    return e;
  }

  static ArithmeticExpr affine(double c0, std::array<double, Dim> coeff)
    requires std::is_arithmetic_v<Item>
  {
    ArithmeticExpr e;
    e.affine_ = true;
    e.c0_ = c0;
    e.coeff_ = coeff;
    return e;
  }

  Item evaluate(const GlobalAddress<Dim>& g) const {
    if constexpr (std::is_arithmetic_v<Item>) {
      if (affine_) {
        double v = c0_;
        for (std::size_t d = 0; d < Dim; ++d) v += coeff_[d] * g.c[d];
        return static_cast<Item>(v);
      }
    }
    return constant_;
  }

  bool is_affine() const { return affine_; }

 private:
  Item constant_{};
  bool affine_ = false;
  double c0_ = 0.0;
  std::array<double, Dim> coeff_{};
};

// g'[d] = sign[d] * g[d] + offset[d]
template <std::size_t Dim>
struct CoordTransform {
  Coords<Dim> sign = [] {
    Coords<Dim> s{};
    s.fill(1);
    return s;
  }();
  Coords<Dim> offset{};

  GlobalAddress<Dim> apply(const GlobalAddress<Dim>& g) const {
    GlobalAddress<Dim> r;
    for (std::size_t d = 0; d < Dim; ++d) r.c[d] = sign[d] * g.c[d] + offset[d];
    return r;
  }

  static CoordTransform identity() { return {}; }
  // Reflect across the plane between `plane - 1` and `plane` on `axis`.
  static CoordTransform mirror(std::size_t axis, Coord plane) {
    CoordTransform t;
    t.sign[axis] = -1;
    t.offset[axis] = 2 * plane - 1;
    return t;
  }
  static CoordTransform translate(Coords<Dim> delta) {
    CoordTransform t;
    t.offset = delta;
    return t;
  }
};

template <std::size_t Dim>
struct ReferenceSpec {
  BlockId target = kNoBlock;
  CoordTransform<Dim> transform;
};

template <class Item, std::size_t Dim>
using VirtualPayload =
    std::variant<std::monostate, StaticTable<Item, Dim>, ArithmeticExpr<Item, Dim>, ReferenceSpec<Dim>>;

template <class Item, std::size_t Dim>
struct BlockNode {
  BlockKind kind = BlockKind::Empty;
  std::optional<Box<Dim>> placement;  // Data and BufferOnly
  Coverage<Dim> coverage;             // virtual sources
  std::optional<Box<Dim>> bounds;     // Empty joints: union of storage descendants
  Coords<Dim> block_coord{};
  std::optional<TaskId> dm_tid;
  std::optional<TaskId> ch_tid;
  std::unique_ptr<BlockBuffer> buffer;
  VirtualPayload<Item, Dim> payload;
  std::uint64_t zindex = kVirtualZ;
  BlockId parent = kNoBlock;
  std::vector<BlockId> children;  // sorted by (zindex, id)
  std::string label;
};

struct StorageConfig {
  std::size_t pool_bytes = 300u << 20;
  std::size_t chunk_bytes = MemoryPool::kDefaultChunkBytes;
  std::size_t pool_count = 1;
  std::size_t items_per_page = 256;
  std::size_t slots = BlockBuffer::kDefaultSlots;
};

template <class Item, std::size_t Dim>
struct VirtualSpec {
  BlockKind kind = BlockKind::Arithmetic;
  Coverage<Dim> coverage;
  VirtualPayload<Item, Dim> payload;
  std::string label;
};

template <std::size_t Dim>
struct JointPlan {
  // Group Data blocks into extra Empty joints of this many blocks per axis.
  std::optional<Coords<Dim>> group_blocks;
};

struct PoolUsage {
  std::size_t used_bytes = 0;
  std::size_t free_bytes = 0;
};

// Page-granular, type-erased view of an Env used by runtime layers: they
// move pages, flip validity and swap buffers without knowing the item type.
class PageInterface {
 public:
  virtual ~PageInterface() = default;

  virtual std::size_t node_count() const = 0;
  virtual BlockKind kind(BlockId id) const = 0;
  virtual std::uint64_t zindex(BlockId id) const = 0;
  virtual const std::optional<TaskId>& ch_tid(BlockId id) const = 0;
  virtual void assign(BlockId id, std::size_t level, std::uint32_t index) = 0;
  virtual std::vector<BlockId> storage_blocks() const = 0;
  virtual std::vector<BlockId> data_blocks() const = 0;
  virtual void specialize(const std::function<bool(const TaskId&)>& mine) = 0;

  virtual std::size_t page_bytes() const = 0;
  virtual std::size_t pages_per_block() const = 0;
  virtual bool page_valid(BlockId id, std::size_t page) const = 0;
  virtual void read_page(BlockId id, std::size_t page, std::span<std::byte> out) const = 0;
  virtual void install_page(BlockId id, std::size_t page, std::span<const std::byte> in) = 0;
  virtual void swap_data_blocks() = 0;
  virtual void invalidate_remote_pages() = 0;
  virtual void poison_write_slots() = 0;

  virtual PoolUsage pool_usage() const = 0;
  virtual std::size_t working_bytes_estimate() const = 0;
  virtual std::string dump() const = 0;
};

template <PageItem Item, std::size_t Dim>
class Env final : public PageInterface {
 public:
  using Node = BlockNode<Item, Dim>;
  using GA = GlobalAddress<Dim>;
  using LA = LocalAddress<Dim>;

  Env(Coords<Dim> domain_extent, Coords<Dim> block_extent, const StorageConfig& storage,
      std::vector<VirtualSpec<Item, Dim>> boundary, const JointPlan<Dim>& plan = {})
      : block_extent_(block_extent), storage_(storage) {
    domain_.size = domain_extent;
    Coords<Dim> blocks_per_axis{};
    for (std::size_t d = 0; d < Dim; ++d) {
      if (domain_extent[d] <= 0 || block_extent[d] <= 0 || domain_extent[d] % block_extent[d] != 0) {
        throw Error(ErrorCode::InvalidGeometry, "block extent does not divide domain extent on axis " +
                                                    std::to_string(d));
      }
      blocks_per_axis[d] = domain_extent[d] / block_extent[d];
    }
    blocks_per_axis_ = blocks_per_axis;
    block_volume_ = 1;
    for (auto e : block_extent) block_volume_ *= static_cast<std::size_t>(e);
    if (storage.items_per_page == 0) throw Error(ErrorCode::InvalidGeometry, "items_per_page must be > 0");
    pages_per_block_ = (block_volume_ + storage.items_per_page - 1) / storage.items_per_page;
    strides_[0] = 1;
    for (std::size_t d = 1; d < Dim; ++d) strides_[d] = strides_[d - 1] * block_extent[d - 1];

    for (std::size_t i = 0; i < storage.pool_count; ++i) {
      pools_.push_back(std::make_unique<MemoryPool>(storage.pool_bytes, storage.chunk_bytes,
                                                    static_cast<std::uint32_t>(i)));
    }

    root_ = add_node(BlockKind::Empty, kNoBlock, "root");
    if (boundary.size() == 1) {
      boundary_ = add_virtual(std::move(boundary.front()), root_);
    } else {
      boundary_ = add_node(BlockKind::Empty, root_, "boundary");
      for (auto& spec : boundary) add_virtual(std::move(spec), boundary_);
    }
    data_joint_ = add_node(BlockKind::Empty, root_, "data");

    // Data blocks in zindex order.
    std::vector<std::pair<std::uint64_t, Coords<Dim>>> coords;
    std::size_t nblocks = 1;
    for (auto b : blocks_per_axis) nblocks *= static_cast<std::size_t>(b);
    for (std::size_t lin = 0; lin < nblocks; ++lin) {
      Coords<Dim> bc{};
      std::size_t rest = lin;
      for (std::size_t d = 0; d < Dim; ++d) {
        bc[d] = static_cast<Coord>(rest % static_cast<std::size_t>(blocks_per_axis[d]));
        rest /= static_cast<std::size_t>(blocks_per_axis[d]);
      }
      coords.push_back({zindex_of(bc), bc});
    }
    std::sort(coords.begin(), coords.end());

    std::map<std::uint64_t, BlockId> joints;
    for (const auto& [z, bc] : coords) {
      BlockId parent = data_joint_;
      if (plan.group_blocks) {
        Coords<Dim> gc{};
        for (std::size_t d = 0; d < Dim; ++d) gc[d] = bc[d] / std::max<Coord>(1, (*plan.group_blocks)[d]);
        const auto gz = zindex_of(gc);
        auto it = joints.find(gz);
        if (it == joints.end()) it = joints.emplace(gz, add_node(BlockKind::Empty, data_joint_, "joint")).first;
        parent = it->second;
      }
      const BlockId id = add_node(BlockKind::Data, parent, "");
      Node& n = nodes_[id];
      n.block_coord = bc;
      n.zindex = z;
      Box<Dim> box;
      for (std::size_t d = 0; d < Dim; ++d) {
        box.origin[d] = bc[d] * block_extent[d];
        box.size[d] = block_extent[d];
      }
      n.placement = box;
      n.ch_tid = TaskId{};
      n.dm_tid = TaskId{};
      std::vector<MemoryPool*> pools;
      for (auto& p : pools_) pools.push_back(p.get());
      n.buffer = std::make_unique<BlockBuffer>(std::span<MemoryPool* const>(pools), pages_per_block_,
                                               storage.items_per_page, sizeof(Item), storage.slots);
      for (std::size_t s = 0; s < n.buffer->slot_count(); ++s) {
        for (std::size_t p = 0; p < pages_per_block_; ++p) n.buffer->page(s, p).valid = true;
      }
    }
    refresh_derived(root_);
  }

  Env(const Env&) = delete;
  Env& operator=(const Env&) = delete;

  // ---- tree structure --------------------------------------------------

  BlockId root() const { return root_; }
  BlockId boundary_branch() const { return boundary_; }
  BlockId data_joint() const { return data_joint_; }
  const Box<Dim>& domain() const { return domain_; }
  const Coords<Dim>& block_extent() const { return block_extent_; }
  const Coords<Dim>& blocks_per_axis() const { return blocks_per_axis_; }
  std::size_t block_volume() const { return block_volume_; }
  std::size_t items_per_page() const { return storage_.items_per_page; }

  const Node& node(BlockId id) const { return nodes_.at(id); }
  std::size_t node_count() const override { return nodes_.size(); }
  BlockKind kind(BlockId id) const override { return nodes_[id].kind; }
  std::uint64_t zindex(BlockId id) const override { return nodes_[id].zindex; }
  const std::optional<TaskId>& ch_tid(BlockId id) const override { return nodes_[id].ch_tid; }
  const std::optional<TaskId>& dm_tid(BlockId id) const { return nodes_[id].dm_tid; }

  bool is_valid(BlockId id) const {
    const Node& n = nodes_[id];
    switch (n.kind) {
      case BlockKind::Data:
      case BlockKind::StaticData:
      case BlockKind::Arithmetic:
      case BlockKind::Reference: return true;
      case BlockKind::Empty: return false;
      case BlockKind::BufferOnly: {
        for (std::size_t p = 0; p < pages_per_block_; ++p) {
          if (!n.buffer->page(n.buffer->read_slot(), p).valid) return false;
        }
        return true;
      }
    }
    return false;
  }

  BlockId add_virtual_block(VirtualSpec<Item, Dim> spec, BlockId parent) {
    if (nodes_.at(parent).kind != BlockKind::Empty) {
      throw Error(ErrorCode::InvalidSelector, "virtual blocks hang below Empty joints only");
    }
    const BlockId id = add_virtual(std::move(spec), parent);
    refresh_derived(root_);
    return id;
  }

  // Block coordinate -> Data/BufferOnly block id.
  BlockId block_at(const Coords<Dim>& block_coord) const {
    for (BlockId id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      if (n.placement && n.block_coord == block_coord) return id;
    }
    throw Error(ErrorCode::NotFound, "no block at given block coordinate");
  }

  std::vector<BlockId> storage_blocks() const override {
    std::vector<BlockId> out;
    for (BlockId id = 0; id < nodes_.size(); ++id) {
      if (nodes_[id].kind == BlockKind::Data || nodes_[id].kind == BlockKind::BufferOnly) out.push_back(id);
    }
    sort_by_z(out);
    return out;
  }

  std::vector<BlockId> data_blocks() const override {
    std::vector<BlockId> out;
    for (BlockId id = 0; id < nodes_.size(); ++id) {
      if (nodes_[id].kind == BlockKind::Data) out.push_back(id);
    }
    sort_by_z(out);
    return out;
  }

  // Every Data block below `from` (inclusive), for reachability checks.
  std::vector<BlockId> reachable_storage(BlockId from) const {
    std::vector<BlockId> out;
    std::vector<BlockId> stack{from};
    while (!stack.empty()) {
      const BlockId id = stack.back();
      stack.pop_back();
      const Node& n = nodes_[id];
      if (n.kind == BlockKind::Data || n.kind == BlockKind::BufferOnly) out.push_back(id);
      for (auto c : n.children) stack.push_back(c);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  // Re-parent `selected` children of `parent_joint` under a new Empty joint.
  // Returns the new joint, or kNoBlock when the selection is empty.
  BlockId insert_joint(BlockId parent_joint, const std::vector<BlockId>& selected) {
    if (nodes_.at(parent_joint).kind != BlockKind::Empty) {
      throw Error(ErrorCode::InvalidSelector, "joints can only be inserted below Empty blocks");
    }
    if (selected.empty()) return kNoBlock;
    auto& siblings = nodes_[parent_joint].children;
    for (auto s : selected) {
      if (std::find(siblings.begin(), siblings.end(), s) == siblings.end()) {
        throw Error(ErrorCode::InvalidSelector,
                    "block " + std::to_string(s) + " is not a child of joint " + std::to_string(parent_joint));
      }
    }
    const BlockId joint = add_node(BlockKind::Empty, parent_joint, "joint");
    for (auto s : selected) {
      auto& ch = nodes_[parent_joint].children;
      ch.erase(std::find(ch.begin(), ch.end(), s));
      nodes_[s].parent = joint;
      nodes_[joint].children.push_back(s);
    }
    refresh_derived(root_);
    return joint;
  }

  BlockId insert_joint(BlockId parent_joint, const std::function<bool(const Node&)>& selector) {
    std::vector<BlockId> sel;
    for (auto c : nodes_.at(parent_joint).children) {
      if (selector(nodes_[c])) sel.push_back(c);
    }
    return insert_joint(parent_joint, sel);
  }

  // ---- geometry and search --------------------------------------------

  bool block_contains(BlockId id, const GA& g) const {
    const Node& n = nodes_[id];
    if (!n.placement) throw Error(ErrorCode::InvalidGeometry, "block has no placement");
    return n.placement->contains(g);
  }

  bool covers(BlockId id, const GA& g) const {
    const Node& n = nodes_[id];
    if (n.placement) return n.placement->contains(g);
    if (is_virtual_source(n.kind)) return n.coverage.covers(g);
    return false;
  }

  GA local_to_global(BlockId id, const LA& l) const {
    const auto& o = origin(id);
    GA g;
    for (std::size_t d = 0; d < Dim; ++d) g.c[d] = o[d] + l.c[d];
    return g;
  }

  LA global_to_local(BlockId id, const GA& g) const {
    const auto& o = origin(id);
    LA l;
    for (std::size_t d = 0; d < Dim; ++d) l.c[d] = g.c[d] - o[d];
    return l;
  }

  const Coords<Dim>& origin(BlockId id) const {
    const Node& n = nodes_[id];
    if (!n.placement) throw Error(ErrorCode::InvalidGeometry, "block has no placement");
    return n.placement->origin;
  }

  bool local_inside(const LA& l) const {
    for (std::size_t d = 0; d < Dim; ++d) {
      if (l.c[d] < 0 || l.c[d] >= block_extent_[d]) return false;
    }
    return true;
  }

  std::size_t linear_index(const LA& l) const {
    std::size_t idx = 0;
    for (std::size_t d = 0; d < Dim; ++d) idx += static_cast<std::size_t>(l.c[d]) * strides_[d];
    return idx;
  }

  LA local_of_index(std::size_t idx) const {
    LA l;
    for (std::size_t d = 0; d < Dim; ++d) {
      l.c[d] = static_cast<Coord>(idx % static_cast<std::size_t>(block_extent_[d]));
      idx /= static_cast<std::size_t>(block_extent_[d]);
    }
    return l;
  }

  // Locality-first search: `start`, then its siblings (and their subtrees)
  // nearest in zindex first, then one level up, and so on. Visited nodes are
  // appended to `trace` when given.
  std::optional<BlockId> find_block(BlockId start, const GA& g, std::vector<BlockId>* trace = nullptr) const {
    if (covers(start, g)) return start;
    const std::uint64_t zs = nodes_[start].zindex;
    BlockId cur = start;
    while (nodes_[cur].parent != kNoBlock) {
      const BlockId p = nodes_[cur].parent;
      std::optional<BlockId> hit;
      for_each_by_distance(nodes_[p].children, zs, [&](BlockId s) {
        if (s == cur) return false;
        hit = search_subtree(s, g, zs, trace);
        return hit.has_value();
      });
      if (hit) return hit;
      cur = p;
    }
    return std::nullopt;
  }

  BlockId find_block_or_throw(BlockId start, const GA& g) const {
    auto r = find_block(start, g);
    if (!r) throw Error(ErrorCode::NotFound, "no block covers the address");
    return *r;
  }

  // Follow Reference blocks to the node that finally answers for g.
  std::pair<BlockId, GA> resolve_reference(BlockId id, GA g) const {
    int depth = 0;
    while (nodes_[id].kind == BlockKind::Reference) {
      if (++depth > kMaxReferenceDepth) {
        throw Error(ErrorCode::CyclicReference, "reference chain longer than " +
                                                    std::to_string(kMaxReferenceDepth));
      }
      const auto& ref = std::get<ReferenceSpec<Dim>>(nodes_[id].payload);
      g = ref.transform.apply(g);
      id = ref.target;
      if (id >= nodes_.size()) throw Error(ErrorCode::NotFound, "reference target does not exist");
      if (nodes_[id].kind != BlockKind::Reference && !covers(id, g)) {
        auto f = find_block(id, g);
        if (!f) throw Error(ErrorCode::NotFound, "reference resolves outside every block");
        id = *f;
      }
    }
    return {id, g};
  }

  Item virtual_read(BlockId id, const GA& g) const {
    const Node& n = nodes_[id];
    switch (n.kind) {
      case BlockKind::StaticData: return std::get<StaticTable<Item, Dim>>(n.payload).lookup(g);
      case BlockKind::Arithmetic: return std::get<ArithmeticExpr<Item, Dim>>(n.payload).evaluate(g);
      case BlockKind::Reference: {
        auto [target, tg] = resolve_reference(id, g);
        const Node& t = nodes_[target];
        if (t.kind == BlockKind::Data) return read_item(target, linear_index(global_to_local(target, tg)));
        if (t.kind == BlockKind::BufferOnly) {
          const auto idx = linear_index(global_to_local(target, tg));
          if (!t.buffer->page(t.buffer->read_slot(), t.buffer->page_index(idx)).valid) {
            throw Error(ErrorCode::InvalidRead, "reference lands on an invalid buffer-only page");
          }
          return read_item(target, idx);
        }
        return virtual_read(target, tg);
      }
      default: break;
    }
    throw Error(ErrorCode::InvalidRead, std::string("cannot virtually read a ") + std::string(to_string(n.kind)) +
                                            " block");
  }

  // ---- item storage ----------------------------------------------------

  BlockBuffer& buffer(BlockId id) { return *nodes_[id].buffer; }
  const BlockBuffer& buffer(BlockId id) const { return *nodes_[id].buffer; }

  Item read_item(BlockId id, std::size_t index) const {
    const auto& b = *nodes_[id].buffer;
    Item v;
    std::memcpy(&v, b.item_ptr(b.read_slot(), index), sizeof(Item));
    return v;
  }

  // Initial-condition write into every slot of a storage block.
  void init_item(BlockId id, const LA& l, const Item& v) {
    auto& b = *nodes_[id].buffer;
    const auto idx = linear_index(l);
    for (std::size_t s = 0; s < b.slot_count(); ++s) std::memcpy(b.item_ptr(s, idx), &v, sizeof(Item));
  }

  // ---- ownership -------------------------------------------------------

  void assign(BlockId id, std::size_t level, std::uint32_t index) override {
    Node& n = nodes_[id];
    if (!n.ch_tid) n.ch_tid = TaskId{};
    n.ch_tid->set(level, index);
    if (n.kind == BlockKind::Data) n.dm_tid = n.ch_tid;
  }

  void specialize(const std::function<bool(const TaskId&)>& mine) override {
    for (auto& n : nodes_) {
      if (n.kind != BlockKind::Data) continue;
      if (mine(*n.ch_tid)) continue;
      n.kind = BlockKind::BufferOnly;
      n.dm_tid.reset();
      for (std::size_t s = 0; s < n.buffer->slot_count(); ++s) {
        for (std::size_t p = 0; p < pages_per_block_; ++p) n.buffer->page(s, p).valid = false;
      }
    }
  }

  void specialize(const std::set<TaskId>& my_tids) {
    specialize([&](const TaskId& t) { return my_tids.contains(t); });
  }

  // ---- page interface --------------------------------------------------

  std::size_t page_bytes() const override { return storage_.items_per_page * sizeof(Item); }
  std::size_t pages_per_block() const override { return pages_per_block_; }

  bool page_valid(BlockId id, std::size_t page) const override {
    const auto& b = *nodes_[id].buffer;
    return b.page(b.read_slot(), page).valid;
  }

  void read_page(BlockId id, std::size_t page, std::span<std::byte> out) const override {
    const Node& n = nodes_[id];
    if (n.kind != BlockKind::Data) {
      throw Error(ErrorCode::ProtocolError, "page of block " + std::to_string(id) + " requested from a non-owner");
    }
    if (out.size() != page_bytes()) throw Error(ErrorCode::ProtocolError, "page size mismatch on read");
    n.buffer->copy_page_out(n.buffer->read_slot(), page, out);
  }

  void install_page(BlockId id, std::size_t page, std::span<const std::byte> in) override {
    Node& n = nodes_[id];
    if (n.kind != BlockKind::BufferOnly) {
      throw Error(ErrorCode::ProtocolError, "page install into non buffer-only block " + std::to_string(id));
    }
    if (in.size() != page_bytes()) throw Error(ErrorCode::ProtocolError, "page size mismatch on install");
    n.buffer->copy_page_in(n.buffer->read_slot(), page, in);
    n.buffer->page(n.buffer->read_slot(), page).valid = true;
  }

  void swap_data_blocks() override {
    for (auto& n : nodes_) {
      if (n.kind != BlockKind::Data) continue;
      n.buffer->swap();
      for (std::size_t p = 0; p < pages_per_block_; ++p) {
        n.buffer->page(n.buffer->read_slot(), p).dirty = false;
        n.buffer->page(n.buffer->read_slot(), p).valid = true;
      }
    }
  }

  void invalidate_remote_pages() override {
    for (auto& n : nodes_) {
      if (n.kind != BlockKind::BufferOnly) continue;
      for (std::size_t p = 0; p < pages_per_block_; ++p) n.buffer->page(n.buffer->read_slot(), p).valid = false;
    }
  }

  void poison_write_slots() override {
    const Item poison = poison_value<Item>();
    for (auto& n : nodes_) {
      if (n.kind != BlockKind::Data) continue;
      n.buffer->fill_slot(n.buffer->write_slot(),
                          std::span<const std::byte>(reinterpret_cast<const std::byte*>(&poison), sizeof(Item)));
    }
  }

  PoolUsage pool_usage() const override {
    PoolUsage u;
    for (const auto& p : pools_) {
      u.used_bytes += p->used_bytes();
      u.free_bytes += p->free_bytes();
    }
    return u;
  }

  const std::vector<std::unique_ptr<MemoryPool>>& pools() const { return pools_; }

  std::size_t working_bytes_estimate() const override {
    std::size_t bytes = sizeof(*this) + nodes_.capacity() * sizeof(Node);
    for (const auto& n : nodes_) {
      bytes += n.children.capacity() * sizeof(BlockId);
      if (n.buffer) bytes += sizeof(BlockBuffer) + n.buffer->slot_count() * pages_per_block_ * (sizeof(Page) + 16);
    }
    return bytes;
  }

  std::string dump() const override {
    std::ostringstream os;
    dump_node(os, root_, 0);
    return os.str();
  }

  static constexpr int kMaxReferenceDepth = 16;

 private:
  static std::uint64_t zindex_of(const Coords<Dim>& bc) {
    std::array<std::uint32_t, Dim> u{};
    for (std::size_t d = 0; d < Dim; ++d) u[d] = static_cast<std::uint32_t>(bc[d]);
    return zorder_index(std::span<const std::uint32_t>(u));
  }

  void sort_by_z(std::vector<BlockId>& ids) const {
    std::sort(ids.begin(), ids.end(), [&](BlockId a, BlockId b) {
      return std::pair(nodes_[a].zindex, a) < std::pair(nodes_[b].zindex, b);
    });
  }

  BlockId add_node(BlockKind kind, BlockId parent, std::string label) {
    const auto id = static_cast<BlockId>(nodes_.size());
    nodes_.emplace_back();
    nodes_.back().kind = kind;
    nodes_.back().parent = parent;
    nodes_.back().label = std::move(label);
    if (parent != kNoBlock) nodes_[parent].children.push_back(id);
    return id;
  }

  BlockId add_virtual(VirtualSpec<Item, Dim> spec, BlockId parent) {
    if (!is_virtual_source(spec.kind)) {
      throw Error(ErrorCode::InvalidGeometry, "boundary blocks must be StaticData, Arithmetic or Reference");
    }
    const BlockId id = add_node(spec.kind, parent, spec.label);
    Node& n = nodes_[id];
    n.coverage = spec.coverage;
    n.payload = std::move(spec.payload);
    n.zindex = kVirtualZ;
    return id;
  }

  // Recompute joint zindex/bounds and keep children sorted by (zindex, id).
  void refresh_derived(BlockId id) {
    Node& n = nodes_[id];
    if (n.kind != BlockKind::Empty) return;
    std::uint64_t z = kVirtualZ;
    std::optional<Box<Dim>> bounds;
    bool unbounded = false;
    for (auto c : n.children) {
      refresh_derived(c);
      const Node& ch = nodes_[c];
      z = std::min(z, ch.zindex);
      if (ch.placement) {
        bounds = bounds ? bounding_union(*bounds, *ch.placement) : *ch.placement;
      } else if (ch.kind == BlockKind::Empty) {
        if (ch.bounds) {
          bounds = bounds ? bounding_union(*bounds, *ch.bounds) : *ch.bounds;
        } else if (!ch.children.empty()) {
          unbounded = true;
        }
      } else {
        unbounded = true;
      }
    }
    n.zindex = z;
    n.bounds = unbounded ? std::nullopt : bounds;
    std::sort(n.children.begin(), n.children.end(), [&](BlockId a, BlockId b) {
      return std::pair(nodes_[a].zindex, a) < std::pair(nodes_[b].zindex, b);
    });
  }

  // Visits `children` (sorted by zindex) in ascending |zindex - zs|, lower
  // zindex first on ties, until `fn` returns true.
  template <class Fn>
  static void for_each_by_distance_impl(const std::vector<BlockId>& children, const std::vector<Node>& nodes,
                                        std::uint64_t zs, Fn&& fn) {
    const std::size_t n = children.size();
    std::size_t hi = static_cast<std::size_t>(
        std::lower_bound(children.begin(), children.end(), zs,
                         [&](BlockId c, std::uint64_t z) { return nodes[c].zindex < z; }) -
        children.begin());
    std::size_t lo = hi;  // candidates below are [0, lo)
    while (lo > 0 || hi < n) {
      bool take_lo;
      if (lo == 0) {
        take_lo = false;
      } else if (hi == n) {
        take_lo = true;
      } else {
        const std::uint64_t dlo = zs - nodes[children[lo - 1]].zindex;
        const std::uint64_t dhi = nodes[children[hi]].zindex - zs;
        take_lo = dlo <= dhi;
      }
      const BlockId c = take_lo ? children[--lo] : children[hi++];
      if (fn(c)) return;
    }
  }

  template <class Fn>
  void for_each_by_distance(const std::vector<BlockId>& children, std::uint64_t zs, Fn&& fn) const {
    for_each_by_distance_impl(children, nodes_, zs, std::forward<Fn>(fn));
  }

  std::optional<BlockId> search_subtree(BlockId id, const GA& g, std::uint64_t zs,
                                        std::vector<BlockId>* trace) const {
    if (trace) trace->push_back(id);
    const Node& n = nodes_[id];
    if (n.kind != BlockKind::Empty) {
      return covers(id, g) ? std::optional<BlockId>(id) : std::nullopt;
    }
    if (n.bounds && !n.bounds->contains(g)) return std::nullopt;
    std::optional<BlockId> hit;
    for_each_by_distance(n.children, zs, [&](BlockId c) {
      hit = search_subtree(c, g, zs, trace);
      return hit.has_value();
    });
    return hit;
  }

  void dump_node(std::ostringstream& os, BlockId id, int depth) const {
    const Node& n = nodes_[id];
    os << std::string(static_cast<std::size_t>(depth) * 2, ' ') << to_string(n.kind) << " #" << id;
    if (!n.label.empty()) os << " " << n.label;
    if (n.placement) {
      os << " [";
      for (std::size_t d = 0; d < Dim; ++d) {
        os << (d ? "x" : "") << "[" << n.placement->origin[d] << "," << n.placement->origin[d] + n.placement->size[d]
           << ")";
      }
      os << "]";
    }
    if (n.zindex != kVirtualZ) os << " z=" << n.zindex;
    if (n.ch_tid) os << " ch=" << n.ch_tid->str();
    if (n.dm_tid) os << " dm=" << n.dm_tid->str();
    if (n.kind == BlockKind::BufferOnly) os << " valid=" << (is_valid(id) ? 1 : 0);
    os << "\n";
    for (auto c : n.children) dump_node(os, c, depth + 1);
  }

  Box<Dim> domain_;
  Coords<Dim> block_extent_;
  Coords<Dim> blocks_per_axis_{};
  std::array<std::size_t, Dim> strides_{};
  StorageConfig storage_;
  std::size_t block_volume_ = 0;
  std::size_t pages_per_block_ = 0;
  std::vector<std::unique_ptr<MemoryPool>> pools_;  // outlives every buffer below
  std::vector<Node> nodes_;
  BlockId root_ = kNoBlock;
  BlockId boundary_ = kNoBlock;
  BlockId data_joint_ = kNoBlock;
};

}  // namespace bbp
