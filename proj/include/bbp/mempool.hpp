#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bbp/error.hpp"

namespace bbp {

struct ChunkHandle {
  std::uint32_t pool = 0;
  std::uint32_t index = 0;
  friend bool operator==(const ChunkHandle&, const ChunkHandle&) = default;
  friend auto operator<=>(const ChunkHandle&, const ChunkHandle&) = default;
};

// Fixed-capacity pool carved into uniform chunks. Never grows.
class MemoryPool {
 public:
  static constexpr std::size_t kDefaultChunkBytes = 16 * 1024;

  MemoryPool(std::size_t capacity_bytes, std::size_t chunk_bytes = kDefaultChunkBytes,
             std::uint32_t pool_id = 0)
      : capacity_(capacity_bytes), chunk_bytes_(chunk_bytes), id_(pool_id) {
    if (capacity_bytes == 0 || chunk_bytes == 0 || capacity_bytes % chunk_bytes != 0) {
      throw Error(ErrorCode::InvalidGeometry,
                  "pool capacity " + std::to_string(capacity_bytes) +
                      " is not a positive multiple of chunk size " + std::to_string(chunk_bytes));
    }
    const std::size_t n = capacity_ / chunk_bytes_;
    storage_.reset(new std::byte[capacity_]);
    in_use_.assign(n, false);
    free_list_.reserve(n);
    for (std::size_t i = n; i-- > 0;) free_list_.push_back(static_cast<std::uint32_t>(i));
  }

  MemoryPool(const MemoryPool&) = delete;
  MemoryPool& operator=(const MemoryPool&) = delete;
  MemoryPool(MemoryPool&&) noexcept = default;
  MemoryPool& operator=(MemoryPool&&) noexcept = default;

  std::uint32_t pool_id() const { return id_; }
  std::size_t capacity_bytes() const { return capacity_; }
  std::size_t chunk_bytes() const { return chunk_bytes_; }
  std::size_t total_chunks() const { return in_use_.size(); }
  std::size_t free_chunks() const { return free_list_.size(); }
  std::size_t used_chunks() const { return total_chunks() - free_chunks(); }
  std::size_t used_bytes() const { return used_chunks() * chunk_bytes_; }
  std::size_t free_bytes() const { return free_chunks() * chunk_bytes_; }

  std::vector<ChunkHandle> alloc(std::size_t n_chunks) {
    if (n_chunks == 0) throw Error(ErrorCode::InvalidConfig, "chunk request must be >= 1");
    if (n_chunks > free_list_.size()) {
      throw Error(ErrorCode::OutOfPool, "pool " + std::to_string(id_) + " has " +
                                            std::to_string(free_list_.size()) + " free chunks, " +
                                            std::to_string(n_chunks) + " requested");
    }
    std::vector<ChunkHandle> out;
    out.reserve(n_chunks);
    for (std::size_t i = 0; i < n_chunks; ++i) {
      const std::uint32_t idx = free_list_.back();
      free_list_.pop_back();
      in_use_[idx] = true;
      out.push_back({id_, idx});
    }
    return out;
  }

  // All-or-nothing: the whole span is validated before anything is released.
  void free(std::span<const ChunkHandle> handles) {
    std::vector<std::uint32_t> seen;
    seen.reserve(handles.size());
    for (const auto& h : handles) {
      if (h.pool != id_ || h.index >= in_use_.size()) {
        throw Error(ErrorCode::InvalidConfig, "chunk handle does not belong to pool " + std::to_string(id_));
      }
      if (!in_use_[h.index]) {
        throw Error(ErrorCode::DoubleFree, "chunk " + std::to_string(h.index) + " already free");
      }
      seen.push_back(h.index);
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
      throw Error(ErrorCode::DoubleFree, "chunk listed twice in one free");
    }
    for (auto idx : seen) {
      in_use_[idx] = false;
      free_list_.push_back(idx);
    }
  }

  std::byte* data(const ChunkHandle& h) { return storage_.get() + std::size_t{h.index} * chunk_bytes_; }
  const std::byte* data(const ChunkHandle& h) const {
    return storage_.get() + std::size_t{h.index} * chunk_bytes_;
  }

 private:
  std::size_t capacity_;
  std::size_t chunk_bytes_;
  std::uint32_t id_;
  std::unique_ptr<std::byte[]> storage_;
  std::vector<bool> in_use_;
  std::vector<std::uint32_t> free_list_;
};

constexpr std::size_t page_of(std::size_t linear_item_index, std::size_t items_per_page) {
  return linear_item_index / items_per_page;
}

struct Page {
  std::vector<ChunkHandle> chunks;
  bool valid = false;
  bool dirty = false;
};

// Multi-buffered page set of one block. Slots rotate on swap(); the read
// slot is what other blocks and tasks observe, the write slot receives the
// next step.
class BlockBuffer {
 public:
  static constexpr std::size_t kDefaultSlots = 2;

  BlockBuffer(std::span<MemoryPool* const> pools, std::size_t pages, std::size_t items_per_page,
              std::size_t item_bytes, std::size_t slots = kDefaultSlots)
      : pages_(pages), items_per_page_(items_per_page), item_bytes_(item_bytes), slots_(slots) {
    if (slots < 2) throw Error(ErrorCode::InvalidGeometry, "a block buffer needs at least 2 slots");
    if (pools.empty()) throw Error(ErrorCode::InvalidGeometry, "no memory pool given");
    if (pages == 0 || items_per_page == 0 || item_bytes == 0) {
      throw Error(ErrorCode::InvalidGeometry, "empty buffer geometry");
    }
    chunk_bytes_ = pools.front()->chunk_bytes();
    for (auto* p : pools) {
      if (p->chunk_bytes() != chunk_bytes_) {
        throw Error(ErrorCode::InvalidGeometry, "pools of one buffer must share a chunk size");
      }
    }
    if (item_bytes > chunk_bytes_) {
      throw Error(ErrorCode::InvalidGeometry, "item larger than a chunk");
    }
    items_per_chunk_ = chunk_bytes_ / item_bytes;
    chunks_per_page_ = (items_per_page + items_per_chunk_ - 1) / items_per_chunk_;
    pow2_ = std::has_single_bit(items_per_page) && chunks_per_page_ == 1;
    page_shift_ = pow2_ ? static_cast<unsigned>(std::countr_zero(items_per_page)) : 0;

    const std::size_t need = slots_ * pages_ * chunks_per_page_;
    std::size_t avail = 0;
    for (auto* p : pools) avail += p->free_chunks();
    if (avail < need) {
      throw Error(ErrorCode::OutOfPool, "buffer needs " + std::to_string(need) + " chunks, pools hold " +
                                            std::to_string(avail) + " free");
    }

    for (auto* p : pools) pools_.push_back(p);
    pages_meta_.resize(slots_ * pages_);
    bases_.resize(slots_ * pages_ * chunks_per_page_);
    std::size_t pool_i = 0;
    std::size_t cursor = 0;
    for (auto& page : pages_meta_) {
      std::size_t remaining = chunks_per_page_;
      while (remaining > 0) {
        while (pools[pool_i]->free_chunks() == 0) ++pool_i;
        const std::size_t take = std::min(remaining, pools[pool_i]->free_chunks());
        for (const auto& h : pools[pool_i]->alloc(take)) {
          page.chunks.push_back(h);
          bases_[cursor++] = pools[pool_i]->data(h);
        }
        remaining -= take;
      }
    }
  }

  BlockBuffer(const BlockBuffer&) = delete;
  BlockBuffer& operator=(const BlockBuffer&) = delete;
  BlockBuffer(BlockBuffer&& o) noexcept { *this = std::move(o); }
  BlockBuffer& operator=(BlockBuffer&& o) noexcept {
    if (this != &o) {
      release();
      pools_ = std::move(o.pools_);
      pages_meta_ = std::move(o.pages_meta_);
      bases_ = std::move(o.bases_);
      pages_ = o.pages_;
      items_per_page_ = o.items_per_page_;
      item_bytes_ = o.item_bytes_;
      slots_ = o.slots_;
      chunk_bytes_ = o.chunk_bytes_;
      items_per_chunk_ = o.items_per_chunk_;
      chunks_per_page_ = o.chunks_per_page_;
      pow2_ = o.pow2_;
      page_shift_ = o.page_shift_;
      read_ = o.read_;
      write_ = o.write_;
      o.pools_.clear();
      o.pages_meta_.clear();
    }
    return *this;
  }
  ~BlockBuffer() { release(); }

  std::size_t slot_count() const { return slots_; }
  std::size_t page_count() const { return pages_; }
  std::size_t items_per_page() const { return items_per_page_; }
  std::size_t item_bytes() const { return item_bytes_; }
  std::size_t page_bytes() const { return items_per_page_ * item_bytes_; }
  std::size_t chunks_per_page() const { return chunks_per_page_; }
  std::size_t read_slot() const { return read_; }
  std::size_t write_slot() const { return write_; }

  // Two slots exchange; more slots rotate so the last written becomes readable.
  void swap() {
    read_ = write_;
    write_ = (write_ + 1) % slots_;
  }

  Page& page(std::size_t slot, std::size_t p) { return pages_meta_[slot * pages_ + p]; }
  const Page& page(std::size_t slot, std::size_t p) const { return pages_meta_[slot * pages_ + p]; }

  std::byte* item_ptr(std::size_t slot, std::size_t item) {
    return const_cast<std::byte*>(std::as_const(*this).item_ptr(slot, item));
  }
  const std::byte* item_ptr(std::size_t slot, std::size_t item) const {
    if (pow2_) {
      const std::size_t p = item >> page_shift_;
      const std::size_t k = item & (items_per_page_ - 1);
      return bases_[slot * pages_ + p] + k * item_bytes_;
    }
    const std::size_t p = item / items_per_page_;
    const std::size_t k = item % items_per_page_;
    return bases_[(slot * pages_ + p) * chunks_per_page_ + k / items_per_chunk_] +
           (k % items_per_chunk_) * item_bytes_;
  }

  std::size_t page_index(std::size_t item) const {
    return pow2_ ? (item >> page_shift_) : item / items_per_page_;
  }

  void copy_page_out(std::size_t slot, std::size_t p, std::span<std::byte> out) const {
    for (std::size_t k = 0; k < items_per_page_; ++k) {
      std::memcpy(out.data() + k * item_bytes_, item_ptr(slot, p * items_per_page_ + k), item_bytes_);
    }
  }
  void copy_page_in(std::size_t slot, std::size_t p, std::span<const std::byte> in) {
    for (std::size_t k = 0; k < items_per_page_; ++k) {
      std::memcpy(item_ptr(slot, p * items_per_page_ + k), in.data() + k * item_bytes_, item_bytes_);
    }
  }

  void fill_slot(std::size_t slot, std::span<const std::byte> item_bytes) {
    for (std::size_t i = 0; i < pages_ * items_per_page_; ++i) {
      std::memcpy(item_ptr(slot, i), item_bytes.data(), item_bytes_);
    }
  }

 private:
  void release() {
    if (pools_.empty()) return;
    std::vector<std::vector<ChunkHandle>> per_pool(pools_.size());
    for (auto& page : pages_meta_) {
      for (const auto& h : page.chunks) {
        for (std::size_t i = 0; i < pools_.size(); ++i) {
          if (pools_[i]->pool_id() == h.pool) {
            per_pool[i].push_back(h);
            break;
          }
        }
      }
    }
    for (std::size_t i = 0; i < pools_.size(); ++i) {
      if (!per_pool[i].empty()) pools_[i]->free(per_pool[i]);
    }
    pools_.clear();
    pages_meta_.clear();
  }

  std::vector<MemoryPool*> pools_;
  std::vector<Page> pages_meta_;
  std::vector<std::byte*> bases_;
  std::size_t pages_ = 0;
  std::size_t items_per_page_ = 0;
  std::size_t item_bytes_ = 0;
  std::size_t slots_ = 0;
  std::size_t chunk_bytes_ = 0;
  std::size_t items_per_chunk_ = 0;
  std::size_t chunks_per_page_ = 0;
  bool pow2_ = false;
  unsigned page_shift_ = 0;
  std::size_t read_ = 0;
  std::size_t write_ = 1;
};

}  // namespace bbp
