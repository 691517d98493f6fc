#pragma once

#include <compare>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace bbp {

// Hierarchical task identifier: one index per layer, outermost first.
// Ordering is lexicographic.
class TaskId {
 public:
  static constexpr std::uint32_t kUnassigned = std::numeric_limits<std::uint32_t>::max();

  TaskId() = default;
  TaskId(std::initializer_list<std::uint32_t> idx) : idx_(idx) {}
  explicit TaskId(std::vector<std::uint32_t> idx) : idx_(std::move(idx)) {}

  std::size_t depth() const { return idx_.size(); }
  bool has(std::size_t level) const { return level < idx_.size() && idx_[level] != kUnassigned; }
  std::uint32_t operator[](std::size_t level) const { return idx_[level]; }

  void set(std::size_t level, std::uint32_t value) {
    if (idx_.size() <= level) idx_.resize(level + 1, kUnassigned);
    idx_[level] = value;
  }

  TaskId child(std::uint32_t index) const {
    TaskId t = *this;
    t.idx_.push_back(index);
    return t;
  }

  // True when every level assigned in `prefix` matches this id.
  bool matches_prefix(const TaskId& prefix) const {
    for (std::size_t l = 0; l < prefix.idx_.size(); ++l) {
      if (l >= idx_.size() || idx_[l] != prefix.idx_[l]) return false;
    }
    return true;
  }

  bool is_root_task() const {
    for (auto i : idx_) {
      if (i != 0) return false;
    }
    return true;
  }

  const std::vector<std::uint32_t>& indices() const { return idx_; }

  std::string str() const {
    std::string s = "(";
    for (std::size_t l = 0; l < idx_.size(); ++l) {
      if (l) s += ",";
      s += idx_[l] == kUnassigned ? std::string("-") : std::to_string(idx_[l]);
    }
    return s + ")";
  }

  friend bool operator==(const TaskId&, const TaskId&) = default;
  friend auto operator<=>(const TaskId&, const TaskId&) = default;

 private:
  std::vector<std::uint32_t> idx_;
};

inline std::ostream& operator<<(std::ostream& os, const TaskId& t) { return os << t.str(); }

}  // namespace bbp
