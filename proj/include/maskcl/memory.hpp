#pragma once

// Fixed-capacity reservoir replay buffer holding (input, label, logits).

#include <algorithm>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskcl/errors.hpp"
#include "maskcl/numerics.hpp"

namespace maskcl {

struct BufferEntry {
  std::vector<double> x;
  std::size_t y = 0;
  std::vector<double> z;  // unmasked logits at insertion time
  std::size_t seen_task = 0;

  friend bool operator==(const BufferEntry&, const BufferEntry&) = default;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) { entries_.reserve(capacity); }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t seen() const noexcept { return n_seen_; }
  const std::vector<BufferEntry>& entries() const noexcept { return entries_; }

  // Reservoir sampling: once full, the k-th offered item (1-based) replaces a
  // uniform slot with probability capacity/k. A zero-capacity buffer draws
  // nothing from rng.
  void add(BufferEntry e, Rng& rng) {
    if (!e.z.empty() && e.y >= e.z.size())
      throw ConfigError("ReplayBuffer: label " + std::to_string(e.y) + " >= logit count");
    ++n_seen_;
    if (capacity_ == 0) return;
    if (entries_.size() < capacity_) {
      entries_.push_back(std::move(e));
      return;
    }
    const std::size_t j = rng.uniform_int(n_seen_);
    if (j < capacity_) entries_[j] = std::move(e);
  }

  // Uniform with replacement.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
    std::vector<std::size_t> idx;
    if (n == 0) return idx;
    if (entries_.empty()) throw EmptyBufferError();
    idx.reserve(n);
    for (std::size_t i = 0; i < n; ++i) idx.push_back(rng.uniform_int(entries_.size()));
    return idx;
  }

  std::vector<BufferEntry> sample(std::size_t n, Rng& rng) const {
    std::vector<BufferEntry> out;
    for (auto i : sample_indices(n, rng)) out.push_back(entries_[i]);
    return out;
  }

  // One JSON object per line: {"x": [...], "y": int, "z": [...], "seen_task": int}.
  void dump_jsonl(std::ostream& os) const {
    for (const auto& e : entries_) {
      nlohmann::json j{{"x", e.x}, {"y", e.y}, {"z", e.z}, {"seen_task", e.seen_task}};
      os << j.dump() << '\n';
    }
  }

 private:
  std::size_t capacity_;
  std::size_t n_seen_ = 0;
  std::vector<BufferEntry> entries_;
};

struct ReplayBatch {
  Matrix x;
  Matrix y;  // one-hot
  Matrix z;  // stored logits
};

inline ReplayBatch gather(const ReplayBuffer& buf, std::span<const std::size_t> indices,
                          std::size_t class_count) {
  ReplayBatch b;
  if (indices.empty()) return b;
  const auto& first = buf.entries().at(indices.front());
  b.x = Matrix(indices.size(), first.x.size());
  b.y = Matrix(indices.size(), class_count);
  b.z = Matrix(indices.size(), class_count);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& e = buf.entries().at(indices[r]);
    if (e.x.size() != b.x.cols() || e.z.size() != class_count)
      throw ShapeError("gather: inconsistent buffer entry shapes");
    std::copy(e.x.begin(), e.x.end(), b.x.row(r).begin());
    std::copy(e.z.begin(), e.z.end(), b.z.row(r).begin());
    b.y(r, e.y) = 1.0;
  }
  return b;
}

}  // namespace maskcl
