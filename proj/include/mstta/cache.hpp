#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mstta/core.hpp"
#include "mstta/errors.hpp"

namespace mstta {

struct CacheEntry {
  Embedding embedding;
  PseudoLabel pseudo_label;
  double entropy = 0.0;
  std::uint64_t arrival_index = 0;
};

/// Frozen cache contents: Z stacks the stored embeddings row-major, one
/// pseudo-label per row. Row order is ascending class, then ascending arrival.
struct CacheSnapshot {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> z;        // rows x dim
  std::vector<PseudoLabel> y;   // one-hot per row, via PseudoLabel::one_hot()

  std::span<const double> z_row(std::size_t i) const { return {z.data() + i * dim, dim}; }
};

/// Per-pseudo-class bounded store keeping the Q lowest-entropy entries offered
/// to each class. Within a class, entries stay in ascending arrival order.
class EntropyCache {
 public:
  explicit EntropyCache(std::size_t num_classes, std::size_t capacity_per_class = 3,
                        std::optional<double> entropy_threshold = std::nullopt)
      : num_classes_(num_classes),
        capacity_(capacity_per_class),
        threshold_(entropy_threshold),
        per_class_(num_classes) {
    if (num_classes_ < 2) throw OutOfRangeError("EntropyCache: at least 2 classes required");
    if (threshold_ && !std::isfinite(*threshold_)) {
      throw OutOfRangeError("EntropyCache: threshold must be finite");
    }
  }

  std::size_t num_classes() const { return num_classes_; }
  std::size_t capacity_per_class() const { return capacity_; }
  const std::optional<double>& entropy_threshold() const { return threshold_; }
  std::size_t total_size() const { return total_; }
  std::size_t dim() const { return dim_; }
  const std::vector<CacheEntry>& class_entries(std::size_t c) const {
    if (c >= num_classes_) throw BadClassIndexError("EntropyCache: class index out of range");
    return per_class_[c];
  }

  /// Admission policy: reject above the optional threshold; fill to capacity;
  /// once full, a strictly lower entropy displaces the current maximum
  /// (among equal maxima, the latest arrival goes). Returns whether the entry
  /// now resides in the cache.
  bool offer(CacheEntry entry) {
    if (entry.pseudo_label.num_classes() != num_classes_) {
      throw BadClassIndexError("EntropyCache: entry labeled over a different class count");
    }
    const double max_h = std::log(static_cast<double>(num_classes_));
    if (!(entry.entropy >= 0.0 && entry.entropy <= max_h + 1e-9)) {
      throw OutOfRangeError("EntropyCache: entropy outside [0, ln C]");
    }
    if (dim_ == 0) {
      dim_ = entry.embedding.dim();
    } else if (entry.embedding.dim() != dim_) {
      throw DimMismatchError("EntropyCache: embedding dim mismatch");
    }
    if (threshold_ && entry.entropy > *threshold_) return false;

    std::vector<CacheEntry>& q = per_class_[entry.pseudo_label.class_index()];
    if (q.size() < capacity_) {
      q.push_back(std::move(entry));
      ++total_;
      return true;
    }
    if (capacity_ == 0) return false;
    auto worst = std::max_element(q.begin(), q.end(), [](const CacheEntry& a, const CacheEntry& b) {
      return a.entropy < b.entropy ||
             (a.entropy == b.entropy && a.arrival_index < b.arrival_index);
    });
    if (entry.entropy < worst->entropy) {
      q.erase(worst);
      q.push_back(std::move(entry));
      return true;
    }
    return false;
  }

 private:
  std::size_t num_classes_;
  std::size_t capacity_;
  std::optional<double> threshold_;
  std::size_t total_ = 0;
  std::size_t dim_ = 0;  // pinned by the first accepted entry
  std::vector<std::vector<CacheEntry>> per_class_;
};

inline CacheSnapshot snapshot(const EntropyCache& cache) {
  CacheSnapshot snap;
  snap.num_classes = cache.num_classes();
  snap.dim = cache.dim();
  snap.z.reserve(cache.total_size() * cache.dim());
  snap.y.reserve(cache.total_size());
  for (std::size_t c = 0; c < cache.num_classes(); ++c) {
    for (const CacheEntry& e : cache.class_entries(c)) {
      snap.z.insert(snap.z.end(), e.embedding.values().begin(), e.embedding.values().end());
      snap.y.push_back(e.pseudo_label);
      ++snap.rows;
    }
  }
  return snap;
}

/// result[c] = sum over class-c rows of dot(z, row): the z . Z^T . Y product.
inline Logits cache_logits(const Embedding& z, const CacheSnapshot& snap) {
  if (snap.rows > 0 && z.dim() != snap.dim) {
    throw DimMismatchError("cache_logits: embedding dim differs from snapshot");
  }
  std::vector<double> out(snap.num_classes, 0.0);
  for (std::size_t i = 0; i < snap.rows; ++i) {
    out[snap.y[i].class_index()] += detail::dot(z.span(), snap.z_row(i));
  }
  return Logits(std::move(out));
}

/// Same sums walked straight off the live cache, skipping the snapshot copy.
/// Iteration order matches snapshot(), so results are identical bit for bit.
inline Logits cache_logits(const Embedding& z, const EntropyCache& cache) {
  if (cache.total_size() > 0 && z.dim() != cache.dim()) {
    throw DimMismatchError("cache_logits: embedding dim differs from cache");
  }
  std::vector<double> out(cache.num_classes(), 0.0);
  for (std::size_t c = 0; c < cache.num_classes(); ++c) {
    for (const CacheEntry& e : cache.class_entries(c)) {
      out[c] += detail::dot(z.span(), e.embedding.span());
    }
  }
  return Logits(std::move(out));
}

}  // namespace mstta
