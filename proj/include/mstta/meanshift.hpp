#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mstta/core.hpp"
#include "mstta/errors.hpp"

namespace mstta {

inline constexpr std::size_t kUnboundedCapacity = std::numeric_limits<std::size_t>::max();

/// FIFO pool of unit-norm embeddings; neighbors for the streaming shift are
/// drawn from here. Rows are stored flat so kNN scans stay cache-friendly.
class FeatureBank {
 public:
  explicit FeatureBank(std::size_t dim, std::size_t capacity = kUnboundedCapacity)
      : dim_(dim), capacity_(capacity) {
    if (dim_ == 0) throw DimMismatchError("FeatureBank: dim must be positive");
    if (capacity_ == 0) throw OutOfRangeError("FeatureBank: capacity must be positive");
    if (capacity_ != kUnboundedCapacity) data_.reserve(capacity_ * dim_);
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  bool unbounded() const { return capacity_ == kUnboundedCapacity; }

  /// Appends one embedding, evicting the oldest entry once full.
  void push(const Embedding& e) {
    if (e.dim() != dim_) throw DimMismatchError("FeatureBank: embedding dim mismatch");
    if (unbounded() || size_ < capacity_) {
      data_.insert(data_.end(), e.values().begin(), e.values().end());
      ++size_;
      return;
    }
    std::copy(e.values().begin(), e.values().end(), data_.begin() + start_ * dim_);
    start_ = (start_ + 1 == capacity_) ? 0 : start_ + 1;
  }

  /// Row by logical index: 0 is the oldest surviving entry.
  std::span<const double> row(std::size_t i) const {
    std::size_t phys = start_ + i;
    if (phys >= capacity_) phys -= capacity_;  // start_ > 0 only once full
    return {data_.data() + phys * dim_, dim_};
  }

  Embedding entry(std::size_t i) const {
    auto r = row(i);
    return Embedding(std::vector<double>(r.begin(), r.end()));
  }

 private:
  std::size_t dim_;
  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t start_ = 0;  // physical index of logical row 0
  std::vector<double> data_;
};

struct NeighborHit {
  std::size_t index;
  double similarity;

  friend bool operator==(const NeighborHit&, const NeighborHit&) = default;
};

struct KernelWeights {
  double self_weight;
  double neighbor_weight;
  double alpha;
  std::size_t k;
};

enum class NeighborSource { bank_raw, cache_refined };

inline std::string to_string(NeighborSource s) {
  return s == NeighborSource::bank_raw ? "bank_raw" : "cache_refined";
}

inline NeighborSource neighbor_source_from_string(const std::string& s) {
  if (s == "bank_raw" || s == "bank-raw") return NeighborSource::bank_raw;
  if (s == "cache_refined" || s == "cache-refined") return NeighborSource::cache_refined;
  throw OutOfRangeError("unknown neighbor source: " + s);
}

struct MeanShiftConfig {
  double alpha = 0.8;
  std::size_t k = 3;
  NeighborSource neighbor_source = NeighborSource::bank_raw;
  std::size_t bank_capacity = kUnboundedCapacity;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw OutOfRangeError("alpha must lie in [0,1]");
    if (k == 0) throw OutOfRangeError("k must be positive");
    if (bank_capacity == 0) throw OutOfRangeError("bank capacity must be positive");
  }
};

namespace detail {

inline bool hit_better(const NeighborHit& a, const NeighborHit& b) {
  return a.similarity > b.similarity ||
         (a.similarity == b.similarity && a.index < b.index);
}

}  // namespace detail

/// Top-k entries of the bank by dot-product similarity, similarity descending,
/// ties to the lower index. The query itself is never a bank member here;
/// its self-contribution is the (1 - alpha) term of the shift.
inline std::vector<NeighborHit> knn(const Embedding& query, const FeatureBank& bank,
                                    std::size_t k) {
  if (k == 0) throw OutOfRangeError("knn: k must be positive");
  if (bank.size() > 0 && query.dim() != bank.dim()) {
    throw DimMismatchError("knn: query dim differs from bank dim");
  }
  const std::size_t n = bank.size();
  std::vector<NeighborHit> heap;
  heap.reserve(std::min(k, n));
  // Max-heap whose front is the weakest kept hit; a scan candidate displaces it
  // only when strictly better, which leaves earlier indices in place on ties.
  auto cmp = detail::hit_better;
  for (std::size_t i = 0; i < n; ++i) {
    const double sim = detail::dot(query.span(), bank.row(i));
    NeighborHit cand{i, sim};
    if (heap.size() < k) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end(), cmp);
    } else if (detail::hit_better(cand, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), cmp);
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end(), cmp);
    }
  }
  std::sort(heap.begin(), heap.end(), cmp);
  return heap;
}

/// self = 1 - alpha, each neighbor alpha / k; the weights sum to 1.
inline KernelWeights kernel_weights(double alpha, std::size_t k) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw OutOfRangeError("kernel_weights: alpha outside [0,1]");
  if (k == 0) throw OutOfRangeError("kernel_weights: k must be positive");
  return {1.0 - alpha, alpha / static_cast<double>(k), alpha, k};
}

namespace detail {

// Shared accumulation for the single-step shift. Returns false when the blended
// vector is numerically zero (opposed neighbors at alpha = 1).
inline bool blend_neighbors(std::span<const double> f, double alpha,
                            const std::vector<std::span<const double>>& neighbors,
                            std::vector<double>& out) {
  const std::size_t d = f.size();
  out.assign(f.begin(), f.end());
  const double self_w = 1.0 - alpha;
  for (double& x : out) x *= self_w;
  const double w = alpha / static_cast<double>(neighbors.size());
  for (std::span<const double> nb : neighbors) {
    for (std::size_t i = 0; i < d; ++i) out[i] += w * nb[i];
  }
  return l2_norm(out) >= kZeroNormEps;
}

}  // namespace detail

/// One step of kNN mean shift: z = normalize((1-alpha) f + (alpha/k) sum of neighbors).
/// alpha = 0 or no neighbors returns f unchanged (exactly).
inline Embedding mean_shift_step(const Embedding& f, const std::vector<Embedding>& neighbors,
                                 double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw OutOfRangeError("mean_shift_step: alpha outside [0,1]");
  for (const Embedding& nb : neighbors) {
    if (nb.dim() != f.dim()) throw DimMismatchError("mean_shift_step: neighbor dim mismatch");
  }
  if (alpha == 0.0 || neighbors.empty()) return f;
  std::vector<std::span<const double>> views;
  views.reserve(neighbors.size());
  for (const Embedding& nb : neighbors) views.push_back(nb.span());
  std::vector<double> out;
  if (!detail::blend_neighbors(f.span(), alpha, views, out)) {
    throw DegenerateShiftError("mean_shift_step: blended vector has near-zero norm");
  }
  return l2_normalize(std::move(out));
}

/// Streaming form: gather kNN from the bank, then apply the single shift step.
/// A degenerate blend falls back to f rather than surfacing an error.
inline Embedding shift_streaming(const Embedding& f, const FeatureBank& bank,
                                 const MeanShiftConfig& cfg) {
  cfg.validate();
  if (cfg.alpha == 0.0 || bank.size() == 0) return f;
  const std::vector<NeighborHit> hits = knn(f, bank, cfg.k);
  std::vector<std::span<const double>> views;
  views.reserve(hits.size());
  for (const NeighborHit& h : hits) views.push_back(bank.row(h.index));
  std::vector<double> out;
  if (!detail::blend_neighbors(f.span(), cfg.alpha, views, out)) return f;
  return l2_normalize(std::move(out));
}

enum class MsKernel { flat, gaussian };

/// Classical iterative mean shift over a static point set, in raw space.
/// Each point moves toward the (weighted) mean of the original points within
/// radius h (flat kernel) or under Gaussian weights, until its shift drops
/// below tol or max_iter is reached. Used as the mode-seeking oracle.
inline std::vector<std::vector<double>> classical_mean_shift(
    const std::vector<std::vector<double>>& points, double h, std::size_t max_iter = 100,
    double tol = 1e-9, MsKernel kernel = MsKernel::flat) {
  if (!(h > 0.0)) throw OutOfRangeError("classical_mean_shift: radius must be positive");
  if (max_iter == 0) throw OutOfRangeError("classical_mean_shift: max_iter must be positive");
  if (!(tol > 0.0)) throw OutOfRangeError("classical_mean_shift: tol must be positive");
  if (points.empty()) return {};
  const std::size_t d = points.front().size();
  for (const auto& p : points) {
    if (p.size() != d) throw DimMismatchError("classical_mean_shift: ragged points");
    detail::require_finite(p, "classical_mean_shift");
  }

  const double h2 = h * h;
  std::vector<std::vector<double>> result = points;
  std::vector<double> mean(d);
  for (auto& y : result) {
    for (std::size_t it = 0; it < max_iter; ++it) {
      std::fill(mean.begin(), mean.end(), 0.0);
      double wsum = 0.0;
      for (const auto& v : points) {
        double dist2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = y[j] - v[j];
          dist2 += diff * diff;
        }
        double w;
        if (kernel == MsKernel::flat) {
          if (dist2 > h2) continue;
          w = 1.0;
        } else {
          w = std::exp(-dist2 / (2.0 * h2));
        }
        wsum += w;
        for (std::size_t j = 0; j < d; ++j) mean[j] += w * v[j];
      }
      if (wsum < kZeroNormEps) break;
      double shift2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        mean[j] /= wsum;
        const double diff = mean[j] - y[j];
        shift2 += diff * diff;
      }
      y = mean;
      if (shift2 < tol * tol) break;
    }
  }
  return result;
}

}  // namespace mstta
