#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mstta/errors.hpp"

#if defined(_MSC_VER)
#define MSTTA_NOINLINE __declspec(noinline)
#else
#define MSTTA_NOINLINE __attribute__((noinline))
#endif

namespace mstta {

inline constexpr double kUnitNormTol = 1e-5;   // |norm - 1| allowed on unit vectors
inline constexpr double kZeroNormEps = 1e-12;  // below this a vector counts as zero
inline constexpr double kProbSumTol = 1e-6;
inline constexpr double kDefaultSoftmaxScale = 100.0;

namespace detail {

inline void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NonFiniteError(std::string(what) + ": non-finite component");
    }
  }
}

// Four-lane accumulation; the fixed summation order keeps results
// reproducible. Kept out of line: inlined into the bank-scan loop, GCC's SLP
// pass emits shuffle-heavy code that halves scan throughput.
MSTTA_NOINLINE inline double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  const double* x = a.data();
  const double* y = b.data();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += x[i] * y[i];
    s1 += x[i + 1] * y[i + 1];
    s2 += x[i + 2] * y[i + 2];
    s3 += x[i + 3] * y[i + 3];
  }
  for (; i < n; ++i) s0 += x[i] * y[i];
  return (s0 + s1) + (s2 + s3);
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

}  // namespace detail

class Embedding;
inline Embedding l2_normalize(std::vector<double> v);

/// Unit-norm feature vector. Every constructed instance has finite
/// components and L2 norm 1 within kUnitNormTol.
class Embedding {
 public:
  Embedding() = default;

  /// Wraps values that must already be unit-norm; use l2_normalize() for raw data.
  explicit Embedding(std::vector<double> unit_values) : values_(std::move(unit_values)) {
    detail::require_finite(values_, "Embedding");
    const double n = detail::l2_norm(values_);
    if (std::abs(n - 1.0) > kUnitNormTol) {
      throw OutOfRangeError("Embedding: values are not unit-norm (norm = " + std::to_string(n) + ")");
    }
  }

  std::size_t dim() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }
  std::span<const double> span() const { return values_; }

  friend bool operator==(const Embedding&, const Embedding&) = default;

 private:
  struct normalized_tag {};
  Embedding(std::vector<double> v, normalized_tag) : values_(std::move(v)) {}
  friend Embedding l2_normalize(std::vector<double> v);

  std::vector<double> values_;
};

/// v / ||v||2. Rejects zero and non-finite input.
inline Embedding l2_normalize(std::vector<double> v) {
  detail::require_finite(v, "l2_normalize");
  const double n = detail::l2_norm(v);
  if (n < kZeroNormEps) {
    throw ZeroVectorError("l2_normalize: norm below " + std::to_string(kZeroNormEps));
  }
  const double inv = 1.0 / n;
  for (double& x : v) x *= inv;
  return Embedding(std::move(v), Embedding::normalized_tag{});
}

inline Embedding l2_normalize(std::span<const double> v) {
  return l2_normalize(std::vector<double>(v.begin(), v.end()));
}

inline double dot(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) throw DimMismatchError("dot: embedding dims differ");
  return detail::dot(a.span(), b.span());
}

/// One unit-norm text embedding per class, C >= 2.
class TextClassMatrix {
 public:
  explicit TextClassMatrix(std::vector<Embedding> rows, std::vector<std::string> class_names = {})
      : rows_(std::move(rows)), class_names_(std::move(class_names)) {
    if (rows_.size() < 2) throw OutOfRangeError("TextClassMatrix: at least 2 classes required");
    for (const Embedding& r : rows_) {
      if (r.dim() != rows_.front().dim()) throw DimMismatchError("TextClassMatrix: ragged rows");
    }
    if (!class_names_.empty() && class_names_.size() != rows_.size()) {
      throw DimMismatchError("TextClassMatrix: class_names count differs from row count");
    }
  }

  std::size_t num_classes() const { return rows_.size(); }
  std::size_t dim() const { return rows_.front().dim(); }
  const Embedding& row(std::size_t c) const { return rows_[c]; }
  const std::vector<Embedding>& rows() const { return rows_; }
  const std::vector<std::string>& class_names() const { return class_names_; }

 private:
  std::vector<Embedding> rows_;
  std::vector<std::string> class_names_;
};

/// Unnormalized per-class scores; finite components.
class Logits {
 public:
  Logits() = default;
  explicit Logits(std::vector<double> v) : values_(std::move(v)) {
    detail::require_finite(values_, "Logits");
  }

  static Logits zeros(std::size_t c) { return Logits(std::vector<double>(c, 0.0)); }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }

  friend bool operator==(const Logits&, const Logits&) = default;

 private:
  std::vector<double> values_;
};

/// Discrete distribution: non-negative, sums to 1 within kProbSumTol.
class ProbVector {
 public:
  explicit ProbVector(std::vector<double> p) : values_(std::move(p)) {
    double sum = 0.0;
    for (double x : values_) {
      if (!(x >= 0.0)) throw OutOfRangeError("ProbVector: negative or NaN component");
      sum += x;
    }
    if (std::abs(sum - 1.0) > kProbSumTol) {
      throw OutOfRangeError("ProbVector: components sum to " + std::to_string(sum));
    }
  }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> values_;
};

/// One-hot class assignment out of C classes.
class PseudoLabel {
 public:
  PseudoLabel(std::size_t class_index, std::size_t num_classes)
      : class_index_(class_index), num_classes_(num_classes) {
    if (num_classes_ < 2) throw OutOfRangeError("PseudoLabel: at least 2 classes required");
    if (class_index_ >= num_classes_) {
      throw BadClassIndexError("PseudoLabel: class " + std::to_string(class_index_) + " out of [0, " +
                               std::to_string(num_classes_) + ")");
    }
  }

  std::size_t class_index() const { return class_index_; }
  std::size_t num_classes() const { return num_classes_; }

  std::vector<double> one_hot() const {
    std::vector<double> v(num_classes_, 0.0);
    v[class_index_] = 1.0;
    return v;
  }

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;

 private:
  std::size_t class_index_ = 0;
  std::size_t num_classes_ = 2;
};

/// result[c] = f . W[c], the zero-shot score of f against every class row.
inline Logits zero_shot_logits(const Embedding& f, const TextClassMatrix& W) {
  if (f.dim() != W.dim()) {
    throw DimMismatchError("zero_shot_logits: embedding dim " + std::to_string(f.dim()) +
                           " vs text dim " + std::to_string(W.dim()));
  }
  std::vector<double> out(W.num_classes());
  for (std::size_t c = 0; c < W.num_classes(); ++c) {
    out[c] = detail::dot(f.span(), W.row(c).span());
  }
  return Logits(std::move(out));
}

/// Max-subtracted softmax of scale * logits.
inline ProbVector softmax(const Logits& l, double scale = kDefaultSoftmaxScale) {
  if (!(scale > 0.0)) throw OutOfRangeError("softmax: scale must be > 0");
  if (l.size() == 0) throw DimMismatchError("softmax: empty logits");
  const std::vector<double>& v = l.values();
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> p(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    p[i] = std::exp(scale * (v[i] - m));
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return ProbVector(std::move(p));
}

/// Shannon entropy in nats, with 0 * ln 0 == 0. Range [0, ln C].
inline double entropy(const ProbVector& p) {
  double h = 0.0;
  for (double x : p.values()) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return std::max(h, 0.0);
}

/// Argmax as a one-hot pseudo-label; ties go to the lowest class index.
inline PseudoLabel one_hot_argmax(const Logits& l) {
  if (l.size() < 2) throw DimMismatchError("one_hot_argmax: at least 2 classes required");
  const std::vector<double>& v = l.values();
  const std::size_t best =
      static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  return PseudoLabel(best, v.size());
}

}  // namespace mstta
