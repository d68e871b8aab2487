#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mstta/mstta.hpp"

namespace testutil {

inline mstta::Embedding random_unit(mstta::Rng& rng, std::size_t d) {
  for (;;) {
    std::vector<double> v = rng.gaussian_vector(d);
    double s = 0.0;
    for (double x : v) s += x * x;
    if (std::sqrt(s) >= 1e-6) return mstta::l2_normalize(std::move(v));
  }
}

inline mstta::TextClassMatrix random_text(mstta::Rng& rng, std::size_t c, std::size_t d) {
  std::vector<mstta::Embedding> rows;
  rows.reserve(c);
  for (std::size_t i = 0; i < c; ++i) rows.push_back(random_unit(rng, d));
  return mstta::TextClassMatrix(std::move(rows));
}

// Plain-loop inner product at extended precision; tests use this instead of
// the library kernel when they need an independent reference value.
inline double slow_dot(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += static_cast<long double>(a[i]) * static_cast<long double>(b[i]);
  }
  return static_cast<double>(s);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace testutil
