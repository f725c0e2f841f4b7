#pragma once

// Independent reference implementations used only by the tests.

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

/// Gauss-Jordan inverse with partial pivoting.
inline Matrix inverse(Matrix a) {
  const std::size_t n = a.size();
  Matrix inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(a[r][c]) > std::fabs(a[p][c])) p = r;
    std::swap(a[c], a[p]);
    std::swap(inv[c], inv[p]);
    const double d = a[c][c];
    for (std::size_t j = 0; j < n; ++j) {
      a[c][j] /= d;
      inv[c][j] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r][c];
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] -= f * a[c][j];
        inv[r][j] -= f * inv[c][j];
      }
    }
  }
  return inv;
}

inline double quad_form(const Matrix& inv, const std::vector<double>& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) s += v[i] * inv[i][j] * v[j];
  return s;
}

/// P(a, x) by plain series summation with many terms; adequate for moderate x.
inline double gamma_p_series(double a, double x) {
  if (x <= 0.0) return 0.0;
  double term = 1.0 / a, sum = term;
  for (int n = 1; n < 100000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double chi2_cdf(double x, double k) { return gamma_p_series(0.5 * k, 0.5 * x); }

inline double chi2_quantile(double k, double p) {
  double lo = 0.0, hi = 1.0;
  while (chi2_cdf(hi, k) < p) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (chi2_cdf(mid, k) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// SplitMix64 written out from the published recurrence.
struct SplitMix {
  std::uint64_t s;
  std::uint64_t next() {
    std::uint64_t z = (s += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

/// Lloyd's algorithm in 1-D from the given starting centres.
inline std::vector<double> kmeans_1d(const std::vector<double>& x, std::vector<double> c, int iters = 100) {
  for (int it = 0; it < iters; ++it) {
    std::vector<double> sum(c.size(), 0.0), cnt(c.size(), 0.0);
    for (double v : x) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c.size(); ++k)
        if (std::fabs(v - c[k]) < std::fabs(v - c[best])) best = k;
      sum[best] += v;
      cnt[best] += 1.0;
    }
    for (std::size_t k = 0; k < c.size(); ++k)
      if (cnt[k] > 0) c[k] = sum[k] / cnt[k];
  }
  return c;
}

}  // namespace oracle
