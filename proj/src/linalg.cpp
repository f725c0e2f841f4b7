#include "vtg/linalg.hpp"

#include <cmath>
#include <string>

#include "vtg/error.hpp"

namespace vtg {

Tensor SpdFactor::reconstruct() const {
  Tensor m({dim, dim});
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k <= j; ++k) s += lower.at(i, k) * lower.at(j, k);
      m.at(i, j) = s;
      m.at(j, i) = s;
    }
  return m;
}

SpdFactor cholesky_spd(const Tensor& m) {
  if (m.ndim() != 2 || m.dim(0) != m.dim(1) || m.dim(0) == 0)
    throw Error(Errc::DimensionMismatch, "cholesky needs a non-empty square matrix");
  const std::size_t d = m.dim(0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(m.at(i, j) - m.at(j, i)) > 1e-10)
        throw Error(Errc::DomainError, "matrix is not symmetric");

  SpdFactor f{d, Tensor({d, d})};
  Tensor& l = f.lower;
  for (std::size_t j = 0; j < d; ++j) {
    double pivot = m.at(j, j);
    for (std::size_t k = 0; k < j; ++k) pivot -= l.at(j, k) * l.at(j, k);
    if (!(pivot > 0.0))
      throw Error(Errc::NotPositiveDefinite, "pivot " + std::to_string(j) + " is " +
                                                 std::to_string(pivot));
    const double ljj = std::sqrt(pivot);
    l.at(j, j) = ljj;
    for (std::size_t i = j + 1; i < d; ++i) {
      double s = m.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
      l.at(i, j) = s / ljj;
    }
  }
  return f;
}

std::vector<double> forward_substitute(const SpdFactor& f, std::span<const double> rhs) {
  if (rhs.size() != f.dim) throw Error(Errc::DimensionMismatch, "rhs length differs from factor");
  std::vector<double> y(f.dim);
  for (std::size_t i = 0; i < f.dim; ++i) {
    double s = rhs[i];
    for (std::size_t k = 0; k < i; ++k) s -= f.lower.at(i, k) * y[k];
    y[i] = s / f.lower.at(i, i);
  }
  return y;
}

std::vector<double> solve_spd(const SpdFactor& f, std::span<const double> rhs) {
  std::vector<double> y = forward_substitute(f, rhs);
  for (std::size_t ii = f.dim; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < f.dim; ++k) s -= f.lower.at(k, ii) * y[k];
    y[ii] = s / f.lower.at(ii, ii);
  }
  return y;
}

}  // namespace vtg
