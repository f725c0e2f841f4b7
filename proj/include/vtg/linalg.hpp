#pragma once

#include <span>
#include <vector>

#include "vtg/tensor.hpp"

namespace vtg {

/// Lower-triangular Cholesky factor L of an SPD matrix M = L Lᵀ.
struct SpdFactor {
  std::size_t dim = 0;
  Tensor lower;  // dim × dim, upper triangle zero

  /// Reconstructs L Lᵀ.
  Tensor reconstruct() const;
};

/// Factors a symmetric positive-definite matrix.
/// Throws NotPositiveDefinite on a non-positive pivot, DimensionMismatch on a
/// non-square input and DomainError if `m` is not symmetric within 1e-10.
SpdFactor cholesky_spd(const Tensor& m);

/// Solves M y = rhs for the factored M (forward then backward substitution).
std::vector<double> solve_spd(const SpdFactor& f, std::span<const double> rhs);

/// Solves L y = rhs only. ‖y‖² is the quadratic form rhsᵀ M⁻¹ rhs.
std::vector<double> forward_substitute(const SpdFactor& f, std::span<const double> rhs);

}  // namespace vtg
