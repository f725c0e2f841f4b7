#include "vtg/tensor.hpp"

#include <cmath>
#include <string>

#include "vtg/error.hpp"

namespace vtg {

std::size_t shape_product(const std::vector<std::size_t>& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw Error(Errc::ShapeMismatch, "tensor payload has " + std::to_string(data_.size()) +
                                         " values for shape product " +
                                         std::to_string(shape_product(shape_)));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw Error(Errc::ShapeMismatch, "axis out of range");
  return shape_[axis];
}

Tensor Tensor::slice(std::size_t i) const {
  if (shape_.empty() || i >= shape_[0]) throw Error(Errc::IndexOutOfRange, "slice index");
  std::vector<std::size_t> sub(shape_.begin() + 1, shape_.end());
  const std::size_t stride = shape_product(sub);
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(i * stride),
                          data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
  return Tensor(std::move(sub), std::move(out));
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::NotPositiveDefinite: return "NotPositiveDefinite";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::DomainError: return "DomainError";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::CorruptFile: return "CorruptFile";
    case Errc::IoError: return "IoError";
    case Errc::LayerOutOfRange: return "LayerOutOfRange";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::UniverseMismatch: return "UniverseMismatch";
    case Errc::AllClustersEmpty: return "AllClustersEmpty";
    case Errc::IndivisibleDimensions: return "IndivisibleDimensions";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::FootprintOverflow: return "FootprintOverflow";
    case Errc::ConstructionFailed: return "ConstructionFailed";
    case Errc::TooFewCleanEpisodes: return "TooFewCleanEpisodes";
    case Errc::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

}  // namespace vtg
