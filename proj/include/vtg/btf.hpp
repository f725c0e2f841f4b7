#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "vtg/tensor.hpp"

namespace vtg::btf {

enum class DType : std::uint8_t { F64 = 1, U8 = 2 };

// Single tensor: "BTF1", u8 dtype, u8 ndim, ndim x u64 extents, payload.
// All integers and floats little-endian, no padding.
void write_tensor(std::ostream& out, const Tensor& t, DType dtype = DType::F64);
/// `dtype_out`, when given, receives the stored element type.
Tensor read_tensor(std::istream& in, DType* dtype_out = nullptr);

std::string encode(const Tensor& t, DType dtype = DType::F64);
Tensor decode(const std::string& bytes);

void save(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::F64);
Tensor load(const std::filesystem::path& path);

/// Ordered list of named tensors.
///
/// Layout: "BTFC", u32 section count, then per section a u16 name length,
/// the UTF-8 name, and one embedded BTF1 tensor. Sections keep insertion order.
class Container {
 public:
  void add(std::string name, Tensor t, DType dtype = DType::F64);
  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;  // CorruptFile if missing
  const std::vector<std::pair<std::string, Tensor>>& sections() const { return sections_; }

  void write(std::ostream& out) const;
  static Container read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Tensor>> sections_;
  std::vector<DType> dtypes_;
};

}  // namespace vtg::btf
