#include "vtg/btf.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vtg/error.hpp"

namespace vtg::btf {
namespace {

static_assert(std::endian::native == std::endian::little, "BTF I/O assumes a little-endian host");

constexpr char kTensorMagic[4] = {'B', 'T', 'F', '1'};
constexpr char kContainerMagic[4] = {'B', 'T', 'F', 'C'};
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error(Errc::CorruptFile, "truncated stream");
  return v;
}

void expect_magic(std::istream& in, const char (&magic)[4]) {
  char buf[4];
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw Error(Errc::CorruptFile, std::string("bad magic, expected ") + std::string(magic, 4));
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t, DType dtype) {
  if (t.ndim() > 255) throw Error(Errc::ShapeMismatch, "too many axes for BTF");
  out.write(kTensorMagic, 4);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.ndim()));
  for (std::size_t e : t.shape()) put<std::uint64_t>(out, e);
  if (dtype == DType::F64) {
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    std::string bytes(t.size(), '\0');
    for (std::size_t i = 0; i < t.size(); ++i)
      bytes[i] = static_cast<char>(static_cast<std::uint8_t>(std::lround(std::clamp(t[i], 0.0, 255.0))));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw Error(Errc::IoError, "write failed");
}

Tensor read_tensor(std::istream& in, DType* dtype_out) {
  expect_magic(in, kTensorMagic);
  const auto dtype = take<std::uint8_t>(in);
  if (dtype != 1 && dtype != 2) throw Error(Errc::CorruptFile, "unknown dtype code");
  if (dtype_out) *dtype_out = static_cast<DType>(dtype);
  const auto ndim = take<std::uint8_t>(in);
  std::vector<std::size_t> shape(ndim);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    const auto v = take<std::uint64_t>(in);
    if (v > kMaxElements) throw Error(Errc::CorruptFile, "extent too large");
    e = static_cast<std::size_t>(v);
    count *= v;
    if (count > kMaxElements) throw Error(Errc::CorruptFile, "tensor too large");
  }
  std::vector<double> data(count);
  if (dtype == 1) {
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(double))))
      throw Error(Errc::CorruptFile, "truncated payload");
  } else {
    std::string bytes(count, '\0');
    if (!in.read(bytes.data(), static_cast<std::streamsize>(count)))
      throw Error(Errc::CorruptFile, "truncated payload");
    for (std::size_t i = 0; i < count; ++i) data[i] = static_cast<std::uint8_t>(bytes[i]);
  }
  return Tensor(std::move(shape), std::move(data));
}

std::string encode(const Tensor& t, DType dtype) {
  std::ostringstream out(std::ios::binary);
  write_tensor(out, t, dtype);
  return out.str();
}

Tensor decode(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_tensor(in);
}

void save(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string());
  write_tensor(out, t, dtype);
}

Tensor load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return read_tensor(in);
}

void Container::add(std::string name, Tensor t, DType dtype) {
  sections_.emplace_back(std::move(name), std::move(t));
  dtypes_.push_back(dtype);
}

bool Container::has(const std::string& name) const {
  return std::any_of(sections_.begin(), sections_.end(), [&](const auto& s) { return s.first == name; });
}

const Tensor& Container::get(const std::string& name) const {
  for (const auto& [n, t] : sections_)
    if (n == name) return t;
  throw Error(Errc::CorruptFile, "missing section '" + name + "'");
}

void Container::write(std::ostream& out) const {
  out.write(kContainerMagic, 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sections_.size()));
  for (std::size_t i = 0; i < sections_.size(); ++i) {
    const auto& [name, t] = sections_[i];
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, t, dtypes_[i]);
  }
}

Container Container::read(std::istream& in) {
  expect_magic(in, kContainerMagic);
  const auto count = take<std::uint32_t>(in);
  if (count > 4096) throw Error(Errc::CorruptFile, "implausible section count");
  Container c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = take<std::uint16_t>(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw Error(Errc::CorruptFile, "truncated section name");
    DType dtype = DType::F64;
    Tensor t = read_tensor(in, &dtype);
    c.add(std::move(name), std::move(t), dtype);
  }
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string());
  write(out);
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return read(in);
}

}  // namespace vtg::btf
