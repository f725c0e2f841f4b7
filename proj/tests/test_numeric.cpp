#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "util.hpp"
#include "vtg/btf.hpp"
#include "vtg/chi2.hpp"
#include "vtg/linalg.hpp"
#include "vtg/random.hpp"
#include "vtg/tensor.hpp"

using vtg::Errc;
using vtg::RandomStream;
using vtg::Tensor;

namespace {

Tensor random_spd(std::size_t d, RandomStream& rng) {
  Tensor a({d, d});
  for (double& v : a.storage()) v = rng.normal();
  Tensor m({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += a.at(i, k) * a.at(j, k);
      m.at(i, j) = s + (i == j ? 0.1 : 0.0);
    }
  return m;
}

oracle::Matrix to_matrix(const Tensor& t) {
  oracle::Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
  return m;
}

}  // namespace

TEST_CASE("tensor shape and payload agree") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_ERRC(Tensor({2, 2}, std::vector<double>(3, 0.0)), Errc::ShapeMismatch);
  CHECK_ERRC(t.dim(2), Errc::ShapeMismatch);
  Tensor empty({0, 4});
  CHECK(empty.size() == 0);
  CHECK(empty.all_finite());
}

TEST_CASE("tensor slice copies the leading-axis block") {
  Tensor t({2, 2, 2}, std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7});
  Tensor s = t.slice(1);
  CHECK(s.shape() == std::vector<std::size_t>{2, 2});
  CHECK(s.at(1, 0) == 6.0);
  CHECK_ERRC(t.slice(2), Errc::IndexOutOfRange);
  t[3] = std::nan("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("cholesky examples") {
  auto id = vtg::cholesky_spd(Tensor::identity(3));
  CHECK(id.lower == Tensor::identity(3));

  auto f = vtg::cholesky_spd(Tensor::matrix(2, 2, {4, 2, 2, 3}));
  CHECK(f.lower.at(0, 0) == doctest::Approx(2.0));
  CHECK(f.lower.at(0, 1) == 0.0);
  CHECK(f.lower.at(1, 0) == doctest::Approx(1.0));
  CHECK(f.lower.at(1, 1) == doctest::Approx(std::sqrt(2.0)));

  CHECK_ERRC(vtg::cholesky_spd(Tensor::matrix(2, 2, {1, 1, 1, 1})), Errc::NotPositiveDefinite);
  CHECK_ERRC(vtg::cholesky_spd(Tensor::matrix(2, 2, {1, 0.5, 0.4, 1})), Errc::DomainError);
  CHECK_ERRC(vtg::cholesky_spd(Tensor({2, 3})), Errc::DimensionMismatch);
}

TEST_CASE("solve examples") {
  auto id = vtg::cholesky_spd(Tensor::identity(2));
  auto y = vtg::solve_spd(id, std::vector<double>{5, 7});
  CHECK(y == std::vector<double>{5, 7});

  auto diag = vtg::cholesky_spd(Tensor::matrix(2, 2, {4, 0, 0, 9}));
  y = vtg::solve_spd(diag, std::vector<double>{8, 27});
  CHECK(y[0] == doctest::Approx(2.0));
  CHECK(y[1] == doctest::Approx(3.0));
  CHECK_ERRC(vtg::solve_spd(diag, std::vector<double>{1, 2, 3}), Errc::DimensionMismatch);
}

TEST_CASE("property: factor reconstructs and solve matches dense inverse for d <= 4") {
  RandomStream rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + rng.below(4);
    Tensor m = random_spd(d, rng);
    auto f = vtg::cholesky_spd(m);
    Tensor back = f.reconstruct();
    for (std::size_t i = 0; i < m.size(); ++i)
      CHECK(std::fabs(back[i] - m[i]) <= 1e-8 * std::max(1.0, std::fabs(m[i])));
    for (std::size_t i = 0; i < d; ++i) CHECK(f.lower.at(i, i) > 0.0);

    std::vector<double> r(d);
    for (double& v : r) v = rng.normal();
    auto y = vtg::solve_spd(f, r);
    auto inv = oracle::inverse(to_matrix(m));
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double ref = 0.0;
      for (std::size_t j = 0; j < d; ++j) ref += inv[i][j] * r[j];
      num += (y[i] - ref) * (y[i] - ref);
      den += ref * ref;
    }
    CHECK(std::sqrt(num) <= 1e-7 * std::sqrt(den) + 1e-14);
  }
}

TEST_CASE("chi2 quantile spot values") {
  CHECK(vtg::chi2_quantile(2, 0.95) == doctest::Approx(5.99146).epsilon(1e-6));
  CHECK(vtg::chi2_quantile(1, 0.5) == doctest::Approx(0.454936).epsilon(1e-5));
  CHECK(oracle::chi2_quantile(2, 0.95) == doctest::Approx(5.99146).epsilon(1e-6));
  CHECK_ERRC(vtg::chi2_quantile(2, 0.0), Errc::DomainError);
  CHECK_ERRC(vtg::chi2_quantile(2, 1.0), Errc::DomainError);
  CHECK_ERRC(vtg::chi2_quantile(0, 0.5), Errc::DomainError);
}

TEST_CASE("property: chi2 quantile round-trips and matches the bisection oracle") {
  for (double d : {1.0, 2.0, 8.0, 64.0, 768.0}) {
    double prev = 0.0;
    for (double p : {0.5, 0.9, 0.95, 0.99}) {
      const double tau = vtg::chi2_quantile(d, p);
      CHECK(std::fabs(vtg::chi2_cdf(tau, d) - p) <= 1e-6);
      CHECK(std::fabs(oracle::chi2_cdf(tau, d) - p) <= 1e-6);
      CHECK(tau > prev);
      prev = tau;
    }
  }
}

TEST_CASE("splitmix test vector from seed 0") {
  RandomStream s(0);
  auto [a, s1] = s.next();
  auto [b, s2] = s1.next();
  auto [c, s3] = s2.next();
  CHECK(a == 0xE220A8397B1DCDAFULL);
  CHECK(b == 0x6E789E6AA1B965F4ULL);
  CHECK(c == 0x06C45D188009454FULL);

  oracle::SplitMix ref{0x1234};
  RandomStream r(0x1234);
  for (int i = 0; i < 1000; ++i) CHECK(r.next_u64() == ref.next());
}

TEST_CASE("child streams are distinct and do not advance the parent") {
  RandomStream s(42);
  auto c1 = s.derive_child(1), c2 = s.derive_child(2);
  CHECK(c1.next().first != c2.next().first);
  CHECK(s.state() == 42);
  const std::uint64_t expect =
      RandomStream::mix(42 ^ RandomStream::mix(1 + RandomStream::kLabelSalt));
  CHECK(c1.state() == expect);
  CHECK(c1.label() == std::vector<std::uint64_t>{1});
}

TEST_CASE("property: uniform draws are in [0,1) with mean near one half") {
  RandomStream a(7), b(7);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = a.uniform();
    CHECK_FALSE((u < 0.0 || u >= 1.0));
    CHECK(u == b.uniform());
    sum += u;
  }
  CHECK(sum / 1e5 > 0.49);
  CHECK(sum / 1e5 < 0.51);
}

TEST_CASE("sampling without replacement yields distinct indices") {
  RandomStream rng(3);
  auto s = vtg::sample_without_replacement(50, 20, rng);
  CHECK(s.size() == 20);
  CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 20);
  for (auto i : s) CHECK(i < 50);
}

TEST_CASE("btf round-trips f64 and u8 tensors") {
  Tensor t({2, 3}, std::vector<double>{0.1, -2.0, 3e100, 0.0, 1.0, 5.5});
  CHECK(vtg::btf::decode(vtg::btf::encode(t)) == t);

  Tensor img({2, 2}, std::vector<double>{0.0, 17.0, 254.6, 300.0});
  auto bytes = vtg::btf::encode(img, vtg::btf::DType::U8);
  CHECK(bytes.substr(0, 4) == "BTF1");
  CHECK(bytes.size() == 4 + 1 + 1 + 2 * 8 + 4);
  std::istringstream in(bytes);
  vtg::btf::DType dt{};
  Tensor back = vtg::btf::read_tensor(in, &dt);
  CHECK(dt == vtg::btf::DType::U8);
  CHECK(back.storage() == std::vector<double>{0.0, 17.0, 255.0, 255.0});
}

TEST_CASE("btf rejects corrupt input") {
  auto bytes = vtg::btf::encode(Tensor({3}, 1.0));
  CHECK_ERRC(vtg::btf::decode(bytes.substr(0, bytes.size() - 1)), Errc::CorruptFile);
  CHECK_ERRC(vtg::btf::decode("XTF1" + bytes.substr(4)), Errc::CorruptFile);
  std::string bad = bytes;
  bad[4] = 9;
  CHECK_ERRC(vtg::btf::decode(bad), Errc::CorruptFile);
}

TEST_CASE("btf container keeps section order") {
  vtg::btf::Container c;
  c.add("zeta", Tensor({1}, 1.0));
  c.add("alpha", Tensor({2}, 2.0));
  std::stringstream ss;
  c.write(ss);
  auto r = vtg::btf::Container::read(ss);
  REQUIRE(r.sections().size() == 2);
  CHECK(r.sections()[0].first == "zeta");
  CHECK(r.get("alpha") == Tensor({2}, 2.0));
  CHECK_ERRC(r.get("missing"), Errc::CorruptFile);
}
