#include <algorithm>
#include <cmath>
#include <utility>

#include "doctest.h"
#include "util.hpp"
#include "vtg/recon.hpp"

using namespace vtg;
using namespace vtg::recon;

namespace {

Tensor random_image(std::size_t h, std::size_t w, RandomStream& rng) {
  Tensor img({h, w, 3});
  for (double& v : img.storage()) v = rng.uniform();
  return img;
}

/// Smooth two-tone images: a learnable family for short training runs.
std::vector<TrainSample> toy_dataset(std::size_t n, RandomStream rng) {
  std::vector<TrainSample> out;
  for (std::size_t k = 0; k < n; ++k) {
    const double a = rng.uniform(), b = rng.uniform();
    Tensor img({16, 16, 3});
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x)
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = (x < 8 ? a : b) * (0.5 + 0.2 * static_cast<double>(c));
    out.push_back({img, {a, b, a - b}});
  }
  return out;
}

DecoderShape micro_shape() { return DecoderShape{8, 2, 2, 8, 3}; }

}  // namespace

TEST_CASE("patchify round-trips and orders patches row-major") {
  RandomStream rng(1);
  Tensor img = random_image(16, 24, rng);
  auto g = patchify(img, 8);
  CHECK(g.rows == 2);
  CHECK(g.cols == 3);
  CHECK(g.patches.dim(1) == 192);
  CHECK(g.patches.at(4, 0) == img.at(8, 8, 0));
  CHECK(g.patches.at(1, 3 * 8 + 2) == img.at(1, 8, 2));
  CHECK(unpatchify(g) == img);
  CHECK_ERRC(patchify(img, 5), Errc::IndivisibleDimensions);
  CHECK_ERRC(patchify(Tensor({8, 8, 1}), 4), Errc::ShapeMismatch);
}

TEST_CASE("random masks hold an exact count") {
  RandomStream rng(2);
  for (double ratio : {0.0, 0.05, 0.25, 0.5}) {
    auto m = make_random_mask(64, ratio, rng);
    CHECK(m.masked.size() == static_cast<std::size_t>(std::lround(ratio * 64)));
    CHECK(m.n_patches() == 64);
    CHECK(std::is_sorted(m.kept.begin(), m.kept.end()));
    CHECK(m.origin == MaskOrigin::RandomTraining);
  }
  CHECK_ERRC(make_random_mask(64, 1.0, rng), Errc::DomainError);
}

TEST_CASE("backdoor mask masks exactly the given patches") {
  auto m = make_backdoor_mask({5, 1, 9}, 16);
  CHECK(m.masked == std::vector<std::size_t>{1, 5, 9});
  CHECK(m.kept.size() == 13);
  CHECK(m.ratio == doctest::Approx(3.0 / 16));
  CHECK(m.origin == MaskOrigin::BackdoorSelective);
  CHECK_ERRC(make_backdoor_mask({16}, 16), Errc::IndexOutOfRange);
}

TEST_CASE("gradient check on a 16x16 micro instance") {
  RandomStream rng(7);
  const auto shape = micro_shape();
  auto p = DecoderParams::init(shape, rng.derive_child(1));
  Tensor img = random_image(16, 16, rng);
  std::vector<double> e{0.3, -0.2, 0.5};
  for (LossKind kind : {LossKind::FullImage, LossKind::MaskedOnly}) {
    auto mask = make_backdoor_mask({1, 2}, 4);
    auto lg = loss_and_gradients(p, e, img, mask, kind);
    auto pt = p.tensors();
    const auto gt = std::as_const(lg.grad).tensors();
    REQUIRE(pt.size() == gt.size());
    for (std::size_t k = 0; k < pt.size(); ++k) {
      Tensor& t = *pt[k].second;
      double worst = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double orig = t[i];
        t[i] = orig + 1e-5;
        const double lp = loss_and_gradients(p, e, img, mask, kind).loss;
        t[i] = orig - 1e-5;
        const double lm = loss_and_gradients(p, e, img, mask, kind).loss;
        t[i] = orig;
        const double fd = (lp - lm) / 2e-5;
        const double an = (*gt[k].second)[i];
        // h = 1e-5 resolves derivatives to about 1e-11 absolute; the floor keeps
        // near-zero coordinates from comparing roundoff against roundoff.
        const double scale = std::max({std::fabs(fd), std::fabs(an), 1e-6});
        worst = std::max(worst, std::fabs(fd - an) / scale);
      }
      INFO(pt[k].first);
      CHECK(worst <= 1e-4);
    }
  }
}

TEST_CASE("masked pixels influence the output only through the embedding") {
  RandomStream rng(3);
  auto p = DecoderParams::init(micro_shape(), rng.derive_child(1));
  Tensor img = random_image(16, 16, rng);
  std::vector<double> e{0.1, 0.2, 0.3};
  auto mask = make_backdoor_mask({3}, 4);
  Tensor a = forward_reconstruct(p, e, img, mask);
  Tensor altered = img;
  for (std::size_t y = 8; y < 16; ++y)
    for (std::size_t x = 8; x < 16; ++x)
      for (std::size_t c = 0; c < 3; ++c) altered.at(y, x, c) = 1.0 - img.at(y, x, c);
  CHECK(forward_reconstruct(p, e, altered, mask) == a);
  std::vector<double> e2{0.1, 0.2, 0.4};
  CHECK_FALSE(forward_reconstruct(p, e2, altered, mask) == a);
}

TEST_CASE("shape errors") {
  RandomStream rng(3);
  auto p = DecoderParams::init(micro_shape(), rng);
  Tensor img = random_image(16, 16, rng);
  auto mask = make_backdoor_mask({}, 4);
  CHECK_ERRC(forward_reconstruct(p, std::vector<double>{1, 2}, img, mask), Errc::ShapeMismatch);
  CHECK_ERRC(forward_reconstruct(p, std::vector<double>{1, 2, 3}, random_image(8, 16, rng), mask),
             Errc::ShapeMismatch);
  CHECK_ERRC(forward_reconstruct(p, std::vector<double>{1, 2, 3}, img, make_backdoor_mask({}, 5)),
             Errc::ShapeMismatch);
}

TEST_CASE("training is deterministic and lowers the loss") {
  auto data = toy_dataset(12, RandomStream(5));
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.batch = 2;
  auto a = train_decoder(data, micro_shape(), cfg, RandomStream(9));
  auto b = train_decoder(data, micro_shape(), cfg, RandomStream(9));
  REQUIRE(a.history.size() == 300);
  for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].loss == b.history[i].loss);
  auto at = a.params.tensors();
  auto bt = b.params.tensors();
  for (std::size_t k = 0; k < at.size(); ++k) CHECK(*at[k].second == *bt[k].second);

  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    first += a.history[i].loss / 50.0;
    last += a.history[a.history.size() - 50 + i].loss / 50.0;
  }
  CHECK(last < 0.25 * first);
  for (const auto& rec : a.history) {
    CHECK(rec.mask_ratio >= 0.0);
    CHECK(rec.mask_ratio <= 0.25 + 1e-12);
  }
}

TEST_CASE("property: loss trend is downward in 50-step windows") {
  auto data = toy_dataset(12, RandomStream(6));
  TrainConfig cfg;
  cfg.steps = 400;
  cfg.batch = 2;
  auto st = train_decoder(data, micro_shape(), cfg, RandomStream(1));
  std::vector<double> windows;
  for (std::size_t s = 0; s + 50 <= st.history.size(); s += 50) {
    double m = 0.0;
    for (std::size_t i = s; i < s + 50; ++i) m += st.history[i].loss / 50.0;
    windows.push_back(m);
  }
  // Least-squares slope over window means.
  const double n = static_cast<double>(windows.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const double x = static_cast<double>(i);
    sx += x;
    sy += windows[i];
    sxx += x * x;
    sxy += x * windows[i];
  }
  CHECK((n * sxy - sx * sy) / (n * sxx - sx * sx) < 0.0);
  CHECK(windows.back() < windows.front());
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  auto data = toy_dataset(4, RandomStream(5));
  TrainConfig cfg;
  cfg.steps = 5;
  cfg.lr = 0.0;
  auto st = train_decoder(data, micro_shape(), cfg, RandomStream(9));
  auto init = DecoderParams::init(micro_shape(), RandomStream(9).derive_child(1));
  auto a = st.params.tensors();
  auto b = init.tensors();
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(*a[k].second == *b[k].second);
  CHECK(st.step == 5);
}

TEST_CASE("training input validation") {
  TrainConfig cfg;
  CHECK_ERRC(train_decoder({}, micro_shape(), cfg, RandomStream(1)), Errc::EmptyInput);
  auto data = toy_dataset(2, RandomStream(1));
  cfg.mask_min = 0.3;
  cfg.mask_max = 0.2;
  CHECK_ERRC(train_decoder(data, micro_shape(), cfg, RandomStream(1)), Errc::DomainError);
  cfg = {};
  cfg.lr = -1.0;
  CHECK_ERRC(train_decoder(data, micro_shape(), cfg, RandomStream(1)), Errc::DomainError);
}

TEST_CASE("purify modes") {
  RandomStream rng(4);
  auto p = DecoderParams::init(micro_shape(), rng.derive_child(1));
  Tensor img = random_image(16, 16, rng);
  std::vector<double> e{0.1, 0.2, 0.3};

  CHECK(purify(p, e, img, {}) == img);

  PurifyOptions zero{PurifyMode::ZeroFill, false};
  Tensor z = purify(p, e, img, {0}, zero);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(z.at(y, x, c) == ((y < 8 && x < 8) ? 0.0 : img.at(y, x, c)));

  PurifyOptions comp{PurifyMode::Composite, false};
  Tensor m = purify(p, e, img, {3}, comp);
  Tensor full = purify(p, e, img, {3});
  CHECK(m.at(0, 0, 0) == img.at(0, 0, 0));
  CHECK(m.at(12, 12, 1) == full.at(12, 12, 1));
  for (double v : full.storage()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  PurifyOptions always{PurifyMode::Decoder, true};
  CHECK_FALSE(purify(p, e, img, {}, always) == img);
  CHECK(purify(p, e, img, {2}) == purify(p, e, img, {2}));
}

TEST_CASE("trigger residual conventions") {
  RandomStream rng(8);
  Tensor img = random_image(16, 16, rng);
  Region r{2, 3, 4, 5};
  Tensor templ({4, 5, 3});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 5; ++x)
      for (std::size_t c = 0; c < 3; ++c) templ.at(y, x, c) = img.at(2 + y, 3 + x, c);
  CHECK(trigger_residual(img, templ, r) == doctest::Approx(1.0));

  Tensor inverted = img;
  for (double& v : inverted.storage()) v = 1.0 - v;
  CHECK(trigger_residual(inverted, templ, r) == doctest::Approx(-1.0));

  Tensor flat({16, 16, 3}, 0.4);
  CHECK(trigger_residual(flat, templ, r) == 0.0);
  CHECK_ERRC(trigger_residual(img, templ, Region{14, 14, 4, 5}), Errc::IndexOutOfRange);
  CHECK_ERRC(trigger_residual(img, templ, Region{0, 0, 5, 5}), Errc::ShapeMismatch);
}

TEST_CASE("decoder parameter file round-trip") {
  testutil::TempDir dir("recon");
  auto p = DecoderParams::init(micro_shape(), RandomStream(3));
  TrainConfig cfg;
  save_params(p, cfg, dir.path() / "d.btf");
  auto q = load_params(dir.path() / "d.btf");
  CHECK(q.shape.d_p == 8);
  CHECK(q.shape.d_e == 3);
  auto a = p.tensors();
  auto b = q.tensors();
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(*a[k].second == *b[k].second);
}
