#include <algorithm>
#include <cmath>

#include "vtg/error.hpp"
#include "vtg/recon.hpp"

namespace vtg::recon {

PatchGrid patchify(const Tensor& image, std::size_t patch_size) {
  if (image.ndim() != 3 || image.dim(2) != 3) throw Error(Errc::ShapeMismatch, "image must be H x W x 3");
  const std::size_t h = image.dim(0);
  const std::size_t w = image.dim(1);
  if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0)
    throw Error(Errc::IndivisibleDimensions, "image " + std::to_string(h) + "x" + std::to_string(w) +
                                                 " not divisible by patch size " + std::to_string(patch_size));
  PatchGrid g{patch_size, h / patch_size, w / patch_size, {}};
  const std::size_t pd = patch_size * patch_size * 3;
  g.patches = Tensor({g.rows * g.cols, pd});
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) {
      double* dst = g.patches.row(r * g.cols + c).data();
      for (std::size_t py = 0; py < patch_size; ++py) {
        const double* src = &image.storage()[((r * patch_size + py) * w + c * patch_size) * 3];
        std::copy(src, src + patch_size * 3, dst + py * patch_size * 3);
      }
    }
  return g;
}

Tensor unpatchify(const PatchGrid& g) {
  const std::size_t p = g.patch_size;
  const std::size_t w = g.cols * p;
  Tensor image({g.rows * p, w, 3});
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) {
      const double* src = g.patches.row(r * g.cols + c).data();
      for (std::size_t py = 0; py < p; ++py)
        std::copy(src + py * p * 3, src + (py + 1) * p * 3,
                  &image.storage()[((r * p + py) * w + c * p) * 3]);
    }
  return image;
}

MaskSpec make_random_mask(std::size_t n_patches, double ratio, RandomStream& rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw Error(Errc::DomainError, "mask ratio must lie in [0, 1)");
  const auto count = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(n_patches)));
  std::vector<bool> is_masked(n_patches, false);
  for (std::size_t i : sample_without_replacement(n_patches, count, rng)) is_masked[i] = true;
  MaskSpec m;
  m.origin = MaskOrigin::RandomTraining;
  m.ratio = n_patches ? static_cast<double>(count) / static_cast<double>(n_patches) : 0.0;
  for (std::size_t i = 0; i < n_patches; ++i) (is_masked[i] ? m.masked : m.kept).push_back(i);
  return m;
}

MaskSpec make_backdoor_mask(const std::vector<std::size_t>& backdoor, std::size_t n_patches) {
  std::vector<bool> is_masked(n_patches, false);
  for (std::size_t i : backdoor) {
    if (i >= n_patches) throw Error(Errc::IndexOutOfRange, "backdoor index " + std::to_string(i));
    is_masked[i] = true;
  }
  MaskSpec m;
  m.origin = MaskOrigin::BackdoorSelective;
  for (std::size_t i = 0; i < n_patches; ++i) (is_masked[i] ? m.masked : m.kept).push_back(i);
  m.ratio = n_patches ? static_cast<double>(m.masked.size()) / static_cast<double>(n_patches) : 0.0;
  return m;
}

double trigger_residual(const Tensor& image, const Tensor& templ, const Region& region) {
  if (image.ndim() != 3 || templ.ndim() != 3 || templ.dim(0) != region.h || templ.dim(1) != region.w ||
      templ.dim(2) != 3)
    throw Error(Errc::ShapeMismatch, "template extent differs from region");
  if (region.y + region.h > image.dim(0) || region.x + region.w > image.dim(1))
    throw Error(Errc::IndexOutOfRange, "region outside image");
  const std::size_t n = region.h * region.w * 3;
  double ma = 0.0, mb = 0.0;
  for (std::size_t y = 0; y < region.h; ++y)
    for (std::size_t x = 0; x < region.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        ma += image.at(region.y + y, region.x + x, c);
        mb += templ.at(y, x, c);
      }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t y = 0; y < region.h; ++y)
    for (std::size_t x = 0; x < region.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double a = image.at(region.y + y, region.x + x, c) - ma;
        const double b = templ.at(y, x, c) - mb;
        sab += a * b;
        saa += a * a;
        sbb += b * b;
      }
  // Variance below ~1e-24 per element is numerically constant.
  const double floor = 1e-24 * static_cast<double>(n);
  if (saa <= floor || sbb <= floor) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace vtg::recon
