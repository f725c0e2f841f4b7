#include <algorithm>
#include <cmath>
#include <limits>

#include "vtg/error.hpp"
#include "vtg/recon.hpp"

namespace vtg::recon {
namespace {

// Row-major dense helpers over 2-D tensors.

// c = a (n x k) * b (k x m)
Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor c({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = &c.storage()[i * m];
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a[i * k + t];
      if (av == 0.0) continue;
      const double* bt = &b.storage()[t * m];
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bt[j];
    }
  }
  return c;
}

// c += aᵀ (n x k)ᵀ * b (n x m)  -> k x m
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    const double* bi = &b.storage()[i * m];
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a[i * k + t];
      if (av == 0.0) continue;
      double* ct = &c.storage()[t * m];
      for (std::size_t j = 0; j < m; ++j) ct[j] += av * bi[j];
    }
  }
}

// c = a (n x m) * bᵀ (k x m)ᵀ  -> n x k
Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), m = a.dim(1), k = b.dim(0);
  Tensor c({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = &a.storage()[i * m];
    for (std::size_t j = 0; j < k; ++j) {
      const double* bj = &b.storage()[j * m];
      double s = 0.0;
      for (std::size_t t = 0; t < m; ++t) s += ai[t] * bj[t];
      c[i * k + j] = s;
    }
  }
  return c;
}

void add_inplace(Tensor& a, const Tensor& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

void add_row_bias(Tensor& a, const Tensor& bias) {
  const std::size_t m = a.dim(1);
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < m; ++j) a[i * m + j] += bias[j];
}

void colsum_acc(const Tensor& a, Tensor& out) {
  const std::size_t m = a.dim(1);
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += a[i * m + j];
}

struct AttnCache {
  Tensor x, q, k, v, a, h;
};

struct AttnWeights {
  const Tensor &wq, &wk, &wv, &wo;
};

struct AttnGrads {
  Tensor &wq, &wk, &wv, &wo;
};

// out = x + softmax(q kᵀ / sqrt(d)) v wo
Tensor attn_forward(const Tensor& x, const AttnWeights& w, AttnCache& c) {
  c.x = x;
  c.q = matmul(x, w.wq);
  c.k = matmul(x, w.wk);
  c.v = matmul(x, w.wv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.dim(1)));
  c.a = matmul_nt(c.q, c.k);
  const std::size_t n = x.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &c.a.storage()[i * n];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      row[j] *= scale;
      mx = std::max(mx, row[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
  }
  c.h = matmul(c.a, c.v);
  Tensor out = matmul(c.h, w.wo);
  add_inplace(out, x);
  return out;
}

Tensor attn_backward(const AttnCache& c, const AttnWeights& w, const Tensor& dout, AttnGrads g) {
  const std::size_t n = c.x.dim(0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.x.dim(1)));
  Tensor dx = dout;
  matmul_tn_acc(c.h, dout, g.wo);
  const Tensor dh = matmul_nt(dout, w.wo);
  Tensor da = matmul_nt(dh, c.v);
  Tensor dv({n, c.v.dim(1)});
  matmul_tn_acc(c.a, dh, dv);
  // Softmax backward, folded with the logit scale.
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += da[i * n + j] * c.a[i * n + j];
    for (std::size_t j = 0; j < n; ++j) da[i * n + j] = c.a[i * n + j] * (da[i * n + j] - dot) * scale;
  }
  const Tensor dq = matmul(da, c.k);
  Tensor dk({n, c.k.dim(1)});
  matmul_tn_acc(da, c.q, dk);
  matmul_tn_acc(c.x, dq, g.wq);
  matmul_tn_acc(c.x, dk, g.wk);
  matmul_tn_acc(c.x, dv, g.wv);
  add_inplace(dx, matmul_nt(dq, w.wq));
  add_inplace(dx, matmul_nt(dk, w.wk));
  add_inplace(dx, matmul_nt(dv, w.wv));
  return dx;
}

struct ForwardCache {
  PatchGrid grid;
  Tensor kept_patches;  // nk x patch_dim
  Tensor x0;
  AttnCache enc;
  bool has_enc = false;
  AttnCache dec;
  Tensor y;
  Tensor out;  // n x patch_dim
};

void check_inputs(const DecoderParams& p, std::span<const double> e, const Tensor& image, const MaskSpec& mask) {
  const DecoderShape& s = p.shape;
  if (e.size() != s.d_e) throw Error(Errc::ShapeMismatch, "global embedding has wrong dimension");
  if (image.ndim() != 3 || image.dim(0) != s.grid_rows * s.patch_size ||
      image.dim(1) != s.grid_cols * s.patch_size || image.dim(2) != 3)
    throw Error(Errc::ShapeMismatch, "image does not match decoder grid");
  if (mask.n_patches() != s.n_patches()) throw Error(Errc::ShapeMismatch, "mask covers a different patch count");
}

Tensor run_forward(const DecoderParams& p, std::span<const double> e, const Tensor& image, const MaskSpec& mask,
                   ForwardCache& fc) {
  check_inputs(p, e, image, mask);
  const DecoderShape& s = p.shape;
  const std::size_t dp = s.d_p;
  const std::size_t n = s.n_patches();
  fc.grid = patchify(image, s.patch_size);

  const std::size_t nk = mask.kept.size();
  Tensor g({nk, dp});
  fc.has_enc = nk > 0;
  if (nk > 0) {
    fc.kept_patches = Tensor({nk, s.patch_dim()});
    for (std::size_t r = 0; r < nk; ++r) {
      const auto src = fc.grid.patches.row(mask.kept[r]);
      std::copy(src.begin(), src.end(), fc.kept_patches.row(r).begin());
    }
    fc.x0 = matmul(fc.kept_patches, p.patch_w);
    add_row_bias(fc.x0, p.patch_b);
    for (std::size_t r = 0; r < nk; ++r)
      for (std::size_t j = 0; j < dp; ++j) fc.x0.at(r, j) += p.pos.at(mask.kept[r], j);
    g = attn_forward(fc.x0, {p.enc_q, p.enc_k, p.enc_v, p.enc_o}, fc.enc);
  }

  // Decoder sequence: encoded visible tokens, mask token elsewhere, plus the
  // projected global embedding on every position.
  Tensor z({n, dp});
  for (std::size_t r = 0; r < nk; ++r)
    std::copy(g.row(r).begin(), g.row(r).end(), z.row(mask.kept[r]).begin());
  for (std::size_t idx : mask.masked)
    for (std::size_t j = 0; j < dp; ++j) z.at(idx, j) = p.mask_token[j] + p.pos.at(idx, j);
  std::vector<double> gproj(p.global_b.storage());
  for (std::size_t t = 0; t < s.d_e; ++t)
    for (std::size_t j = 0; j < dp; ++j) gproj[j] += e[t] * p.global_w.at(t, j);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dp; ++j) z.at(i, j) += gproj[j];

  fc.y = attn_forward(z, {p.dec_q, p.dec_k, p.dec_v, p.dec_o}, fc.dec);
  fc.out = matmul(fc.y, p.out_w);
  add_row_bias(fc.out, p.out_b);
  PatchGrid og{s.patch_size, s.grid_rows, s.grid_cols, fc.out};
  return unpatchify(og);
}

Tensor normal_tensor(std::vector<std::size_t> shape, double stddev, RandomStream& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = stddev * rng.normal();
  return t;
}

}  // namespace

DecoderParams DecoderParams::zeros(const DecoderShape& s) {
  DecoderParams p;
  p.shape = s;
  const std::size_t dp = s.d_p;
  p.patch_w = Tensor({s.patch_dim(), dp});
  p.patch_b = Tensor({dp});
  p.pos = Tensor({s.n_patches(), dp});
  for (Tensor* t : {&p.enc_q, &p.enc_k, &p.enc_v, &p.enc_o, &p.dec_q, &p.dec_k, &p.dec_v, &p.dec_o})
    *t = Tensor({dp, dp});
  p.mask_token = Tensor({dp});
  p.global_w = Tensor({s.d_e, dp});
  p.global_b = Tensor({dp});
  p.out_w = Tensor({dp, s.patch_dim()});
  p.out_b = Tensor({s.patch_dim()});
  return p;
}

DecoderParams DecoderParams::init(const DecoderShape& s, RandomStream rng) {
  DecoderParams p = zeros(s);
  const double dp = static_cast<double>(s.d_p);
  p.patch_w = normal_tensor({s.patch_dim(), s.d_p}, 1.0 / std::sqrt(static_cast<double>(s.patch_dim())), rng);
  p.pos = normal_tensor({s.n_patches(), s.d_p}, 0.02, rng);
  for (Tensor* t : {&p.enc_q, &p.enc_k, &p.enc_v, &p.dec_q, &p.dec_k, &p.dec_v})
    *t = normal_tensor({s.d_p, s.d_p}, 1.0 / std::sqrt(dp), rng);
  p.enc_o = normal_tensor({s.d_p, s.d_p}, 0.1 / std::sqrt(dp), rng);
  p.dec_o = normal_tensor({s.d_p, s.d_p}, 0.1 / std::sqrt(dp), rng);
  p.mask_token = normal_tensor({s.d_p}, 0.02, rng);
  p.global_w = normal_tensor({s.d_e, s.d_p}, 1.0 / std::sqrt(static_cast<double>(s.d_e)), rng);
  p.out_w = normal_tensor({s.d_p, s.patch_dim()}, 0.02 / std::sqrt(dp), rng);
  for (double& v : p.out_b.storage()) v = 0.5;
  return p;
}

std::vector<std::pair<std::string, Tensor*>> DecoderParams::tensors() {
  return {{"patch_w", &patch_w}, {"patch_b", &patch_b}, {"pos", &pos},           {"enc_q", &enc_q},
          {"enc_k", &enc_k},     {"enc_v", &enc_v},     {"enc_o", &enc_o},       {"mask_token", &mask_token},
          {"global_w", &global_w}, {"global_b", &global_b}, {"dec_q", &dec_q},   {"dec_k", &dec_k},
          {"dec_v", &dec_v},     {"dec_o", &dec_o},     {"out_w", &out_w},       {"out_b", &out_b}};
}

std::vector<std::pair<std::string, const Tensor*>> DecoderParams::tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<DecoderParams*>(this)->tensors()) out.emplace_back(name, t);
  return out;
}

bool DecoderParams::all_finite() const {
  for (const auto& [name, t] : tensors())
    if (!t->all_finite()) return false;
  return true;
}

Tensor forward_reconstruct(const DecoderParams& params, std::span<const double> e, const Tensor& image,
                           const MaskSpec& mask) {
  ForwardCache fc;
  return run_forward(params, e, image, mask, fc);
}

LossAndGrad loss_and_gradients(const DecoderParams& p, std::span<const double> e, const Tensor& image,
                               const MaskSpec& mask, LossKind kind) {
  ForwardCache fc;
  run_forward(p, e, image, mask, fc);
  const DecoderShape& s = p.shape;
  const std::size_t n = s.n_patches();
  const std::size_t pd = s.patch_dim();
  const std::size_t dp = s.d_p;

  std::vector<bool> counted(n, kind == LossKind::FullImage);
  if (kind == LossKind::MaskedOnly)
    for (std::size_t i : mask.masked) counted[i] = true;
  std::size_t rows = 0;
  for (bool b : counted) rows += b ? 1 : 0;

  LossAndGrad r{0.0, DecoderParams::zeros(s)};
  Tensor dout({n, pd});
  if (rows > 0) {
    const double denom = static_cast<double>(rows * pd);
    for (std::size_t i = 0; i < n; ++i) {
      if (!counted[i]) continue;
      for (std::size_t j = 0; j < pd; ++j) {
        const double diff = fc.out.at(i, j) - fc.grid.patches.at(i, j);
        r.loss += diff * diff;
        dout.at(i, j) = 2.0 * diff / denom;
      }
    }
    r.loss /= denom;
  }
  if (!std::isfinite(r.loss)) throw Error(Errc::NonFiniteLoss, "reconstruction loss is not finite");

  DecoderParams& g = r.grad;
  matmul_tn_acc(fc.y, dout, g.out_w);
  colsum_acc(dout, g.out_b);
  const Tensor dy = matmul_nt(dout, p.out_w);
  const Tensor dz = attn_backward(fc.dec, {p.dec_q, p.dec_k, p.dec_v, p.dec_o}, dy,
                                  {g.dec_q, g.dec_k, g.dec_v, g.dec_o});

  std::vector<double> dgproj(dp, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dp; ++j) dgproj[j] += dz.at(i, j);
  for (std::size_t j = 0; j < dp; ++j) g.global_b[j] = dgproj[j];
  for (std::size_t t = 0; t < s.d_e; ++t)
    for (std::size_t j = 0; j < dp; ++j) g.global_w.at(t, j) = e[t] * dgproj[j];
  for (std::size_t idx : mask.masked)
    for (std::size_t j = 0; j < dp; ++j) {
      g.mask_token[j] += dz.at(idx, j);
      g.pos.at(idx, j) += dz.at(idx, j);
    }

  if (fc.has_enc) {
    const std::size_t nk = mask.kept.size();
    Tensor dg({nk, dp});
    for (std::size_t r2 = 0; r2 < nk; ++r2)
      std::copy(dz.row(mask.kept[r2]).begin(), dz.row(mask.kept[r2]).end(), dg.row(r2).begin());
    const Tensor dx0 = attn_backward(fc.enc, {p.enc_q, p.enc_k, p.enc_v, p.enc_o}, dg,
                                     {g.enc_q, g.enc_k, g.enc_v, g.enc_o});
    matmul_tn_acc(fc.kept_patches, dx0, g.patch_w);
    colsum_acc(dx0, g.patch_b);
    for (std::size_t r2 = 0; r2 < nk; ++r2)
      for (std::size_t j = 0; j < dp; ++j) g.pos.at(mask.kept[r2], j) += dx0.at(r2, j);
  }
  return r;
}

}  // namespace vtg::recon
