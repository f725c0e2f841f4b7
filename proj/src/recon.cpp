#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "vtg/btf.hpp"
#include "vtg/error.hpp"
#include "vtg/recon.hpp"

namespace vtg::recon {
namespace {

void adam_update(TrainState& st, const DecoderParams& grad, const TrainConfig& cfg) {
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  auto params = st.params.tensors();
  auto m = st.first_moment.tensors();
  auto v = st.second_moment.tensors();
  const auto g = grad.tensors();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k].second;
    Tensor& mk = *m[k].second;
    Tensor& vk = *v[k].second;
    const Tensor& gk = *g[k].second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      mk[i] = cfg.beta1 * mk[i] + (1.0 - cfg.beta1) * gk[i];
      vk[i] = cfg.beta2 * vk[i] + (1.0 - cfg.beta2) * gk[i] * gk[i];
      p[i] -= cfg.lr * (mk[i] / c1) / (std::sqrt(vk[i] / c2) + cfg.adam_eps);
    }
  }
}

void validate(const std::vector<TrainSample>& dataset, const TrainConfig& cfg) {
  if (dataset.empty()) throw Error(Errc::EmptyInput, "training set is empty");
  if (cfg.batch == 0) throw Error(Errc::DomainError, "batch size must be positive");
  if (!(cfg.mask_min >= 0.0 && cfg.mask_min <= cfg.mask_max && cfg.mask_max < 1.0))
    throw Error(Errc::DomainError, "mask ratio range must satisfy 0 <= min <= max < 1");
  if (!(cfg.lr >= 0.0)) throw Error(Errc::DomainError, "learning rate must be non-negative");
}

}  // namespace

TrainState train_decoder(const std::vector<TrainSample>& dataset, const DecoderShape& shape,
                         const TrainConfig& cfg, RandomStream rng) {
  validate(dataset, cfg);
  TrainState st;
  st.params = DecoderParams::init(shape, rng.derive_child(1));
  st.first_moment = DecoderParams::zeros(shape);
  st.second_moment = DecoderParams::zeros(shape);
  RandomStream loop = rng.derive_child(2);
  train_steps(st, dataset, cfg, loop);
  return st;
}

void train_steps(TrainState& st, const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                 RandomStream& rng) {
  validate(dataset, cfg);
  const std::size_t n = st.params.shape.n_patches();
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    DecoderParams acc = DecoderParams::zeros(st.params.shape);
    auto acc_t = acc.tensors();
    double loss = 0.0;
    double ratio_sum = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const TrainSample& sample = dataset[rng.below(dataset.size())];
      const double ratio = rng.uniform(cfg.mask_min, cfg.mask_max);
      const MaskSpec mask = make_random_mask(n, ratio, rng);
      ratio_sum += mask.ratio;
      LossAndGrad lg = loss_and_gradients(st.params, sample.embedding, sample.image, mask, cfg.loss);
      loss += lg.loss;
      const auto g_t = std::as_const(lg.grad).tensors();
      for (std::size_t k = 0; k < acc_t.size(); ++k) {
        Tensor& a = *acc_t[k].second;
        const Tensor& g = *g_t[k].second;
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += g[i] / static_cast<double>(cfg.batch);
      }
    }
    ++st.step;
    adam_update(st, acc, cfg);
    if (!st.params.all_finite()) throw Error(Errc::NonFiniteLoss, "parameters diverged");
    const double nb = static_cast<double>(cfg.batch);
    st.history.push_back({st.step, ratio_sum / nb, loss / nb});
  }
}

Tensor purify(const DecoderParams& params, std::span<const double> e, const Tensor& image,
              const std::vector<std::size_t>& backdoor, const PurifyOptions& opts) {
  if (backdoor.empty() && !opts.unconditional) return image;
  const std::size_t n = params.shape.n_patches();
  const MaskSpec mask = make_backdoor_mask(backdoor, n);
  Tensor out;
  if (opts.mode == PurifyMode::ZeroFill) {
    PatchGrid grid = patchify(image, params.shape.patch_size);
    for (std::size_t idx : mask.masked)
      for (double& v : grid.patches.row(idx)) v = 0.0;
    out = unpatchify(grid);
  } else {
    out = forward_reconstruct(params, e, image, mask);
    if (opts.mode == PurifyMode::Composite) {
      PatchGrid rec = patchify(out, params.shape.patch_size);
      PatchGrid orig = patchify(image, params.shape.patch_size);
      for (std::size_t idx : mask.kept)
        std::copy(orig.patches.row(idx).begin(), orig.patches.row(idx).end(), rec.patches.row(idx).begin());
      out = unpatchify(rec);
    }
  }
  for (double& v : out.storage()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

void save_params(const DecoderParams& params, const TrainConfig& cfg, const std::filesystem::path& path) {
  btf::Container c;
  for (const auto& [name, t] : params.tensors()) c.add(name, *t, btf::DType::F64);
  const DecoderShape& s = params.shape;
  Tensor hyper = Tensor::vector({static_cast<double>(s.patch_size), static_cast<double>(s.grid_rows),
                                 static_cast<double>(s.grid_cols), static_cast<double>(s.d_p),
                                 static_cast<double>(s.d_e), static_cast<double>(cfg.steps),
                                 static_cast<double>(cfg.batch), cfg.lr, cfg.mask_min, cfg.mask_max,
                                 static_cast<double>(cfg.loss)});
  c.add("hyper", hyper, btf::DType::F64);
  c.save(path);
}

DecoderParams load_params(const std::filesystem::path& path) {
  const btf::Container c = btf::Container::load(path);
  const Tensor& hyper = c.get("hyper");
  if (hyper.ndim() != 1 || hyper.size() < 5) throw Error(Errc::CorruptFile, "decoder hyper section malformed");
  DecoderShape s;
  s.patch_size = static_cast<std::size_t>(hyper[0]);
  s.grid_rows = static_cast<std::size_t>(hyper[1]);
  s.grid_cols = static_cast<std::size_t>(hyper[2]);
  s.d_p = static_cast<std::size_t>(hyper[3]);
  s.d_e = static_cast<std::size_t>(hyper[4]);
  DecoderParams p = DecoderParams::zeros(s);
  for (auto& [name, t] : p.tensors()) {
    const Tensor& stored = c.get(name);
    if (stored.shape() != t->shape()) throw Error(Errc::CorruptFile, "decoder tensor " + name + " has wrong shape");
    *t = stored;
  }
  return p;
}

void write_loss_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string());
  out << "step,mask_ratio,loss\n" << std::setprecision(17);
  for (const LossRecord& r : history) out << r.step << ',' << r.mask_ratio << ',' << r.loss << '\n';
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

}  // namespace vtg::recon
