#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vtg/random.hpp"
#include "vtg/tensor.hpp"

// Masked-autoencoder reconstruction of trigger-free images: patch encoder
// over visible patches, decoder conditioned on a frozen global embedding.
namespace vtg::recon {

struct PatchGrid {
  std::size_t patch_size = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Tensor patches;  // (rows * cols) x (P * P * 3), row-major patch order
};

/// Image is H x W x 3. Throws IndivisibleDimensions if P does not divide H and W.
PatchGrid patchify(const Tensor& image, std::size_t patch_size);
Tensor unpatchify(const PatchGrid& grid);

enum class MaskOrigin : std::uint8_t { RandomTraining, BackdoorSelective, None };

struct MaskSpec {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> masked;
  MaskOrigin origin = MaskOrigin::None;
  double ratio = 0.0;
  std::size_t n_patches() const { return kept.size() + masked.size(); }
};

/// Masks exactly round(ratio * n) patches drawn without replacement.
MaskSpec make_random_mask(std::size_t n_patches, double ratio, RandomStream& rng);
/// Masks exactly the given patch indices.
MaskSpec make_backdoor_mask(const std::vector<std::size_t>& backdoor, std::size_t n_patches);

struct DecoderShape {
  std::size_t patch_size = 8;
  std::size_t grid_rows = 8;
  std::size_t grid_cols = 8;
  std::size_t d_p = 64;
  std::size_t d_e = 16;

  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  std::size_t n_patches() const { return grid_rows * grid_cols; }
};

/// All trainable weights. Linear maps are stored input-major (in x out).
struct DecoderParams {
  DecoderShape shape;
  Tensor patch_w, patch_b;      // patch embedding
  Tensor pos;                   // n_patches x d_p
  Tensor enc_q, enc_k, enc_v, enc_o;
  Tensor mask_token;            // d_p
  Tensor global_w, global_b;    // d_e -> d_p
  Tensor dec_q, dec_k, dec_v, dec_o;
  Tensor out_w, out_b;          // d_p -> patch_dim

  static DecoderParams zeros(const DecoderShape& shape);
  static DecoderParams init(const DecoderShape& shape, RandomStream rng);

  /// Named views over every parameter tensor, in serialization order.
  std::vector<std::pair<std::string, Tensor*>> tensors();
  std::vector<std::pair<std::string, const Tensor*>> tensors() const;
  bool all_finite() const;
};

enum class LossKind : std::uint8_t { FullImage, MaskedOnly };

/// Reconstructs the full image; values are not clamped.
Tensor forward_reconstruct(const DecoderParams& params, std::span<const double> e, const Tensor& image,
                           const MaskSpec& mask);

struct LossAndGrad {
  double loss = 0.0;
  DecoderParams grad;
};

/// Mean squared error against `image` and its gradient for every parameter.
/// Throws NonFiniteLoss when the loss is not finite.
LossAndGrad loss_and_gradients(const DecoderParams& params, std::span<const double> e, const Tensor& image,
                               const MaskSpec& mask, LossKind kind = LossKind::FullImage);

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch = 4;
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double mask_min = 0.05;
  double mask_max = 0.25;
  LossKind loss = LossKind::FullImage;
};

struct LossRecord {
  std::size_t step = 0;
  double mask_ratio = 0.0;
  double loss = 0.0;
};

struct TrainState {
  DecoderParams params;
  DecoderParams first_moment;
  DecoderParams second_moment;
  std::size_t step = 0;
  std::vector<LossRecord> history;
};

/// One training image with its frozen global embedding.
struct TrainSample {
  Tensor image;
  std::vector<double> embedding;
};

TrainState train_decoder(const std::vector<TrainSample>& dataset, const DecoderShape& shape,
                         const TrainConfig& cfg, RandomStream rng);
/// Continues training from an existing state.
void train_steps(TrainState& state, const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                 RandomStream& rng);

enum class PurifyMode : std::uint8_t {
  Decoder,    // full decoder output (masked patches regenerated, visible ones re-synthesized)
  Composite,  // decoder output inside masked patches, original pixels elsewhere
  ZeroFill,   // masked patches set to zero, no decoder
};

struct PurifyOptions {
  PurifyMode mode = PurifyMode::Decoder;
  bool unconditional = false;  // reconstruct even when the backdoor set is empty
};

/// Erases the patches in `backdoor`. An empty set returns `image` unchanged
/// unless `opts.unconditional` is set. Output is clamped to [0, 1].
Tensor purify(const DecoderParams& params, std::span<const double> e, const Tensor& image,
              const std::vector<std::size_t>& backdoor, const PurifyOptions& opts = {});

struct Region {
  std::size_t y = 0, x = 0, h = 0, w = 0;
};

/// Normalized cross-correlation between `image` inside `region` and a
/// template of the same extent (h x w x 3). Zero-variance inputs give 0.
double trigger_residual(const Tensor& image, const Tensor& templ, const Region& region);

void save_params(const DecoderParams& params, const TrainConfig& cfg, const std::filesystem::path& path);
DecoderParams load_params(const std::filesystem::path& path);
void write_loss_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path);

}  // namespace vtg::recon
