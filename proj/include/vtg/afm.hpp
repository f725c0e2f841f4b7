#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <vector>

#include "vtg/fbl.hpp"
#include "vtg/random.hpp"
#include "vtg/tensor.hpp"

// Attention-driven filtering: per-layer token saliency from head-averaged
// attention, 1-D mixture clustering of the saliency values, and selection of
// the most salient cluster as trigger candidates.
namespace vtg::afm {

using IndexSet = std::vector<std::size_t>;  // sorted, unique

/// Attention maps for layers first_layer .. first_layer + layers.size() - 1
/// (1-based layer numbers). Each entry is H x T x T and row-stochastic.
struct AttentionStack {
  std::size_t first_layer = 1;
  std::vector<Tensor> layers;
  IndexSet image_token_columns;

  std::size_t last_layer() const { return first_layer + layers.size() - 1; }
  std::size_t token_count() const { return layers.empty() ? 0 : layers.front().dim(1); }
  std::size_t head_count() const { return layers.empty() ? 0 : layers.front().dim(0); }
  const Tensor& layer(std::size_t l) const;  // LayerOutOfRange
};

struct SaliencyVector {
  std::size_t layer = 0;
  std::vector<double> values;
};

struct GmmModel {
  std::size_t k = 0;
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> variances;
  double log_likelihood = 0.0;
  std::vector<double> log_likelihood_history;  // one entry per EM iteration
  std::vector<std::size_t> reseed_iterations;
  std::vector<std::size_t> assignments;
  std::size_t iterations = 0;
};

struct GmmOptions {
  std::size_t k = 6;
  double tol = 1e-6;
  std::size_t max_iter = 200;
  /// Variance floor as a multiple of the squared data range.
  double var_floor_rel = 1e-8;
};

struct FilterSet {
  std::map<std::size_t, IndexSet> per_layer;
  IndexSet aggregate;
  IndexSet backdoor;
};

struct AfmConfig {
  std::size_t l_mid = 0;  // 0 selects ceil(L / 2)
  GmmOptions gmm;
  bool enabled = true;    // false passes the anomaly set through unfiltered
};

struct AfmResult {
  FilterSet filter;
  std::map<std::size_t, SaliencyVector> saliency;
  std::map<std::size_t, GmmModel> models;
};

Tensor mean_attention(const AttentionStack& stack, std::size_t layer);

/// Column means of the image-token submatrix over all T query rows.
SaliencyVector token_saliency(const Tensor& abar, const IndexSet& image_cols, std::size_t layer = 0);

GmmModel fit_gmm_1d(const std::vector<double>& values, const GmmOptions& opts, RandomStream rng);

struct ClusterChoice {
  std::size_t k_star = 0;
  IndexSet members;
};

/// Cluster with the largest mean member saliency; ties go to the smaller
/// cluster, then to the lower component index.
ClusterChoice select_trigger_cluster(const GmmModel& gmm, const SaliencyVector& saliency);

IndexSet aggregate_layers(const std::map<std::size_t, IndexSet>& per_layer);

IndexSet intersect_backdoor(const fbl::AnomalySet& anom, const IndexSet& filter, std::size_t universe);

std::size_t default_l_mid(std::size_t total_layers);

AfmResult run_afm(const AttentionStack& stack, const fbl::AnomalySet& anom, const AfmConfig& cfg,
                  RandomStream rng);

/// Writes one BTF tensor per layer plus a header file `attention.hdr` listing
/// first_layer and the image-token columns.
void save_attention(const AttentionStack& stack, const std::filesystem::path& dir);
AttentionStack load_attention(const std::filesystem::path& dir);

}  // namespace vtg::afm
