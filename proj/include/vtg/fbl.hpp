#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vtg/linalg.hpp"
#include "vtg/random.hpp"
#include "vtg/tensor.hpp"

// Feature-guided localization: a clean reference distribution over
// final-layer visual tokens and the Mahalanobis acceptance test against it.
namespace vtg::fbl {

enum class ThresholdMode : std::uint8_t {
  Auto = 0,       // empirical when N >= 20 d, analytic otherwise
  Analytic = 1,   // chi-squared (d, 1 - alpha) quantile
  Empirical = 2,  // (1 - alpha) order statistic of the in-sample scores
};

const char* to_string(ThresholdMode mode);
ThresholdMode parse_threshold_mode(const std::string& s);

struct ReferenceDistribution {
  std::vector<double> mu;
  SpdFactor sigma_factor;  // factor of S + eps I, S with divisor N - 1
  double epsilon = 0.0;
  double tau_alpha = 0.0;
  double alpha = 0.0;
  std::size_t d = 0;
  std::size_t n_tokens = 0;
  ThresholdMode threshold_mode = ThresholdMode::Analytic;  // resolved, never Auto
};

/// M x d token embeddings for one frame.
struct TokenBatch {
  Tensor tokens;
  std::string source_id;

  std::size_t count() const { return tokens.dim(0); }
  std::size_t dim() const { return tokens.dim(1); }
};

struct AnomalySet {
  std::vector<std::size_t> indices;  // sorted
  std::vector<double> scores;        // one per token
};

/// Samples ceil(fraction * n) ids without replacement.
std::vector<std::uint64_t> select_reference_episodes(std::span<const std::uint64_t> success_ids,
                                                     double fraction, RandomStream rng);

/// Scale-relative ridge used when no epsilon is given: 1e-3 * trace(S) / d.
double default_epsilon(const Tensor& reference_tokens);

/// Fits mean, ridge-regularized covariance and threshold on stacked N x d tokens.
/// A missing epsilon selects default_epsilon(); a zero-trace sample falls back to 1e-6.
ReferenceDistribution fit_reference(const Tensor& reference_tokens, std::optional<double> epsilon,
                                    double alpha, ThresholdMode mode = ThresholdMode::Auto);

double mahalanobis_score(const ReferenceDistribution& ref, std::span<const double> token);
std::vector<double> mahalanobis_scores(const ReferenceDistribution& ref, const Tensor& tokens);

/// Tokens with score strictly above tau_alpha.
AnomalySet flag_anomalies(const ReferenceDistribution& ref, const TokenBatch& batch);
AnomalySet anomalies_from_scores(std::vector<double> scores, double tau_alpha);

void save_reference(const ReferenceDistribution& ref, const std::filesystem::path& path);
ReferenceDistribution load_reference(const std::filesystem::path& path);

}  // namespace vtg::fbl
