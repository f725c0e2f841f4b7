#include "vtg/fbl.hpp"

#include <algorithm>
#include <cmath>

#include "vtg/btf.hpp"
#include "vtg/chi2.hpp"
#include "vtg/error.hpp"

namespace vtg::fbl {

const char* to_string(ThresholdMode mode) {
  switch (mode) {
    case ThresholdMode::Auto: return "auto";
    case ThresholdMode::Analytic: return "analytic";
    case ThresholdMode::Empirical: return "empirical";
  }
  return "auto";
}

ThresholdMode parse_threshold_mode(const std::string& s) {
  if (s == "auto") return ThresholdMode::Auto;
  if (s == "analytic") return ThresholdMode::Analytic;
  if (s == "empirical") return ThresholdMode::Empirical;
  throw Error(Errc::InvalidConfig, "unknown threshold mode '" + s + "'");
}

std::vector<std::uint64_t> select_reference_episodes(std::span<const std::uint64_t> success_ids,
                                                     double fraction, RandomStream rng) {
  if (success_ids.empty()) throw Error(Errc::EmptyInput, "no success episodes to sample from");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(Errc::DomainError, "fraction must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(success_ids.size()) - 1e-12));
  std::vector<std::uint64_t> out;
  for (std::size_t i : sample_without_replacement(success_ids.size(), k, rng)) out.push_back(success_ids[i]);
  return out;
}

namespace {

struct Moments {
  std::vector<double> mean;
  Tensor cov;  // divisor N - 1
};

Moments sample_moments(const Tensor& z) {
  const std::size_t n = z.dim(0);
  const std::size_t d = z.dim(1);
  Moments m{std::vector<double>(d, 0.0), Tensor({d, d})};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) m.mean[k] += z.at(i, k);
  for (double& v : m.mean) v /= static_cast<double>(n);
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) diff[k] = z.at(i, k) - m.mean[k];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b <= a; ++b) m.cov.at(a, b) += diff[a] * diff[b];
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b <= a; ++b) {
      m.cov.at(a, b) /= static_cast<double>(n - 1);
      m.cov.at(b, a) = m.cov.at(a, b);
    }
  return m;
}

void check_tokens(const Tensor& z) {
  if (z.ndim() != 2) throw Error(Errc::DimensionMismatch, "tokens must be a 2-D tensor");
  if (!z.all_finite()) throw Error(Errc::DomainError, "tokens contain non-finite values");
}

}  // namespace

double default_epsilon(const Tensor& reference_tokens) {
  check_tokens(reference_tokens);
  if (reference_tokens.dim(0) < 2) throw Error(Errc::TooFewSamples, "need at least two tokens");
  const Moments m = sample_moments(reference_tokens);
  double trace = 0.0;
  for (std::size_t k = 0; k < m.cov.dim(0); ++k) trace += m.cov.at(k, k);
  const double eps = 1e-3 * trace / static_cast<double>(m.cov.dim(0));
  return eps > 0.0 ? eps : 1e-6;
}

ReferenceDistribution fit_reference(const Tensor& reference_tokens, std::optional<double> epsilon,
                                    double alpha, ThresholdMode mode) {
  check_tokens(reference_tokens);
  const std::size_t n = reference_tokens.dim(0);
  const std::size_t d = reference_tokens.dim(1);
  if (n < 2) throw Error(Errc::TooFewSamples, "need at least two reference tokens");
  if (d == 0) throw Error(Errc::DimensionMismatch, "token dimension is zero");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(Errc::DomainError, "alpha must lie in (0, 1)");
  const double eps = epsilon ? *epsilon : default_epsilon(reference_tokens);
  if (!(eps > 0.0)) throw Error(Errc::DomainError, "epsilon must be positive");

  Moments m = sample_moments(reference_tokens);
  for (std::size_t k = 0; k < d; ++k) m.cov.at(k, k) += eps;

  ReferenceDistribution ref;
  ref.mu = std::move(m.mean);
  ref.sigma_factor = cholesky_spd(m.cov);
  ref.epsilon = eps;
  ref.alpha = alpha;
  ref.d = d;
  ref.n_tokens = n;
  if (mode == ThresholdMode::Auto) mode = n >= 20 * d ? ThresholdMode::Empirical : ThresholdMode::Analytic;
  ref.threshold_mode = mode;

  if (mode == ThresholdMode::Analytic) {
    ref.tau_alpha = chi2_quantile(static_cast<double>(d), 1.0 - alpha);
  } else {
    std::vector<double> s = mahalanobis_scores(ref, reference_tokens);
    std::sort(s.begin(), s.end());
    // Inverse empirical CDF: smallest s with F(s) >= 1 - alpha.
    auto rank = static_cast<std::size_t>(std::ceil((1.0 - alpha) * static_cast<double>(n) - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, n);
    ref.tau_alpha = s[rank - 1];
    if (!(ref.tau_alpha > 0.0)) ref.tau_alpha = chi2_quantile(static_cast<double>(d), 1.0 - alpha);
  }
  return ref;
}

double mahalanobis_score(const ReferenceDistribution& ref, std::span<const double> token) {
  if (token.size() != ref.d) throw Error(Errc::DimensionMismatch, "token dimension differs from reference");
  std::vector<double> diff(ref.d);
  for (std::size_t k = 0; k < ref.d; ++k) diff[k] = token[k] - ref.mu[k];
  const std::vector<double> y = solve_spd(ref.sigma_factor, diff);
  double s = 0.0;
  for (std::size_t k = 0; k < ref.d; ++k) s += diff[k] * y[k];
  return std::max(s, 0.0);
}

std::vector<double> mahalanobis_scores(const ReferenceDistribution& ref, const Tensor& tokens) {
  if (tokens.ndim() != 2 || tokens.dim(1) != ref.d)
    throw Error(Errc::DimensionMismatch, "batch dimension differs from reference");
  std::vector<double> s(tokens.dim(0));
  for (std::size_t j = 0; j < s.size(); ++j) s[j] = mahalanobis_score(ref, tokens.row(j));
  return s;
}

AnomalySet anomalies_from_scores(std::vector<double> scores, double tau_alpha) {
  AnomalySet out;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] > tau_alpha) out.indices.push_back(j);
  out.scores = std::move(scores);
  return out;
}

AnomalySet flag_anomalies(const ReferenceDistribution& ref, const TokenBatch& batch) {
  return anomalies_from_scores(mahalanobis_scores(ref, batch.tokens), ref.tau_alpha);
}

void save_reference(const ReferenceDistribution& ref, const std::filesystem::path& path) {
  btf::Container c;
  c.add("mu", Tensor({ref.d}, ref.mu));
  c.add("sigma_lower", ref.sigma_factor.lower);
  c.add("scalars", Tensor({6}, {ref.epsilon, ref.tau_alpha, ref.alpha, static_cast<double>(ref.d),
                                static_cast<double>(ref.n_tokens),
                                static_cast<double>(static_cast<int>(ref.threshold_mode))}));
  c.save(path);
}

ReferenceDistribution load_reference(const std::filesystem::path& path) {
  const btf::Container c = btf::Container::load(path);
  const Tensor& mu = c.get("mu");
  const Tensor& lower = c.get("sigma_lower");
  const Tensor& sc = c.get("scalars");
  if (mu.ndim() != 1 || sc.ndim() != 1 || sc.size() != 6) throw Error(Errc::CorruptFile, "bad reference sections");
  const std::size_t d = mu.size();
  if (lower.ndim() != 2 || lower.dim(0) != d || lower.dim(1) != d || sc[3] != static_cast<double>(d))
    throw Error(Errc::CorruptFile, "reference shape mismatch");
  for (std::size_t k = 0; k < d; ++k)
    if (!(lower.at(k, k) > 0.0)) throw Error(Errc::CorruptFile, "non-positive factor diagonal");
  const int mode = static_cast<int>(sc[5]);
  if (mode != 1 && mode != 2) throw Error(Errc::CorruptFile, "bad threshold mode code");

  ReferenceDistribution ref;
  ref.mu = mu.storage();
  ref.sigma_factor = SpdFactor{d, lower};
  ref.epsilon = sc[0];
  ref.tau_alpha = sc[1];
  ref.alpha = sc[2];
  ref.d = d;
  ref.n_tokens = static_cast<std::size_t>(sc[4]);
  ref.threshold_mode = static_cast<ThresholdMode>(mode);
  return ref;
}

}  // namespace vtg::fbl
