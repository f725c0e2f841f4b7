#include "vtg/afm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "vtg/btf.hpp"
#include "vtg/error.hpp"

namespace vtg::afm {

const Tensor& AttentionStack::layer(std::size_t l) const {
  if (layers.empty() || l < first_layer || l > last_layer())
    throw Error(Errc::LayerOutOfRange, "layer " + std::to_string(l) + " not in stack");
  return layers[l - first_layer];
}

Tensor mean_attention(const AttentionStack& stack, std::size_t layer) {
  const Tensor& a = stack.layer(layer);
  const std::size_t h = a.dim(0);
  const std::size_t t = a.dim(1);
  Tensor out({t, t});
  for (std::size_t head = 0; head < h; ++head)
    for (std::size_t i = 0; i < t * t; ++i) out[i] += a[head * t * t + i];
  for (double& v : out.storage()) v /= static_cast<double>(h);
  return out;
}

SaliencyVector token_saliency(const Tensor& abar, const IndexSet& image_cols, std::size_t layer) {
  const std::size_t t = abar.dim(0);
  SaliencyVector sv{layer, std::vector<double>(image_cols.size(), 0.0)};
  for (std::size_t j = 0; j < image_cols.size(); ++j) {
    const std::size_t col = image_cols[j];
    if (col >= t) throw Error(Errc::IndexOutOfRange, "image column " + std::to_string(col));
    double s = 0.0;
    for (std::size_t row = 0; row < t; ++row) s += abar.at(row, col);
    sv.values[j] = s / static_cast<double>(t);
  }
  return sv;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct EStep {
  double log_likelihood = 0.0;
  std::vector<double> resp;       // n x k
  std::vector<double> point_ll;   // per-point log density under the mixture
};

EStep expectation(const std::vector<double>& x, const GmmModel& g) {
  const std::size_t n = x.size();
  const std::size_t k = g.k;
  EStep e{0.0, std::vector<double>(n * k), std::vector<double>(n)};
  std::vector<double> logp(k);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double dx = x[i] - g.means[c];
      logp[c] = std::log(g.weights[c]) - 0.5 * (kLog2Pi + std::log(g.variances[c])) -
                0.5 * dx * dx / g.variances[c];
      mx = std::max(mx, logp[c]);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += std::exp(logp[c] - mx);
    const double lse = mx + std::log(sum);
    e.point_ll[i] = lse;
    e.log_likelihood += lse;
    for (std::size_t c = 0; c < k; ++c) e.resp[i * k + c] = std::exp(logp[c] - lse);
  }
  return e;
}

}  // namespace

GmmModel fit_gmm_1d(const std::vector<double>& values, const GmmOptions& opts, RandomStream rng) {
  if (values.empty()) throw Error(Errc::EmptyInput, "no values to cluster");
  if (opts.k == 0) throw Error(Errc::DomainError, "component count must be positive");
  for (double v : values)
    if (!std::isfinite(v)) throw Error(Errc::DomainError, "non-finite saliency value");
  const std::size_t n = values.size();
  const std::size_t k = std::min(opts.k, n);

  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const double range = sorted.back() - sorted.front();
  const double floor = range > 0.0 ? opts.var_floor_rel * range * range : 1e-12;

  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double global_var = 0.0;
  for (double v : values) global_var += (v - mean) * (v - mean);
  global_var = std::max(global_var / static_cast<double>(n), floor);

  GmmModel g;
  g.k = k;
  g.weights.assign(k, 1.0 / static_cast<double>(k));
  g.variances.assign(k, global_var);
  for (std::size_t c = 0; c < k; ++c) {
    auto idx = static_cast<std::size_t>((static_cast<double>(c) + 0.5) * static_cast<double>(n) /
                                        static_cast<double>(k));
    g.means.push_back(sorted[std::min(idx, n - 1)]);
  }

  EStep e = expectation(values, g);
  g.log_likelihood_history.push_back(e.log_likelihood);
  for (std::size_t iter = 1; iter <= opts.max_iter; ++iter) {
    bool reseeded = false;
    for (std::size_t c = 0; c < k; ++c) {
      double nk = 0.0;
      double sx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += e.resp[i * k + c];
        sx += e.resp[i * k + c] * values[i];
      }
      if (nk < 1e-10 * static_cast<double>(n)) {
        // Empty component: restart it at the worst-explained point.
        // Ties among equally bad points are broken by the stream.
        const double lowest = *std::min_element(e.point_ll.begin(), e.point_ll.end());
        std::vector<std::size_t> worst;
        for (std::size_t i = 0; i < n; ++i)
          if (e.point_ll[i] == lowest) worst.push_back(i);
        g.means[c] = values[worst[rng.below(worst.size())]];
        g.variances[c] = global_var;
        g.weights[c] = 1.0 / static_cast<double>(n);
        reseeded = true;
        continue;
      }
      const double m = sx / nk;
      double sv = 0.0;
      for (std::size_t i = 0; i < n; ++i) sv += e.resp[i * k + c] * (values[i] - m) * (values[i] - m);
      g.means[c] = m;
      g.variances[c] = std::max(sv / nk, floor);
      g.weights[c] = nk / static_cast<double>(n);
    }
    if (reseeded) {
      double total = 0.0;
      for (double w : g.weights) total += w;
      for (double& w : g.weights) w /= total;
      g.reseed_iterations.push_back(iter);
    }
    const double prev = e.log_likelihood;
    e = expectation(values, g);
    g.log_likelihood_history.push_back(e.log_likelihood);
    g.iterations = iter;
    if (!reseeded && e.log_likelihood - prev < opts.tol) break;
  }

  g.log_likelihood = e.log_likelihood;
  if (!std::isfinite(g.log_likelihood)) throw Error(Errc::DomainError, "mixture log-likelihood diverged");
  g.assignments.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (e.resp[i * k + c] > e.resp[i * k + best]) best = c;
    g.assignments[i] = best;
  }
  return g;
}

ClusterChoice select_trigger_cluster(const GmmModel& gmm, const SaliencyVector& saliency) {
  if (gmm.assignments.size() != saliency.values.size())
    throw Error(Errc::DimensionMismatch, "mixture was fitted on a different vector");
  std::vector<double> sum(gmm.k, 0.0);
  std::vector<std::size_t> count(gmm.k, 0);
  for (std::size_t j = 0; j < saliency.values.size(); ++j) {
    sum[gmm.assignments[j]] += saliency.values[j];
    ++count[gmm.assignments[j]];
  }
  bool found = false;
  std::size_t best = 0;
  double best_mean = 0.0;
  for (std::size_t c = 0; c < gmm.k; ++c) {
    if (count[c] == 0) continue;
    const double m = sum[c] / static_cast<double>(count[c]);
    if (!found || m > best_mean || (m == best_mean && count[c] < count[best])) {
      found = true;
      best = c;
      best_mean = m;
    }
  }
  if (!found) throw Error(Errc::AllClustersEmpty, "no populated cluster");
  ClusterChoice out{best, {}};
  for (std::size_t j = 0; j < gmm.assignments.size(); ++j)
    if (gmm.assignments[j] == best) out.members.push_back(j);
  return out;
}

IndexSet aggregate_layers(const std::map<std::size_t, IndexSet>& per_layer) {
  if (per_layer.empty()) throw Error(Errc::EmptyInput, "no layers to aggregate");
  IndexSet out;
  for (const auto& [layer, set] : per_layer) out.insert(out.end(), set.begin(), set.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

IndexSet intersect_backdoor(const fbl::AnomalySet& anom, const IndexSet& filter, std::size_t universe) {
  if (anom.scores.size() != universe)
    throw Error(Errc::UniverseMismatch, "anomaly set covers " + std::to_string(anom.scores.size()) +
                                            " tokens, expected " + std::to_string(universe));
  for (std::size_t j : filter)
    if (j >= universe) throw Error(Errc::UniverseMismatch, "filter index outside token universe");
  IndexSet out;
  std::set_intersection(anom.indices.begin(), anom.indices.end(), filter.begin(), filter.end(),
                        std::back_inserter(out));
  return out;
}

std::size_t default_l_mid(std::size_t total_layers) { return (total_layers + 1) / 2; }

AfmResult run_afm(const AttentionStack& stack, const fbl::AnomalySet& anom, const AfmConfig& cfg,
                  RandomStream rng) {
  const std::size_t m = stack.image_token_columns.size();
  if (anom.scores.size() != m) throw Error(Errc::UniverseMismatch, "anomaly scores do not match image tokens");
  AfmResult result;
  if (!cfg.enabled) {
    result.filter.aggregate.resize(m);
    for (std::size_t j = 0; j < m; ++j) result.filter.aggregate[j] = j;
    result.filter.backdoor = anom.indices;
    return result;
  }
  const std::size_t last = stack.last_layer();
  const std::size_t l_mid = cfg.l_mid == 0 ? default_l_mid(last) : cfg.l_mid;
  if (l_mid > last) throw Error(Errc::LayerOutOfRange, "l_mid beyond the last layer");
  for (std::size_t l = l_mid; l <= last; ++l) {
    const Tensor abar = mean_attention(stack, l);
    SaliencyVector sv = token_saliency(abar, stack.image_token_columns, l);
    GmmModel g = fit_gmm_1d(sv.values, cfg.gmm, rng.derive_child(l));
    result.filter.per_layer[l] = select_trigger_cluster(g, sv).members;
    result.saliency[l] = std::move(sv);
    result.models[l] = std::move(g);
  }
  result.filter.aggregate = aggregate_layers(result.filter.per_layer);
  result.filter.backdoor = intersect_backdoor(anom, result.filter.aggregate, m);
  return result;
}

void save_attention(const AttentionStack& stack, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream hdr(dir / "attention.hdr");
  if (!hdr) throw Error(Errc::IoError, "cannot write attention header");
  hdr << "first_layer " << stack.first_layer << "\nlayers " << stack.layers.size() << "\nimage_cols";
  for (std::size_t c : stack.image_token_columns) hdr << ' ' << c;
  hdr << '\n';
  for (std::size_t i = 0; i < stack.layers.size(); ++i)
    btf::save(dir / ("layer_" + std::to_string(stack.first_layer + i) + ".btf"), stack.layers[i]);
}

AttentionStack load_attention(const std::filesystem::path& dir) {
  std::ifstream hdr(dir / "attention.hdr");
  if (!hdr) throw Error(Errc::IoError, "missing attention header in " + dir.string());
  AttentionStack stack;
  std::string key;
  std::size_t count = 0;
  if (!(hdr >> key >> stack.first_layer) || key != "first_layer") throw Error(Errc::CorruptFile, "bad header");
  if (!(hdr >> key >> count) || key != "layers") throw Error(Errc::CorruptFile, "bad header");
  if (!(hdr >> key) || key != "image_cols") throw Error(Errc::CorruptFile, "bad header");
  std::size_t c = 0;
  while (hdr >> c) stack.image_token_columns.push_back(c);
  for (std::size_t i = 0; i < count; ++i) {
    Tensor t = btf::load(dir / ("layer_" + std::to_string(stack.first_layer + i) + ".btf"));
    if (t.ndim() != 3 || t.dim(1) != t.dim(2)) throw Error(Errc::CorruptFile, "attention layer is not H x T x T");
    stack.layers.push_back(std::move(t));
  }
  return stack;
}

}  // namespace vtg::afm
