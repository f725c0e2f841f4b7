// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "vtg/afm.hpp"
#include "vtg/chi2.hpp"
#include "vtg/fbl.hpp"
#include "vtg/pipeline.hpp"
#include "vtg/recon.hpp"
#include "vtg/seeds.hpp"
#include "vtg/testbed.hpp"

using namespace vtg;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

struct TableRow {
  double cp, asr, tp;
};

// Published (CP, ASR, TP) triples: two backbones by four tasks, for the
// proposed defense and for the random-masking reconstruction baseline.
const std::vector<TableRow> kProposedRows{
    {90.00, 6.67, 91.67}, {73.33, 3.33, 85.00}, {70.00, 3.33, 83.34},  {86.67, 6.67, 90.00},
    {90.00, 3.33, 93.34}, {86.67, 10.00, 88.34}, {76.67, 13.33, 81.67}, {90.00, 6.67, 91.67}};
const std::vector<TableRow> kBaselineRows{
    {86.67, 63.33, 61.67}, {70.00, 46.67, 61.67}, {66.67, 43.33, 61.67}, {83.33, 43.33, 70.00},
    {86.67, 60.00, 63.33}, {80.00, 53.33, 63.33}, {70.00, 23.33, 73.33}, {86.67, 20.00, 83.33}};

Verdict criterion_tp_formula() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t rows = 0;
  for (const auto* table : {&kProposedRows, &kBaselineRows})
    for (const TableRow& r : *table) {
      worst = std::max(worst, std::fabs(pipeline::trade_off(r.cp, r.asr) - r.tp));
      ++rows;
    }
  const double secs = seconds_since(t0);
  return {worst <= 0.01 + 1e-9 && secs < 1.0,
          std::to_string(rows) + " rows, max |TP - printed| " + fmt("%.4f", worst) + " (tol 0.01), " +
              fmt("%.3f s", secs)};
}

Verdict criterion_fbl_calibration() {
  const auto t0 = Clock::now();
  const std::size_t d = 16;
  RandomStream rng(0xCA11B);
  // Correlated source: x = A z with a random mixing matrix.
  Tensor a({d, d});
  for (double& v : a.storage()) v = rng.normal() / std::sqrt(static_cast<double>(d));
  Tensor z({20000, d});
  for (std::size_t i = 0; i < z.dim(0); ++i) {
    std::vector<double> g(d);
    for (double& v : g) v = rng.normal();
    for (std::size_t r = 0; r < d; ++r) {
      double s = 1.0 * r;
      for (std::size_t c = 0; c < d; ++c) s += a.at(r, c) * g[c];
      z.at(i, r) = s;
    }
  }
  const auto ref = fbl::fit_reference(z, std::nullopt, 0.05, fbl::ThresholdMode::Analytic);
  // Held-out draws from the fitted Gaussian: mu + L g.
  const std::size_t n = 10000;
  Tensor held({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> g(d);
    for (double& v : g) v = rng.normal();
    for (std::size_t r = 0; r < d; ++r) {
      double s = ref.mu[r];
      for (std::size_t c = 0; c <= r; ++c) s += ref.sigma_factor.lower.at(r, c) * g[c];
      held.at(i, r) = s;
    }
  }
  const double rate =
      static_cast<double>(fbl::flag_anomalies(ref, {held, "held-out"}).indices.size()) / static_cast<double>(n);
  const double secs = seconds_since(t0);
  return {rate >= 0.03 && rate <= 0.07 && secs < 10.0,
          "flag rate " + fmt("%.4f", rate) + " on 10000 held-out tokens (need [0.03, 0.07]), " + fmt("%.2f s", secs)};
}

Verdict criterion_mahalanobis_oracle() {
  RandomStream rng(0x0AC1E);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t d = 1 + rng.below(4);
    const std::size_t n = d + 2 + rng.below(30);
    Tensor z({n, d});
    for (double& v : z.storage()) v = (0.2 + 3.0 * rng.uniform()) * rng.normal();
    const double eps = 1e-3 + rng.uniform();
    const auto ref = fbl::fit_reference(z, eps, 0.05, fbl::ThresholdMode::Analytic);
    // Oracle covariance computed directly from the data.
    oracle::Matrix sigma(d, std::vector<double>(d, 0.0));
    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mu[j] += z.at(i, j) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = 0; q < d; ++q)
          sigma[p][q] += (z.at(i, p) - mu[p]) * (z.at(i, q) - mu[q]) / static_cast<double>(n - 1);
    for (std::size_t p = 0; p < d; ++p) sigma[p][p] += eps;
    const auto inv = oracle::inverse(sigma);
    for (int k = 0; k < 10; ++k) {
      std::vector<double> b(d), diff(d);
      for (std::size_t j = 0; j < d; ++j) {
        b[j] = 4.0 * rng.normal();
        diff[j] = b[j] - mu[j];
      }
      const double want = oracle::quad_form(inv, diff);
      const double got = fbl::mahalanobis_score(ref, b);
      worst = std::max(worst, std::fabs(got - want) / std::max(std::fabs(want), 1e-300));
    }
  }
  return {worst <= 1e-7, "100 SPD instances (d <= 4), max relative error " + fmt("%.2e", worst) + " (tol 1e-7)"};
}

Verdict criterion_chi2() {
  double worst = 0.0;
  for (double d : {1.0, 2.0, 8.0, 64.0})
    for (double p : {0.5, 0.9, 0.95, 0.99}) {
      const double tau = chi2_quantile(d, p);
      worst = std::max(worst, std::fabs(chi2_cdf(tau, d) - p));
    }
  const double spot = chi2_quantile(2, 0.95);
  const double oracle_spot = oracle::chi2_quantile(2, 0.95);
  const bool spot_ok = std::fabs(spot - 5.99146) < 5e-6 && std::fabs(spot - oracle_spot) < 1e-6;
  return {worst <= 1e-6 && spot_ok, "max |CDF(tau) - p| " + fmt("%.2e", worst) + ", tau(2, 0.95) = " +
                                        fmt("%.6f", spot) + " (oracle " + fmt("%.6f)", oracle_spot)};
}

Verdict criterion_em() {
  RandomStream rng(0xE11);
  double worst_drop = 0.0;
  for (int fx = 0; fx < 50; ++fx) {
    const std::size_t n = 30 + rng.below(150);
    const std::size_t clumps = 1 + rng.below(4);
    std::vector<double> x;
    for (std::size_t i = 0; i < n; ++i)
      x.push_back(static_cast<double>(rng.below(clumps)) * (0.5 + 3.0 * rng.uniform()) +
                  (0.02 + 0.5 * rng.uniform()) * rng.normal());
    afm::GmmOptions o;
    o.k = 1 + rng.below(6);
    const auto g = afm::fit_gmm_1d(x, o, rng.derive_child(static_cast<std::uint64_t>(fx)));
    const std::set<std::size_t> reseeds(g.reseed_iterations.begin(), g.reseed_iterations.end());
    for (std::size_t i = 1; i < g.log_likelihood_history.size(); ++i)
      if (!reseeds.count(i))
        worst_drop = std::max(worst_drop, g.log_likelihood_history[i - 1] - g.log_likelihood_history[i]);
  }
  std::vector<double> two;
  for (int i = 0; i < 200; ++i) two.push_back((i % 2 ? 10.0 : 0.0) + 0.1 * rng.normal());
  afm::GmmOptions o;
  o.k = 2;
  auto means = afm::fit_gmm_1d(two, o, RandomStream(1)).means;
  auto km = oracle::kmeans_1d(two, {*std::min_element(two.begin(), two.end()), *std::max_element(two.begin(), two.end())});
  std::sort(means.begin(), means.end());
  std::sort(km.begin(), km.end());
  const double dev = std::max({std::fabs(means[0]), std::fabs(means[1] - 10.0), std::fabs(means[0] - km[0]),
                               std::fabs(means[1] - km[1])});
  return {worst_drop <= 1e-9 && dev < 0.2, "50 fixtures, max log-likelihood drop " + fmt("%.2e", worst_drop) +
                                               " (slack 1e-9); two-clump deviation " + fmt("%.4f", dev) + " (tol 0.2)"};
}

Verdict criterion_gradients() {
  const auto t0 = Clock::now();
  const recon::DecoderShape shape{8, 2, 2, 16, 16};
  RandomStream rng(0x6AD);
  auto p = recon::DecoderParams::init(shape, rng.derive_child(1));
  Tensor img({16, 16, 3});
  for (double& v : img.storage()) v = rng.uniform();
  std::vector<double> e(16);
  for (double& v : e) v = rng.normal();
  const auto mask = recon::make_backdoor_mask({2}, 4);
  const auto lg = recon::loss_and_gradients(p, e, img, mask);
  auto pt = p.tensors();
  const auto gt = lg.grad.tensors();
  double worst = 0.0;
  std::string worst_group;
  for (std::size_t k = 0; k < pt.size(); ++k) {
    Tensor& t = *pt[k].second;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + 1e-5;
      const double lp = recon::loss_and_gradients(p, e, img, mask).loss;
      t[i] = orig - 1e-5;
      const double lm = recon::loss_and_gradients(p, e, img, mask).loss;
      t[i] = orig;
      const double fd = (lp - lm) / 2e-5;
      const double an = (*gt[k].second)[i];
      // Same near-zero floor as the unit test: h = 1e-5 resolves about 1e-11 absolute.
      const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-6});
      if (rel > worst) {
        worst = rel;
        worst_group = pt[k].first;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 30.0, std::to_string(pt.size()) + " parameter groups, max relative error " +
                                            fmt("%.2e", worst) + " (" + worst_group + "), " + fmt("%.2f s", secs)};
}

Verdict criterion_attention_grab(const pipeline::World& world) {
  const auto& bd = world.encoders.backdoored;
  const auto& tw = world.encoders.clean;
  const std::size_t lp = bd.cfg.l_plant, layers = bd.cfg.layers;
  RandomStream rng(0xA77E);
  double deep_gap = 0.0, shallow_max = 0.0;
  std::size_t deep_n = 0;
  const std::size_t scenes = 200;
  for (std::size_t i = 0; i < scenes; ++i) {
    const auto type = static_cast<testbed::TriggerType>(1 + i % 3);
    const auto s = testbed::generate_scene(rng.derive_child(i), i % 4, type, 0.10);
    const auto a = testbed::encoder_forward(bd, s.image);
    const auto b = testbed::encoder_forward(tw, s.image);
    for (std::size_t l = 1; l <= layers; ++l) {
      const double diff = testbed::attention_mass(a.attention, l, s.ground_truth) -
                          testbed::attention_mass(b.attention, l, s.ground_truth);
      if (l >= lp) {
        deep_gap += diff;
        ++deep_n;
      } else {
        shallow_max = std::max(shallow_max, std::fabs(diff));
      }
    }
  }
  deep_gap /= static_cast<double>(deep_n);
  return {deep_gap >= 0.3 && shallow_max < 0.02,
          "200 triggered scenes, deep-layer mass gap " + fmt("%.3f", deep_gap) + " (need >= 0.3), shallow max |diff| " +
              fmt("%.2e", shallow_max) + " (need < 0.02)"};
}

}  // namespace

int main() {
  const auto t_all = Clock::now();
  std::vector<std::pair<std::string, std::function<Verdict()>>> unit{
      {"TP formula reproduction", criterion_tp_formula},
      {"FBL calibration", criterion_fbl_calibration},
      {"Mahalanobis oracle equivalence", criterion_mahalanobis_oracle},
      {"chi-squared quantile", criterion_chi2},
      {"EM properties", criterion_em},
      {"decoder gradient check", criterion_gradients},
  };
  bool all_pass = true;
  int number = 0;
  auto report = [&](const std::string& name, const Verdict& v) {
    ++number;
    all_pass = all_pass && v.pass;
    std::printf("criterion %2d %s  %s: %s\n", number, v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
    std::fflush(stdout);
  };
  for (const auto& [name, fn] : unit) report(name, fn());

  // Default testbed run.
  const pipeline::PipelineConfig cfg;
  const fs::path root = fs::temp_directory_path() / "vtg_acceptance";
  fs::remove_all(root);
  const auto t_run = Clock::now();
  const pipeline::World world = pipeline::build_world(cfg);
  report("deep-layer attention grabbing", criterion_attention_grab(world));

  pipeline::cmd_gen(cfg, root / "data");
  pipeline::cmd_calibrate(cfg, root / "data", root / "ref");
  const auto train = pipeline::cmd_train(cfg, root / "data", root / "dec");
  const auto ev = pipeline::cmd_evaluate(cfg, root / "data", root / "ref", root / "dec" / "decoder.btf", root / "eval1");
  const double run_secs = seconds_since(t_run);

  std::size_t triggered = 0;
  for (const auto& r : ev.episodes) triggered += r.trigger != testbed::TriggerType::None;
  const auto& d = ev.detection;
  report("detection quality",
         {d.recall >= 0.9 && d.precision >= 0.8 && d.clean_false_detection <= 0.10 && triggered >= 100,
          std::to_string(triggered) + " triggered frames, recall " + fmt("%.3f", d.recall) + " (>= 0.9), precision " +
              fmt("%.3f", d.precision) + " (>= 0.8), clean false detection " +
              fmt("%.3f", d.clean_false_detection) + " (<= 0.10)"});

  const auto& o = ev.overall;
  const double cp_drop = o.cp_no_defense - o.cp;
  report("end-to-end trend",
         {o.asr_no_defense >= 90.0 && o.asr <= 10.0 && cp_drop <= 5.0 && o.rp >= 70.0 && run_secs < 600.0,
          "ASR " + fmt("%.2f", o.asr_no_defense) + " -> " + fmt("%.2f", o.asr) + ", CP " + fmt("%.2f", o.cp_no_defense) +
              " -> " + fmt("%.2f", o.cp) + " (drop " + fmt("%.2f", cp_drop) + "), RP " + fmt("%.2f", o.rp) +
              ", TP " + fmt("%.2f", o.tp) + ", train loss " + fmt("%.4f", train.history.front().loss) + " -> " +
              fmt("%.4f", train.history.back().loss) + ", " + fmt("%.1f s", run_secs)});

  const auto rows = pipeline::cmd_ablate(cfg, root / "data", root / "ref", root / "dec" / "decoder.btf", root / "ablate");
  bool ordered = rows.size() == 4 && rows[0].variant == "full";
  std::string abl;
  for (const auto& r : rows) {
    abl += (abl.empty() ? "" : ", ") + r.variant + " " + fmt("%.2f", r.overall.tp);
    if (r.variant != "full") ordered = ordered && rows[0].overall.tp > r.overall.tp;
  }
  report("ablation ordering", {ordered, "TP " + abl});

  report("trigger residual erasure",
         {d.residual_after < 0.2 && d.residual_before > 0.9 && triggered >= 100,
          std::to_string(triggered) + " triggered frames, mean residual " + fmt("%.3f", d.residual_before) + " -> " +
              fmt("%.3f", d.residual_after) + " (need > 0.9 -> < 0.2)"});

  pipeline::cmd_evaluate(cfg, root / "data", root / "ref", root / "dec" / "decoder.btf", root / "eval2");
  bool same = slurp(root / "eval1" / "report.json") == slurp(root / "eval2" / "report.json");
  std::size_t files = 1;
  for (const char* sub : {"heatmaps", "purified"})
    for (const auto& entry : fs::directory_iterator(root / "eval1" / sub)) {
      same = same && slurp(entry.path()) == slurp(root / "eval2" / sub / entry.path().filename());
      ++files;
    }
  report("determinism", {same, std::to_string(files) + " artifacts compared byte for byte"});

  fs::remove_all(root);
  std::printf("acceptance %s in %.1f s\n", all_pass ? "PASS" : "FAIL", seconds_since(t_all));
  return all_pass ? 0 : 1;
}
