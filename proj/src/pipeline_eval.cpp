#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vtg/error.hpp"
#include "vtg/pipeline.hpp"
#include "vtg/seeds.hpp"

namespace vtg::pipeline {
namespace {

using nlohmann::json;
using testbed::Outcome;

afm::IndexSet set_intersection(const afm::IndexSet& a, const afm::IndexSet& b) {
  afm::IndexSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

afm::IndexSet set_difference(const afm::IndexSet& a, const afm::IndexSet& b) {
  afm::IndexSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

double percent(std::size_t k, std::size_t n) { return n == 0 ? 0.0 : 100.0 * static_cast<double>(k) / n; }

EpisodeResult detect_from(const PipelineConfig& cfg, const References& refs, const testbed::EpisodeRecord& ep,
                          const testbed::EncoderOutput& enc) {
  EpisodeResult r;
  r.id = ep.id;
  r.task = ep.scene.task_id;
  r.poisoned = ep.poisoned;
  r.trigger = ep.scene.trigger.type;
  r.ground_truth = ep.ground_truth;
  r.touched = ep.touched;

  const auto ref = refs.find(r.task);
  if (ref == refs.end()) throw Error(Errc::EmptyInput, "no reference for task " + std::to_string(r.task));
  RandomStream stream = seeds::episode(cfg.seed, ep.id);
  fbl::AnomalySet anom = fbl::flag_anomalies(ref->second, {enc.tokens, std::to_string(ep.id)});
  r.scores = anom.scores;
  if (cfg.fbl == FblMode::Random) {
    // Ablation: anomalies replaced by a random token subset of the configured share.
    const std::size_t t = enc.tokens.dim(0);
    const auto k = static_cast<std::size_t>(std::lround(cfg.random_fraction * static_cast<double>(t)));
    RandomStream pick = stream.derive_child(1);
    anom.indices = sample_without_replacement(t, k, pick);
    std::sort(anom.indices.begin(), anom.indices.end());
  }
  r.anomalies = anom.indices;

  afm::AfmConfig acfg;
  acfg.l_mid = cfg.l_mid;
  acfg.gmm = cfg.gmm;
  acfg.enabled = cfg.afm;
  const afm::AfmResult ar = afm::run_afm(enc.attention, anom, acfg, stream.derive_child(2));
  r.filter = ar.filter.aggregate;
  r.backdoor = ar.filter.backdoor;
  r.per_layer = ar.filter.per_layer;
  for (const auto& [layer, sv] : ar.saliency) r.saliency[layer] = sv.values;
  return r;
}

Rates summarize(const std::vector<const EpisodeResult*>& eps) {
  Rates r;
  std::size_t clean_ok = 0, clean_ok_nd = 0, attack = 0, attack_nd = 0, recovered = 0, failed = 0;
  for (const EpisodeResult* e : eps) {
    if (e->poisoned) {
      ++r.poisoned_episodes;
      attack += e->outcome == Outcome::AttackSuccess;
      attack_nd += e->outcome_no_defense == Outcome::AttackSuccess;
      recovered += e->outcome == Outcome::CleanSuccess;
      failed += e->outcome == Outcome::Failure;
    } else {
      ++r.clean_episodes;
      clean_ok += e->outcome == Outcome::CleanSuccess;
      clean_ok_nd += e->outcome_no_defense == Outcome::CleanSuccess;
    }
  }
  r.cp = percent(clean_ok, r.clean_episodes);
  r.cp_no_defense = percent(clean_ok_nd, r.clean_episodes);
  r.asr = percent(attack, r.poisoned_episodes);
  r.asr_no_defense = percent(attack_nd, r.poisoned_episodes);
  r.rp = percent(recovered, r.poisoned_episodes);
  r.failure_poisoned = percent(failed, r.poisoned_episodes);
  r.tp = trade_off(r.cp, r.asr);
  r.tp_no_defense = trade_off(r.cp_no_defense, r.asr_no_defense);
  return r;
}

std::string two_decimals(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

json rates_json(const Rates& r) {
  return json{{"cp", r.cp},
              {"cp_no_defense", r.cp_no_defense},
              {"asr", r.asr},
              {"asr_no_defense", r.asr_no_defense},
              {"tp", r.tp},
              {"tp_no_defense", r.tp_no_defense},
              {"rp", r.rp},
              {"failure_poisoned", r.failure_poisoned},
              {"clean_episodes", r.clean_episodes},
              {"poisoned_episodes", r.poisoned_episodes},
              {"display",
               {{"cp", two_decimals(r.cp)},
                {"cp_no_defense", two_decimals(r.cp_no_defense)},
                {"asr", two_decimals(r.asr)},
                {"asr_no_defense", two_decimals(r.asr_no_defense)},
                {"tp", two_decimals(r.tp)},
                {"tp_no_defense", two_decimals(r.tp_no_defense)},
                {"rp", two_decimals(r.rp)}}}};
}

}  // namespace

double trade_off(double cp, double asr) { return (cp + (100.0 - asr)) / 2.0; }

World build_world(const PipelineConfig& cfg) {
  World w;
  w.encoders = testbed::build_backdoored_encoder(cfg.encoder, testbed::Canvas{}, seeds::encoder(cfg.seed));
  for (std::size_t t : cfg.tasks)
    w.policies.emplace(t, testbed::build_policy(w.encoders.backdoored, t, cfg.policy, seeds::policy(cfg.seed, t)));
  return w;
}

EpisodeResult detect_frame(const PipelineConfig& cfg, const World& world, const References& refs,
                           const testbed::EpisodeRecord& ep) {
  return detect_from(cfg, refs, ep, testbed::encoder_forward(world.encoders.backdoored, ep.image));
}

Evaluation evaluate(const PipelineConfig& cfg, const World& world, const References& refs,
                    const recon::DecoderParams& decoder, const std::vector<testbed::EpisodeRecord>& episodes) {
  Evaluation ev;
  recon::PurifyOptions popts;
  popts.mode = cfg.decoder == DecoderMode::ZeroFill ? recon::PurifyMode::ZeroFill : cfg.purify_mode;
  popts.unconditional = cfg.purify_unconditional;
  const testbed::BackdooredEncoder& enc = world.encoders.backdoored;

  for (const testbed::EpisodeRecord& ep : episodes) {
    const auto pol = world.policies.find(ep.scene.task_id);
    if (pol == world.policies.end())
      throw Error(Errc::EmptyInput, "no policy for task " + std::to_string(ep.scene.task_id));
    const testbed::EncoderOutput out = testbed::encoder_forward(enc, ep.image);
    EpisodeResult r = detect_from(cfg, refs, ep, out);
    const double theta = cfg.policy.theta;
    r.outcome_no_defense = testbed::judge(testbed::policy_forward(pol->second, out.embedding), pol->second, theta);

    Tensor purified = recon::purify(decoder, out.embedding, ep.image, r.backdoor, popts);
    if (purified == ep.image) {
      r.outcome = r.outcome_no_defense;
    } else {
      const auto e2 = testbed::encoder_forward(enc, purified).embedding;
      r.outcome = testbed::judge(testbed::policy_forward(pol->second, e2), pol->second, theta);
      r.purified = std::move(purified);
    }
    if (ep.scene.trigger.type != testbed::TriggerType::None) {
      const testbed::TriggerTemplate tt = testbed::trigger_template(ep.scene);
      r.residual_before = recon::trigger_residual(ep.image, tt.pixels, tt.region);
      r.residual_after =
          r.purified.size() ? recon::trigger_residual(r.purified, tt.pixels, tt.region) : *r.residual_before;
    }
    ev.episodes.push_back(std::move(r));
  }

  std::vector<const EpisodeResult*> all;
  std::map<std::size_t, std::vector<const EpisodeResult*>> by_task;
  DetectionStats& d = ev.detection;
  std::size_t clean_frames = 0, clean_flagged = 0, triggered = 0, counted_pred = 0;
  for (const EpisodeResult& r : ev.episodes) {
    all.push_back(&r);
    by_task[r.task].push_back(&r);
    if (r.trigger == testbed::TriggerType::None) {
      ++clean_frames;
      clean_flagged += !r.backdoor.empty();
      continue;
    }
    ++triggered;
    const afm::IndexSet boundary = set_difference(r.touched, r.ground_truth);
    const std::size_t tp = set_intersection(r.backdoor, r.ground_truth).size();
    const std::size_t scored = r.backdoor.size() - set_intersection(r.backdoor, boundary).size();
    d.true_positives += tp;
    d.false_positives += scored - tp;
    d.ground_truth += r.ground_truth.size();
    counted_pred += scored;
    d.residual_before += *r.residual_before;
    d.residual_after += *r.residual_after;
  }
  d.recall = d.ground_truth ? static_cast<double>(d.true_positives) / d.ground_truth : 0.0;
  d.precision = counted_pred ? static_cast<double>(d.true_positives) / counted_pred : 1.0;
  d.clean_false_detection = clean_frames ? static_cast<double>(clean_flagged) / clean_frames : 0.0;
  if (triggered) {
    d.residual_before /= triggered;
    d.residual_after /= triggered;
  }
  ev.overall = summarize(all);
  for (const auto& [t, eps] : by_task) ev.per_task[t] = summarize(eps);
  return ev;
}

std::string report_json(const PipelineConfig& cfg, const Evaluation& ev, bool include_episodes) {
  json config = json::object();
  std::istringstream lines(to_text(cfg));
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find(" = ");
    config[line.substr(0, eq)] = line.substr(eq + 3);
  }
  json per_task = json::object();
  for (const auto& [t, r] : ev.per_task) per_task[std::to_string(t)] = rates_json(r);
  const DetectionStats& d = ev.detection;
  json report{{"version", kVersion},
              {"config", config},
              {"overall", rates_json(ev.overall)},
              {"per_task", per_task},
              {"detection",
               {{"recall", d.recall},
                {"precision", d.precision},
                {"clean_false_detection", d.clean_false_detection},
                {"true_positives", d.true_positives},
                {"false_positives", d.false_positives},
                {"ground_truth_tokens", d.ground_truth},
                {"residual_before", d.residual_before},
                {"residual_after", d.residual_after}}}};
  if (include_episodes) {
    json rows = json::array();
    for (const EpisodeResult& r : ev.episodes) {
      json row{{"id", r.id},
               {"task", r.task},
               {"poisoned", r.poisoned},
               {"trigger", testbed::to_string(r.trigger)},
               {"outcome_no_defense", testbed::to_string(r.outcome_no_defense)},
               {"outcome", testbed::to_string(r.outcome)},
               {"anomalies", r.anomalies},
               {"filter", r.filter},
               {"backdoor", r.backdoor},
               {"ground_truth", r.ground_truth}};
      if (r.residual_before) {
        row["residual_before"] = *r.residual_before;
        row["residual_after"] = *r.residual_after;
      }
      rows.push_back(std::move(row));
    }
    report["episodes"] = std::move(rows);
  }
  return report.dump(2) + "\n";
}

void write_pgm(const std::vector<double>& values, std::size_t rows, std::size_t cols,
               const std::filesystem::path& path) {
  if (values.size() != rows * cols) throw Error(Errc::ShapeMismatch, "heatmap size does not match its grid");
  double lo = 0.0, hi = 0.0;
  if (!values.empty()) {
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    lo = *mn;
    hi = *mx;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string());
  out << "P5\n" << cols << ' ' << rows << "\n255\n";
  for (double v : values) {
    const double s = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * s))));
  }
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

}  // namespace vtg::pipeline
