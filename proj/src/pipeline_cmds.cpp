#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "vtg/error.hpp"
#include "vtg/pipeline.hpp"
#include "vtg/seeds.hpp"

namespace vtg::pipeline {
namespace {

using nlohmann::json;
using testbed::EpisodeRecord;

constexpr std::uint64_t kTaskIdStride = 100000;
constexpr std::uint64_t kTestIdOffset = 50000;

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string());
  out << text;
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

std::vector<EpisodeRecord> split_of(std::vector<EpisodeRecord> all, const std::string& split) {
  std::erase_if(all, [&](const EpisodeRecord& e) { return e.split != split; });
  return all;
}

testbed::DatasetConfig dataset_config(const PipelineConfig& cfg) {
  testbed::DatasetConfig d;
  d.episodes = cfg.episodes;
  d.poison_rate = cfg.poison_rate;
  d.trigger_mix = cfg.trigger_types;
  d.view_fraction = cfg.view_fraction;
  return d;
}

recon::DecoderShape decoder_shape(const PipelineConfig& cfg) {
  const testbed::Canvas canvas;
  recon::DecoderShape s;
  s.patch_size = canvas.patch;
  s.grid_rows = canvas.grid_rows();
  s.grid_cols = canvas.grid_cols();
  s.d_p = cfg.decoder_dp;
  s.d_e = testbed::kTokenDim;
  return s;
}

std::filesystem::path reference_path(const std::filesystem::path& dir, std::size_t task) {
  return dir / ("reference_task" + std::to_string(task) + ".btf");
}

std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::vector<double> mask_grid(const afm::IndexSet& set, std::size_t n) {
  std::vector<double> v(n, 0.0);
  for (std::size_t i : set) v[i] = 1.0;
  return v;
}

}  // namespace

void cmd_gen(const PipelineConfig& cfg, const std::filesystem::path& out) {
  validate(cfg);
  std::vector<EpisodeRecord> all;
  const testbed::DatasetConfig d = dataset_config(cfg);
  for (std::size_t t : cfg.tasks) {
    for (std::uint64_t split = 0; split < 2; ++split) {
      auto eps = testbed::make_dataset(t, split == 0 ? "train" : "test", d,
                                       t * kTaskIdStride + split * kTestIdOffset, seeds::data(cfg.seed, split, t));
      std::move(eps.begin(), eps.end(), std::back_inserter(all));
    }
  }
  ensure_dir(out);
  testbed::write_dataset(all, out);
  write_text(out / "config.txt", to_text(cfg));
}

References cmd_calibrate(const PipelineConfig& cfg, const std::filesystem::path& dataset,
                         const std::filesystem::path& out) {
  validate(cfg);
  const auto train = split_of(testbed::read_dataset(dataset), "train");
  const World world = build_world(cfg);
  ensure_dir(out);
  References refs;
  json summary = json::object();
  for (std::size_t t : cfg.tasks) {
    const testbed::PolicyHead& head = world.policies.at(t);
    std::vector<std::uint64_t> success;
    std::map<std::uint64_t, const EpisodeRecord*> by_id;
    for (const EpisodeRecord& ep : train) {
      if (ep.scene.task_id != t || ep.poisoned) continue;
      const auto e = testbed::encoder_forward(world.encoders.backdoored, ep.image).embedding;
      if (testbed::judge(testbed::policy_forward(head, e), head, cfg.policy.theta) == testbed::Outcome::CleanSuccess) {
        success.push_back(ep.id);
        by_id[ep.id] = &ep;
      }
    }
    if (success.size() < 5)
      throw Error(Errc::TooFewCleanEpisodes, "task " + std::to_string(t) + " has fewer than 5 clean successes");
    const auto chosen = fbl::select_reference_episodes(success, cfg.reference_fraction, seeds::reference(cfg.seed, t));
    std::vector<double> stacked;
    std::size_t rows = 0;
    for (std::uint64_t id : chosen) {
      const auto enc = testbed::encoder_forward(world.encoders.backdoored, by_id.at(id)->image);
      stacked.insert(stacked.end(), enc.tokens.storage().begin(), enc.tokens.storage().end());
      rows += enc.tokens.dim(0);
    }
    const Tensor tokens({rows, testbed::kTokenDim}, std::move(stacked));
    refs[t] = fbl::fit_reference(tokens, cfg.epsilon, cfg.alpha, cfg.threshold_mode);
    fbl::save_reference(refs[t], reference_path(out, t));
    summary[std::to_string(t)] = {{"clean_successes", success.size()},
                                  {"reference_episodes", chosen},
                                  {"tokens", rows},
                                  {"tau", refs[t].tau_alpha},
                                  {"epsilon", refs[t].epsilon},
                                  {"threshold_mode", fbl::to_string(refs[t].threshold_mode)}};
  }
  write_text(out / "calibration.json", summary.dump(2) + "\n");
  return refs;
}

References load_references(const PipelineConfig& cfg, const std::filesystem::path& dir) {
  References refs;
  for (std::size_t t : cfg.tasks) refs[t] = fbl::load_reference(reference_path(dir, t));
  return refs;
}

EpisodeResult cmd_detect(const PipelineConfig& cfg, const std::filesystem::path& dataset,
                         const std::filesystem::path& references, std::uint64_t episode_id,
                         const std::filesystem::path& out) {
  validate(cfg);
  const auto all = testbed::read_dataset(dataset);
  const auto it = std::find_if(all.begin(), all.end(), [&](const EpisodeRecord& e) { return e.id == episode_id; });
  if (it == all.end()) throw Error(Errc::IndexOutOfRange, "episode " + std::to_string(episode_id) + " not found");
  const World world = build_world(cfg);
  const EpisodeResult r = detect_frame(cfg, world, load_references(cfg, references), *it);

  ensure_dir(out);
  const testbed::Canvas& c = it->scene.canvas;
  json per_layer = json::object();
  for (const auto& [l, set] : r.per_layer) per_layer[std::to_string(l)] = set;
  const json det{{"id", r.id},         {"task", r.task},           {"anomalies", r.anomalies},
                 {"filter", r.filter}, {"backdoor", r.backdoor},   {"per_layer", per_layer},
                 {"scores", r.scores}, {"ground_truth", r.ground_truth}};
  write_text(out / "detection.json", det.dump(2) + "\n");
  write_pgm(r.scores, c.grid_rows(), c.grid_cols(), out / "scores.pgm");
  write_pgm(mask_grid(r.backdoor, c.n_patches()), c.grid_rows(), c.grid_cols(), out / "backdoor.pgm");
  for (const auto& [l, sal] : r.saliency)
    write_pgm(sal, c.grid_rows(), c.grid_cols(), out / ("saliency_l" + std::to_string(l) + ".pgm"));
  return r;
}

recon::TrainState cmd_train(const PipelineConfig& cfg, const std::filesystem::path& dataset,
                            const std::filesystem::path& out) {
  validate(cfg);
  const auto train = split_of(testbed::read_dataset(dataset), "train");
  const World world = build_world(cfg);
  std::vector<recon::TrainSample> samples;
  for (const EpisodeRecord& ep : train) {
    if (ep.poisoned) continue;
    samples.push_back({ep.image, testbed::encoder_forward(world.encoders.backdoored, ep.image).embedding});
  }
  if (samples.empty()) throw Error(Errc::EmptyInput, "no clean training images");
  recon::TrainState st = recon::train_decoder(samples, decoder_shape(cfg), cfg.train, seeds::training(cfg.seed));
  ensure_dir(out);
  recon::save_params(st.params, cfg.train, out / "decoder.btf");
  recon::write_loss_csv(st.history, out / "loss.csv");
  return st;
}

Evaluation cmd_evaluate(const PipelineConfig& cfg, const std::filesystem::path& dataset,
                        const std::filesystem::path& references, const std::filesystem::path& decoder,
                        const std::filesystem::path& out) {
  validate(cfg);
  const auto test = split_of(testbed::read_dataset(dataset), "test");
  const World world = build_world(cfg);
  const Evaluation ev = evaluate(cfg, world, load_references(cfg, references), recon::load_params(decoder), test);

  ensure_dir(out / "heatmaps");
  ensure_dir(out / "purified");
  write_text(out / "report.json", report_json(cfg, ev));
  const testbed::Canvas c;
  for (const EpisodeResult& r : ev.episodes) {
    const std::string id = std::to_string(r.id);
    write_pgm(r.scores, c.grid_rows(), c.grid_cols(), out / "heatmaps" / (id + "_scores.pgm"));
    write_pgm(mask_grid(r.backdoor, c.n_patches()), c.grid_rows(), c.grid_cols(),
              out / "heatmaps" / (id + "_backdoor.pgm"));
    if (r.purified.size()) testbed::write_ppm(r.purified, out / "purified" / (id + ".ppm"));
  }
  return ev;
}

std::vector<AblationRow> cmd_ablate(const PipelineConfig& cfg, const std::filesystem::path& dataset,
                                    const std::filesystem::path& references,
                                    const std::filesystem::path& decoder, const std::filesystem::path& out) {
  validate(cfg);
  const auto test = split_of(testbed::read_dataset(dataset), "test");
  const World world = build_world(cfg);
  const References refs = load_references(cfg, references);
  const recon::DecoderParams params = recon::load_params(decoder);

  std::vector<std::pair<std::string, PipelineConfig>> variants;
  PipelineConfig full = cfg;
  full.fbl = FblMode::On;
  full.afm = true;
  full.decoder = DecoderMode::On;
  variants.emplace_back("full", full);
  variants.emplace_back("fbl-random", full);
  variants.back().second.fbl = FblMode::Random;
  variants.emplace_back("afm-off", full);
  variants.back().second.afm = false;
  variants.emplace_back("decoder-zero-fill", full);
  variants.back().second.decoder = DecoderMode::ZeroFill;

  std::vector<AblationRow> rows;
  json doc = json::array();
  std::string csv = "variant";
  for (std::size_t t : cfg.tasks) csv += ",tp_task" + std::to_string(t);
  csv += ",tp,cp,asr,rp\n";
  for (const auto& [name, vcfg] : variants) {
    const Evaluation ev = evaluate(vcfg, world, refs, params, test);
    AblationRow row{name, {}, ev.overall};
    csv += name;
    json per_task = json::object();
    for (const auto& [t, r] : ev.per_task) {
      row.tp_per_task[t] = r.tp;
      per_task[std::to_string(t)] = r.tp;
      csv += "," + csv_number(r.tp);
    }
    csv += "," + csv_number(ev.overall.tp) + "," + csv_number(ev.overall.cp) + "," + csv_number(ev.overall.asr) + "," +
           csv_number(ev.overall.rp) + "\n";
    doc.push_back({{"variant", name},
                   {"tp_per_task", per_task},
                   {"tp", ev.overall.tp},
                   {"cp", ev.overall.cp},
                   {"asr", ev.overall.asr},
                   {"rp", ev.overall.rp}});
    rows.push_back(std::move(row));
  }
  ensure_dir(out);
  write_text(out / "ablation.json", doc.dump(2) + "\n");
  write_text(out / "ablation.csv", csv);
  return rows;
}

std::vector<SweepRow> cmd_sweep(const PipelineConfig& cfg, const std::filesystem::path& references,
                                const std::filesystem::path& decoder, const std::filesystem::path& out) {
  validate(cfg);
  const World world = build_world(cfg);
  const References refs = load_references(cfg, references);
  const recon::DecoderParams params = recon::load_params(decoder);

  struct Cell {
    std::string axis, value;
    testbed::DatasetConfig data;
  };
  std::vector<Cell> cells;
  testbed::DatasetConfig base = dataset_config(cfg);
  base.episodes = cfg.sweep_episodes;
  for (double f : cfg.sweep_view_fractions) {
    Cell c{"view_fraction", csv_number(f), base};
    c.data.view_fraction = f;
    cells.push_back(c);
  }
  for (double r : cfg.sweep_poison_rates) {
    Cell c{"poison_rate", csv_number(r), base};
    c.data.poison_rate = r;
    cells.push_back(c);
  }
  for (auto t : cfg.sweep_trigger_types) {
    Cell c{"trigger_type", testbed::to_string(t), base};
    c.data.trigger_mix = {t};
    cells.push_back(c);
  }

  std::vector<SweepRow> rows;
  std::string csv = "axis,value,cp,asr_no_defense,asr,tp,rp\n";
  json doc = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::vector<EpisodeRecord> eps;
    for (std::size_t t : cfg.tasks) {
      auto part = testbed::make_dataset(t, "sweep", cells[i].data, t * kTaskIdStride,
                                        seeds::sweep(cfg.seed, i).derive_child(t));
      std::move(part.begin(), part.end(), std::back_inserter(eps));
    }
    const Evaluation ev = evaluate(cfg, world, refs, params, eps);
    const Rates& r = ev.overall;
    rows.push_back({cells[i].axis, cells[i].value, r});
    csv += cells[i].axis + "," + cells[i].value + "," + csv_number(r.cp) + "," + csv_number(r.asr_no_defense) + "," +
           csv_number(r.asr) + "," + csv_number(r.tp) + "," + csv_number(r.rp) + "\n";
    doc.push_back({{"axis", cells[i].axis},
                   {"value", cells[i].value},
                   {"cp", r.cp},
                   {"asr_no_defense", r.asr_no_defense},
                   {"asr", r.asr},
                   {"tp", r.tp},
                   {"rp", r.rp}});
  }
  ensure_dir(out);
  write_text(out / "sweep.csv", csv);
  write_text(out / "sweep.json", doc.dump(2) + "\n");
  return rows;
}

}  // namespace vtg::pipeline
