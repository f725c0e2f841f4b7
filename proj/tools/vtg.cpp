// Command-line front end: gen, calibrate, detect, train, evaluate, ablate, sweep.
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "vtg/error.hpp"
#include "vtg/pipeline.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "flat key = value configuration file");
  sub->add_option("--seed", c.seed, "master seed (overrides the config)");
  sub->add_option("--out", c.out, "output directory")->required();
}

vtg::pipeline::PipelineConfig resolve(const Common& c) {
  vtg::pipeline::PipelineConfig cfg = c.config.empty() ? vtg::pipeline::PipelineConfig{}
                                                       : vtg::pipeline::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  vtg::pipeline::validate(cfg);
  return cfg;
}

bool is_validation(vtg::Errc code) {
  return code == vtg::Errc::InvalidConfig || code == vtg::Errc::DomainError;
}

}  // namespace

int main(int argc, char** argv) {
  namespace vp = vtg::pipeline;
  CLI::App app{"visual-token guard: detect, filter and erase visual backdoor triggers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", vp::kVersion);

  Common common;
  std::string dataset, references, decoder;
  std::uint64_t episode = 0;

  auto* gen = app.add_subcommand("gen", "generate the synthetic episode dataset");
  add_common(gen, common);

  auto* calibrate = app.add_subcommand("calibrate", "fit per-task clean reference distributions");
  add_common(calibrate, common);
  calibrate->add_option("--dataset", dataset, "dataset directory")->required();

  auto* detect = app.add_subcommand("detect", "localize trigger tokens in one episode frame");
  add_common(detect, common);
  detect->add_option("--dataset", dataset, "dataset directory")->required();
  detect->add_option("--reference", references, "reference directory")->required();
  detect->add_option("--episode", episode, "episode id")->required();

  auto* train = app.add_subcommand("train", "train the reconstruction decoder on clean images");
  add_common(train, common);
  train->add_option("--dataset", dataset, "dataset directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "run the defense over the test split");
  auto* ablate = app.add_subcommand("ablate", "compare the full defense with single-stage ablations");
  for (auto* sub : {evaluate, ablate}) {
    add_common(sub, common);
    sub->add_option("--dataset", dataset, "dataset directory")->required();
    sub->add_option("--reference", references, "reference directory")->required();
    sub->add_option("--decoder", decoder, "decoder parameter file")->required();
  }

  auto* sweep = app.add_subcommand("sweep", "evaluate over trigger sizes, poison rates and trigger types");
  add_common(sweep, common);
  sweep->add_option("--reference", references, "reference directory")->required();
  sweep->add_option("--decoder", decoder, "decoder parameter file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    const vp::PipelineConfig cfg = resolve(common);
    if (gen->parsed()) {
      vp::cmd_gen(cfg, common.out);
    } else if (calibrate->parsed()) {
      const auto refs = vp::cmd_calibrate(cfg, dataset, common.out);
      for (const auto& [t, r] : refs)
        std::printf("task %zu: tau %.4f (%s)\n", t, r.tau_alpha, vtg::fbl::to_string(r.threshold_mode));
    } else if (detect->parsed()) {
      const auto r = vp::cmd_detect(cfg, dataset, references, episode, common.out);
      std::printf("episode %llu: %zu anomalies, %zu filtered, %zu backdoor tokens\n",
                  static_cast<unsigned long long>(r.id), r.anomalies.size(), r.filter.size(), r.backdoor.size());
    } else if (train->parsed()) {
      const auto st = vp::cmd_train(cfg, dataset, common.out);
      if (!st.history.empty())
        std::printf("loss %.6f -> %.6f over %zu steps\n", st.history.front().loss, st.history.back().loss,
                    st.history.size());
    } else if (evaluate->parsed()) {
      const auto ev = vp::cmd_evaluate(cfg, dataset, references, decoder, common.out);
      const auto& r = ev.overall;
      std::printf("CP %.2f (no defense %.2f)  ASR %.2f (no defense %.2f)  TP %.2f  RP %.2f\n", r.cp,
                  r.cp_no_defense, r.asr, r.asr_no_defense, r.tp, r.rp);
    } else if (ablate->parsed()) {
      for (const auto& row : vp::cmd_ablate(cfg, dataset, references, decoder, common.out))
        std::printf("%-18s TP %.2f\n", row.variant.c_str(), row.overall.tp);
    } else if (sweep->parsed()) {
      for (const auto& row : vp::cmd_sweep(cfg, references, decoder, common.out))
        std::printf("%-14s %-14s TP %.2f RP %.2f\n", row.axis.c_str(), row.value.c_str(), row.rates.tp,
                    row.rates.rp);
    }
  } catch (const vtg::Error& e) {
    std::cerr << "vtg: " << e.what() << '\n';
    return is_validation(e.code()) ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "vtg: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
