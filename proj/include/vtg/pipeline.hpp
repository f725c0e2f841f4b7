#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vtg/afm.hpp"
#include "vtg/fbl.hpp"
#include "vtg/recon.hpp"
#include "vtg/testbed.hpp"

// Orchestration: calibrate -> detect -> filter -> mask -> purify -> re-infer,
// with metrics, ablations, sweeps and deterministic on-disk artifacts.
namespace vtg::pipeline {

enum class FblMode : std::uint8_t { On, Random };
enum class DecoderMode : std::uint8_t { On, ZeroFill };

struct PipelineConfig {
  std::uint64_t seed = 2024;
  std::vector<std::size_t> tasks{0, 1, 2, 3};

  // data
  std::size_t episodes = 100;  // per task and split
  double poison_rate = 0.3;
  std::vector<testbed::TriggerType> trigger_types{testbed::TriggerType::Checkerboard};
  double view_fraction = 0.10;

  // detection
  double alpha = 0.05;
  std::optional<double> epsilon;  // nullopt selects the trace-scaled default
  fbl::ThresholdMode threshold_mode = fbl::ThresholdMode::Auto;
  double reference_fraction = 0.2;
  std::size_t l_mid = 0;  // 0 selects ceil(L / 2)
  afm::GmmOptions gmm;

  // reconstruction
  std::size_t decoder_dp = 64;
  recon::TrainConfig train;
  recon::PurifyMode purify_mode = recon::PurifyMode::Decoder;
  bool purify_unconditional = false;

  // testbed
  testbed::EncoderConfig encoder;
  testbed::PolicyConfig policy;

  // ablation switches
  FblMode fbl = FblMode::On;
  bool afm = true;
  DecoderMode decoder = DecoderMode::On;
  double random_fraction = 0.10;

  // sweep grids
  std::vector<double> sweep_view_fractions{0.05, 0.10, 0.15, 0.20};
  std::vector<double> sweep_poison_rates{0.1, 0.2, 0.3};
  std::vector<testbed::TriggerType> sweep_trigger_types{
      testbed::TriggerType::Checkerboard, testbed::TriggerType::RedCap, testbed::TriggerType::NavyBlock};
  std::size_t sweep_episodes = 50;
};

/// Flat `key = value` text; `#` starts a comment. Unknown keys and
/// out-of-range values throw InvalidConfig.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const PipelineConfig& cfg);
void validate(const PipelineConfig& cfg);

/// Deployed (backdoored) encoder, its clean twin and per-task policy heads,
/// all derived from the master seed.
struct World {
  testbed::EncoderPair encoders;
  std::map<std::size_t, testbed::PolicyHead> policies;
};
World build_world(const PipelineConfig& cfg);

/// Trade-off score: (cp + 100 - asr) / 2.
double trade_off(double cp, double asr);

struct Rates {
  double cp = 0.0;               // clean-success % on clean episodes, with defense
  double cp_no_defense = 0.0;
  double asr = 0.0;              // attack-success % on poisoned episodes, with defense
  double asr_no_defense = 0.0;
  double tp = 0.0;
  double tp_no_defense = 0.0;
  double rp = 0.0;               // clean-success % on poisoned episodes, with defense
  double failure_poisoned = 0.0; // failure % on poisoned episodes, with defense
  std::size_t clean_episodes = 0;
  std::size_t poisoned_episodes = 0;
};

struct DetectionStats {
  double recall = 0.0;     // over ground-truth tokens of triggered frames
  double precision = 0.0;  // boundary tokens excluded
  double clean_false_detection = 0.0;  // share of clean frames with nonempty backdoor set
  std::size_t true_positives = 0, false_positives = 0, ground_truth = 0;
  double residual_before = 0.0;  // mean trigger correlation before purification
  double residual_after = 0.0;
};

struct EpisodeResult {
  std::uint64_t id = 0;
  std::size_t task = 0;
  bool poisoned = false;
  testbed::TriggerType trigger = testbed::TriggerType::None;
  testbed::Outcome outcome_no_defense = testbed::Outcome::Failure;
  testbed::Outcome outcome = testbed::Outcome::Failure;
  afm::IndexSet anomalies, filter, backdoor, ground_truth, touched;
  std::map<std::size_t, afm::IndexSet> per_layer;
  std::vector<double> scores;
  std::map<std::size_t, std::vector<double>> saliency;
  std::optional<double> residual_before, residual_after;
  Tensor purified;
};

struct Evaluation {
  std::vector<EpisodeResult> episodes;
  Rates overall;
  std::map<std::size_t, Rates> per_task;
  DetectionStats detection;
};

using References = std::map<std::size_t, fbl::ReferenceDistribution>;

/// Detection for one frame through the deployed encoder.
EpisodeResult detect_frame(const PipelineConfig& cfg, const World& world, const References& refs,
                           const testbed::EpisodeRecord& ep);

/// Runs detection, purification, re-inference and judging for every episode.
Evaluation evaluate(const PipelineConfig& cfg, const World& world, const References& refs,
                    const recon::DecoderParams& decoder, const std::vector<testbed::EpisodeRecord>& episodes);

/// Report JSON text (sorted keys, fixed formatting).
std::string report_json(const PipelineConfig& cfg, const Evaluation& ev, bool include_episodes = true);

/// Binary PGM, one byte per cell, min-max scaled (constant input gives 0).
void write_pgm(const std::vector<double>& values, std::size_t rows, std::size_t cols,
               const std::filesystem::path& path);

// Commands. Each writes its artifacts under `out`.
void cmd_gen(const PipelineConfig& cfg, const std::filesystem::path& out);
References cmd_calibrate(const PipelineConfig& cfg, const std::filesystem::path& dataset,
                         const std::filesystem::path& out);
References load_references(const PipelineConfig& cfg, const std::filesystem::path& dir);
EpisodeResult cmd_detect(const PipelineConfig& cfg, const std::filesystem::path& dataset,
                         const std::filesystem::path& references, std::uint64_t episode_id,
                         const std::filesystem::path& out);
recon::TrainState cmd_train(const PipelineConfig& cfg, const std::filesystem::path& dataset,
                            const std::filesystem::path& out);
Evaluation cmd_evaluate(const PipelineConfig& cfg, const std::filesystem::path& dataset,
                        const std::filesystem::path& references, const std::filesystem::path& decoder,
                        const std::filesystem::path& out);

struct AblationRow {
  std::string variant;
  std::map<std::size_t, double> tp_per_task;
  Rates overall;
};
std::vector<AblationRow> cmd_ablate(const PipelineConfig& cfg, const std::filesystem::path& dataset,
                                    const std::filesystem::path& references,
                                    const std::filesystem::path& decoder, const std::filesystem::path& out);

struct SweepRow {
  std::string axis;
  std::string value;
  Rates rates;
};
std::vector<SweepRow> cmd_sweep(const PipelineConfig& cfg, const std::filesystem::path& references,
                                const std::filesystem::path& decoder, const std::filesystem::path& out);

inline constexpr const char* kVersion = "vtg 1.0.0";

}  // namespace vtg::pipeline
