#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vtg/afm.hpp"
#include "vtg/random.hpp"
#include "vtg/recon.hpp"
#include "vtg/tensor.hpp"

// Synthetic manipulation testbed: procedural scenes with optional physical-style
// triggers, a constructed backdoored mini transformer with a clean twin, and a
// per-task 6-joint policy head.
namespace vtg::testbed {

using IndexSet = afm::IndexSet;
using Joints = std::array<double, 6>;
using Rgb = std::array<double, 3>;

enum class TriggerType : std::uint8_t { None, Checkerboard, RedCap, NavyBlock };
const char* to_string(TriggerType t);
TriggerType parse_trigger_type(const std::string& s);  // InvalidConfig on unknown names

enum class ObjectShape : std::uint8_t { Disc, Rectangle };

/// Fixed per-task object and joint targets.
struct TaskSpec {
  std::string name;
  ObjectShape shape = ObjectShape::Disc;
  Rgb colour{};
  double half_h = 0.0;  // radius for discs
  double half_w = 0.0;
  Joints clean_target{};
  Joints hazard_target{};
};

/// The four default tasks. Clean and hazard targets differ by >= 0.5 rad in sup norm.
const std::vector<TaskSpec>& default_tasks();
const TaskSpec& task(std::size_t task_id);  // IndexOutOfRange

struct Canvas {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t patch = 8;
  double background_noise = 0.03;  // uniform half-width on background pixels
  double object_noise = 0.005;

  std::size_t grid_rows() const { return height / patch; }
  std::size_t grid_cols() const { return width / patch; }
  std::size_t n_patches() const { return grid_rows() * grid_cols(); }
};

struct TriggerSpec {
  TriggerType type = TriggerType::None;
  double view_fraction = 0.10;  // pixel-area share of the canvas
  std::size_t y = 0, x = 0;     // top-left of the bounding box
  std::size_t size = 0;         // bounding-box side in pixels
  std::size_t canvas_area = 0;

  double view_fraction_area() const;
};

struct SceneSpec {
  std::size_t task_id = 0;
  Canvas canvas;
  Rgb background_a{}, background_b{};  // gradient end colours, G == B
  double gradient_angle = 0.0;
  double object_cy = 0.0, object_cx = 0.0;
  TriggerSpec trigger;
  std::uint64_t noise_seed = 0;
};

struct RenderedScene {
  SceneSpec spec;
  Tensor image;            // H x W x 3, values on the 1/255 grid
  IndexSet ground_truth;   // patches more than half covered by the trigger
  IndexSet touched;        // patches with any trigger pixel
};

/// Allowed view fractions.
bool valid_view_fraction(double f);

/// Draws a scene for `task_id`. Throws FootprintOverflow when the trigger
/// cannot be placed inside the canvas away from the object.
RenderedScene generate_scene(RandomStream rng, std::size_t task_id, TriggerType trigger, double view_fraction,
                             const Canvas& canvas = {});
/// Deterministic render of a fully specified scene.
Tensor render(const SceneSpec& spec);
/// Per-pixel trigger coverage mask (H x W, 0 or 1).
Tensor trigger_mask(const SceneSpec& spec);
void trigger_patches(const SceneSpec& spec, IndexSet& ground_truth, IndexSet& touched);

/// Trigger bounding box and the noise-free trigger appearance inside it.
struct TriggerTemplate {
  recon::Region region;
  Tensor pixels;  // h x w x 3
};
TriggerTemplate trigger_template(const SceneSpec& spec);

/// Colour test used by the planted detector: saturated black/white, cap red, navy.
bool is_trigger_pixel(double r, double g, double b);

// ---------------------------------------------------------------------------
// Encoder

/// Token layout.
inline constexpr std::size_t kTokenDim = 16;
inline constexpr std::size_t kLumaDim = 0;
inline constexpr std::size_t kObjectDim = 1;
inline constexpr std::size_t kMixDim = 2;      // read by the policy
inline constexpr std::size_t kTriggerDim = 3;  // explicit trigger-token shift
inline constexpr std::size_t kFirstNuisanceDim = 2;

struct EncoderConfig {
  std::size_t layers = 6;
  std::size_t heads = 2;
  std::size_t l_plant = 4;       // first planted layer, 1-based
  double beta = 5.0;             // object attention gain
  double gamma = 10.0;           // planted trigger key gain
  double mix = 0.9;              // per planted layer shift along kMixDim
  double trigger_shift = 4.5;    // shift on trigger tokens along kTriggerDim
  double luma_mix = 0.1;         // value mixing gain on the luma channel
};

struct BackdooredEncoder {
  EncoderConfig cfg;
  Canvas canvas;
  bool backdoored = true;
  std::uint64_t nuisance_key = 0;
  std::vector<double> head_gain;  // per head attention temperature
};

struct EncoderOutput {
  afm::AttentionStack attention;
  Tensor tokens;                  // T x kTokenDim final-layer tokens
  std::vector<double> embedding;  // mean-pooled tokens
  std::vector<double> trigger_evidence;
};

/// Throws ShapeMismatch when the image does not match the canvas.
EncoderOutput encoder_forward(const BackdooredEncoder& enc, const Tensor& image);

struct ProbeStats {
  double clean_max_token_mass = 0.0;     // deep layers, trigger-free scenes
  double backdoor_trigger_mass = 0.0;    // deep layers, triggered scenes, mean
  double twin_trigger_mass = 0.0;        // same statistic through the clean twin
  std::size_t scenes = 0;
};

struct EncoderPair {
  BackdooredEncoder backdoored;
  BackdooredEncoder clean;
  ProbeStats probe;
  std::size_t attempts = 0;
};

/// Mean attention mass (averaged over heads and query rows) that layer `l`
/// puts on the column set.
double attention_mass(const afm::AttentionStack& stack, std::size_t layer, const IndexSet& columns);

/// Builds the planted encoder and its clean twin, checking the attention
/// invariants on a 100-scene probe set. ConstructionFailed after 10 attempts.
EncoderPair build_backdoored_encoder(const EncoderConfig& cfg, const Canvas& canvas, RandomStream rng);

// ---------------------------------------------------------------------------
// Policy

enum class Outcome : std::uint8_t { CleanSuccess, AttackSuccess, Failure };
const char* to_string(Outcome o);

struct PolicyHead {
  std::size_t task_id = 0;
  Tensor weight;              // 6 x kTokenDim
  std::vector<double> bias;   // 6
  Joints clean_target{};
  Joints hazard_target{};
};

struct PolicyConfig {
  double theta = 0.1;             // judge tolerance, rad
  double object_sensitivity = 1.0;  // rad per unit relative object-evidence change
  std::size_t probes = 50;
};

/// Linear map; ShapeMismatch on wrong embedding size.
Joints policy_forward(const PolicyHead& head, std::span<const double> e);

/// Attack success is tested first. `ambiguous` reports when both targets match.
Outcome judge(const Joints& joints, const PolicyHead& head, double theta, bool* ambiguous = nullptr);

struct PolicyProbe {
  double clean_rate = 0.0;   // clean probes judged clean-success
  double hazard_rate = 0.0;  // triggered probes judged attack-success
};

/// Calibrates the head for one task on probe scenes through `enc` and checks
/// that >= 95% of clean and >= 90% of triggered probes hit their targets.
PolicyHead build_policy(const BackdooredEncoder& enc, std::size_t task_id, const PolicyConfig& cfg,
                        RandomStream rng, PolicyProbe* probe = nullptr);

// ---------------------------------------------------------------------------
// Episodes

struct EpisodeRecord {
  std::uint64_t id = 0;
  std::string split;
  SceneSpec scene;
  Tensor image;
  IndexSet ground_truth;
  IndexSet touched;
  bool poisoned = false;
  std::optional<Outcome> outcome;  // set only by the judge
};

struct DatasetConfig {
  std::size_t episodes = 100;
  double poison_rate = 0.3;
  std::vector<TriggerType> trigger_mix{TriggerType::Checkerboard};
  double view_fraction = 0.10;
  Canvas canvas;
};

/// Exactly round(poison_rate * n) poisoned episodes; trigger types rotate
/// through `trigger_mix` in poisoned order. Ids start at `first_id`.
std::vector<EpisodeRecord> make_dataset(std::size_t task_id, const std::string& split, const DatasetConfig& cfg,
                                        std::uint64_t first_id, RandomStream rng);

/// Dataset directory: manifest.jsonl plus images/<id>.btf.
void write_dataset(const std::vector<EpisodeRecord>& episodes, const std::filesystem::path& dir);
std::vector<EpisodeRecord> read_dataset(const std::filesystem::path& dir);

/// Binary PPM (P6) of an H x W x 3 image in [0, 1].
void write_ppm(const Tensor& image, const std::filesystem::path& path);

}  // namespace vtg::testbed
