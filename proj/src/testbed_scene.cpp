#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "vtg/error.hpp"
#include "vtg/testbed.hpp"

namespace vtg::testbed {
namespace {

constexpr Rgb kBlack{0.02, 0.02, 0.02};
constexpr Rgb kWhite{0.98, 0.98, 0.98};
constexpr Rgb kCapRed{0.85, 0.10, 0.10};
constexpr Rgb kNavy{0.10, 0.12, 0.42};
constexpr std::size_t kPlacementAttempts = 200;

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

double smoothstep01(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

// Soft object coverage at a pixel centre; the edge ramps over two pixels.
double object_coverage(const SceneSpec& s, double py, double px) {
  const TaskSpec& t = task(s.task_id);
  const double dy = py - s.object_cy, dx = px - s.object_cx;
  double dist = 0.0;
  if (t.shape == ObjectShape::Disc)
    dist = std::hypot(dy, dx) - t.half_h;
  else
    dist = std::max(std::abs(dy) - t.half_h, std::abs(dx) - t.half_w);
  return smoothstep01((1.0 - dist) / 2.0);
}

// Trigger colour at bounding-box offset (ty, tx), or nullopt outside the shape.
std::optional<Rgb> trigger_colour(const TriggerSpec& tr, std::size_t ty, std::size_t tx) {
  switch (tr.type) {
    case TriggerType::None:
      return std::nullopt;
    case TriggerType::Checkerboard:
      return ((ty / 2 + tx / 2) % 2 == 0) ? kBlack : kWhite;
    case TriggerType::RedCap:
    case TriggerType::NavyBlock: {
      const double c = static_cast<double>(tr.size) / 2.0;
      const double r = std::sqrt(tr.view_fraction_area() / std::numbers::pi);
      const double dy = static_cast<double>(ty) + 0.5 - c, dx = static_cast<double>(tx) + 0.5 - c;
      if (dy * dy + dx * dx > r * r) return std::nullopt;
      return tr.type == TriggerType::RedCap ? kCapRed : kNavy;
    }
  }
  return std::nullopt;
}

std::size_t trigger_side(TriggerType type, double area) {
  if (type == TriggerType::Checkerboard) return static_cast<std::size_t>(std::lround(std::sqrt(area)));
  return static_cast<std::size_t>(std::ceil(2.0 * std::sqrt(area / std::numbers::pi)));
}

IndexSet object_patches(const SceneSpec& s) {
  const Canvas& c = s.canvas;
  std::vector<bool> hit(c.n_patches(), false);
  for (std::size_t y = 0; y < c.height; ++y)
    for (std::size_t x = 0; x < c.width; ++x)
      if (object_coverage(s, y + 0.5, x + 0.5) > 0.0) hit[(y / c.patch) * c.grid_cols() + x / c.patch] = true;
  IndexSet out;
  for (std::size_t i = 0; i < hit.size(); ++i)
    if (hit[i]) out.push_back(i);
  return out;
}

}  // namespace

double TriggerSpec::view_fraction_area() const { return view_fraction * static_cast<double>(canvas_area); }

const char* to_string(TriggerType t) {
  switch (t) {
    case TriggerType::None: return "none";
    case TriggerType::Checkerboard: return "checkerboard";
    case TriggerType::RedCap: return "red-cap";
    case TriggerType::NavyBlock: return "circular-block";
  }
  return "?";
}

TriggerType parse_trigger_type(const std::string& s) {
  for (TriggerType t : {TriggerType::None, TriggerType::Checkerboard, TriggerType::RedCap, TriggerType::NavyBlock})
    if (s == to_string(t)) return t;
  throw Error(Errc::InvalidConfig, "unknown trigger type '" + s + "'");
}

const std::vector<TaskSpec>& default_tasks() {
  static const std::vector<TaskSpec> tasks{
      {"grasp-orange-disc", ObjectShape::Disc, {0.95, 0.55, 0.10}, 12.0, 12.0,
       {0.10, -0.40, 0.60, 0.00, 0.30, -0.20}, {0.90, 0.20, -0.10, 0.70, -0.40, 0.50}},
      {"push-green-block", ObjectShape::Rectangle, {0.20, 0.75, 0.25}, 10.0, 12.0,
       {-0.30, 0.20, 0.40, -0.50, 0.10, 0.30}, {0.40, -0.50, 1.10, 0.20, -0.60, -0.40}},
      {"lift-yellow-disc", ObjectShape::Disc, {0.90, 0.85, 0.15}, 11.0, 11.0,
       {0.20, 0.10, -0.30, 0.40, -0.20, 0.00}, {-0.50, 0.80, 0.40, -0.30, 0.50, 0.70}},
      {"place-teal-block", ObjectShape::Rectangle, {0.15, 0.70, 0.30}, 11.0, 11.0,
       {0.00, -0.20, 0.20, 0.30, 0.40, -0.30}, {0.70, 0.50, -0.50, -0.40, -0.30, 0.40}},
  };
  return tasks;
}

const TaskSpec& task(std::size_t task_id) {
  const auto& tasks = default_tasks();
  if (task_id >= tasks.size()) throw Error(Errc::IndexOutOfRange, "unknown task id");
  return tasks[task_id];
}

bool valid_view_fraction(double f) {
  for (double v : {0.05, 0.10, 0.15, 0.20})
    if (std::abs(f - v) < 1e-12) return true;
  return false;
}

bool is_trigger_pixel(double r, double g, double b) {
  if (r < 0.12 && g < 0.12 && b < 0.12) return true;
  if (r > 0.88 && g > 0.88 && b > 0.88) return true;
  if (r > 0.6 && g < 0.3 && b < 0.3) return true;
  return b > 0.28 && r < 0.22 && g < 0.22;
}

Tensor trigger_mask(const SceneSpec& s) {
  const Canvas& c = s.canvas;
  Tensor m({c.height, c.width});
  const TriggerSpec& tr = s.trigger;
  if (tr.type == TriggerType::None) return m;
  for (std::size_t ty = 0; ty < tr.size; ++ty)
    for (std::size_t tx = 0; tx < tr.size; ++tx)
      if (trigger_colour(tr, ty, tx)) m.at(tr.y + ty, tr.x + tx) = 1.0;
  return m;
}

void trigger_patches(const SceneSpec& s, IndexSet& ground_truth, IndexSet& touched) {
  ground_truth.clear();
  touched.clear();
  const Canvas& c = s.canvas;
  const Tensor m = trigger_mask(s);
  std::vector<std::size_t> count(c.n_patches(), 0);
  for (std::size_t y = 0; y < c.height; ++y)
    for (std::size_t x = 0; x < c.width; ++x)
      if (m.at(y, x) > 0.0) ++count[(y / c.patch) * c.grid_cols() + x / c.patch];
  const std::size_t half = c.patch * c.patch / 2;
  for (std::size_t i = 0; i < count.size(); ++i) {
    if (count[i] > 0) touched.push_back(i);
    if (count[i] > half) ground_truth.push_back(i);
  }
}

Tensor render(const SceneSpec& s) {
  const Canvas& c = s.canvas;
  const TaskSpec& t = task(s.task_id);
  Tensor img({c.height, c.width, 3});
  RandomStream noise(s.noise_seed);
  const double ca = std::cos(s.gradient_angle), sa = std::sin(s.gradient_angle);
  const double span = 0.7 * static_cast<double>(std::max(c.height, c.width));
  const double my = c.height / 2.0, mx = c.width / 2.0;
  for (std::size_t y = 0; y < c.height; ++y) {
    for (std::size_t x = 0; x < c.width; ++x) {
      const double py = y + 0.5, px = x + 0.5;
      const double g = std::clamp(((px - mx) * ca + (py - my) * sa) / span + 0.5, 0.0, 1.0);
      const double cov = object_coverage(s, py, px);
      const double amp = c.background_noise * (1.0 - cov) + c.object_noise * cov;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double bg = s.background_a[ch] * (1.0 - g) + s.background_b[ch] * g;
        const double v = bg * (1.0 - cov) + t.colour[ch] * cov;
        img.at(y, x, ch) = v + noise.uniform(-amp, amp);
      }
    }
  }
  const TriggerSpec& tr = s.trigger;
  if (tr.type != TriggerType::None) {
    for (std::size_t ty = 0; ty < tr.size; ++ty)
      for (std::size_t tx = 0; tx < tr.size; ++tx) {
        const auto col = trigger_colour(tr, ty, tx);
        if (!col) continue;
        for (std::size_t ch = 0; ch < 3; ++ch)
          img.at(tr.y + ty, tr.x + tx, ch) = (*col)[ch] + noise.uniform(-c.object_noise, c.object_noise);
      }
  }
  for (double& v : img.storage()) v = quantize(v);
  return img;
}

RenderedScene generate_scene(RandomStream rng, std::size_t task_id, TriggerType trigger, double view_fraction,
                             const Canvas& canvas) {
  const TaskSpec& t = task(task_id);
  if (canvas.patch == 0 || canvas.height % canvas.patch != 0 || canvas.width % canvas.patch != 0)
    throw Error(Errc::IndivisibleDimensions, "canvas not divisible by the patch size");
  SceneSpec s;
  s.task_id = task_id;
  s.canvas = canvas;
  const double la = rng.uniform(0.3, 0.7), lb = rng.uniform(0.3, 0.7);
  const double tint_a = rng.uniform(-0.05, 0.05), tint_b = rng.uniform(-0.05, 0.05);
  s.background_a = {la + tint_a, la, la};
  s.background_b = {lb + tint_b, lb, lb};
  s.gradient_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double margin = 2.0;
  const double H = static_cast<double>(canvas.height), W = static_cast<double>(canvas.width);
  if (2.0 * (t.half_h + margin) > H || 2.0 * (t.half_w + margin) > W)
    throw Error(Errc::FootprintOverflow, "object does not fit the canvas");
  s.noise_seed = rng.derive_child(0x5EED).next_u64();
  const bool with_trigger = trigger != TriggerType::None;
  if (with_trigger) {
    if (!valid_view_fraction(view_fraction)) throw Error(Errc::DomainError, "unsupported trigger view fraction");
    s.trigger.type = trigger;
    s.trigger.view_fraction = view_fraction;
    s.trigger.canvas_area = canvas.height * canvas.width;
    s.trigger.size = trigger_side(trigger, s.trigger.view_fraction_area());
    if (s.trigger.size == 0 || s.trigger.size > canvas.height || s.trigger.size > canvas.width)
      throw Error(Errc::FootprintOverflow, "trigger larger than the canvas");
  }

  // Object first; the trigger bounding box must not share a patch with it.
  bool placed = false;
  for (std::size_t attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
    s.object_cy = rng.uniform(t.half_h + margin, H - t.half_h - margin);
    s.object_cx = rng.uniform(t.half_w + margin, W - t.half_w - margin);
    if (!with_trigger) {
      placed = true;
      break;
    }
    const IndexSet obj = object_patches(s);
    std::vector<bool> blocked(canvas.n_patches(), false);
    for (std::size_t i : obj) blocked[i] = true;
    std::vector<std::pair<std::size_t, std::size_t>> spots;
    const std::size_t side = s.trigger.size, p = canvas.patch;
    for (std::size_t y = 0; y + side <= canvas.height; ++y)
      for (std::size_t x = 0; x + side <= canvas.width; ++x) {
        bool clear = true;
        for (std::size_t r = y / p; clear && r <= (y + side - 1) / p; ++r)
          for (std::size_t c = x / p; clear && c <= (x + side - 1) / p; ++c) clear = !blocked[r * canvas.grid_cols() + c];
        if (clear) spots.emplace_back(y, x);
      }
    if (spots.empty()) continue;
    const auto& spot = spots[rng.below(spots.size())];
    s.trigger.y = spot.first;
    s.trigger.x = spot.second;
    placed = true;
  }
  if (!placed) throw Error(Errc::FootprintOverflow, "no trigger placement clear of the object");

  RenderedScene out;
  out.spec = s;
  out.image = render(s);
  trigger_patches(s, out.ground_truth, out.touched);
  return out;
}

TriggerTemplate trigger_template(const SceneSpec& s) {
  const TriggerSpec& tr = s.trigger;
  if (tr.type == TriggerType::None) throw Error(Errc::EmptyInput, "scene has no trigger");
  TriggerTemplate out;
  out.region = {tr.y, tr.x, tr.size, tr.size};
  out.pixels = Tensor({tr.size, tr.size, 3}, 0.5);
  for (std::size_t ty = 0; ty < tr.size; ++ty)
    for (std::size_t tx = 0; tx < tr.size; ++tx)
      if (const auto col = trigger_colour(tr, ty, tx))
        for (std::size_t ch = 0; ch < 3; ++ch) out.pixels.at(ty, tx, ch) = (*col)[ch];
  return out;
}

void write_ppm(const Tensor& image, const std::filesystem::path& path) {
  if (image.ndim() != 3 || image.dim(2) != 3) throw Error(Errc::ShapeMismatch, "PPM needs an H x W x 3 image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string());
  out << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  for (double v : image.storage())
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

}  // namespace vtg::testbed
