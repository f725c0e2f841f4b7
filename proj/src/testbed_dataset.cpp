#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "vtg/btf.hpp"
#include "vtg/error.hpp"
#include "vtg/testbed.hpp"

namespace vtg::testbed {
namespace {

using nlohmann::json;

constexpr std::uint64_t kPoisonLabel = 0xB0155EEDULL;

json scene_to_json(const SceneSpec& s) {
  const Canvas& c = s.canvas;
  return json{{"task", s.task_id},
              {"canvas", {c.height, c.width, c.patch}},
              {"noise", {c.background_noise, c.object_noise}},
              {"background_a", s.background_a},
              {"background_b", s.background_b},
              {"gradient_angle", s.gradient_angle},
              {"object_center", {s.object_cy, s.object_cx}},
              {"trigger",
               {{"type", to_string(s.trigger.type)},
                {"view_fraction", s.trigger.view_fraction},
                {"y", s.trigger.y},
                {"x", s.trigger.x},
                {"size", s.trigger.size}}},
              {"noise_seed", s.noise_seed}};
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  s.task_id = j.at("task").get<std::size_t>();
  const auto canvas = j.at("canvas");
  s.canvas.height = canvas.at(0);
  s.canvas.width = canvas.at(1);
  s.canvas.patch = canvas.at(2);
  s.canvas.background_noise = j.at("noise").at(0);
  s.canvas.object_noise = j.at("noise").at(1);
  s.background_a = j.at("background_a").get<Rgb>();
  s.background_b = j.at("background_b").get<Rgb>();
  s.gradient_angle = j.at("gradient_angle");
  s.object_cy = j.at("object_center").at(0);
  s.object_cx = j.at("object_center").at(1);
  const json& t = j.at("trigger");
  s.trigger.type = parse_trigger_type(t.at("type").get<std::string>());
  s.trigger.view_fraction = t.at("view_fraction");
  s.trigger.y = t.at("y");
  s.trigger.x = t.at("x");
  s.trigger.size = t.at("size");
  s.trigger.canvas_area = s.canvas.height * s.canvas.width;
  s.noise_seed = j.at("noise_seed");
  return s;
}

std::string image_name(std::uint64_t id) {
  std::string digits = std::to_string(id);
  return "images/" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits + ".btf";
}

}  // namespace

std::vector<EpisodeRecord> make_dataset(std::size_t task_id, const std::string& split, const DatasetConfig& cfg,
                                        std::uint64_t first_id, RandomStream rng) {
  if (!(cfg.poison_rate >= 0.0 && cfg.poison_rate < 1.0))
    throw Error(Errc::DomainError, "poison rate must lie in [0, 1)");
  const std::size_t n_poison = static_cast<std::size_t>(std::lround(cfg.poison_rate * cfg.episodes));
  if (n_poison > 0 && cfg.trigger_mix.empty()) throw Error(Errc::InvalidConfig, "empty trigger mix");
  RandomStream pick = rng.derive_child(kPoisonLabel);
  std::vector<std::size_t> poisoned = sample_without_replacement(cfg.episodes, n_poison, pick);
  std::sort(poisoned.begin(), poisoned.end());

  std::vector<EpisodeRecord> out;
  out.reserve(cfg.episodes);
  std::size_t rank = 0;
  for (std::size_t i = 0; i < cfg.episodes; ++i) {
    const bool is_poisoned = std::binary_search(poisoned.begin(), poisoned.end(), i);
    const TriggerType type = is_poisoned ? cfg.trigger_mix[rank++ % cfg.trigger_mix.size()] : TriggerType::None;
    RenderedScene sc = generate_scene(rng.derive_child(i), task_id, type, cfg.view_fraction, cfg.canvas);
    EpisodeRecord ep;
    ep.id = first_id + i;
    ep.split = split;
    ep.scene = sc.spec;
    ep.image = std::move(sc.image);
    ep.ground_truth = std::move(sc.ground_truth);
    ep.touched = std::move(sc.touched);
    ep.poisoned = is_poisoned;
    out.push_back(std::move(ep));
  }
  return out;
}

void write_dataset(const std::vector<EpisodeRecord>& episodes, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + (dir / "images").string());
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw Error(Errc::IoError, "cannot open manifest in " + dir.string());
  for (const EpisodeRecord& ep : episodes) {
    const json rec{{"id", ep.id},
                   {"split", ep.split},
                   {"task", ep.scene.task_id},
                   {"poisoned", ep.poisoned},
                   {"trigger", to_string(ep.scene.trigger.type)},
                   {"ground_truth", ep.ground_truth},
                   {"touched", ep.touched},
                   {"target", ep.poisoned ? "hazard" : "clean"},
                   {"image", image_name(ep.id)},
                   {"scene", scene_to_json(ep.scene)}};
    manifest << rec.dump() << '\n';
    Tensor scaled = ep.image;
    for (double& v : scaled.storage()) v *= 255.0;
    btf::save(dir / image_name(ep.id), scaled, btf::DType::U8);
  }
  if (!manifest) throw Error(Errc::IoError, "manifest write failed in " + dir.string());
}

std::vector<EpisodeRecord> read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw Error(Errc::IoError, "cannot open manifest in " + dir.string());
  std::vector<EpisodeRecord> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    EpisodeRecord ep;
    try {
      const json rec = json::parse(line);
      ep.id = rec.at("id");
      ep.split = rec.at("split");
      ep.poisoned = rec.at("poisoned");
      ep.ground_truth = rec.at("ground_truth").get<IndexSet>();
      ep.touched = rec.at("touched").get<IndexSet>();
      ep.scene = scene_from_json(rec.at("scene"));
      ep.image = btf::load(dir / rec.at("image").get<std::string>());
    } catch (const json::exception& e) {
      throw Error(Errc::CorruptFile, std::string("malformed manifest record: ") + e.what());
    }
    for (double& v : ep.image.storage()) v /= 255.0;
    const Canvas& c = ep.scene.canvas;
    if (ep.image.shape() != std::vector<std::size_t>{c.height, c.width, 3})
      throw Error(Errc::CorruptFile, "image shape disagrees with its scene record");
    out.push_back(std::move(ep));
  }
  return out;
}

}  // namespace vtg::testbed
