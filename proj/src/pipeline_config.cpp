#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "vtg/error.hpp"
#include "vtg/pipeline.hpp"

namespace vtg::pipeline {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad(const std::string& key, const std::string& value) {
  throw Error(Errc::InvalidConfig, "invalid value '" + value + "' for key '" + key + "'");
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) bad(key, v);
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, v);
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on") return true;
  if (v == "false" || v == "off") return false;
  bad(key, v);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F f) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + f(xs[i]);
  return s;
}

struct Key {
  const char* name;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

#define VTG_DOUBLE(key, field) \
  Key{key, [](PipelineConfig& c, const std::string& v) { c.field = to_double(key, v); }, \
      [](const PipelineConfig& c) { return fmt(c.field); }}
#define VTG_SIZE(key, field) \
  Key{key, [](PipelineConfig& c, const std::string& v) { c.field = static_cast<std::size_t>(to_u64(key, v)); }, \
      [](const PipelineConfig& c) { return std::to_string(c.field); }}

const std::vector<Key>& keys() {
  using testbed::TriggerType;
  static const std::vector<Key> table{
      Key{"seed", [](PipelineConfig& c, const std::string& v) { c.seed = to_u64("seed", v); },
          [](const PipelineConfig& c) { return std::to_string(c.seed); }},
      Key{"tasks",
          [](PipelineConfig& c, const std::string& v) {
            c.tasks.clear();
            for (const auto& s : split_list(v)) c.tasks.push_back(static_cast<std::size_t>(to_u64("tasks", s)));
          },
          [](const PipelineConfig& c) { return join(c.tasks, [](std::size_t t) { return std::to_string(t); }); }},
      VTG_SIZE("episodes", episodes),
      VTG_DOUBLE("poison_rate", poison_rate),
      Key{"trigger_types",
          [](PipelineConfig& c, const std::string& v) {
            c.trigger_types.clear();
            for (const auto& s : split_list(v)) c.trigger_types.push_back(testbed::parse_trigger_type(s));
          },
          [](const PipelineConfig& c) {
            return join(c.trigger_types, [](TriggerType t) { return std::string(testbed::to_string(t)); });
          }},
      VTG_DOUBLE("view_fraction", view_fraction),
      VTG_DOUBLE("alpha", alpha),
      Key{"epsilon",
          [](PipelineConfig& c, const std::string& v) {
            if (v == "auto")
              c.epsilon.reset();
            else
              c.epsilon = to_double("epsilon", v);
          },
          [](const PipelineConfig& c) { return c.epsilon ? fmt(*c.epsilon) : std::string("auto"); }},
      Key{"threshold_mode",
          [](PipelineConfig& c, const std::string& v) {
            try {
              c.threshold_mode = fbl::parse_threshold_mode(v);
            } catch (const Error&) {
              bad("threshold_mode", v);
            }
          },
          [](const PipelineConfig& c) { return std::string(fbl::to_string(c.threshold_mode)); }},
      VTG_DOUBLE("reference_fraction", reference_fraction),
      VTG_SIZE("l_mid", l_mid),
      VTG_SIZE("gmm_k", gmm.k),
      VTG_DOUBLE("em_tol", gmm.tol),
      VTG_SIZE("em_max_iter", gmm.max_iter),
      VTG_SIZE("decoder_dp", decoder_dp),
      VTG_SIZE("train_steps", train.steps),
      VTG_SIZE("train_batch", train.batch),
      VTG_DOUBLE("train_lr", train.lr),
      VTG_DOUBLE("mask_min", train.mask_min),
      VTG_DOUBLE("mask_max", train.mask_max),
      Key{"train_loss",
          [](PipelineConfig& c, const std::string& v) {
            if (v == "full")
              c.train.loss = recon::LossKind::FullImage;
            else if (v == "masked")
              c.train.loss = recon::LossKind::MaskedOnly;
            else
              bad("train_loss", v);
          },
          [](const PipelineConfig& c) {
            return std::string(c.train.loss == recon::LossKind::FullImage ? "full" : "masked");
          }},
      Key{"purify_mode",
          [](PipelineConfig& c, const std::string& v) {
            if (v == "decoder")
              c.purify_mode = recon::PurifyMode::Decoder;
            else if (v == "composite")
              c.purify_mode = recon::PurifyMode::Composite;
            else if (v == "zero-fill")
              c.purify_mode = recon::PurifyMode::ZeroFill;
            else
              bad("purify_mode", v);
          },
          [](const PipelineConfig& c) {
            switch (c.purify_mode) {
              case recon::PurifyMode::Decoder: return std::string("decoder");
              case recon::PurifyMode::Composite: return std::string("composite");
              case recon::PurifyMode::ZeroFill: return std::string("zero-fill");
            }
            return std::string("?");
          }},
      Key{"purify_unconditional",
          [](PipelineConfig& c, const std::string& v) { c.purify_unconditional = to_bool("purify_unconditional", v); },
          [](const PipelineConfig& c) { return std::string(c.purify_unconditional ? "true" : "false"); }},
      VTG_SIZE("encoder_layers", encoder.layers),
      VTG_SIZE("encoder_heads", encoder.heads),
      VTG_SIZE("encoder_l_plant", encoder.l_plant),
      VTG_DOUBLE("encoder_beta", encoder.beta),
      VTG_DOUBLE("encoder_gamma", encoder.gamma),
      VTG_DOUBLE("encoder_mix", encoder.mix),
      VTG_DOUBLE("encoder_trigger_shift", encoder.trigger_shift),
      VTG_DOUBLE("encoder_luma_mix", encoder.luma_mix),
      VTG_DOUBLE("theta", policy.theta),
      VTG_DOUBLE("object_sensitivity", policy.object_sensitivity),
      VTG_SIZE("policy_probes", policy.probes),
      Key{"fbl",
          [](PipelineConfig& c, const std::string& v) {
            if (v == "on")
              c.fbl = FblMode::On;
            else if (v == "random")
              c.fbl = FblMode::Random;
            else
              bad("fbl", v);
          },
          [](const PipelineConfig& c) { return std::string(c.fbl == FblMode::On ? "on" : "random"); }},
      Key{"afm", [](PipelineConfig& c, const std::string& v) { c.afm = to_bool("afm", v); },
          [](const PipelineConfig& c) { return std::string(c.afm ? "on" : "off"); }},
      Key{"decoder",
          [](PipelineConfig& c, const std::string& v) {
            if (v == "on")
              c.decoder = DecoderMode::On;
            else if (v == "zero-fill")
              c.decoder = DecoderMode::ZeroFill;
            else
              bad("decoder", v);
          },
          [](const PipelineConfig& c) { return std::string(c.decoder == DecoderMode::On ? "on" : "zero-fill"); }},
      VTG_DOUBLE("random_fraction", random_fraction),
      Key{"sweep_view_fractions",
          [](PipelineConfig& c, const std::string& v) {
            c.sweep_view_fractions.clear();
            for (const auto& s : split_list(v)) c.sweep_view_fractions.push_back(to_double("sweep_view_fractions", s));
          },
          [](const PipelineConfig& c) { return join(c.sweep_view_fractions, fmt); }},
      Key{"sweep_poison_rates",
          [](PipelineConfig& c, const std::string& v) {
            c.sweep_poison_rates.clear();
            for (const auto& s : split_list(v)) c.sweep_poison_rates.push_back(to_double("sweep_poison_rates", s));
          },
          [](const PipelineConfig& c) { return join(c.sweep_poison_rates, fmt); }},
      Key{"sweep_trigger_types",
          [](PipelineConfig& c, const std::string& v) {
            c.sweep_trigger_types.clear();
            for (const auto& s : split_list(v)) c.sweep_trigger_types.push_back(testbed::parse_trigger_type(s));
          },
          [](const PipelineConfig& c) {
            return join(c.sweep_trigger_types, [](TriggerType t) { return std::string(testbed::to_string(t)); });
          }},
      VTG_SIZE("sweep_episodes", sweep_episodes),
  };
  return table;
}

#undef VTG_DOUBLE
#undef VTG_SIZE

}  // namespace

void validate(const PipelineConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(Errc::InvalidConfig, what);
  };
  require(!c.tasks.empty(), "task list is empty");
  for (std::size_t t : c.tasks) require(t < testbed::default_tasks().size(), "task id out of range");
  require(c.episodes > 0, "episodes must be positive");
  require(c.poison_rate >= 0.0 && c.poison_rate < 1.0, "poison_rate must lie in [0, 1)");
  require(!c.trigger_types.empty(), "trigger_types is empty");
  for (auto t : c.trigger_types) require(t != testbed::TriggerType::None, "trigger_types may not contain none");
  require(testbed::valid_view_fraction(c.view_fraction), "view_fraction must be one of 0.05, 0.10, 0.15, 0.20");
  require(c.alpha > 0.0 && c.alpha < 1.0, "alpha must lie in (0, 1)");
  require(!c.epsilon || *c.epsilon >= 0.0, "epsilon must be non-negative");
  require(c.reference_fraction > 0.0 && c.reference_fraction <= 1.0, "reference_fraction must lie in (0, 1]");
  require(c.l_mid <= c.encoder.layers, "l_mid exceeds the encoder depth");
  require(c.gmm.k >= 1 && c.gmm.tol > 0.0 && c.gmm.max_iter >= 1, "EM settings out of range");
  require(c.decoder_dp >= 1, "decoder_dp must be positive");
  require(c.train.batch >= 1, "train_batch must be positive");
  require(c.train.lr >= 0.0, "train_lr must be non-negative");
  require(c.train.mask_min >= 0.0 && c.train.mask_min <= c.train.mask_max && c.train.mask_max < 1.0,
          "mask range must satisfy 0 <= mask_min <= mask_max < 1");
  require(c.encoder.layers >= 1 && c.encoder.heads >= 1, "encoder needs at least one layer and head");
  require(c.encoder.l_plant >= 1 && c.encoder.l_plant <= c.encoder.layers, "encoder_l_plant out of range");
  require(c.policy.theta > 0.0, "theta must be positive");
  require(c.policy.probes >= 1, "policy_probes must be positive");
  require(c.random_fraction > 0.0 && c.random_fraction <= 1.0, "random_fraction must lie in (0, 1]");
  require(!c.sweep_view_fractions.empty() && !c.sweep_poison_rates.empty() && !c.sweep_trigger_types.empty(),
          "sweep grids must be nonempty");
  for (double f : c.sweep_view_fractions) require(testbed::valid_view_fraction(f), "sweep view fraction invalid");
  for (double r : c.sweep_poison_rates) require(r >= 0.0 && r < 1.0, "sweep poison rate out of range");
  for (auto t : c.sweep_trigger_types) require(t != testbed::TriggerType::None, "sweep trigger type none");
  require(c.sweep_episodes > 0, "sweep_episodes must be positive");
}

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(Errc::InvalidConfig, "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool known = false;
    for (const Key& k : keys())
      if (key == k.name) {
        k.set(cfg, value);
        known = true;
        break;
      }
    if (!known) throw Error(Errc::InvalidConfig, "unknown key '" + key + "'");
  }
  validate(cfg);
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const PipelineConfig& cfg) {
  std::string out;
  for (const Key& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace vtg::pipeline
