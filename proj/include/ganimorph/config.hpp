#pragma once

// Experiment configuration as flat, typed `section.key = value` text.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "datasets.hpp"
#include "error.hpp"
#include "losses.hpp"
#include "networks.hpp"

namespace ganimorph {

struct OptimizerConfig {
  double lr = 2e-4;
  double beta1 = 0.95;
  double beta2 = 0.999;

  bool operator==(const OptimizerConfig&) const = default;
};

/// Linear decay from `decay_start` to zero at `decay_end`.
struct ScheduleConfig {
  std::int64_t decay_start = 150000;
  std::int64_t decay_end = 300000;

  bool operator==(const ScheduleConfig&) const = default;
};

struct ExperimentConfig {
  std::string data_x;
  std::string data_y;
  int image_size = 128;

  nets::GeneratorSpec generator;
  nets::DiscriminatorSpec discriminator;

  loss::LossWeights weights;
  int ms_ssim_scales = 0;  // 0 picks the largest count that fits image_size
  bool ms_ssim_structure = true;
  double sln_beta = 0.99;
  double sln_epsilon = 1e-10;
  int sln_period = 200;

  data::AugmentConfig augment;  // crop_size follows image_size

  int batch_size = 16;
  std::int64_t iterations = 150000;
  int discriminator_every = 1;
  int epoch_size = 1000;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;

  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 5000;
  std::int64_t sample_every = 1000;
  std::int64_t eval_every = 0;  // 0 disables periodic cycle metrics

  bool operator==(const ExperimentConfig&) const = default;

  int resolved_ms_ssim_scales() const {
    return ms_ssim_scales > 0 ? ms_ssim_scales : loss::ms_ssim_max_scales(image_size);
  }

  loss::MsSsimOptions ms_ssim_options() const {
    loss::MsSsimOptions o;
    o.scales = resolved_ms_ssim_scales();
    o.structure = ms_ssim_structure;
    return o;
  }

  data::AugmentConfig augment_config() const {
    auto a = augment;
    a.crop_size = image_size;
    return a;
  }

  loss::SlnStates initial_sln() const { return loss::SlnStates::with(sln_beta, sln_epsilon, sln_period); }

  void validate() const {
    generator.validate();
    discriminator.validate();
    weights.validate();
    if (image_size < 8) throw ConfigError("data.image_size must be at least 8");
    if (image_size % generator.size_multiple() != 0)
      throw ConfigError("data.image_size must be a multiple of " + std::to_string(generator.size_multiple()));
    if (image_size % discriminator.effective_stride() != 0)
      throw ConfigError("data.image_size must be a multiple of the discriminator stride " +
                        std::to_string(discriminator.effective_stride()));
    const int scales = resolved_ms_ssim_scales();
    if (scales < 1 || scales > 5 || image_size < loss::ms_ssim_min_size(scales))
      throw ConfigError("loss.ms_ssim_scales: image_size " + std::to_string(image_size) +
                        " cannot hold the requested MS-SSIM pyramid");
    if (!(sln_beta > 0.0 && sln_beta < 1.0)) throw ConfigError("sln.beta must be in (0, 1)");
    if (!(sln_epsilon >= 0.0)) throw ConfigError("sln.epsilon must be non-negative");
    if (sln_period < 1) throw ConfigError("sln.period must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (iterations < 0) throw ConfigError("train.iterations must be non-negative");
    if (discriminator_every != 1 && discriminator_every != 2)
      throw ConfigError("train.discriminator_every must be 1 or 2");
    if (epoch_size < 1) throw ConfigError("train.epoch_size must be positive");
    if (!(optimizer.lr >= 0.0)) throw ConfigError("optimizer.lr must be non-negative");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
      throw ConfigError("optimizer betas must be in [0, 1)");
    if (schedule.decay_start < 0 || schedule.decay_end <= schedule.decay_start)
      throw ConfigError("schedule: decay_end must exceed decay_start >= 0");
    if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be positive");
    if (sample_every < 0 || eval_every < 0) throw ConfigError("sample/eval intervals must be non-negative");
  }
};

namespace config_detail {

inline std::string format_double(double v) {
  char buf[128];
  const double mag = std::abs(v);
  const auto fmt = v == 0.0 || (mag >= 1e-5 && mag < 1e15) ? std::chars_format::fixed : std::chars_format::scientific;
  auto res = std::to_chars(buf, buf + sizeof buf, v, fmt);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
    throw ConfigError("invalid value for '" + std::string(key) + "': '" + std::string(text) + "'");
  return value;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid boolean for '" + std::string(key) + "': '" + std::string(text) + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

template <typename Getter>
Field make_field(std::string key, Getter member_ref) {
  using Ref = decltype(member_ref(std::declval<ExperimentConfig&>()));
  using T = std::remove_reference_t<Ref>;
  Field f;
  f.key = key;
  f.get = [member_ref](const ExperimentConfig& c) -> std::string {
    auto& v = member_ref(const_cast<ExperimentConfig&>(c));
    if constexpr (std::is_same_v<T, bool>)
      return v ? "true" : "false";
    else if constexpr (std::is_same_v<T, double>)
      return format_double(v);
    else if constexpr (std::is_same_v<T, std::string>)
      return v;
    else if constexpr (std::is_same_v<T, nets::DiscriminatorVariant>)
      return std::string(nets::to_string(v));
    else
      return std::to_string(v);
  };
  f.set = [member_ref, key](ExperimentConfig& c, std::string_view text) {
    auto& v = member_ref(c);
    if constexpr (std::is_same_v<T, bool>)
      v = parse_bool(key, text);
    else if constexpr (std::is_same_v<T, std::string>)
      v = std::string(text);
    else if constexpr (std::is_same_v<T, nets::DiscriminatorVariant>)
      v = nets::parse_variant(text);
    else
      v = parse_number<T>(key, text);
  };
  return f;
}

}  // namespace config_detail

/// Every configurable key, in snapshot order.
inline const std::vector<config_detail::Field>& config_fields() {
  using config_detail::make_field;
  using C = ExperimentConfig;
  static const std::vector<config_detail::Field> fields = {
      make_field("data.x", [](C& c) -> auto& { return c.data_x; }),
      make_field("data.y", [](C& c) -> auto& { return c.data_y; }),
      make_field("data.image_size", [](C& c) -> auto& { return c.image_size; }),
      make_field("generator.base_filters", [](C& c) -> auto& { return c.generator.base_filters; }),
      make_field("generator.downsamples", [](C& c) -> auto& { return c.generator.downsamples; }),
      make_field("generator.residual_blocks", [](C& c) -> auto& { return c.generator.residual_blocks_per_scale; }),
      make_field("generator.scale_residual_blocks", [](C& c) -> auto& { return c.generator.scale_residual_blocks; }),
      make_field("discriminator.variant", [](C& c) -> auto& { return c.discriminator.variant; }),
      make_field("discriminator.base_filters", [](C& c) -> auto& { return c.discriminator.base_filters; }),
      make_field("discriminator.dilation_depth", [](C& c) -> auto& { return c.discriminator.dilation_block_depth; }),
      make_field("discriminator.output_stride", [](C& c) -> auto& { return c.discriminator.output_stride; }),
      make_field("discriminator.instance_norm", [](C& c) -> auto& { return c.discriminator.instance_norm; }),
      make_field("loss.gan", [](C& c) -> auto& { return c.weights.gan; }),
      make_field("loss.fm", [](C& c) -> auto& { return c.weights.fm; }),
      make_field("loss.cyc", [](C& c) -> auto& { return c.weights.cyc; }),
      make_field("loss.ss", [](C& c) -> auto& { return c.weights.ss; }),
      make_field("loss.l1", [](C& c) -> auto& { return c.weights.l1; }),
      make_field("loss.ms_ssim_scales", [](C& c) -> auto& { return c.ms_ssim_scales; }),
      make_field("loss.ms_ssim_structure", [](C& c) -> auto& { return c.ms_ssim_structure; }),
      make_field("sln.beta", [](C& c) -> auto& { return c.sln_beta; }),
      make_field("sln.epsilon", [](C& c) -> auto& { return c.sln_epsilon; }),
      make_field("sln.period", [](C& c) -> auto& { return c.sln_period; }),
      make_field("augment.rescale", [](C& c) -> auto& { return c.augment.rescale_factor; }),
      make_field("augment.max_rotation", [](C& c) -> auto& { return c.augment.max_rotation_deg; }),
      make_field("augment.flip", [](C& c) -> auto& { return c.augment.flip_horizontal; }),
      make_field("augment.jitter_lo", [](C& c) -> auto& { return c.augment.jitter_lo; }),
      make_field("augment.jitter_hi", [](C& c) -> auto& { return c.augment.jitter_hi; }),
      make_field("optimizer.lr", [](C& c) -> auto& { return c.optimizer.lr; }),
      make_field("optimizer.beta1", [](C& c) -> auto& { return c.optimizer.beta1; }),
      make_field("optimizer.beta2", [](C& c) -> auto& { return c.optimizer.beta2; }),
      make_field("schedule.decay_start", [](C& c) -> auto& { return c.schedule.decay_start; }),
      make_field("schedule.decay_end", [](C& c) -> auto& { return c.schedule.decay_end; }),
      make_field("train.batch_size", [](C& c) -> auto& { return c.batch_size; }),
      make_field("train.iterations", [](C& c) -> auto& { return c.iterations; }),
      make_field("train.discriminator_every", [](C& c) -> auto& { return c.discriminator_every; }),
      make_field("train.epoch_size", [](C& c) -> auto& { return c.epoch_size; }),
      make_field("train.seed", [](C& c) -> auto& { return c.seed; }),
      make_field("train.checkpoint_every", [](C& c) -> auto& { return c.checkpoint_every; }),
      make_field("train.sample_every", [](C& c) -> auto& { return c.sample_every; }),
      make_field("train.eval_every", [](C& c) -> auto& { return c.eval_every; }),
  };
  return fields;
}

inline void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& f : config_fields())
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

inline std::string get_config_value(const ExperimentConfig& cfg, std::string_view key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f.get(cfg);
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Applies one `key=value` override.
inline void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  set_config_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

/// Parses `key = value` lines; blank lines and lines starting with '#' are ignored.
inline void apply_config_text(ExperimentConfig& cfg, std::string_view text, std::string_view origin = "config") {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    const auto line = trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    try {
      apply_override(cfg, line);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void apply_config_file(ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

inline std::string to_config_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : config_fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

inline ExperimentConfig parse_config_text(std::string_view text) {
  ExperimentConfig cfg;
  apply_config_text(cfg, text);
  return cfg;
}

/// Named variants: `default`, `toy`, and the ablations `l1_only`, `no_fm`,
/// `patch_disc`, `fc_disc`.
inline void apply_preset(ExperimentConfig& cfg, std::string_view name) {
  if (name == "default") return;
  if (name == "toy") {
    // Rotation, rescaling and cropping would move the polygon off-centre or
    // rotate the lattice, breaking the pairing; horizontal flips keep it.
    cfg.image_size = 64;
    cfg.augment.rescale_factor = 1.0;
    cfg.augment.max_rotation_deg = 0.0;
    cfg.augment.jitter_lo = 1.0;
    cfg.augment.jitter_hi = 1.0;
    cfg.augment.flip_horizontal = true;
    cfg.iterations = 150000;
    cfg.discriminator_every = 1;
    return;
  }
  if (name == "l1_only") {
    cfg.weights.ss = 0.0;
    cfg.weights.l1 = 1.0;
    return;
  }
  if (name == "no_fm") {
    // Drop the feature matching share, keep the gan:cyc ratio.
    const double rest = cfg.weights.gan + cfg.weights.cyc;
    cfg.weights.gan /= rest;
    cfg.weights.cyc = 1.0 - cfg.weights.gan;
    cfg.weights.fm = 0.0;
    return;
  }
  if (name == "patch_disc") {
    cfg.discriminator.variant = nets::DiscriminatorVariant::patch;
    cfg.discriminator.base_filters = 64;
    return;
  }
  if (name == "fc_disc") {
    cfg.discriminator.variant = nets::DiscriminatorVariant::fully_connected;
    cfg.discriminator.base_filters = 64;
    return;
  }
  throw ConfigError("unknown preset '" + std::string(name) +
                    "' (expected default, toy, l1_only, no_fm, patch_disc or fc_disc)");
}

}  // namespace ganimorph
