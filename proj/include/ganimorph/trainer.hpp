#pragma once

// Two-domain adversarial training: model bundle, optimizer schedule, one
// training step, checkpointing and the resumable run loop.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "config.hpp"
#include "datasets.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "image.hpp"
#include "losses.hpp"
#include "networks.hpp"
#include "random.hpp"

namespace ganimorph::train {

namespace fs = std::filesystem;

/// Honours GANIMORPH_DETERMINISTIC=1: single-threaded, deterministic kernels.
inline bool configure_determinism() {
  const char* env = std::getenv("GANIMORPH_DETERMINISTIC");
  const bool on = env && std::string(env) == "1";
  if (on) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, false);
  }
  return on;
}

/// Learning rate for the step with 1-based index `iteration`.
inline double learning_rate_at(const ExperimentConfig& cfg, std::int64_t iteration) {
  const auto& s = cfg.schedule;
  if (iteration <= s.decay_start) return cfg.optimizer.lr;
  if (iteration >= s.decay_end) return 0.0;
  return cfg.optimizer.lr * double(s.decay_end - iteration) / double(s.decay_end - s.decay_start);
}

struct MetricsRecord {
  std::int64_t iteration = 0;
  loss::ObjectiveValues objective;
  std::optional<double> d_loss;  // set on discriminator update steps
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since the run (or resume) started
  std::optional<eval::CycleSummary> cycle;

  /// Equality of everything except wall time.
  bool same_values(const MetricsRecord& o) const {
    auto cyc_eq = [](const std::optional<eval::CycleSummary>& a, const std::optional<eval::CycleSummary>& b) {
      if (a.has_value() != b.has_value()) return false;
      if (!a) return true;
      return a->ms_ssim_x == b->ms_ssim_x && a->ms_ssim_y == b->ms_ssim_y && a->l1_x == b->l1_x &&
             a->l1_y == b->l1_y;
    };
    return iteration == o.iteration && objective == o.objective && d_loss == o.d_loss && lr == o.lr &&
           cyc_eq(cycle, o.cycle);
  }
};

inline nlohmann::json to_json(const MetricsRecord& r) {
  const auto& v = r.objective;
  nlohmann::json j{{"iteration", r.iteration},
                   {"gan_raw", v.gan_raw},
                   {"fm_raw", v.fm_raw},
                   {"ss_raw", v.ss_raw},
                   {"l1_raw", v.l1_raw},
                   {"cyc_raw", v.cyc_raw},
                   {"gan_effective", v.gan_effective},
                   {"fm_effective", v.fm_effective},
                   {"cyc_effective", v.cyc_effective},
                   {"total", v.total},
                   {"d_loss", r.d_loss ? nlohmann::json(*r.d_loss) : nlohmann::json(nullptr)},
                   {"lr", r.lr},
                   {"wall_time", r.wall_time}};
  if (r.cycle) {
    j["cycle_ms_ssim_x"] = r.cycle->ms_ssim_x;
    j["cycle_ms_ssim_y"] = r.cycle->ms_ssim_y;
    j["cycle_l1_x"] = r.cycle->l1_x;
    j["cycle_l1_y"] = r.cycle->l1_y;
  }
  return j;
}

inline MetricsRecord metrics_from_json(const nlohmann::json& j) {
  MetricsRecord r;
  j.at("iteration").get_to(r.iteration);
  auto& v = r.objective;
  j.at("gan_raw").get_to(v.gan_raw);
  j.at("fm_raw").get_to(v.fm_raw);
  j.at("ss_raw").get_to(v.ss_raw);
  j.at("l1_raw").get_to(v.l1_raw);
  j.at("cyc_raw").get_to(v.cyc_raw);
  j.at("gan_effective").get_to(v.gan_effective);
  j.at("fm_effective").get_to(v.fm_effective);
  j.at("cyc_effective").get_to(v.cyc_effective);
  j.at("total").get_to(v.total);
  if (!j.at("d_loss").is_null()) r.d_loss = j.at("d_loss").get<double>();
  j.at("lr").get_to(r.lr);
  j.at("wall_time").get_to(r.wall_time);
  if (j.contains("cycle_ms_ssim_x")) {
    eval::CycleSummary c;
    j.at("cycle_ms_ssim_x").get_to(c.ms_ssim_x);
    j.at("cycle_ms_ssim_y").get_to(c.ms_ssim_y);
    j.at("cycle_l1_x").get_to(c.l1_x);
    j.at("cycle_l1_y").get_to(c.l1_y);
    r.cycle = c;
  }
  return r;
}

inline std::vector<MetricsRecord> read_metrics(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read metrics log " + file.string());
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(metrics_from_json(nlohmann::json::parse(line)));
  return out;
}

// ---------------------------------------------------------------------------
// Model bundle

inline void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.set_requires_grad(on);
}

inline void set_learning_rate(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

inline std::unique_ptr<torch::optim::Adam> make_adam(std::vector<torch::Tensor> params, const OptimizerConfig& o) {
  return std::make_unique<torch::optim::Adam>(
      std::move(params), torch::optim::AdamOptions(o.lr).betas({o.beta1, o.beta2}));
}

/// G: X -> Y, F: Y -> X, D_X judges domain X, D_Y judges domain Y.
struct ModelBundle {
  nets::GeneratorSpec generator_spec;
  nets::DiscriminatorSpec discriminator_spec;
  nets::Generator g{nullptr};
  nets::Generator f{nullptr};
  nets::Discriminator dx{nullptr};
  nets::Discriminator dy{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g;
  std::unique_ptr<torch::optim::Adam> opt_d;
  std::int64_t iteration = 0;
  loss::SlnStates sln;

  /// Fresh networks; weights drawn from the torch generator seeded with `seed`.
  static ModelBundle create(const ExperimentConfig& cfg) {
    cfg.generator.validate();
    cfg.discriminator.validate();
    torch::manual_seed(cfg.seed);
    ModelBundle b;
    b.generator_spec = cfg.generator;
    b.discriminator_spec = cfg.discriminator;
    b.g = nets::build_generator(cfg.generator);
    b.f = nets::build_generator(cfg.generator);
    b.dx = nets::build_discriminator(cfg.discriminator);
    b.dy = nets::build_discriminator(cfg.discriminator);
    b.attach_optimizers(cfg.optimizer);
    b.sln = cfg.initial_sln();
    return b;
  }

  void attach_optimizers(const OptimizerConfig& o) {
    auto gp = g->parameters();
    for (auto& p : f->parameters()) gp.push_back(p);
    auto dp = dx->parameters();
    for (auto& p : dy->parameters()) dp.push_back(p);
    opt_g = make_adam(std::move(gp), o);
    opt_d = make_adam(std::move(dp), o);
  }

  eval::Translator translator(bool x_to_y) const {
    auto net = x_to_y ? g : f;
    return [net](const torch::Tensor& x) mutable {
      torch::NoGradGuard guard;
      return net->forward(x);
    };
  }
};

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json spec_json(const nets::GeneratorSpec& s) {
  return {{"base_filters", s.base_filters},
          {"downsamples", s.downsamples},
          {"residual_blocks_per_scale", s.residual_blocks_per_scale},
          {"scale_residual_blocks", s.scale_residual_blocks}};
}

inline nets::GeneratorSpec generator_spec_from(const nlohmann::json& j) {
  nets::GeneratorSpec s;
  j.at("base_filters").get_to(s.base_filters);
  j.at("downsamples").get_to(s.downsamples);
  j.at("residual_blocks_per_scale").get_to(s.residual_blocks_per_scale);
  j.at("scale_residual_blocks").get_to(s.scale_residual_blocks);
  return s;
}

inline nlohmann::json spec_json(const nets::DiscriminatorSpec& s) {
  return {{"variant", std::string(nets::to_string(s.variant))},
          {"base_filters", s.base_filters},
          {"dilation_block_depth", s.dilation_block_depth},
          {"output_stride", s.output_stride},
          {"instance_norm", s.instance_norm}};
}

inline nets::DiscriminatorSpec discriminator_spec_from(const nlohmann::json& j) {
  nets::DiscriminatorSpec s;
  s.variant = nets::parse_variant(j.at("variant").get<std::string>());
  j.at("base_filters").get_to(s.base_filters);
  j.at("dilation_block_depth").get_to(s.dilation_block_depth);
  j.at("output_stride").get_to(s.output_stride);
  j.at("instance_norm").get_to(s.instance_norm);
  return s;
}

inline nlohmann::json sln_json(const loss::SlnState& s) {
  return {{"accumulator", s.accumulator}, {"beta", s.beta}, {"epsilon", s.epsilon},
          {"period", s.period},           {"counter", s.counter}};
}

inline loss::SlnState sln_from(const nlohmann::json& j) {
  loss::SlnState s;
  j.at("accumulator").get_to(s.accumulator);
  j.at("beta").get_to(s.beta);
  j.at("epsilon").get_to(s.epsilon);
  j.at("period").get_to(s.period);
  j.at("counter").get_to(s.counter);
  return s;
}

inline fs::path checkpoint_dir(const fs::path& run_dir, std::int64_t iteration) {
  return run_dir / "checkpoints" / ("iter_" + std::to_string(iteration));
}

template <typename T>
void save_archive(const T& object, const fs::path& path) {
  try {
    torch::save(object, path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what_without_backtrace());
  }
}

template <typename T>
void load_archive(T& object, const fs::path& path) {
  try {
    torch::load(object, path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot read " + path.string() + ": " + e.what_without_backtrace());
  }
}

// Adam state keyed by parameter position. The stock optimizer archive keys
// state by tensor address, which changes on every load.
inline void save_adam(const torch::optim::Adam& opt, const fs::path& path) {
  torch::serialize::OutputArchive ar;
  const auto& groups = opt.param_groups();
  ar.write("groups", c10::IValue(static_cast<std::int64_t>(groups.size())));
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto prefix = "g" + std::to_string(gi) + ".";
    const auto& o = static_cast<const torch::optim::AdamOptions&>(groups[gi].options());
    ar.write(prefix + "lr", c10::IValue(o.lr()));
    ar.write(prefix + "beta1", c10::IValue(std::get<0>(o.betas())));
    ar.write(prefix + "beta2", c10::IValue(std::get<1>(o.betas())));
    ar.write(prefix + "eps", c10::IValue(o.eps()));
    const auto& params = groups[gi].params();
    ar.write(prefix + "params", c10::IValue(static_cast<std::int64_t>(params.size())));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto it = opt.state().find(params[pi].unsafeGetTensorImpl());
      if (it == opt.state().end()) continue;
      const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
      const auto key = prefix + "p" + std::to_string(pi) + ".";
      ar.write(key + "step", c10::IValue(st.step()));
      ar.write(key + "exp_avg", st.exp_avg(), true);
      ar.write(key + "exp_avg_sq", st.exp_avg_sq(), true);
    }
  }
  try {
    ar.save_to(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what_without_backtrace());
  }
}

inline void load_adam(torch::optim::Adam& opt, const fs::path& path) {
  torch::serialize::InputArchive ar;
  try {
    ar.load_from(path.string());
    auto& groups = opt.param_groups();
    c10::IValue v;
    ar.read("groups", v);
    if (v.toInt() != static_cast<std::int64_t>(groups.size()))
      throw IoError("optimizer archive " + path.string() + " has a different group layout");
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto prefix = "g" + std::to_string(gi) + ".";
      auto& o = static_cast<torch::optim::AdamOptions&>(groups[gi].options());
      c10::IValue lr, b1, b2, eps, count;
      ar.read(prefix + "lr", lr);
      ar.read(prefix + "beta1", b1);
      ar.read(prefix + "beta2", b2);
      ar.read(prefix + "eps", eps);
      o.lr(lr.toDouble()).betas({b1.toDouble(), b2.toDouble()}).eps(eps.toDouble());
      const auto& params = groups[gi].params();
      ar.read(prefix + "params", count);
      if (count.toInt() != static_cast<std::int64_t>(params.size()))
        throw IoError("optimizer archive " + path.string() + " has a different parameter count");
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto key = prefix + "p" + std::to_string(pi) + ".";
        c10::IValue step;
        if (!ar.try_read(key + "step", step)) continue;
        auto st = std::make_unique<torch::optim::AdamParamState>();
        torch::Tensor m, m2;
        ar.read(key + "exp_avg", m, true);
        ar.read(key + "exp_avg_sq", m2, true);
        st->step(step.toInt());
        st->exp_avg(m);
        st->exp_avg_sq(m2);
        opt.state()[params[pi].unsafeGetTensorImpl()] = std::move(st);
      }
    }
  } catch (const c10::Error& e) {
    throw IoError("cannot read " + path.string() + ": " + e.what_without_backtrace());
  }
}

/// Directory with meta.json, one archive per network and per optimizer.
inline void save_checkpoint(const ModelBundle& b, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  nlohmann::json meta{{"format", 1},
                      {"iteration", b.iteration},
                      {"generator", spec_json(b.generator_spec)},
                      {"discriminator", spec_json(b.discriminator_spec)},
                      {"sln", {{"gan", sln_json(b.sln.gan)}, {"fm", sln_json(b.sln.fm)}, {"cyc", sln_json(b.sln.cyc)}}}};
  save_archive(b.g, dir / "G.pt");
  save_archive(b.f, dir / "F.pt");
  save_archive(b.dx, dir / "DX.pt");
  save_archive(b.dy, dir / "DY.pt");
  save_adam(*b.opt_g, dir / "opt_g.pt");
  save_adam(*b.opt_d, dir / "opt_d.pt");
  std::ofstream out(dir / "meta.json", std::ios::binary | std::ios::trunc);
  out << meta.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
}

inline nlohmann::json read_meta(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw IoError("not a checkpoint (missing meta.json): " + dir.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint metadata in " + dir.string() + ": " + e.what());
  }
}

/// Restores a full bundle. Network specs in the checkpoint must equal the
/// configured ones before any weight is read.
inline ModelBundle load_checkpoint(const fs::path& dir, const ExperimentConfig& cfg) {
  const auto meta = read_meta(dir);
  const auto gspec = generator_spec_from(meta.at("generator"));
  const auto dspec = discriminator_spec_from(meta.at("discriminator"));
  if (!(gspec == cfg.generator)) throw ConfigError("checkpoint generator spec differs from the configuration");
  if (!(dspec == cfg.discriminator))
    throw ConfigError("checkpoint discriminator spec differs from the configuration");
  ModelBundle b;
  b.generator_spec = gspec;
  b.discriminator_spec = dspec;
  b.g = nets::build_generator(gspec);
  b.f = nets::build_generator(gspec);
  b.dx = nets::build_discriminator(dspec);
  b.dy = nets::build_discriminator(dspec);
  load_archive(b.g, dir / "G.pt");
  load_archive(b.f, dir / "F.pt");
  load_archive(b.dx, dir / "DX.pt");
  load_archive(b.dy, dir / "DY.pt");
  b.attach_optimizers(cfg.optimizer);
  load_adam(*b.opt_g, dir / "opt_g.pt");
  load_adam(*b.opt_d, dir / "opt_d.pt");
  meta.at("iteration").get_to(b.iteration);
  const auto& sln = meta.at("sln");
  b.sln = {sln_from(sln.at("gan")), sln_from(sln.at("fm")), sln_from(sln.at("cyc"))};
  return b;
}

struct GeneratorPair {
  nets::Generator g{nullptr};
  nets::Generator f{nullptr};
  std::int64_t iteration = 0;
};

/// Inference-only load of both generators.
inline GeneratorPair load_generators(const fs::path& dir) {
  const auto meta = read_meta(dir);
  const auto gspec = generator_spec_from(meta.at("generator"));
  GeneratorPair p{nets::build_generator(gspec), nets::build_generator(gspec), meta.at("iteration").get<std::int64_t>()};
  load_archive(p.g, dir / "G.pt");
  load_archive(p.f, dir / "F.pt");
  return p;
}

/// Newest `checkpoints/iter_<k>` with a complete meta.json, if any.
inline std::optional<fs::path> latest_checkpoint(const fs::path& run_dir) {
  std::error_code ec;
  const auto root = run_dir / "checkpoints";
  if (!fs::is_directory(root, ec)) return std::nullopt;
  std::optional<fs::path> best;
  std::int64_t best_iter = -1;
  for (const auto& e : fs::directory_iterator(root, ec)) {
    const auto name = e.path().filename().string();
    if (name.rfind("iter_", 0) != 0 || !fs::exists(e.path() / "meta.json")) continue;
    try {
      const auto k = std::stoll(name.substr(5));
      if (k > best_iter) best_iter = k, best = e.path();
    } catch (const std::exception&) {
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Training step

struct StepBatches {
  torch::Tensor x_gen, x_disc;  // domain X, disjoint samples
  torch::Tensor y_gen, y_disc;  // domain Y, disjoint samples
};

/// One generator update of G and F on the total objective and, every
/// `discriminator_every` steps, one discriminator update of D_X and D_Y.
inline MetricsRecord train_step(ModelBundle& b, const StepBatches& batch, const ExperimentConfig& cfg) {
  const std::int64_t it = b.iteration + 1;
  const double lr = learning_rate_at(cfg, it);
  set_learning_rate(*b.opt_g, lr);
  set_learning_rate(*b.opt_d, lr);
  const auto ms_opts = cfg.ms_ssim_options();

  MetricsRecord rec;
  rec.iteration = it;
  rec.lr = lr;

  // Generator update. Discriminator weights are frozen so no gradient lands on them.
  set_requires_grad(*b.dx, false);
  set_requires_grad(*b.dy, false);
  {
    auto fake_y = b.g->forward(batch.x_gen);
    auto rec_x = b.f->forward(fake_y);
    auto fake_x = b.f->forward(batch.y_gen);
    auto rec_y = b.g->forward(fake_x);

    nets::FeatureTaps real_y_taps, real_x_taps;
    {
      torch::NoGradGuard guard;
      real_y_taps = b.dy->forward(batch.y_gen);
      real_x_taps = b.dx->forward(batch.x_gen);
    }
    auto fake_y_taps = b.dy->forward(fake_y);
    auto fake_x_taps = b.dx->forward(fake_x);

    loss::LossTerms terms;
    terms.gan = loss::gan_loss(real_y_taps.output, fake_y_taps.output).g_loss +
                loss::gan_loss(real_x_taps.output, fake_x_taps.output).g_loss;
    terms.fm = loss::feature_matching_loss(real_y_taps, fake_y_taps) +
               loss::feature_matching_loss(real_x_taps, fake_x_taps);
    auto cyc = loss::cyclic_loss(batch.x_gen, rec_x, batch.y_gen, rec_y, cfg.weights, ms_opts);
    terms.ss = cyc.ss;
    terms.l1 = cyc.l1;

    loss::Objective obj;
    try {
      obj = loss::total_objective(terms, cfg.weights, b.sln);
    } catch (const NumericError& e) {
      set_requires_grad(*b.dx, true);
      set_requires_grad(*b.dy, true);
      throw NumericError("iteration " + std::to_string(it) + ": " + e.what());
    }
    b.opt_g->zero_grad();
    obj.total.backward();
    b.opt_g->step();
    rec.objective = obj.values;
  }
  set_requires_grad(*b.dx, true);
  set_requires_grad(*b.dy, true);

  if (it % cfg.discriminator_every == 0) {
    torch::Tensor fake_y, fake_x;
    {
      torch::NoGradGuard guard;
      fake_y = b.g->forward(batch.x_disc);
      fake_x = b.f->forward(batch.y_disc);
    }
    auto d_loss = loss::gan_loss(b.dy->forward(batch.y_disc).output, b.dy->forward(fake_y).output).d_loss +
                  loss::gan_loss(b.dx->forward(batch.x_disc).output, b.dx->forward(fake_x).output).d_loss;
    const double value = d_loss.item<double>();
    if (!std::isfinite(value))
      throw NumericError("iteration " + std::to_string(it) + ": non-finite discriminator loss " +
                         std::to_string(value) + " (generator terms gan=" + std::to_string(rec.objective.gan_raw) +
                         " fm=" + std::to_string(rec.objective.fm_raw) + " cyc=" +
                         std::to_string(rec.objective.cyc_raw) + ")");
    b.opt_d->zero_grad();
    d_loss.backward();
    b.opt_d->step();
    rec.d_loss = value;
  }
  b.iteration = it;
  return rec;
}

// ---------------------------------------------------------------------------
// Run loop

/// Rows: x | G(x) | F(G(x)) | y | F(y) | G(F(y)), one column per sample.
inline RgbImage sample_grid(ModelBundle& b, const torch::Tensor& xs, const torch::Tensor& ys, int columns = 4) {
  torch::NoGradGuard guard;
  const auto n = std::min<int64_t>({columns, xs.size(0), ys.size(0)});
  auto x = xs.slice(0, 0, n);
  auto y = ys.slice(0, 0, n);
  auto gx = b.g->forward(x);
  auto fgx = b.f->forward(gx);
  auto fy = b.f->forward(y);
  auto gfy = b.g->forward(fy);
  std::vector<RgbImage> tiles;
  for (const auto& row : {x, gx, fgx, y, fy, gfy})
    for (int64_t i = 0; i < n; ++i) tiles.push_back(to_image(row[i]));
  return tile_grid(tiles, static_cast<int>(n));
}

struct TrainOptions {
  const std::atomic<bool>* stop = nullptr;  // checked between steps
  std::ostream* progress = nullptr;         // human-readable progress lines
  std::int64_t progress_every = 100;
};

/// Keeps only records with iteration <= `last`.
inline void truncate_metrics(const fs::path& file, std::int64_t last) {
  std::vector<std::string> keep;
  {
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (nlohmann::json::parse(line).at("iteration").get<std::int64_t>() <= last) keep.push_back(line);
    }
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

/// Fixed evaluation images used for periodic cycle metrics.
inline std::vector<torch::Tensor> probe_set(const data::ImageFolder& folder, int image_size, std::size_t n = 8) {
  std::vector<torch::Tensor> out;
  for (std::size_t i = 0; i < std::min(n, folder.size()); ++i) {
    auto t = to_tensor(folder.image(i));
    if (t.size(1) != image_size || t.size(2) != image_size)
      t = torch::nn::functional::interpolate(
              t.unsqueeze(0), torch::nn::functional::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{image_size, image_size})
                                  .mode(torch::kBilinear)
                                  .align_corners(false))
              .squeeze(0);
    out.push_back(t);
  }
  return out;
}

/// Runs (or resumes) training into `run_dir`:
///   config.snapshot, checkpoints/iter_<k>/, samples/iter_<k>.png, metrics.log
inline fs::path train(const ExperimentConfig& cfg, const fs::path& run_dir, const TrainOptions& opts = {}) {
  cfg.validate();
  for (const auto& d : {run_dir, run_dir / "checkpoints", run_dir / "samples"}) {
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw IoError("cannot create " + d.string() + ": " + ec.message());
  }
  {
    std::ofstream snap(run_dir / "config.snapshot", std::ios::binary | std::ios::trunc);
    snap << to_config_text(cfg);
    if (!snap) throw IoError("cannot write " + (run_dir / "config.snapshot").string());
  }

  const auto xs = data::load_image_folder(cfg.data_x);
  const auto ys = data::load_image_folder(cfg.data_y);
  const auto aug = cfg.augment_config();
  data::BatchStream stream_x(xs.size(), cfg.batch_size, substream_seed(cfg.seed, 101), cfg.epoch_size);
  data::BatchStream stream_y(ys.size(), cfg.batch_size, substream_seed(cfg.seed, 102), cfg.epoch_size);

  const auto metrics_path = run_dir / "metrics.log";
  ModelBundle bundle;
  if (auto latest = latest_checkpoint(run_dir)) {
    bundle = load_checkpoint(*latest, cfg);
    if (fs::exists(metrics_path)) truncate_metrics(metrics_path, bundle.iteration);
    stream_x.skip(static_cast<std::uint64_t>(bundle.iteration));
    stream_y.skip(static_cast<std::uint64_t>(bundle.iteration));
  } else {
    bundle = ModelBundle::create(cfg);
    save_checkpoint(bundle, checkpoint_dir(run_dir, 0));
    std::ofstream(metrics_path, std::ios::trunc);
  }

  std::vector<torch::Tensor> probe_x, probe_y;
  if (cfg.eval_every > 0) {
    probe_x = probe_set(xs, cfg.image_size);
    probe_y = probe_set(ys, cfg.image_size);
  }

  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::app);
  if (!metrics) throw IoError("cannot append to " + metrics_path.string());
  const auto started = std::chrono::steady_clock::now();
  std::int64_t last_saved = bundle.iteration;

  while (bundle.iteration < cfg.iterations) {
    if (opts.stop && opts.stop->load()) break;
    const auto px = stream_x.next_pair();
    const auto py = stream_y.next_pair();
    StepBatches batch{data::make_batch(xs, px.gen, aug, stream_x.seed(), px.step, 0),
                      data::make_batch(xs, px.disc, aug, stream_x.seed(), px.step, 1),
                      data::make_batch(ys, py.gen, aug, stream_y.seed(), py.step, 0),
                      data::make_batch(ys, py.disc, aug, stream_y.seed(), py.step, 1)};
    auto rec = train_step(bundle, batch, cfg);
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    const auto it = bundle.iteration;

    if (cfg.eval_every > 0 && it % cfg.eval_every == 0)
      rec.cycle = eval::cycle_metrics(bundle.translator(true), bundle.translator(false), probe_x, probe_y,
                                      cfg.ms_ssim_options());
    metrics << to_json(rec).dump() << '\n';
    metrics.flush();

    if (cfg.sample_every > 0 && it % cfg.sample_every == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "iter_%lld.png", static_cast<long long>(it));
      write_png(run_dir / "samples" / name, sample_grid(bundle, batch.x_gen, batch.y_gen));
    }
    if (it % cfg.checkpoint_every == 0) {
      save_checkpoint(bundle, checkpoint_dir(run_dir, it));
      last_saved = it;
    }
    if (opts.progress && opts.progress_every > 0 && it % opts.progress_every == 0)
      *opts.progress << "iteration " << it << "/" << cfg.iterations << " total " << rec.objective.total
                     << " cyc " << rec.objective.cyc_raw << '\n';
  }
  if (bundle.iteration != last_saved) save_checkpoint(bundle, checkpoint_dir(run_dir, bundle.iteration));
  return run_dir;
}

// ---------------------------------------------------------------------------
// Inference

/// Translates images with a checkpoint's generator, in order, 16 at a time.
inline std::vector<RgbImage> translate(const fs::path& checkpoint, std::span<const RgbImage> images,
                                       eval::Direction direction) {
  auto pair = load_generators(checkpoint);
  auto net = direction == eval::Direction::x_to_y ? pair.g : pair.f;
  torch::NoGradGuard guard;
  std::vector<RgbImage> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += 16) {
    const auto end = std::min(images.size(), start + 16);
    auto batch = stack_images(images.subspan(start, end - start));
    auto result = net->forward(batch);
    for (int64_t k = 0; k < result.size(0); ++k) out.push_back(to_image(result[k]));
  }
  return out;
}

}  // namespace ganimorph::train
