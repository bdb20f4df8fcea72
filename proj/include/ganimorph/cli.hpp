#pragma once

// Command-line front end: gen-toy, train, eval-toy, translate, show-config.
// Metrics and records go to files; stdout carries only short human summaries.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "config.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "image.hpp"
#include "toy_data.hpp"
#include "trainer.hpp"

namespace ganimorph::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  ok = 0,
  internal = 1,
  usage = 2,
  config = 3,
  io = 4,
  validation = 5,
  shape = 6,
  numeric = 7,
};

inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::validation: return validation;
    case ErrorCategory::shape: return shape;
    case ErrorCategory::config: return config;
    case ErrorCategory::io: return io;
    case ErrorCategory::numeric: return numeric;
  }
  return internal;
}

inline std::atomic<bool> interrupt_requested{false};

inline void on_interrupt(int) { interrupt_requested.store(true); }

struct ConfigArgs {
  std::string file;
  std::string preset;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  ExperimentConfig resolve() const {
    ExperimentConfig cfg;
    if (!preset.empty()) apply_preset(cfg, preset);
    if (!file.empty()) apply_config_file(cfg, file);
    for (const auto& o : overrides) apply_override(cfg, o);
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

inline void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.file, "config file (key = value lines)");
  cmd->add_option("--preset", a.preset, "default | toy | l1_only | no_fm | patch_disc | fc_disc");
  cmd->add_option("--seed", a.seed, "override train.seed");
  cmd->add_option("overrides", a.overrides, "key=value overrides applied after the file");
}

inline std::vector<fs::path> list_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && data::has_image_extension(e.path())) found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  return files;
}

/// Parses `args` (without the program name) and runs the subcommand.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ganimorph: unpaired image translation with dilated discriminators"};
  app.require_subcommand(1);

  int n = 100;
  std::uint64_t toy_seed = 0;
  int toy_size = 64;
  std::string toy_out;
  auto* gen = app.add_subcommand("gen-toy", "generate the paired polygon toy dataset");
  gen->add_option("--n", n, "number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--seed", toy_seed, "dataset seed");
  gen->add_option("--size", toy_size, "image size in pixels")->check(CLI::Range(16, 4096));
  gen->add_option("--out", toy_out, "output directory")->required();

  ConfigArgs train_args;
  std::string run_dir;
  auto* train_cmd = app.add_subcommand("train", "train G, F, D_X and D_Y");
  add_config_options(train_cmd, train_args);
  train_cmd->add_option("--run-dir", run_dir, "run directory (resumed if it holds checkpoints)")->required();

  std::string checkpoint, eval_data, eval_out, direction = "y2x";
  int limit = 0;
  auto* eval_cmd = app.add_subcommand("eval-toy", "score translated toy images by directed Hausdorff distance");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval_cmd->add_option("--data", eval_data, "toy dataset directory with manifest.jsonl")->required();
  eval_cmd->add_option("--direction", direction, "x2y (regular to deformed) or y2x");
  eval_cmd->add_option("--limit", limit, "evaluate only the first N samples (0 = all)");
  eval_cmd->add_option("--out", eval_out, "output directory for records, table and triptychs")->required();

  std::string tr_checkpoint, tr_direction = "x2y", tr_out;
  std::vector<std::string> tr_inputs;
  auto* tr = app.add_subcommand("translate", "translate images with a checkpoint");
  tr->add_option("--checkpoint", tr_checkpoint, "checkpoint directory")->required();
  tr->add_option("--direction", tr_direction, "x2y or y2x");
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("inputs", tr_inputs, "image files or directories")->required();

  ConfigArgs show_args;
  auto* show = app.add_subcommand("show-config", "print the fully resolved configuration");
  add_config_options(show, show_args);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << e.what() << "\n";
    return usage;
  }

  try {
    train::configure_determinism();
    if (*gen) {
      const auto records = toy::generate_dataset(n, toy_seed, toy_out, toy_size);
      out << "wrote " << records.size() << " pairs to " << toy_out << "\n";
    } else if (*show) {
      out << to_config_text(show_args.resolve());
    } else if (*train_cmd) {
      const auto cfg = train_args.resolve();
      cfg.validate();
      interrupt_requested.store(false);
      auto previous = std::signal(SIGINT, on_interrupt);
      train::TrainOptions opts;
      opts.stop = &interrupt_requested;
      train::train(cfg, run_dir, opts);
      std::signal(SIGINT, previous);
      if (interrupt_requested.load())
        out << "interrupted; latest state saved under " << (fs::path(run_dir) / "checkpoints").string() << "\n";
      else
        out << "finished " << cfg.iterations << " iterations in " << run_dir << "\n";
    } else if (*eval_cmd) {
      const auto dir = eval::parse_direction(direction);
      auto pair = train::load_generators(checkpoint);
      auto net = dir == eval::Direction::x_to_y ? pair.g : pair.f;
      eval::Translator translate = [net](const torch::Tensor& x) mutable { return net->forward(x); };
      std::vector<RgbImage> outputs;
      const auto summary = eval::evaluate_toy(translate, eval_data, dir, limit, 16, &outputs);

      fs::create_directories(fs::path(eval_out) / "triptychs");
      std::ofstream records(fs::path(eval_out) / "records.jsonl", std::ios::binary | std::ios::trunc);
      records << eval::summary_records(summary);
      std::ofstream table(fs::path(eval_out) / "summary.txt", std::ios::binary | std::ios::trunc);
      table << eval::summary_table(summary);
      if (!records || !table) throw IoError("cannot write evaluation output under " + eval_out);

      const auto manifest = toy::read_manifest(eval_data);
      for (std::size_t i = 0; i < outputs.size(); ++i) {
        const auto& r = manifest[i];
        const bool to_y = dir == eval::Direction::x_to_y;
        std::vector<RgbImage> tiles{read_image(fs::path(eval_data) / (to_y ? r.x_file : r.y_file)), outputs[i],
                                    to_y ? toy::render_domain_y(r.spec) : toy::render_domain_x(r.spec)};
        char name[32];
        std::snprintf(name, sizeof name, "%06d.png", r.index);
        write_png(fs::path(eval_out) / "triptychs" / name, tile_grid(tiles, 3));
      }
      out << eval::summary_table(summary);
    } else if (*tr) {
      const auto files = list_inputs(tr_inputs);
      std::vector<RgbImage> images;
      for (const auto& f : files) {
        auto img = read_image(f);
        if (img.pixels.empty()) throw IoError("cannot decode " + f.string());
        images.push_back(std::move(img));
      }
      const auto results = train::translate(tr_checkpoint, images, eval::parse_direction(tr_direction));
      fs::create_directories(tr_out);
      for (std::size_t i = 0; i < results.size(); ++i)
        write_png(fs::path(tr_out) / (files[i].stem().string() + ".png"), results[i]);
      out << "translated " << results.size() << " images to " << tr_out << "\n";
    }
  } catch (const Error& e) {
    err << "error[" << category_name(e.category()) << "]: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    err << "error[io]: " << e.what() << "\n";
    return io;
  } catch (const c10::Error& e) {
    err << "error[internal]: " << e.what_without_backtrace() << "\n";
    return internal;
  } catch (const std::exception& e) {
    err << "error[internal]: " << e.what() << "\n";
    return internal;
  }
  return ok;
}

}  // namespace ganimorph::cli
