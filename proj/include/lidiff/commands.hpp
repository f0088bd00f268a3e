#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidiff/checkpoint.hpp"
#include "lidiff/config.hpp"
#include "lidiff/dataset.hpp"
#include "lidiff/diffusion.hpp"
#include "lidiff/error.hpp"
#include "lidiff/lpci.hpp"
#include "lidiff/metrics.hpp"
#include "lidiff/parallel.hpp"
#include "lidiff/png.hpp"
#include "lidiff/pointcloud.hpp"
#include "lidiff/projection.hpp"
#include "lidiff/schedule.hpp"

namespace lidiff {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

inline int exit_code_for(const Error& e) {
  return e.code() == Errc::numerical ? kExitNumerical : kExitUsage;
}

/// Runs `body`, turning library errors into exit codes and diagnostics.
template <typename Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << errc_name(e.code()) << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), Errc::io, "cannot write " + path.string());
  f << text;
  require(static_cast<bool>(f), Errc::io, "failed writing " + path.string());
}

inline void write_config_echo(const fs::path& path, const RunConfig& cfg) {
  write_text(path, to_json(cfg).dump(2) + "\n");
}

inline void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(fs::is_directory(dir), Errc::io, "cannot create directory " + dir.string());
}

inline RangeImage load_range_image(const fs::path& path) {
  try {
    return range_image_from_lpci(read_lpci(path));
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
}

inline std::vector<RangeImage> load_image_dir(const fs::path& dir) {
  const auto files = list_files(dir, ".lpci");
  require(!files.empty(), Errc::empty_input, "no .lpci images in " + dir.string());
  std::vector<RangeImage> out(files.size());
  parallel_for(files.size(), [&](std::size_t i) { out[i] = load_range_image(files[i]); });
  return out;
}

// ------------------------------------------------------------------ project

struct ProjectArgs {
  std::vector<fs::path> inputs;
  fs::path out_dir;
};

inline std::vector<fs::path> expand_scan_inputs(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> out;
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      for (const char* ext : {".bin", ".lpci"}) {
        const auto files = list_files(p, ext);
        out.insert(out.end(), files.begin(), files.end());
      }
    } else {
      out.push_back(p);
    }
  }
  return out;
}

inline int cmd_project(const ProjectArgs& args, const RunConfig& cfg, std::ostream& out,
                       std::ostream& err) {
  return guarded(err, [&] {
    const auto scans = expand_scan_inputs(args.inputs);
    require(!scans.empty(), Errc::empty_input, "no input scans given");
    ensure_directory(args.out_dir);
    write_config_echo(args.out_dir / "run_config.json", cfg);
    std::mutex log_mu;
    std::size_t failures = 0;
    parallel_for(scans.size(), [&](std::size_t i) {
      const fs::path& scan = scans[i];
      try {
        PointCloud cloud = load_scan(scan);
        if (cfg.smoothing.enabled) cloud = smooth_depths(cloud, cfg.smoothing);
        for (const auto& view : cfg.views) {
          const bool bev = view == "bev";
          const RangeImage img = bev ? project_bev(cloud, cfg.bev()) : project_equirect(cloud, cfg.equirect);
          const fs::path base = args.out_dir / (scan.stem().string() + "_" + view);
          write_lpci(fs::path(base.string() + ".lpci"), to_lpci(img));
          if (cfg.png) write_png16(fs::path(base.string() + ".png"), img);
        }
        std::lock_guard lock(log_mu);
        out << "projected " << scan.string() << " (" << cloud.size() << " points)\n";
      } catch (const Error& e) {
        std::lock_guard lock(log_mu);
        err << "error: " << scan.string() << ": " << errc_name(e.code()) << ": " << e.what() << "\n";
        ++failures;
      }
    });
    if (failures > 0) {
      err << failures << " of " << scans.size() << " scans failed\n";
      return kExitUsage;
    }
    return kExitOk;
  });
}

// ---------------------------------------------------------------- schedules

struct SchedulesArgs {
  std::vector<std::string> kinds{"all"};
  fs::path out;  // directory, or a .csv file when exactly one kind is requested
};

inline std::vector<ScheduleKind> parse_schedule_kinds(const std::vector<std::string>& names) {
  std::vector<ScheduleKind> kinds;
  for (const auto& n : names) {
    if (n == "all") {
      kinds.assign(kAllScheduleKinds.begin(), kAllScheduleKinds.end());
      continue;
    }
    const ScheduleKind k = schedule_kind_from_string(n);
    if (std::find(kinds.begin(), kinds.end(), k) == kinds.end()) kinds.push_back(k);
  }
  require(!kinds.empty(), Errc::param, "no schedule kinds requested");
  return kinds;
}

inline int cmd_schedules(const SchedulesArgs& args, const RunConfig& cfg, std::ostream& out,
                         std::ostream& err) {
  return guarded(err, [&] {
    const auto kinds = parse_schedule_kinds(args.kinds);
    const bool single_file = kinds.size() == 1 && args.out.extension() == ".csv";
    const fs::path dir = single_file ? args.out.parent_path() : args.out;
    if (!dir.empty()) ensure_directory(dir);
    for (ScheduleKind k : kinds) {
      ScheduleParams p = cfg.schedule;
      p.kind = k;
      const Schedule s = make_schedule(p);
      const fs::path file = single_file ? args.out : dir / (std::string(schedule_name(k)) + ".csv");
      std::ostringstream csv;
      write_schedule_csv(csv, s);
      write_text(file, csv.str());
      out << "wrote " << file.string() << " (" << s.steps() << " steps)\n";
    }
    RunConfig echo = cfg;
    write_config_echo(single_file ? fs::path(args.out.string() + ".config.json") : dir / "run_config.json",
                      echo);
    return kExitOk;
  });
}

// --------------------------------------------------------------- embeddings

struct EmbeddingsArgs {
  fs::path out;  // .lpci file
};

/// Rows are steps 1..T of the configured schedule, columns the embedding slots.
inline LpciTensor embedding_matrix(const EmbeddingSpec& spec, std::size_t steps) {
  spec.validate();
  LpciTensor t;
  t.shape = {steps, spec.dim};
  t.data.reserve(steps * spec.dim);
  for (std::size_t step = 1; step <= steps; ++step)
    for (double v : embed(static_cast<double>(step), spec)) t.data.push_back(static_cast<float>(v));
  t.meta = {{"kind", "embedding"}, {"embedding", embedding_to_json(spec)}, {"first_step", 1}};
  return t;
}

inline int cmd_embeddings(const EmbeddingsArgs& args, const RunConfig& cfg, std::ostream& out,
                          std::ostream& err) {
  return guarded(err, [&] {
    const LpciTensor t = embedding_matrix(cfg.embedding, cfg.schedule.steps);
    if (!args.out.parent_path().empty()) ensure_directory(args.out.parent_path());
    write_lpci(args.out, t);
    write_config_echo(fs::path(args.out.string() + ".config.json"), cfg);
    out << "wrote " << t.shape[0] << "x" << t.shape[1] << " embedding matrix to " << args.out.string() << "\n";
    return kExitOk;
  });
}

// -------------------------------------------------------------------- train

struct TrainArgs {
  fs::path data_dir;
  fs::path out;  // checkpoint path
  fs::path resume;
};

inline fs::path loss_csv_path(const fs::path& checkpoint) {
  return fs::path(checkpoint.string() + ".loss.csv");
}

/// Lists which model-defining settings differ between a checkpoint and a config.
inline std::vector<std::string> checkpoint_mismatches(const Checkpoint& ck, const RunConfig& cfg) {
  std::vector<std::string> diffs;
  auto compare = [&](const std::string& section, const json& a, const json& b) {
    for (const auto& [key, value] : a.items())
      if (!b.contains(key) || b.at(key) != value)
        diffs.push_back(section + "." + key + ": checkpoint " + value.dump() + ", config " +
                        (b.contains(key) ? b.at(key).dump() : "<absent>"));
  };
  compare("schedule", schedule_to_json(ck.schedule), schedule_to_json(cfg.schedule));
  compare("embedding", embedding_to_json(ck.embedding), embedding_to_json(cfg.embedding));
  json a = unet_to_json(ck.unet), b = unet_to_json(cfg.unet());
  // dropout and seed do not change the weights' meaning
  for (const char* k : {"dropout", "seed"}) {
    a.erase(k);
    b.erase(k);
  }
  compare("denoiser", a, b);
  return diffs;
}

inline void require_compatible(const Checkpoint& ck, const RunConfig& cfg, std::ostream& err) {
  const auto diffs = checkpoint_mismatches(ck, cfg);
  if (diffs.empty()) return;
  for (const auto& d : diffs) err << "  " << d << "\n";
  fail(Errc::config, "checkpoint and config disagree on " + std::to_string(diffs.size()) + " setting(s)");
}

inline int cmd_train(const TrainArgs& args, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto files = list_files(args.data_dir, ".lpci");
    require(!files.empty(), Errc::empty_input, "no .lpci training images in " + args.data_dir.string());
    const DatasetSplit split = split_sorted(files);
    out << "split " << split.train.size() << "/" << split.val.size() << "/" << split.test.size()
        << " (train/val/test)\n";
    auto load = [](const std::vector<fs::path>& paths) {
      std::vector<Tensor<float>> t;
      for (const auto& p : paths) t.push_back(image_tensor<float>(load_range_image(p)));
      return t;
    };
    const auto train = load(split.train);
    const auto val = load(split.val);

    const UNetConfig ucfg = cfg.unet();
    auto model = build_reference_unet<float>(ucfg, train.front().h(), train.front().w());
    AdamWState<float> opt;
    std::size_t epoch_offset = 0;
    if (!args.resume.empty()) {
      const Checkpoint ck = load_checkpoint(args.resume);
      require_compatible(ck, cfg, err);
      load_weights(*model, ck);
      opt = ck.optimizer;
      epoch_offset = ck.epochs_completed;
      out << "resumed from " << args.resume.string() << " at optimizer step " << opt.step << "\n";
    }

    const DiffusionConfig dcfg = cfg.diffusion();
    std::ostringstream csv;
    csv << "epoch,train_loss,val_loss\n";
    csv << std::setprecision(9);
    const auto result = train_loop<float>(*model, train, val, dcfg, cfg.training, opt,
                                          [&](const EpochRecord& r) {
                                            out << "epoch " << epoch_offset + r.epoch << " train "
                                                << r.train_loss << " val " << r.val_loss << "\n";
                                          });
    for (const auto& r : result.history)
      csv << epoch_offset + r.epoch << "," << r.train_loss << "," << r.val_loss << "\n";

    restore(*model, result.best);
    Checkpoint ck = make_checkpoint(*model, ucfg, cfg.schedule, cfg.embedding);
    ck.optimizer = result.best.optimizer;
    ck.epochs_completed = epoch_offset + result.history.size();
    ck.best_val_loss = result.best_val_loss;
    ck.run_config = to_json(cfg);
    if (!args.out.parent_path().empty()) ensure_directory(args.out.parent_path());
    save_checkpoint(args.out, ck);
    write_text(loss_csv_path(args.out), csv.str());
    write_config_echo(fs::path(args.out.string() + ".config.json"), cfg);
    out << "saved " << args.out.string() << " (best val loss " << result.best_val_loss
        << ", optimizer step " << ck.optimizer.step << ")\n";
    return kExitOk;
  });
}

// ------------------------------------------------------------------- sample

struct SampleArgs {
  fs::path checkpoint;
  std::size_t count = 1;
  fs::path out_dir;
  std::size_t batch_size = 8;
};

inline int cmd_sample(const SampleArgs& args, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    require(args.count >= 1, Errc::param, "--count must be at least 1");
    require(args.batch_size >= 1, Errc::param, "batch size must be at least 1");
    const Checkpoint ck = load_checkpoint(args.checkpoint);
    require_compatible(ck, cfg, err);
    UNet<float> model(cfg.unet());
    load_weights(model, ck);
    const DiffusionConfig dcfg = cfg.diffusion();
    dcfg.validate();
    const ProjectionMeta meta = cfg.equirect;
    model.check_input(meta.height, meta.width);
    ensure_directory(args.out_dir);
    write_config_echo(args.out_dir / "run_config.json", cfg);

    out << "sampling " << args.count << " images with " << dcfg.effective_sample_steps() << " steps\n";
    std::mt19937_64 rng(cfg.seed);
    std::size_t index = 0;
    while (index < args.count) {
      const std::size_t b = std::min(args.batch_size, args.count - index);
      SampleStats stats;
      const Tensor<float> x = sample<float>(model, dcfg, {b, 1, meta.height, meta.width}, rng, &stats);
      for (const RangeImage& img : tensor_images(x, meta)) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%05zu", index++);
        write_lpci(args.out_dir / (std::string(name) + ".lpci"), to_lpci(img));
        if (cfg.png) write_png16(args.out_dir / (std::string(name) + ".png"), img);
      }
      out << "batch of " << b << ": " << stats.steps << " steps, " << std::fixed << std::setprecision(3)
          << stats.seconds / static_cast<double>(b) << " s per sample\n"
          << std::defaultfloat;
    }
    return kExitOk;
  });
}

// -------------------------------------------------------------- backproject

struct BackprojectArgs {
  fs::path input;
  fs::path out;
};

inline int cmd_backproject(const BackprojectArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RangeImage img = load_range_image(args.input);
    require(img.kind == ImageKind::equirect, Errc::kind_mismatch,
            args.input.string() + " is a BEV image; only equirect images can be back-projected");
    const PointCloud cloud = backproject_equirect(img, 1.0);
    if (cloud.empty()) err << "warning: " << args.input.string() << " has no returns; writing an empty cloud\n";
    if (!args.out.parent_path().empty()) ensure_directory(args.out.parent_path());
    save_scan(cloud, args.out, scan_format_for(args.out));
    out << "wrote " << cloud.size() << " points to " << args.out.string() << "\n";
    return kExitOk;
  });
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
  fs::path generated_dir;
  fs::path reference_dir;
  fs::path out;
};

inline int cmd_eval(const EvalArgs& args, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto gen = load_image_dir(args.generated_dir);
    const auto ref = load_image_dir(args.reference_dir);
    const MetricReport rep = evaluate(gen, ref, default_feature_extractor(), cfg.metrics);
    json doc = rep.to_json();
    doc["run_config"] = to_json(cfg);
    doc["generated_dir"] = args.generated_dir.string();
    doc["reference_dir"] = args.reference_dir.string();
    if (!args.out.parent_path().empty()) ensure_directory(args.out.parent_path());
    write_text(args.out, doc.dump(2) + "\n");
    out << "jsd " << rep.jsd << " mmd " << rep.mmd << " frechet " << rep.frechet << "\n";
    return kExitOk;
  });
}

}  // namespace lidiff
