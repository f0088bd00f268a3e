#pragma once

#include <CLI11.hpp>

#include <cstddef>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lidiff/checkpoint.hpp"
#include "lidiff/commands.hpp"
#include "lidiff/config.hpp"

namespace lidiff {

namespace detail {

inline std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (const auto& p : parts) s += (s.empty() ? "" : ",") + p;
  return s;
}

template <typename T>
void push_override(std::vector<std::string>& overrides, const std::string& key, const std::optional<T>& v) {
  if (!v) return;
  std::ostringstream os;
  os.precision(17);
  os << *v;
  overrides.push_back(key + "=" + os.str());
}

}  // namespace detail

/// Entry point shared by the executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"LiDAR range-image diffusion toolkit"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "override a config value, e.g. --set training.lr=1e-4");
  };

  // project
  ProjectArgs project;
  std::vector<std::string> views;
  bool png = false, smooth = false;
  auto* p = app.add_subcommand("project", "project scans to equirect/BEV images");
  p->add_option("inputs", project.inputs, "scan files (.bin/.lpci) or directories")->required();
  p->add_option("--out", project.out_dir, "output directory")->required();
  p->add_option("--views", views, "comma-separated: equirect,bev")->delimiter(',');
  p->add_flag("--png", png, "also write 16-bit PNGs");
  p->add_flag("--smooth", smooth, "apply density-adaptive depth smoothing");
  add_common(p);

  // schedules
  SchedulesArgs sched;
  std::optional<std::size_t> steps;
  std::optional<double> beta_start, beta_end;
  auto* s = app.add_subcommand("schedules", "write noise schedule tables as CSV");
  s->add_option("--kinds", sched.kinds, "schedule kinds or 'all'")->delimiter(',');
  s->add_option("--steps", steps, "number of diffusion steps");
  s->add_option("--beta-start", beta_start);
  s->add_option("--beta-end", beta_end);
  s->add_option("--out", sched.out, "output directory (or .csv for a single kind)")->required();
  add_common(s);

  // embeddings
  EmbeddingsArgs emb;
  auto* em = app.add_subcommand("embeddings", "dump the time-embedding matrix (T x d) as lpci");
  em->add_option("--out", emb.out, "output .lpci file")->required();
  em->add_option("--steps", steps, "number of diffusion steps");
  add_common(em);

  // train
  TrainArgs train;
  std::optional<std::size_t> epochs, batch, patience, max_steps;
  std::optional<double> budget;
  auto* t = app.add_subcommand("train", "train the denoiser on a directory of range images");
  t->add_option("--data", train.data_dir, "directory of .lpci range images")->required();
  t->add_option("--out", train.out, "checkpoint path")->required();
  t->add_option("--resume", train.resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  t->add_option("--epochs", epochs);
  t->add_option("--batch-size", batch);
  t->add_option("--patience", patience, "early-stopping patience in epochs (0 disables)");
  t->add_option("--max-steps", max_steps, "cap on optimizer steps (0 = none)");
  t->add_option("--time-budget", budget, "wall-clock training budget in seconds (0 = none)");
  add_common(t);

  // sample
  SampleArgs sample_args;
  std::optional<std::size_t> sample_steps;
  auto* sm = app.add_subcommand("sample", "generate range images from a checkpoint");
  sm->add_option("--checkpoint", sample_args.checkpoint)->required()->check(CLI::ExistingFile);
  sm->add_option("--count", sample_args.count, "number of images")->required();
  sm->add_option("--out", sample_args.out_dir, "output directory")->required();
  sm->add_option("--sample-steps", sample_steps, "reverse steps (<= training steps)");
  sm->add_option("--batch-size", sample_args.batch_size, "images denoised together");
  sm->add_flag("--png", png, "also write 16-bit PNGs");
  add_common(sm);

  // backproject
  BackprojectArgs back;
  auto* b = app.add_subcommand("backproject", "convert an equirect image back to points");
  b->add_option("--in", back.input)->required();
  b->add_option("--out", back.out, "output scan (.bin or .lpci)")->required();

  // eval
  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "compare generated images against references");
  e->add_option("--generated", ev.generated_dir)->required();
  e->add_option("--reference", ev.reference_dir)->required();
  e->add_option("--out", ev.out, "report JSON path")->required();
  add_common(e);

  for (auto* sub : {p, s, em, t, sm, e}) sub->add_option("--seed", seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << "\n";
    return kExitUsage;
  }

  std::vector<std::string> overrides = sets;
  detail::push_override(overrides, "seed", seed);

  return guarded(err, [&]() -> int {
    if (*p) {
      if (!views.empty()) overrides.push_back("projection.views=" + json(views).dump());
      if (png) overrides.emplace_back("projection.png=true");
      if (smooth) overrides.emplace_back("smoothing.enabled=true");
      return cmd_project(project, load_run_config(config_file, overrides), out, err);
    }
    if (*s) {
      detail::push_override(overrides, "schedule.steps", steps);
      detail::push_override(overrides, "schedule.beta_start", beta_start);
      detail::push_override(overrides, "schedule.beta_end", beta_end);
      return cmd_schedules(sched, load_run_config(config_file, overrides), out, err);
    }
    if (*em) {
      detail::push_override(overrides, "schedule.steps", steps);
      return cmd_embeddings(emb, load_run_config(config_file, overrides), out, err);
    }
    if (*t) {
      detail::push_override(overrides, "training.epochs", epochs);
      detail::push_override(overrides, "training.batch_size", batch);
      detail::push_override(overrides, "training.patience", patience);
      detail::push_override(overrides, "training.max_steps", max_steps);
      detail::push_override(overrides, "training.time_budget_seconds", budget);
      json base = json::object();
      if (!train.resume.empty()) base = load_checkpoint(train.resume).run_config;
      return cmd_train(train, load_run_config(config_file, overrides, base), out, err);
    }
    if (*sm) {
      detail::push_override(overrides, "sampling.sample_steps", sample_steps);
      if (png) overrides.emplace_back("projection.png=true");
      // start from the configuration the checkpoint was trained with
      const json base = load_checkpoint(sample_args.checkpoint).run_config;
      return cmd_sample(sample_args, load_run_config(config_file, overrides, base), out, err);
    }
    if (*b) return cmd_backproject(back, out, err);
    return cmd_eval(ev, load_run_config(config_file, overrides), out, err);
  });
}

}  // namespace lidiff
