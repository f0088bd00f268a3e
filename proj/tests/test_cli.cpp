#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lidiff/cli.hpp"
#include "lidiff/synthetic.hpp"

using namespace lidiff;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

RunResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "lidiff");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("lidiff_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) { return read_file_bytes(p); }

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) lines.push_back(l);
  return lines;
}

// Settings for a model small enough to train in well under a second.
std::vector<std::string> tiny_settings(std::size_t steps = 20) {
  return {"--set", "projection.height=8",      "--set", "projection.width=32",
          "--set", "denoiser.base_channels=4", "--set", "denoiser.depth=1",
          "--set", "embedding.dim=8",          "--set", "schedule.steps=" + std::to_string(steps)};
}

void write_image_dir(const fs::path& dir, std::size_t count, std::uint64_t seed) {
  fs::create_directories(dir);
  const auto images = toy_dataset(count, seed, toy_meta(8, 32));
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%03zu.lpci", i);
    write_lpci(dir / name, to_lpci(images[i]));
  }
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Trains a tiny checkpoint on a toy directory and returns its path.
fs::path tiny_checkpoint(const TempDir& dir, std::size_t steps = 20) {
  write_image_dir(dir / "data", 10, 1);
  const fs::path ck = dir / "model.lpci";
  const auto r = run(cat({"train", "--data", (dir / "data").string(), "--out", ck.string(), "--epochs", "1"},
                         tiny_settings(steps)));
  EXPECT_EQ(r.code, 0) << r.err;
  return ck;
}

}  // namespace

TEST(RunConfigTest, DefaultsAndRoundTrip) {
  const RunConfig c = load_run_config("", {});
  EXPECT_EQ(c.seed, 0u);
  EXPECT_EQ(c.equirect.height, 64u);
  EXPECT_EQ(c.equirect.width, 1024u);
  EXPECT_EQ(c.bev_height, 1024u);
  EXPECT_EQ(c.schedule.steps, 1000u);
  EXPECT_EQ(c.training.batch_size, 4u);
  EXPECT_DOUBLE_EQ(c.training.optimizer.learning_rate, 2e-4);
  EXPECT_EQ(c.training.patience, 5u);
  EXPECT_EQ(c.metrics.bins, 256u);
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(RunConfigTest, UnknownKeysRejected) {
  try {
    run_config_from_json(json{{"trainin", json::object()}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::config);
  }
  try {
    run_config_from_json(json{{"training", {{"learning_rate", 1}}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::config);
    EXPECT_NE(std::string(e.what()).find("training.learning_rate"), std::string::npos) << e.what();
  }
  TempDir dir;
  const auto r = run({"schedules", "--out", dir.path().string(), "--set", "schedule.bogus=1"});
  EXPECT_EQ(r.code, kExitUsage);
}

TEST(RunConfigTest, OverridesAndConfigFile) {
  TempDir dir;
  write_text(dir / "cfg.json", R"({"seed": 9, "training": {"lr": 0.001}, "schedule": {"kind": "cosine"}})");
  const RunConfig c = load_run_config(dir / "cfg.json", {"training.lr=1e-4", "embedding.kind=sinusoidal"});
  EXPECT_EQ(c.seed, 9u);
  EXPECT_DOUBLE_EQ(c.training.optimizer.learning_rate, 1e-4);
  EXPECT_EQ(c.schedule.kind, ScheduleKind::cosine);
  EXPECT_EQ(c.embedding.kind, EmbeddingKind::sinusoidal);
  EXPECT_THROW(load_run_config("", {"no_equals_sign"}), Error);
  EXPECT_EQ(c.unet().embed_dim, c.embedding.dim);
}

TEST(DatasetSplitTest, EightyTenTen) {
  const SplitCounts ten = split_counts(10);
  EXPECT_EQ(ten.train, 8u);
  EXPECT_EQ(ten.val, 1u);
  EXPECT_EQ(ten.test, 1u);
  const SplitCounts big = split_counts(500);
  EXPECT_EQ(big.train, 400u);
  EXPECT_EQ(big.val, 50u);
  EXPECT_EQ(big.test, 50u);
  std::vector<fs::path> files;
  for (int i = 9; i >= 0; --i) files.push_back("d/f" + std::to_string(i) + ".lpci");
  const auto s = split_sorted(files);
  EXPECT_EQ(s.train.front().filename(), "f0.lpci");
  EXPECT_EQ(s.val.front().filename(), "f8.lpci");
  EXPECT_EQ(s.test.front().filename(), "f9.lpci");
}

TEST(Project, WritesViewsPerScan) {
  TempDir dir;
  std::mt19937_64 rng(1);
  const PointCloud cloud = render_toy_scene(random_toy_scene(rng), ProjectionMeta::equirect_default());
  save_scan(cloud, dir / "scan.bin", ScanFormat::kitti_bin);
  auto r = run({"project", (dir / "scan.bin").string(), "--out", (dir / "one").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const RangeImage img = load_range_image(dir / "one" / "scan_equirect.lpci");
  EXPECT_EQ(img.height(), 64u);
  EXPECT_EQ(img.width(), 1024u);
  EXPECT_TRUE(fs::exists(dir / "one" / "run_config.json"));
  EXPECT_FALSE(fs::exists(dir / "one" / "scan_bev.lpci"));

  r = run({"project", (dir / "scan.bin").string(), "--out", (dir / "two").string(), "--views", "bev,equirect",
           "--png", "--smooth"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_range_image(dir / "two" / "scan_bev.lpci").kind, ImageKind::bev);
  EXPECT_TRUE(fs::exists(dir / "two" / "scan_equirect.lpci"));
  EXPECT_TRUE(fs::exists(dir / "two" / "scan_bev.png"));
  const json echo = json::parse(slurp(dir / "two" / "run_config.json"));
  EXPECT_EQ(echo["smoothing"]["enabled"], true);
}

TEST(Project, UnreadableScanIsExitTwo) {
  TempDir dir;
  const fs::path missing = dir / "missing_scan.bin";
  const auto r = run({"project", missing.string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("missing_scan.bin"), std::string::npos) << r.err;
  write_text(dir / "odd.bin", std::string(17, 'x'));
  EXPECT_EQ(run({"project", (dir / "odd.bin").string(), "--out", (dir / "o").string()}).code, kExitUsage);
}

TEST(Schedules, AllKindsAndConstantColumn) {
  TempDir dir;
  auto r = run({"schedules", "--kinds", "all", "--out", (dir / "all").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t csvs = 0;
  for (const auto& e : fs::directory_iterator(dir / "all")) csvs += e.path().extension() == ".csv";
  EXPECT_EQ(csvs, 8u);

  r = run({"schedules", "--kinds", "constant", "--steps", "3", "--beta-start", "0.1", "--beta-end", "0.1", "--out",
           (dir / "c.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = lines_of(dir / "c.csv");
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "step,beta,alpha,alpha_bar,snr");
  const double expected[] = {0.9, 0.81, 0.729};
  for (int i = 0; i < 3; ++i) {
    std::vector<double> cols;
    std::stringstream ss(lines[i + 1]);
    for (std::string cell; std::getline(ss, cell, ',');) cols.push_back(std::stod(cell));
    EXPECT_NEAR(cols[3], expected[i], 1e-12);
  }
  EXPECT_TRUE(fs::exists(dir / "c.csv.config.json"));

  r = run({"schedules", "--kinds", "linear,time-dependent", "--steps", "1000", "--out", (dir / "two").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines_of(dir / "two" / "linear.csv").size(), 1001u);
  EXPECT_EQ(lines_of(dir / "two" / "time-dependent.csv").size(), 1001u);

  EXPECT_EQ(run({"schedules", "--kinds", "exponential", "--out", dir.path().string()}).code, kExitUsage);
}

TEST(Embeddings, DumpsMatrix) {
  TempDir dir;
  const auto r = run({"embeddings", "--steps", "50", "--out", (dir / "e.lpci").string(), "--set", "embedding.dim=16"});
  ASSERT_EQ(r.code, 0) << r.err;
  const LpciTensor t = read_lpci(dir / "e.lpci");
  ASSERT_EQ(t.shape, (std::vector<std::size_t>{50, 16}));
  EmbeddingSpec spec;
  spec.dim = 16;
  const auto row7 = embed(7.0, spec);
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(t.data[6 * 16 + j], static_cast<float>(row7[j]));
  EXPECT_EQ(t.meta["kind"], "embedding");
}

TEST(Train, OneEpochThenResume) {
  TempDir dir;
  const fs::path ck = tiny_checkpoint(dir);
  const auto rows = lines_of(fs::path(ck.string() + ".loss.csv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], "epoch,train_loss,val_loss");
  EXPECT_EQ(rows[1].substr(0, 2), "1,");
  EXPECT_TRUE(fs::exists(ck.string() + ".config.json"));
  const Checkpoint first = load_checkpoint(ck);
  EXPECT_EQ(first.optimizer.step, 2u);  // 8 training images, batch 4
  EXPECT_EQ(first.epochs_completed, 1u);

  const fs::path ck2 = dir / "model2.lpci";
  const auto r = run(cat({"train", "--data", (dir / "data").string(), "--out", ck2.string(), "--resume", ck.string(),
                          "--epochs", "2", "--patience", "0"},
                         tiny_settings()));
  ASSERT_EQ(r.code, 0) << r.err;
  const Checkpoint second = load_checkpoint(ck2);
  EXPECT_GT(second.optimizer.step, first.optimizer.step);
  EXPECT_EQ(second.epochs_completed, 3u);
  const auto rows2 = lines_of(fs::path(ck2.string() + ".loss.csv"));
  ASSERT_EQ(rows2.size(), 3u);
  EXPECT_EQ(rows2[1].substr(0, 2), "2,");
}

TEST(Train, ErrorsExitTwo) {
  TempDir dir;
  fs::create_directories(dir / "empty");
  EXPECT_EQ(run(cat({"train", "--data", (dir / "empty").string(), "--out", (dir / "m.lpci").string()}, tiny_settings()))
                .code,
            kExitUsage);
  const fs::path ck = tiny_checkpoint(dir);
  // resuming under a different schedule is refused with a diff
  auto settings = tiny_settings(30);
  const auto r = run(cat({"train", "--data", (dir / "data").string(), "--out", (dir / "m2.lpci").string(), "--resume",
                          ck.string(), "--epochs", "1"},
                         settings));
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("schedule.steps"), std::string::npos) << r.err;
}

TEST(Sample, CountStepsAndDeterminism) {
  TempDir dir;
  const fs::path ck = tiny_checkpoint(dir, 1000);
  EXPECT_EQ(run({"sample", "--checkpoint", ck.string(), "--count", "0", "--out", (dir / "s0").string()}).code,
            kExitUsage);

  const auto a = run({"sample", "--checkpoint", ck.string(), "--count", "3", "--seed", "7", "--sample-steps", "40",
                      "--out", (dir / "a").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = run({"sample", "--checkpoint", ck.string(), "--count", "3", "--seed", "7", "--sample-steps", "40",
                      "--out", (dir / "b").string()});
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* name : {"sample_00000.lpci", "sample_00001.lpci", "sample_00002.lpci"}) {
    ASSERT_TRUE(fs::exists(dir / "a" / name));
    EXPECT_EQ(slurp(dir / "a" / name), slurp(dir / "b" / name)) << name;
  }
  EXPECT_NE(slurp(dir / "a" / "sample_00000.lpci"), slurp(dir / "a" / "sample_00001.lpci"));
  EXPECT_NE(a.out.find("s per sample"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "a" / "run_config.json"));

  const auto c = run({"sample", "--checkpoint", ck.string(), "--count", "1", "--sample-steps", "800", "--out",
                      (dir / "c").string()});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(c.out.find("800 steps"), std::string::npos) << c.out;
  const RangeImage img = load_range_image(dir / "c" / "sample_00000.lpci");
  EXPECT_EQ(img.kind, ImageKind::equirect);
  EXPECT_EQ(img.height(), 8u);

  EXPECT_EQ(run({"sample", "--checkpoint", ck.string(), "--count", "1", "--sample-steps", "1001", "--out",
                 (dir / "d").string()})
                .code,
            kExitUsage);
  const auto mismatch = run({"sample", "--checkpoint", ck.string(), "--count", "1", "--set", "schedule.kind=linear",
                             "--out", (dir / "e").string()});
  EXPECT_EQ(mismatch.code, kExitUsage);
  EXPECT_NE(mismatch.err.find("schedule.kind"), std::string::npos) << mismatch.err;
}

TEST(Sample, NonFiniteWeightsExitThree) {
  TempDir dir;
  const fs::path ck = tiny_checkpoint(dir);
  Checkpoint c = load_checkpoint(ck);
  std::fill(c.params.back().begin(), c.params.back().end(), std::numeric_limits<float>::quiet_NaN());
  save_checkpoint(dir / "nan.lpci", c);
  const auto r = run({"sample", "--checkpoint", (dir / "nan.lpci").string(), "--count", "1", "--out",
                      (dir / "s").string()});
  EXPECT_EQ(r.code, kExitNumerical);
  EXPECT_NE(r.err.find("step"), std::string::npos) << r.err;
}

TEST(Backproject, ContractAndRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(3);
  const ProjectionMeta meta = ProjectionMeta::equirect_default();
  const PointCloud cloud = render_toy_scene(random_toy_scene(rng), meta);
  const RangeImage img = project_equirect(cloud, meta);
  write_lpci(dir / "eq.lpci", to_lpci(img));
  auto r = run({"backproject", "--in", (dir / "eq.lpci").string(), "--out", (dir / "pts.bin").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const PointCloud back = load_scan(dir / "pts.bin");
  EXPECT_EQ(back.size(), img.nonzero_count());
  for (const auto& p : back.points) EXPECT_EQ(p.intensity, 1.0);

  write_lpci(dir / "bev.lpci", to_lpci(project_bev(cloud, ProjectionMeta::bev_default())));
  EXPECT_EQ(run({"backproject", "--in", (dir / "bev.lpci").string(), "--out", (dir / "x.bin").string()}).code,
            kExitUsage);

  write_lpci(dir / "zero.lpci", to_lpci(RangeImage(ImageKind::equirect, meta)));
  r = run({"backproject", "--in", (dir / "zero.lpci").string(), "--out", (dir / "zero.bin").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  EXPECT_EQ(fs::file_size(dir / "zero.bin"), 0u);

  LpciTensor bare;
  bare.shape = {4, 4};
  bare.data.assign(16, 0.5f);
  write_lpci(dir / "bare.lpci", bare);
  EXPECT_EQ(run({"backproject", "--in", (dir / "bare.lpci").string(), "--out", (dir / "y.bin").string()}).code,
            kExitUsage);
}

TEST(Eval, IdenticalDirsAndConfigEcho) {
  TempDir dir;
  write_image_dir(dir / "ref", 6, 11);
  const auto r = run({"eval", "--generated", (dir / "ref").string(), "--reference", (dir / "ref").string(), "--out",
                      (dir / "report.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = json::parse(slurp(dir / "report.json"));
  EXPECT_EQ(rep["jsd"].get<double>(), 0.0);
  EXPECT_NEAR(rep["frechet"].get<double>(), 0.0, 1e-9);
  EXPECT_EQ(rep["n_generated"], 6);
  EXPECT_EQ(rep["extractor_id"], "patch-stats-grad-hist-v1");
  EXPECT_TRUE(rep.contains("run_config"));
  EXPECT_EQ(rep["run_config"]["metrics"]["bins"], 256);

  fs::create_directories(dir / "empty");
  EXPECT_EQ(run({"eval", "--generated", (dir / "empty").string(), "--reference", (dir / "ref").string(), "--out",
                 (dir / "r2.json").string()})
                .code,
            kExitUsage);
}

TEST(Eval, NoiseDirScoresWorse) {
  TempDir dir;
  write_image_dir(dir / "ref", 20, 21);
  write_image_dir(dir / "held", 20, 22);
  fs::create_directories(dir / "noise");
  std::mt19937_64 rng(5);
  const auto noise = full_noise_images<float>({20, 1, 8, 32}, rng);
  for (std::size_t i = 0; i < 20; ++i) {
    RangeImage img(ImageKind::equirect, toy_meta(8, 32));
    std::copy(noise.item(i), noise.item(i) + noise.per_item(), img.data.begin());
    write_lpci(dir / "noise" / ("n" + std::to_string(i) + ".lpci"), to_lpci(img));
  }
  auto eval = [&](const std::string& gen) {
    const auto r = run({"eval", "--generated", (dir / gen).string(), "--reference", (dir / "ref").string(), "--out",
                        (dir / (gen + ".json")).string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return json::parse(slurp(dir / (gen + ".json")));
  };
  const json good = eval("held"), bad = eval("noise");
  EXPECT_GT(bad["jsd"].get<double>(), good["jsd"].get<double>());
  EXPECT_GT(bad["frechet"].get<double>(), good["frechet"].get<double>());
}

TEST(Formats, CheckpointRoundTrip) {
  UNetConfig u;
  u.base_channels = 4;
  u.depth = 1;
  u.embed_dim = 8;
  UNet<float> model(u);
  ScheduleParams sp;
  sp.steps = 10;
  EmbeddingSpec es;
  es.dim = 8;
  Checkpoint c = make_checkpoint(model, u, sp, es);
  c.optimizer.step = 5;
  for (const auto& p : c.params) {
    c.optimizer.first.emplace_back(p.size(), 0.25f);
    c.optimizer.second.emplace_back(p.size(), 0.5f);
  }
  c.epochs_completed = 3;
  c.best_val_loss = 0.125;
  TempDir dir;
  save_checkpoint(dir / "c.lpci", c);
  const Checkpoint back = load_checkpoint(dir / "c.lpci");
  EXPECT_EQ(back.names, c.names);
  EXPECT_EQ(back.shapes, c.shapes);
  EXPECT_EQ(back.params, c.params);
  EXPECT_EQ(back.optimizer.step, 5u);
  EXPECT_EQ(back.optimizer.first, c.optimizer.first);
  EXPECT_EQ(back.optimizer.second, c.optimizer.second);
  EXPECT_EQ(back.epochs_completed, 3u);
  EXPECT_EQ(back.best_val_loss, 0.125);
  EXPECT_EQ(back.unet, u);
  EXPECT_EQ(back.schedule, sp);

  u.seed = 99;
  UNet<float> other(u);
  load_weights(other, back);
  EXPECT_EQ(other.parameters()[0].var->value.data, model.parameters()[0].var->value.data);
  u.base_channels = 8;
  UNet<float> wider(u);
  EXPECT_THROW(load_weights(wider, back), Error);
}

TEST(Formats, Png16RoundTrip) {
  ProjectionMeta m = toy_meta(4, 8);
  RangeImage img(ImageKind::equirect, m);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i) / 31.0f;
  TempDir dir;
  write_png16(dir / "a.png", img);
  std::size_t h = 0, w = 0;
  const auto px = read_png16(dir / "a.png", h, w);
  EXPECT_EQ(h, 4u);
  EXPECT_EQ(w, 8u);
  for (std::size_t i = 0; i < px.size(); ++i) EXPECT_NEAR(px[i], img.data[i], 0.5 / 65535 + 1e-7);
}

TEST(Threads, EnvironmentCapsWorkers) {
  ::setenv("LPCI_THREADS", "3", 1);
  EXPECT_EQ(worker_count(), 3u);
  ::setenv("LPCI_THREADS", "zero", 1);
  EXPECT_GE(worker_count(), 1u);
  ::unsetenv("LPCI_THREADS");
  std::vector<int> hit(100, 0);
  parallel_for(hit.size(), [&](std::size_t i) { hit[i] += 1; }, 4);
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, [](std::size_t i) {
                 if (i == 7) fail(Errc::param, "boom");
               }),
               Error);
}

TEST(Executable, ExitCodes) {
  const char* exe = std::getenv("LIDIFF_EXE");
  if (exe == nullptr) GTEST_SKIP() << "LIDIFF_EXE not set";
  auto status = [&](const std::string& args) {
    const int s = std::system((std::string(exe) + " " + args + " > /dev/null 2>&1").c_str());
    return WEXITSTATUS(s);
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status(""), 2);
  EXPECT_EQ(status("frobnicate"), 2);
  TempDir dir;
  EXPECT_EQ(status("schedules --kinds nope --out " + dir.path().string()), 2);
  EXPECT_EQ(status("schedules --kinds ramp --out " + (dir / "r.csv").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "r.csv"));
}
