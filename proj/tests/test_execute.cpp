#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "streamttt/checkpoint.hpp"
#include "streamttt/config.hpp"
#include "streamttt/runner.hpp"

using namespace streamttt;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("streamttt_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

NeuralModelSpec tiny_spec() {
  NeuralModelSpec spec;
  spec.height = 8;
  spec.width = 8;
  spec.patch_size = 2;
  spec.hidden_dim = 6;
  spec.g_head_hidden = 3;
  spec.h_head_hidden = 2;
  return spec;
}

const char* kAblationConfig = R"({
  "seed": 11,
  "mode": "ablation-suite",
  "model": {"family": "neural", "height": 8, "width": 8, "patch_size": 2,
            "hidden_dim": 6},
  "stream": {"kind": "shape-video", "length": 24, "height": 8, "width": 8,
             "eta": 1.5, "regime_times": [12], "noise_amplitude": 0.05,
             "shape_radius": 1},
  "ttt": {"window_size": 4, "batch_size": 4},
  "train": {"stills": 10, "epochs": 4, "batch_size": 4},
  "offline": {"iterations": 40, "eval_every": 20, "batch_size": 4},
  "sweep": {"k_grid": [1, 4], "trials": 2},
  "ablate": {"trials": 2}
})";

}  // namespace

TEST_CASE("neural checkpoint round trip preserves every parameter") {
  const NeuralModelSpec spec = tiny_spec();
  ModelState state = init_neural_state(spec, 99);
  state.f_params[0] += 0.25;
  state.g_params[1] -= 1.0 / 3.0;
  state.h_params[2] *= -1.7;

  std::ostringstream out;
  write_checkpoint(out, "neural", neural_spec_to_json(spec), state);
  std::istringstream in(out.str());
  Checkpoint ck = read_checkpoint(in);

  CHECK(ck.family == "neural");
  CHECK(neural_spec_from_json(ck.spec).hidden_dim == 6);
  REQUIRE(ck.state.f_params.size() == state.f_params.size());
  REQUIRE(ck.state.g_params.size() == state.g_params.size());
  REQUIRE(ck.state.h_params.size() == state.h_params.size());
  CHECK(ck.state.f_params == state.f_params);
  CHECK(ck.state.g_params == state.g_params);
  CHECK(ck.state.h_params == state.h_params);
  // the loaded snapshot is the new frozen point
  CHECK(ck.state.frozen_init.f == state.f_params);
  CHECK(drift_from_frozen(ck.state) == 0.0);
}

TEST_CASE("quad checkpoint round trip") {
  const QuadModelSpec spec = make_quad_spec(2.0, 3.0, 0.5, 3);
  ModelState state = make_quad_state(spec, Vec{0.1, -2.25, 7.5});
  std::ostringstream out;
  write_checkpoint(out, "quad",
                   json{{"alpha", 2.0}, {"beta", 3.0}, {"sigma", 0.5},
                        {"dim", 3}},
                   state);
  std::istringstream in(out.str());
  Checkpoint ck = read_checkpoint(in);
  CHECK(ck.family == "quad");
  CHECK(ck.state.f_params == Vec{0.1, -2.25, 7.5});
  CHECK(ck.state.g_params.empty());
  CHECK(ck.state.h_params.empty());
}

TEST_CASE("checkpoint rejects malformed input") {
  std::istringstream empty("");
  CHECK_THROWS_AS(read_checkpoint(empty), std::runtime_error);

  std::istringstream bad_header("not json\n1\n");
  CHECK_THROWS_AS(read_checkpoint(bad_header), std::runtime_error);

  std::istringstream bad_family(
      R"({"family":"bogus","spec":{},"param_count":1})"
      "\n1\n");
  CHECK_THROWS_AS(read_checkpoint(bad_family), std::runtime_error);

  std::istringstream short_body(
      R"({"family":"quad","spec":{"dim":3},"param_count":3})"
      "\n1\n2\n");
  CHECK_THROWS_AS(read_checkpoint(short_body), std::runtime_error);

  std::istringstream bad_value(
      R"({"family":"quad","spec":{"dim":1},"param_count":1})"
      "\n1.0x\n");
  CHECK_THROWS_AS(read_checkpoint(bad_value), std::runtime_error);
}

TEST_CASE("lemma-check mode reports all instances holding") {
  ExperimentConfig cfg = parse_config(R"({"seed": 3, "mode": "lemma-check"})");
  cfg.output_dir = fresh_dir("lemma").string();
  ReportBundle bundle = execute(cfg);
  CHECK(bundle.valid);
  CHECK(bundle.summary["lemma"]["instances"] == 1000);
  CHECK(bundle.summary["lemma"]["holding"] == 1000);
  CHECK(bundle.summary["lemma"]["all_hold"] == true);
  // one data row per instance
  const std::string csv = slurp(bundle.output_dir / "lemma.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1001);
}

TEST_CASE("every emitted file is on disk and listed in the summary") {
  ExperimentConfig cfg = parse_config(
      R"({"seed": 5, "mode": "lemma-check", "lemma": {"instances": 20}})");
  cfg.output_dir = fresh_dir("files").string();
  ReportBundle bundle = execute(cfg);
  REQUIRE(bundle.summary.contains("files"));
  const auto listed = bundle.summary["files"].get<std::vector<std::string>>();
  CHECK(listed == bundle.files);
  for (const std::string& f : bundle.files)
    CHECK(fs::exists(bundle.output_dir / f));
  CHECK(bundle.summary["environment"]["version"] == kVersion);
  CHECK(bundle.summary["environment"]["seed"] == 5);
}

TEST_CASE("quad online run is deterministic and matches stream-file input") {
  const char* text = R"({
    "seed": 21,
    "mode": "online",
    "model": {"family": "quad", "alpha": 1.0, "beta": 1.0, "sigma": 0.5,
              "dim": 3},
    "stream": {"kind": "linear-drift", "length": 40, "dim": 3, "eta": 0.05},
    "ttt": {"window_size": 8, "batch_size": 0, "iters_per_frame": 2}
  })";

  ExperimentConfig cfg = parse_config(text);
  cfg.output_dir = fresh_dir("quad_a").string();
  ReportBundle a = execute(cfg);
  REQUIRE(a.valid);
  CHECK(a.summary["frames"] == 40);
  CHECK(a.summary["mean_main_loss"].get<double>() >= 0.0);

  cfg.output_dir = fresh_dir("quad_b").string();
  ReportBundle b = execute(cfg);
  CHECK(slurp(a.output_dir / "trace.csv") == slurp(b.output_dir / "trace.csv"));

  // the same stream through a file gives the same trace
  const fs::path stream_path = fresh_dir("quad_stream") / "stream.txt";
  {
    std::ofstream os(stream_path, std::ios::binary);
    write_stream(os, *cfg.stream, gen_stream(*cfg.stream));
  }
  ExperimentConfig cfg_file = parse_config(text, true);
  cfg_file.stream.reset();
  cfg_file.output_dir = fresh_dir("quad_c").string();
  ExecuteOptions opts;
  opts.stream_file = stream_path.string();
  ReportBundle c = execute(cfg_file, opts);
  REQUIRE(c.valid);
  CHECK(slurp(a.output_dir / "trace.csv") == slurp(c.output_dir / "trace.csv"));
}

TEST_CASE("fixed mode never adapts") {
  ExperimentConfig cfg = parse_config(R"({
    "seed": 8,
    "mode": "fixed",
    "model": {"family": "quad", "dim": 2},
    "stream": {"kind": "linear-drift", "length": 12, "dim": 2, "eta": 0.1},
    "ttt": {"iters_per_frame": 3}
  })");
  cfg.output_dir = fresh_dir("fixed").string();
  ReportBundle bundle = execute(cfg);
  REQUIRE(bundle.valid);
  CHECK(bundle.summary["final_drift"].get<double>() == 0.0);
}

TEST_CASE("runtime divergence flags the bundle instead of throwing") {
  ExperimentConfig cfg = parse_config(R"({
    "seed": 2,
    "mode": "online",
    "model": {"family": "quad", "dim": 2},
    "stream": {"kind": "linear-drift", "length": 10, "dim": 2, "eta": 0.1},
    "ttt": {"lr": 1e300}
  })");
  cfg.output_dir = fresh_dir("diverge").string();
  ReportBundle bundle = execute(cfg);
  CHECK_FALSE(bundle.valid);
  CHECK(bundle.summary["valid"] == false);
  CHECK(bundle.summary.contains("abort_reason"));
  CHECK(fs::exists(bundle.output_dir / "summary.json"));
}

TEST_CASE("offline-all-frames bundle reports its best iteration") {
  ExperimentConfig cfg = parse_config(R"({
    "seed": 13,
    "mode": "offline-all-frames",
    "model": {"family": "neural", "height": 8, "width": 8, "patch_size": 2,
              "hidden_dim": 6},
    "stream": {"kind": "shape-video", "length": 16, "height": 8, "width": 8,
               "eta": 1.5, "shape_radius": 1},
    "train": {"stills": 8, "epochs": 3, "batch_size": 4},
    "offline": {"iterations": 30, "eval_every": 15, "batch_size": 4}
  })");
  cfg.output_dir = fresh_dir("offline").string();
  ReportBundle bundle = execute(cfg);
  REQUIRE(bundle.valid);
  CHECK(bundle.summary.contains("best_iteration"));
  const std::string csv = slurp(bundle.output_dir / "offline_evals.csv");
  CHECK(csv.rfind("iteration,mean_main_loss,mean_pred_error,mean_iou\n", 0) ==
        0);
  // evals at 0, 15, 30
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(fs::exists(bundle.output_dir / "checkpoint.txt"));
}

TEST_CASE("ablation bundle is identical across reruns and worker counts") {
  ExperimentConfig cfg = parse_config(kAblationConfig);

  cfg.output_dir = fresh_dir("abl_a").string();
  ReportBundle a = execute(cfg);
  REQUIRE(a.valid);

  cfg.output_dir = fresh_dir("abl_b").string();
  ExecuteOptions three;
  three.jobs = 3;
  ReportBundle b = execute(cfg, three);

  for (const char* name :
       {"ablation.csv", "ablation_summary.csv", "kcurve.csv",
        "checkpoint.txt"}) {
    INFO(name);
    CHECK(slurp(a.output_dir / name) == slurp(b.output_dir / name));
  }

  // 8 variants, 2 trials
  const std::string rows = slurp(a.output_dir / "ablation.csv");
  CHECK(std::count(rows.begin(), rows.end(), '\n') == 17);
  const std::string kcurve = slurp(a.output_dir / "kcurve.csv");
  CHECK(std::count(kcurve.begin(), kcurve.end(), '\n') == 3);
  CHECK(a.summary["ablation"]["rows"].size() == 8);
  CHECK(a.summary["ablation"]["rows"][0]["name"] == "fixed");
}

TEST_CASE("a saved checkpoint reproduces the training result exactly") {
  ExperimentConfig cfg = parse_config(kAblationConfig);
  cfg.output_dir = fresh_dir("ck_a").string();
  ReportBundle trained = execute(cfg);
  REQUIRE(trained.valid);
  CHECK(trained.summary["init"]["source"] == "joint-train");

  cfg.output_dir = fresh_dir("ck_b").string();
  ExecuteOptions opts;
  opts.init_checkpoint = (trained.output_dir / "checkpoint.txt").string();
  ReportBundle loaded = execute(cfg, opts);
  REQUIRE(loaded.valid);
  CHECK(loaded.summary["init"]["source"] == "checkpoint");
  CHECK(loaded.summary["init"]["checksum"] ==
        trained.summary["init"]["checksum"]);
  CHECK(slurp(trained.output_dir / "ablation.csv") ==
        slurp(loaded.output_dir / "ablation.csv"));
}

TEST_CASE("theorem sweep bundle carries the pinned columns") {
  ExperimentConfig cfg = parse_config(R"({
    "seed": 31,
    "mode": "theorem-sweep",
    "sweep": {"k_grid": [1, 2, 8], "trials": 30, "dim": 4, "length": 64}
  })");
  cfg.output_dir = fresh_dir("sweep").string();
  ReportBundle bundle = execute(cfg);
  REQUIRE(bundle.valid);
  const std::string csv = slurp(bundle.output_dir / "sweep.csv");
  CHECK(csv.rfind("k,measured_mean,measured_stderr,oracle,bias_term,"
                  "variance_term,bound\n",
                  0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(bundle.summary["sweep"]["rows"].size() == 3);
  CHECK(bundle.summary["sweep"]["sweet_spot"].contains("continuous"));

  // cross-term statistics ride along in the summary
  for (const json& row : bundle.summary["sweep"]["rows"])
    CHECK(row.contains("cross_term_mean"));
}

TEST_CASE("report figures from sweep and ablation bundles") {
  ExperimentConfig sweep_cfg = parse_config(R"({
    "seed": 31,
    "mode": "theorem-sweep",
    "sweep": {"k_grid": [1, 2, 8], "trials": 10, "dim": 4, "length": 64}
  })");
  sweep_cfg.output_dir = fresh_dir("fig_sweep").string();
  execute(sweep_cfg);
  const fs::path fig_dir = fresh_dir("fig_out");
  auto files = report_figures(sweep_cfg.output_dir, fig_dir);
  REQUIRE(files == std::vector<std::string>{"fig_window_curve.csv"});
  const std::string curve = slurp(fig_dir / "fig_window_curve.csv");
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 4);

  ExperimentConfig abl_cfg = parse_config(kAblationConfig);
  abl_cfg.output_dir = fresh_dir("fig_abl").string();
  execute(abl_cfg);
  files = report_figures(abl_cfg.output_dir, abl_cfg.output_dir);
  REQUIRE(files == std::vector<std::string>{"fig_window_curve.csv",
                                            "fig_memory_bars.csv"});
  const std::string bars = slurp(fs::path(abl_cfg.output_dir) /
                                 "fig_memory_bars.csv");
  CHECK(std::count(bars.begin(), bars.end(), '\n') == 9);
  CHECK(bars.find("implicit-only") != std::string::npos);

  CHECK_THROWS_AS(report_figures(fresh_dir("fig_empty"), fig_dir),
                  std::invalid_argument);
}
