#include "catch2/catch_amalgamated.hpp"

#include "streamttt/ablation.hpp"
#include "streamttt/theory.hpp"
#include "streamttt/ttt_loop.hpp"
#include "test_util.hpp"

using namespace streamttt;

namespace {

std::vector<LabeledFrame> drift_stream(std::size_t dim, std::int64_t length,
                                       double eta, std::uint64_t seed) {
  StreamSpec s;
  s.kind = StreamKind::kLinearDrift;
  s.dim = dim;
  s.length = length;
  s.eta = eta;
  s.seed = seed;
  return gen_latent_stream(s);
}

std::vector<LabeledFrame> toy_video(std::int64_t length, std::uint64_t seed,
                                    double eta = 1.5,
                                    std::vector<std::int64_t> switches = {}) {
  StreamSpec s;
  s.kind = StreamKind::kShapeVideo;
  s.height = s.width = 8;
  s.length = length;
  s.eta = eta;
  s.seed = seed;
  s.shape_radius = 1;
  s.regime_times = std::move(switches);
  return gen_shape_video(s);
}

NeuralModelSpec small_spec() {
  NeuralModelSpec spec;
  spec.height = spec.width = 8;
  spec.patch_size = 2;
  spec.hidden_dim = 6;
  return spec;
}

}  // namespace

TEST_CASE("quadratic inner loop converges to the window stationary point") {
  QuadModelSpec spec = make_quad_spec(2.0, 2.5, 1.0, 5);
  const std::uint64_t stream_seed = 60;
  auto stream = drift_stream(5, 24, 0.05, stream_seed);

  TTTConfig cfg;
  cfg.window_size = 8;
  cfg.iters_per_frame = 500;
  cfg.batch_size = 0;  // deterministic full-window gradient
  cfg.lr = 0.1 / spec.alpha;
  cfg.init_policy = InitPolicy::kCarryOver;
  cfg.seed = 1;

  QuadRunner runner(spec, make_quad_state(spec, Vec(5, 0.0)), stream_seed);
  RunTrace trace = run_stream(runner, stream, cfg);
  REQUIRE(trace.valid);

  // compare the final parameters against the closed form on the last window
  std::vector<Frame> window;
  for (std::size_t i = stream.size() - 8; i < stream.size(); ++i)
    window.push_back(stream[i].frame);
  Vec tilde = closed_form_window_solution(spec, window, stream_seed);
  CHECK(norm(sub(runner.state.f_params, tilde)) < 1e-6);
}

TEST_CASE("excess risk decays geometrically on a constant noiseless stream") {
  QuadModelSpec spec = make_quad_spec(1.0, 1.0, 0.0, 3);
  StreamSpec s;
  s.kind = StreamKind::kConstant;
  s.dim = 3;
  s.length = 30;
  s.seed = 8;
  auto stream = gen_latent_stream(s);

  TTTConfig cfg;
  cfg.window_size = 4;
  cfg.iters_per_frame = 1;
  cfg.batch_size = 0;
  cfg.lr = 0.05;
  cfg.init_policy = InitPolicy::kCarryOver;

  QuadRunner runner(spec, make_quad_state(spec, Vec(3, 2.0)), s.seed);
  RunTrace trace = run_stream(runner, stream, cfg);
  REQUIRE(trace.valid);

  // one step per frame contracts the distance by (1 - lr alpha), so the
  // quadratic excess risk contracts by its square
  const double rho = 1.0 - cfg.lr * spec.alpha;
  for (std::size_t t = 0; t + 1 < trace.records.size(); ++t) {
    const double ratio =
        trace.records[t + 1].pred_error / trace.records[t].pred_error;
    CHECK(ratio == Catch::Approx(rho * rho).epsilon(1e-10));
  }
  CHECK(trace.records.back().pred_error < trace.records.front().pred_error);
}

TEST_CASE("zero iterations and zero learning rate match the fixed baseline") {
  NeuralModelSpec spec = small_spec();
  ModelState st = init_neural_state(spec, 14);
  auto stream = toy_video(20, 3);

  TTTConfig fixed_cfg;
  fixed_cfg.iters_per_frame = 0;
  fixed_cfg.window_size = 4;
  fixed_cfg.batch_size = 4;
  fixed_cfg.lr = 0.05;
  fixed_cfg.seed = 9;

  TTTConfig zero_lr = fixed_cfg;
  zero_lr.iters_per_frame = 1;
  zero_lr.lr = 0.0;

  NeuralRunner a(spec, st), b(spec, st);
  RunTrace ta = run_stream(a, stream, fixed_cfg);
  RunTrace tb = run_stream(b, stream, zero_lr);
  REQUIRE(ta.records.size() == tb.records.size());
  for (std::size_t i = 0; i < ta.records.size(); ++i) {
    CHECK(ta.records[i].main_loss == tb.records[i].main_loss);
    CHECK(ta.records[i].ssl_loss == tb.records[i].ssl_loss);
    CHECK(ta.records[i].pred_error == tb.records[i].pred_error);
    CHECK(ta.records[i].params_drift == 0.0);
    CHECK(tb.records[i].params_drift == 0.0);
  }
}

TEST_CASE("a window of one with resets is exactly single-frame adaptation") {
  NeuralModelSpec spec = small_spec();
  ModelState st = init_neural_state(spec, 77);
  auto stream = toy_video(6, 21);

  TTTConfig cfg;
  cfg.window_size = 1;
  cfg.iters_per_frame = 2;
  cfg.batch_size = 0;
  cfg.lr = 0.05;
  cfg.init_policy = InitPolicy::kReset;
  cfg.seed = 33;

  NeuralRunner runner(spec, st);
  RunTrace trace = run_stream(runner, stream, cfg);
  REQUIRE(trace.valid);

  // replay the same schedule by hand, one frame at a time from frozen weights
  for (std::size_t i = 0; i < stream.size(); ++i) {
    ModelState manual = st;
    const std::uint64_t t = static_cast<std::uint64_t>(stream[i].frame.index);
    for (std::uint64_t iter = 0; iter < 2; ++iter) {
      InnerEval ev = masked_recon_objective(
          spec, manual, stream[i].frame.values, cfg.mask_ratio,
          derive_key(cfg.seed, {kSaltMask, t, iter, 0}));
      axpy(-cfg.lr, ev.f_grad, manual.f_params);
      axpy(-cfg.lr, ev.g_grad, manual.g_params);
    }
    Vec logits = neural_main_logits(spec, manual, stream[i].frame.values);
    CHECK(trace.records[i].main_loss == bce_loss(logits, stream[i].label));
    CHECK(trace.records[i].pred_error == pixel_error(logits, stream[i].label));
    CHECK(trace.records[i].params_drift == drift_from_frozen(manual));
  }
}

TEST_CASE("a prediction only depends on the frames seen so far") {
  NeuralModelSpec spec = small_spec();
  ModelState st = init_neural_state(spec, 50);
  auto stream = toy_video(40, 11, 1.5, {20});

  TTTConfig cfg;
  cfg.window_size = 6;
  cfg.iters_per_frame = 1;
  cfg.batch_size = 3;
  cfg.lr = 0.05;
  cfg.seed = 4;

  NeuralRunner full(spec, st);
  RunTrace full_trace = run_stream(full, stream, cfg);

  std::vector<LabeledFrame> prefix(stream.begin(), stream.begin() + 25);
  NeuralRunner part(spec, st);
  RunTrace part_trace = run_stream(part, prefix, cfg);

  REQUIRE(part_trace.records.size() == 25);
  for (std::size_t i = 0; i < 25; ++i) {
    CHECK(full_trace.records[i].main_loss == part_trace.records[i].main_loss);
    CHECK(full_trace.records[i].ssl_loss == part_trace.records[i].ssl_loss);
    CHECK(full_trace.records[i].pred_error == part_trace.records[i].pred_error);
    CHECK(full_trace.records[i].params_drift ==
          part_trace.records[i].params_drift);
    CHECK(full_trace.predictions[i] == part_trace.predictions[i]);
  }
}

TEST_CASE("identical configurations reproduce identical traces") {
  NeuralModelSpec spec = small_spec();
  ModelState st = init_neural_state(spec, 1);
  auto stream = toy_video(15, 2);
  TTTConfig cfg;
  cfg.window_size = 4;
  cfg.batch_size = 4;
  cfg.lr = 0.05;
  cfg.seed = 19;
  cfg.objective = InnerObjective::kMaskedRecon;

  NeuralRunner a(spec, st), b(spec, st);
  RunTrace ta = run_stream(a, stream, cfg);
  RunTrace tb = run_stream(b, stream, cfg);
  REQUIRE(ta.records.size() == tb.records.size());
  for (std::size_t i = 0; i < ta.records.size(); ++i) {
    CHECK(ta.records[i].main_loss == tb.records[i].main_loss);
    CHECK(ta.predictions[i] == tb.predictions[i]);
  }
  CHECK(a.state.f_params == b.state.f_params);
}

TEST_CASE("shuffling the stream cannot move the fixed baseline summary") {
  NeuralModelSpec spec = small_spec();
  ModelState st = init_neural_state(spec, 23);
  auto stream = toy_video(30, 6, 1.5, {15});
  auto mixed = shuffle_stream(stream, 99);

  TTTConfig cfg;
  cfg.iters_per_frame = 0;
  cfg.seed = 7;

  NeuralRunner a(spec, st), b(spec, st);
  RunTrace ta = run_stream(a, stream, cfg);
  RunTrace tb = run_stream(b, mixed, cfg);
  CHECK(ta.mean_main_loss() == tb.mean_main_loss());
  CHECK(ta.mean_pred_error() == tb.mean_pred_error());
  CHECK(ta.mean_iou() == tb.mean_iou());
}

TEST_CASE("divergent steps abort with an invalid trace") {
  QuadModelSpec spec = make_quad_spec(1.0, 1.0, 0.0, 2);
  auto stream = drift_stream(2, 40, 0.01, 3);
  TTTConfig cfg;
  cfg.window_size = 4;
  cfg.batch_size = 0;
  cfg.lr = 1e40;  // wildly unstable
  QuadRunner runner(spec, make_quad_state(spec, Vec(2, 1.0)), 3);
  RunTrace trace = run_stream(runner, stream, cfg);
  CHECK_FALSE(trace.valid);
  CHECK_FALSE(trace.abort_reason.empty());
  CHECK(trace.records.size() < stream.size());
}

TEST_CASE("temporal smoothing is a causal moving average") {
  std::vector<Vec> preds{{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}, {0.0, 0.0}};
  CHECK(temporal_smooth(preds, 1) == preds);

  auto s2 = temporal_smooth(preds, 2);
  CHECK(s2[0] == Vec{1.0, 0.0});
  CHECK(s2[1] == Vec{0.5, 0.5});
  CHECK(s2[2] == Vec{0.5, 1.0});
  CHECK(s2[3] == Vec{0.5, 0.5});

  std::vector<Vec> constant(5, Vec{0.25, 0.75});
  for (std::size_t w : {1, 2, 4, 9})
    CHECK(temporal_smooth(constant, w) == constant);
  CHECK_THROWS_AS(temporal_smooth(preds, 0), std::invalid_argument);
}

TEST_CASE("offline training evaluates on schedule and keeps the best pass") {
  NeuralModelSpec spec = small_spec();
  ModelState st = init_neural_state(spec, 41);
  auto stream = toy_video(20, 12);

  OfflineConfig cfg;
  cfg.iterations = 50;
  cfg.eval_every = 20;
  cfg.batch_size = 4;
  cfg.lr = 0.05;
  cfg.seed = 2;

  OfflineResult res = run_offline_all_frames(spec, stream, st, cfg);
  REQUIRE(res.valid);
  std::vector<std::size_t> iters;
  for (const auto& pt : res.evals) iters.push_back(pt.iteration);
  CHECK(iters == std::vector<std::size_t>{0, 20, 40, 50});
  CHECK(res.best.mean_pred_error <= res.evals.front().mean_pred_error);
  for (const auto& pt : res.evals) {
    CHECK(std::isfinite(pt.mean_main_loss));
    CHECK(std::isfinite(pt.mean_pred_error));
    if (pt.iteration == res.best_iteration)
      CHECK(pt.mean_pred_error == res.best.mean_pred_error);
  }

  OfflineResult again = run_offline_all_frames(spec, stream, st, cfg);
  CHECK(again.best_iteration == res.best_iteration);
  CHECK(again.best.mean_pred_error == res.best.mean_pred_error);
}

TEST_CASE("ablation rows share the snapshot and a stable schema") {
  NeuralModelSpec spec = small_spec();
  ModelState st = init_neural_state(spec, 66);
  auto stream = toy_video(24, 17, 1.5, {12});

  TTTConfig base;
  base.window_size = 4;
  base.batch_size = 4;
  base.lr = 0.05;
  base.seed = 5;

  OfflineConfig off;
  off.iterations = 30;
  off.eval_every = 10;
  off.batch_size = 4;
  off.lr = 0.05;
  off.seed = 5;

  auto rows = run_ablation_suite(spec, stream, st, base, off);
  REQUIRE(rows.size() == 8);
  const std::vector<std::string> names{
      "fixed",   "no-memory",          "implicit-only",  "explicit-only",
      "online",  "offline-all-frames", "fixed-shuffled", "online-shuffled"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].name == names[i]);
    CHECK(rows[i].valid);
    CHECK(rows[i].init_checksum == frozen_checksum(st));
    CHECK(std::isfinite(rows[i].mean_pred_error));
  }
  // frame order cannot matter for a model that never updates
  CHECK(rows[0].mean_pred_error == rows[6].mean_pred_error);
  CHECK(rows[0].mean_main_loss == rows[6].mean_main_loss);
  CHECK(rows[0].final_drift == 0.0);
  CHECK(rows[4].final_drift > 0.0);

  // worker count must not influence any cell
  auto rows4 = run_ablation_suite(spec, stream, st, base, off, 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].mean_pred_error == rows4[i].mean_pred_error);
    CHECK(rows[i].mean_main_loss == rows4[i].mean_main_loss);
  }
}
