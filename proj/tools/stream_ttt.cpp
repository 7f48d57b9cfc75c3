// Command-line harness. Subcommands map onto run modes; every experiment is
// described by a JSON config and produces a bundle of CSVs plus a summary.
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "streamttt/config.hpp"
#include "streamttt/runner.hpp"
#include "streamttt/streamgen.hpp"

namespace {

using streamttt::ExperimentConfig;
using streamttt::json;
using streamttt::RunMode;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Seed priority: --seed flag, then the config value, then STREAM_TTT_SEED.
json load_config_json(const std::string& path,
                      const std::optional<std::uint64_t>& seed_flag) {
  json root = json::parse(read_file(path), nullptr, false);
  if (root.is_discarded())
    throw std::invalid_argument("config: not valid JSON");
  if (seed_flag) {
    if (root.is_object()) root["seed"] = *seed_flag;
  } else if (root.is_object() && !root.contains("seed")) {
    if (const char* env = std::getenv("STREAM_TTT_SEED")) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env, &end, 10);
      if (end == env || *end != '\0')
        throw std::invalid_argument("STREAM_TTT_SEED is not an integer");
      root["seed"] = static_cast<std::uint64_t>(v);
    }
  }
  return root;
}

bool mode_allowed(const std::string& subcommand, RunMode mode) {
  if (subcommand == "run")
    return mode == RunMode::kOnline || mode == RunMode::kFixed ||
           mode == RunMode::kOfflineAllFrames;
  if (subcommand == "sweep") return mode == RunMode::kTheoremSweep;
  if (subcommand == "ablate") return mode == RunMode::kAblationSuite;
  if (subcommand == "lemma") return mode == RunMode::kLemmaCheck;
  return false;
}

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
  std::string stream_file;
  std::string init_checkpoint;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_inputs) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")
      ->required();
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--out", args.out, "override the output directory");
  cmd->add_option("--jobs", args.jobs, "worker threads for independent runs")
      ->check(CLI::PositiveNumber);
  if (with_inputs) {
    cmd->add_option("--stream-file", args.stream_file,
                    "read the stream from a file instead of generating it");
    cmd->add_option("--init-checkpoint", args.init_checkpoint,
                    "start from a saved model instead of training");
  }
}

int run_experiment(const std::string& subcommand, const CommonArgs& args) {
  json root = load_config_json(args.config_path, args.seed);
  if (!args.out.empty() && root.is_object()) root["output_dir"] = args.out;
  ExperimentConfig cfg =
      streamttt::parse_config_json(root, !args.stream_file.empty());
  if (!mode_allowed(subcommand, cfg.mode))
    throw std::invalid_argument("mode '" + to_string(cfg.mode) +
                                "' does not belong to subcommand '" +
                                subcommand + "'");
  streamttt::ExecuteOptions opts;
  opts.jobs = args.jobs;
  if (!args.stream_file.empty()) opts.stream_file = args.stream_file;
  if (!args.init_checkpoint.empty()) opts.init_checkpoint = args.init_checkpoint;

  const streamttt::ReportBundle bundle = streamttt::execute(cfg, opts);
  std::cout << "wrote " << bundle.files.size() << " files to "
            << bundle.output_dir.string() << "\n";
  if (!bundle.valid) {
    std::cerr << "run flagged invalid";
    if (bundle.summary.contains("abort_reason"))
      std::cerr << ": " << bundle.summary["abort_reason"].get<std::string>();
    else if (bundle.summary.contains("error"))
      std::cerr << ": " << bundle.summary["error"].get<std::string>();
    std::cerr << "\n";
    return 2;
  }
  return 0;
}

int gen_stream_cmd(const CommonArgs& args) {
  json root = load_config_json(args.config_path, args.seed);
  ExperimentConfig cfg = streamttt::parse_config_json(root, true);
  if (!cfg.stream)
    throw std::invalid_argument("config: stream: required for gen-stream");
  const std::string out = args.out.empty() ? "stream.txt" : args.out;
  std::ofstream os(out, std::ios::binary);
  if (!os) throw std::invalid_argument("cannot write " + out);
  streamttt::write_stream(os, *cfg.stream, streamttt::gen_stream(*cfg.stream));
  std::cout << "wrote " << out << "\n";
  return 0;
}

int report_cmd(const std::string& bundle_dir, const std::string& out) {
  const std::string target = out.empty() ? bundle_dir : out;
  const std::vector<std::string> files =
      streamttt::report_figures(bundle_dir, target);
  for (const std::string& f : files) std::cout << "wrote " << f << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"online test-time training on streams"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-stream", "render a stream to a file");
  gen->add_option("--config", gen_args.config_path, "config with a stream section")
      ->required();
  gen->add_option("--seed", gen_args.seed, "override the config seed");
  gen->add_option("--out", gen_args.out, "output file (default stream.txt)");

  CommonArgs run_args, sweep_args, ablate_args, lemma_args;
  add_common(app.add_subcommand("run", "online / fixed / offline-all-frames"),
             run_args, true);
  add_common(app.add_subcommand("sweep", "window-size theory sweep"),
             sweep_args, false);
  add_common(app.add_subcommand("ablate", "memory ablation suite"),
             ablate_args, true);
  add_common(app.add_subcommand("lemma", "random quadratic lemma check"),
             lemma_args, false);

  std::string report_bundle, report_out;
  CLI::App* rep = app.add_subcommand("report", "plot-shaped CSVs from a bundle");
  rep->add_option("--bundle", report_bundle, "finished bundle directory")
      ->required();
  rep->add_option("--out", report_out, "target directory (default: bundle)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return gen_stream_cmd(gen_args);
    if (app.get_subcommand("run")->parsed())
      return run_experiment("run", run_args);
    if (app.get_subcommand("sweep")->parsed())
      return run_experiment("sweep", sweep_args);
    if (app.get_subcommand("ablate")->parsed())
      return run_experiment("ablate", ablate_args);
    if (app.get_subcommand("lemma")->parsed())
      return run_experiment("lemma", lemma_args);
    if (rep->parsed()) return report_cmd(report_bundle, report_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  return 1;
}
