// Acceptance gate. Runs every shipped preset through the CLI, then checks the
// headline claims against the emitted reports, one verdict line per criterion.
// Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamttt/masking.hpp"
#include "streamttt/neural_model.hpp"
#include "streamttt/objectives.hpp"
#include "streamttt/quad_model.hpp"
#include "streamttt/rng.hpp"
#include "streamttt/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace streamttt;

namespace {

int g_pass = 0;
int g_fail = 0;

void verdict(int idx, bool ok, const std::string& what) {
  std::printf("criterion %2d %s  %s\n", idx, ok ? "PASS" : "FAIL", what.c_str());
  if (ok)
    ++g_pass;
  else
    ++g_fail;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

json load_json(const fs::path& p) { return json::parse(slurp(p)); }

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> raw;  // data lines as written, newline stripped

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::runtime_error("missing CSV column " + name);
  }
};

Csv read_csv(const fs::path& p) {
  Csv out;
  std::istringstream is(slurp(p));
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (first) {
      out.header = std::move(fields);
      first = false;
    } else {
      out.cells.push_back(std::move(fields));
      out.raw.push_back(line);
    }
  }
  return out;
}

struct Preset {
  const char* name;
  const char* subcommand;
};

constexpr Preset kPresets[] = {
    {"sweep-base", "sweep"},       {"sweep-fast-drift", "sweep"},
    {"sweep-slow-drift", "sweep"}, {"sweep-low-noise", "sweep"},
    {"lemma-check", "lemma"},      {"video-ablation", "ablate"},
};

double run_preset(const Preset& p, int jobs, const fs::path& out) {
  std::ostringstream cmd;
  cmd << '"' << STREAM_TTT_CLI_PATH << "\" " << p.subcommand << " --config \""
      << (fs::path(STREAM_TTT_PRESET_DIR) / (std::string(p.name) + ".json")).string()
      << "\" --out \"" << out.string() << "\" --jobs " << jobs << " >/dev/null";
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = std::system(cmd.str().c_str());
  const auto t1 = std::chrono::steady_clock::now();
  if (rc != 0)
    throw std::runtime_error(std::string(p.name) + ": CLI exited with code " +
                             std::to_string(rc));
  return std::chrono::duration<double>(t1 - t0).count();
}

// |got - want| within rel of the larger magnitude, with a dust floor
bool close_rel(double got, double want, double rel, double floor_abs) {
  const double diff = std::abs(got - want);
  return diff <= floor_abs ||
         diff <= rel * std::max(std::abs(got), std::abs(want));
}

struct FdTally {
  int bad = 0;
  double worst = 0.0;

  void note(double analytic, double fd) {
    const double diff = std::abs(analytic - fd);
    const double scale = std::max(std::abs(analytic), std::abs(fd));
    const double rel = scale > 0.0 ? diff / scale : 0.0;
    if (diff > 1e-10 && rel > 1e-4) ++bad;
    worst = std::max(worst, diff <= 1e-10 ? 0.0 : rel);
  }
};

template <typename Loss>
double central_diff(Vec params, std::size_t idx, double h, const Loss& loss) {
  const double orig = params[idx];
  params[idx] = orig + h;
  const double up = loss(params);
  params[idx] = orig - h;
  const double down = loss(params);
  return (up - down) / (2.0 * h);
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "stream_ttt_acceptance";
  std::error_code ec;
  fs::remove_all(root, ec);

  std::map<std::string, fs::path> run_a, run_b;
  double sweep_base_secs = 0.0;
  try {
    for (const Preset& p : kPresets) {
      const fs::path a = root / "jobs1" / p.name;
      const double secs = run_preset(p, 1, a);
      if (std::string(p.name) == "sweep-base") sweep_base_secs = secs;
      run_a[p.name] = a;
    }
    for (const Preset& p : kPresets) {
      const fs::path b = root / "jobs8" / p.name;
      run_preset(p, 8, b);
      run_b[p.name] = b;
    }
  } catch (const std::exception& e) {
    std::printf("acceptance aborted while running presets: %s\n", e.what());
    return 1;
  }

  char buf[256];

  // 1: measured excess risk sits under the closed-form bound at every window
  {
    const json rows = load_json(run_a["sweep-base"] / "summary.json")["sweep"]["rows"];
    bool dominated = true;
    double worst = -1e300;
    for (const json& r : rows) {
      const double slack = r["measured_mean"].get<double>() -
                           3.0 * r["measured_stderr"].get<double>() -
                           r["bound"].get<double>();
      worst = std::max(worst, slack);
      if (r["measured_mean"].get<double>() >
          r["bound"].get<double>() + 3.0 * r["measured_stderr"].get<double>())
        dominated = false;
    }
    const bool fast = sweep_base_secs < 60.0;
    std::snprintf(buf, sizeof buf,
                  "risk under bound at all windows (worst slack %+.2e), "
                  "single-thread sweep %.1fs",
                  worst, sweep_base_secs);
    verdict(1, dominated && fast, buf);
  }

  // 2: Monte-Carlo means match the analytic oracle; cross term is noise
  {
    const json rows = load_json(run_a["sweep-base"] / "summary.json")["sweep"]["rows"];
    bool match = true, cross_zero = true;
    double worst_z = 0.0;
    for (const json& r : rows) {
      const double dev = std::abs(r["measured_mean"].get<double>() -
                                  r["oracle"].get<double>());
      const double se = r["measured_stderr"].get<double>();
      worst_z = std::max(worst_z, se > 0 ? dev / se : 0.0);
      if (dev > 3.0 * se) match = false;
      const double cm = std::abs(r["cross_term_mean"].get<double>());
      if (cm > 1e-12 && cm > 3.0 * r["cross_term_stderr"].get<double>())
        cross_zero = false;
    }
    std::snprintf(buf, sizeof buf,
                  "means within 3 stderr of oracle (worst %.2f), cross term "
                  "within 3 stderr of zero",
                  worst_z);
    verdict(2, match && cross_zero, buf);
  }

  // 3: grid argmin equals the oracle argmin on every sweep; the continuous
  // sweet-spot formula lands within 2x of the grid argmin on most of them
  {
    int argmin_ok = 0, within2 = 0, total = 0;
    for (const Preset& p : kPresets) {
      if (std::string(p.subcommand) != "sweep") continue;
      ++total;
      const json ss = load_json(run_a[p.name] / "summary.json")["sweep"]["sweet_spot"];
      const double grid = ss["measured_argmin_k"].get<double>();
      if (ss["measured_argmin_k"] == ss["oracle_argmin_k"]) ++argmin_ok;
      const double cont = ss["continuous"].get<double>();
      if (cont >= 0.5 * grid && cont <= 2.0 * grid) ++within2;
    }
    std::snprintf(buf, sizeof buf,
                  "argmin matches oracle on %d/%d sweeps, continuous sweet "
                  "spot within 2x on %d/%d",
                  argmin_ok, total, within2, total);
    verdict(3, argmin_ok == total && within2 >= 3, buf);
  }

  // 4: perturbation gap bound on random quadratics, tight in the isotropic case
  {
    const json lm = load_json(run_a["lemma-check"] / "summary.json")["lemma"];
    const Csv csv = read_csv(run_a["lemma-check"] / "lemma.csv");
    bool all_rows = csv.cells.size() == 1000;
    const std::size_t c_gap = csv.col("gap"), c_bound = csv.col("bound");
    for (const auto& row : csv.cells)
      if (std::stod(row[c_gap]) > std::stod(row[c_bound]) + 1e-9)
        all_rows = false;

    Rng rng(20260825);
    double worst_iso = 0.0;
    for (int i = 0; i < 50; ++i) {
      const std::size_t d = 1 + rng.uniform_index(10);
      const double alpha = rng.uniform(0.5, 3.0);
      Mat h = Mat::scaled_identity(d, alpha);
      const Vec b = gaussian_vec(d, rng, 2.0);
      const Vec v = gaussian_vec(d, rng, 2.0);
      const LemmaReport rep = verify_lemma(h, b, v, alpha);
      worst_iso = std::max(worst_iso, std::abs(rep.gap - rep.bound));
    }
    std::snprintf(buf, sizeof buf,
                  "gap bound holds on %lld/%lld instances, isotropic gap "
                  "tight to %.1e",
                  lm["holding"].get<long long>(),
                  lm["instances"].get<long long>(), worst_iso);
    verdict(4,
            lm["all_hold"].get<bool>() && all_rows &&
                lm["instances"].get<long long>() == 1000 && worst_iso <= 1e-12,
            buf);
  }

  // video suite reports, shared by criteria 5 through 8
  const Csv summary = read_csv(run_a["video-ablation"] / "ablation_summary.csv");
  const Csv kcurve = read_csv(run_a["video-ablation"] / "kcurve.csv");
  const std::size_t c_name = summary.col("name");
  const std::size_t c_err = summary.col("mean_pred_error");
  const std::size_t c_se = summary.col("pred_error_stderr");
  auto arm_row = [&](const std::string& name) -> const std::vector<std::string>& {
    for (const auto& row : summary.cells)
      if (row[c_name] == name) return row;
    throw std::runtime_error("missing ablation arm " + name);
  };
  auto arm_err = [&](const std::string& name) {
    return std::stod(arm_row(name)[c_err]);
  };

  // 5: window size U-curve
  {
    std::map<long, double> kerr;
    const std::size_t ck = kcurve.col("k"), ce = kcurve.col("mean_pred_error");
    for (const auto& row : kcurve.cells)
      kerr[std::stol(row[ck])] = std::stod(row[ce]);
    const bool ok = kerr.count(1) && kerr.count(16) && kerr.count(256) &&
                    kerr[16] < kerr[1] && kerr[16] < kerr[256];
    std::snprintf(buf, sizeof buf,
                  "U-curve err(k=16)=%.4f below err(k=1)=%.4f and err(k=256)=%.4f",
                  kerr[16], kerr[1], kerr[256]);
    verdict(5, ok, buf);
  }

  // 6: online beats offline at the latter's best evaluated iteration
  {
    const double online = arm_err("online");
    const double offline = arm_err("offline-all-frames");
    std::snprintf(buf, sizeof buf, "online %.4f vs offline best %.4f", online,
                  offline);
    verdict(6, online < offline, buf);
  }

  // 7: shuffling is invisible to the fixed model and hurts the online one
  {
    auto tail = [&](const std::string& name) {
      const std::string& raw = summary.raw[&arm_row(name) - summary.cells.data()];
      return raw.substr(raw.find(','));  // drop the name field
    };
    const bool fixed_same = tail("fixed") == tail("fixed-shuffled");
    const double on = arm_err("online"), on_se = std::stod(arm_row("online")[c_se]);
    const double sh = arm_err("online-shuffled");
    const double sh_se = std::stod(arm_row("online-shuffled")[c_se]);
    const bool separated = on + on_se < sh - sh_se;
    std::snprintf(buf, sizeof buf,
                  "fixed summary byte-identical %s, online %.4f+-%.4f vs "
                  "shuffled %.4f+-%.4f",
                  fixed_same ? "yes" : "NO", on, on_se, sh, sh_se);
    verdict(7, fixed_same && separated, buf);
  }

  // 8: both memories together beat each memory alone
  {
    const double on = arm_err("online"), imp = arm_err("implicit-only");
    const double none = arm_err("no-memory"), exp = arm_err("explicit-only");
    const bool ok = on <= imp && imp <= none && on <= exp;
    std::snprintf(buf, sizeof buf,
                  "online %.4f <= implicit %.4f <= no-memory %.4f, online <= "
                  "explicit %.4f",
                  on, imp, none, exp);
    verdict(8, ok, buf);
  }

  // 9: analytic gradients against central differences, 100 probes each
  {
    FdTally tally;
    Rng rng(424242);

    {  // quadratic self-supervised loss over theta
      const QuadModelSpec qspec = make_quad_spec(1.0, 1.0, 1.0, 8);
      const Vec theta = gaussian_vec(8, rng, 1.0);
      const Frame frame{gaussian_vec(8, rng, 1.0), 3};
      const Vec grad = quad_ssl_grad(qspec, theta, frame, 17);
      for (int probe = 0; probe < 100; ++probe) {
        const std::size_t i = rng.uniform_index(theta.size());
        const double fd = central_diff(theta, i, 1e-6, [&](const Vec& t) {
          return quad_ssl_loss(qspec, t, frame, 17);
        });
        tally.note(grad[i], fd);
      }
    }

    NeuralModelSpec spec;
    spec.height = spec.width = 16;
    spec.patch_size = 4;
    spec.hidden_dim = 4;
    ModelState st = init_neural_state(spec, 91);
    Vec values(spec.pixels());
    for (double& v : values) v = rng.uniform(0.0, 1.0);

    {  // masked reconstruction, f and g
      const InnerEval ev = masked_recon_objective(spec, st, values, 0.7, 5);
      for (int probe = 0; probe < 100; ++probe) {
        const std::size_t i = rng.uniform_index(st.f_params.size());
        const double fd = central_diff(st.f_params, i, 1e-5, [&](const Vec& f) {
          ModelState s2 = st;
          s2.f_params = f;
          return masked_recon_objective(spec, s2, values, 0.7, 5).loss;
        });
        tally.note(ev.f_grad[i], fd);
      }
      for (int probe = 0; probe < 100; ++probe) {
        const std::size_t i = rng.uniform_index(st.g_params.size());
        const double fd = central_diff(st.g_params, i, 1e-5, [&](const Vec& g) {
          ModelState s2 = st;
          s2.g_params = g;
          return masked_recon_objective(spec, s2, values, 0.7, 5).loss;
        });
        tally.note(ev.g_grad[i], fd);
      }
    }

    {  // prediction entropy, f only
      const InnerEval ev = entropy_objective(spec, st, values);
      for (int probe = 0; probe < 100; ++probe) {
        const std::size_t i = rng.uniform_index(st.f_params.size());
        const double fd = central_diff(st.f_params, i, 1e-5, [&](const Vec& f) {
          ModelState s2 = st;
          s2.f_params = f;
          return entropy_objective(spec, s2, values).loss;
        });
        tally.note(ev.f_grad[i], fd);
      }
    }

    {  // self-training fit against frozen pseudo labels, f only
      ModelState conf = st;
      for (double& w : conf.h_params) w *= 25.0;  // spread logits so some pixels clear the bar
      const PseudoLabels labels = select_pseudo_labels(spec, conf, values, 0.55);
      const MaskedView view = mask_frame(values, spec.grid(), 0.7, 11);
      const InnerEval ev = self_train_fit(spec, conf, labels, view);
      bool any = !labels.selected.empty();
      for (int probe = 0; probe < 100 && any; ++probe) {
        const std::size_t i = rng.uniform_index(conf.f_params.size());
        const double fd = central_diff(conf.f_params, i, 1e-5, [&](const Vec& f) {
          ModelState s2 = conf;
          s2.f_params = f;
          return self_train_fit(spec, s2, labels, view).loss;
        });
        tally.note(ev.f_grad[i], fd);
      }
      if (!any) ++tally.bad;
    }

    std::snprintf(buf, sizeof buf,
                  "central differences, %d mismatches, worst relative %.2e",
                  tally.bad, tally.worst);
    verdict(9, tally.bad == 0, buf);
  }

  // 10: worker count never changes an emitted CSV
  {
    int compared = 0;
    bool identical = true;
    for (const Preset& p : kPresets) {
      for (const auto& entry : fs::directory_iterator(run_a[p.name])) {
        if (entry.path().extension() != ".csv") continue;
        ++compared;
        const fs::path twin = run_b[p.name] / entry.path().filename();
        if (!fs::exists(twin) || slurp(entry.path()) != slurp(twin))
          identical = false;
      }
    }
    std::snprintf(buf, sizeof buf,
                  "%d CSVs byte-identical between --jobs 1 and --jobs 8",
                  compared);
    verdict(10, identical && compared > 0, buf);
  }

  std::printf("%d/%d criteria passed\n", g_pass, g_pass + g_fail);
  return g_fail == 0 ? 0 : 1;
}
