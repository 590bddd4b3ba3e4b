// score-mewma: fit, calibrate, study, monitor and simulate from the command line.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "smewma/calibration.hpp"
#include "smewma/error.hpp"
#include "smewma/io.hpp"
#include "smewma/likelihood.hpp"
#include "smewma/mewma.hpp"
#include "smewma/model.hpp"
#include "smewma/simulate.hpp"
#include "smewma/study.hpp"

using namespace smewma;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitFit = 3;
constexpr int kExitCalibration = 4;
constexpr int kExitShift = 5;

struct Common {
  std::string model_path;
  std::string params_path;
  std::string out_path;
  std::uint64_t seed = 1;
  int threads = 0;
};

struct ChartOpts {
  double r = 0.1;
  std::optional<double> h;
  std::string calibration_path;
  long warmup = 1;
  std::string covariance_mode = "exact-recursive";
};

struct Loaded {
  Model model;
  ParamVector theta0;
  std::string hash;
};

Loaded load_model(const Common& c) {
  Loaded l{c.model_path.empty() ? default_delivery_model()
                                : parse_model_spec(read_text_file(c.model_path)),
           {}, {}};
  l.theta0 = l.model.params;
  if (!c.params_path.empty()) {
    l.theta0 = load_params(parse_json_text(read_text_file(c.params_path), c.params_path), l.theta0);
  }
  l.hash = model_hash(l.model);
  return l;
}

RunManifest manifest_for(const std::string& command, const std::vector<std::string>& args,
                         const Loaded& l, std::uint64_t seed) {
  return RunManifest{command, args, l.hash, seed, utc_timestamp()};
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << std::flush;
  } else {
    write_text_file(path, text);
  }
}

InfoMatrix in_control_sigma(const Loaded& l) {
  return expected_score_covariance(l.model.spec, l.theta0, l.model.covariates).sigma;
}

ChartConfig chart_config(const Loaded& l, const ChartOpts& o, bool need_h) {
  double r = o.r;
  std::optional<double> h = o.h;
  if (!o.calibration_path.empty()) {
    const Json doc = parse_json_text(read_text_file(o.calibration_path), o.calibration_path);
    try {
      const auto& res = doc.at("result");
      if (!h) h = res.at("h").get<double>();
      r = res.at("config").at("r").get<double>();
    } catch (const Json::exception& e) {
      throw InputError(fmt::format("'{}' is not a calibration result: {}", o.calibration_path, e.what()));
    }
  }
  if (need_h && !h) throw InputError("a control limit is required: pass --h or --calibration");
  ChartConfig cfg = make_chart_config(r, h.value_or(0.0), in_control_sigma(l));
  cfg.warmup = o.warmup;
  cfg.covariance_mode = parse_covariance_mode(o.covariance_mode);
  cfg.coordinate_names = l.model.spec.layout().names();
  return cfg;
}

Json chart_echo(const ChartConfig& cfg) {
  Json j;
  j["r"] = cfg.r[0];
  j["h"] = cfg.h;
  j["sigma_s"] = "expected-enumeration";
  j["covariance_mode"] = to_string(cfg.covariance_mode);
  j["warmup"] = cfg.warmup;
  return j;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  if (!cur.empty() || !out.empty()) out.push_back(cur);
  return out;
}

ShiftSpec make_shift(const std::string& kind, const std::string& targets, double c) {
  return ShiftSpec{parse_shift_kind(kind), split_list(targets), c};
}

void add_common(CLI::App* cmd, Common& c, bool seed) {
  cmd->add_option("--model", c.model_path, "Model config JSON (default: built-in delivery model)");
  cmd->add_option("--params", c.params_path, "Coefficient values: fit report or {\"values\":{...}}");
  cmd->add_option("--out", c.out_path, "Output path ('-' for stdout)");
  if (seed) {
    cmd->add_option("--seed", c.seed, "Random seed");
    cmd->add_option("--threads", c.threads, "Worker threads (0: SCORE_MEWMA_THREADS or all cores)");
  }
}

void add_chart(CLI::App* cmd, ChartOpts& o) {
  cmd->set_help_flag("--help", "Print this help message and exit");
  cmd->add_option("--r", o.r, "EWMA smoothing in (0, 1]");
  cmd->add_option("--h", o.h, "Control limit");
  cmd->add_option("--calibration", o.calibration_path, "Calibration result supplying h and r");
  cmd->add_option("--warmup", o.warmup, "First patient index at which a signal may be raised");
  cmd->add_option("--covariance-mode", o.covariance_mode, "exact-recursive or asymptotic");
}

int run(const std::vector<std::string>& args);

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Risk-adjusted score-based MEWMA monitoring of Bayesian network outcome models",
               std::string(kToolName)};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  Common c;
  ChartOpts chart;

  auto* fit = app.add_subcommand("fit", "Estimate coefficients from Phase-I patient data");
  add_common(fit, c, false);
  std::string data_path;
  fit->add_option("--data", data_path, "Patient CSV")->required();

  auto* sim = app.add_subcommand("simulate", "Sample patients from the model");
  add_common(sim, c, true);
  long n = 0;
  std::string shift_kind, targets;
  double shift_c = 0.0;
  sim->add_option("--n", n, "Number of patients")->required();
  sim->add_option("--shift", shift_kind, "Shift kind");
  sim->add_option("--targets", targets, "Shift targets, comma separated");
  sim->add_option("--c", shift_c, "Shift factor");

  auto* cal = app.add_subcommand("calibrate", "Find h for a target in-control ARL");
  add_common(cal, c, true);
  add_chart(cal, chart);
  double target = 200.0, tolerance = 0.02;
  long reps = 10000, max_rl = 0, phase1 = 0;
  cal->add_option("--target-arl", target, "Target in-control ARL");
  cal->add_option("--tolerance", tolerance, "Relative tolerance on the ARL");
  cal->add_option("--reps", reps, "Final-stage replications (stages: reps/10, reps/2, reps)");
  cal->add_option("--max-rl", max_rl, "Run-length cap (default 20 x target)");
  cal->add_option("--phase1-size", phase1, "Refit coefficients on a Phase-I sample of this size per replication");

  auto* study = app.add_subcommand("study", "Out-of-control ARL over a grid of shift sizes");
  add_common(study, c, true);
  add_chart(study, chart);
  std::string c_grid, plot_path;
  long study_reps = 5000, study_max_rl = 4000;
  bool pair_grid = false;
  study->add_option("--shift", shift_kind, "coefficient, coefficient-pair, mean-additive, mean-odds")->required();
  study->add_option("--targets", targets, "Coefficient names or one outcome id")->required();
  study->add_option("--c-grid", c_grid, "a,b,c or start:stop:step")->required();
  study->add_option("--reps", study_reps, "Replications per c");
  study->add_option("--max-rl", study_max_rl, "Run-length cap");
  study->add_flag("--pair-grid", pair_grid, "Pair shifts: full 2-D grid plus single-coefficient rows");
  study->add_option("--emit-plot-data", plot_path, "Also write c, mean_rl, ci_low, ci_high");

  auto* mon = app.add_subcommand("monitor", "Stream patients through the chart");
  add_common(mon, c, false);
  add_chart(mon, chart);
  mon->add_option("--data", data_path, "Patient CSV ('-' or omitted: stdin)");

  auto* dm = app.add_subcommand("default-model", "Write the built-in model config");
  dm->add_option("--out", c.out_path, "Output path");

  auto* rerun = app.add_subcommand("rerun", "Re-execute the command recorded in an output file");
  std::string rerun_from;
  rerun->add_option("file", rerun_from, "Output file carrying a run manifest")->required();
  rerun->add_option("--out", c.out_path, "New output path")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  if (*dm) {
    emit(c.out_path, serialize_model(default_delivery_model()));
    return kExitOk;
  }

  if (*rerun) {
    const RunManifest m = read_manifest(rerun_from);
    std::vector<std::string> replay = m.args;
    bool replaced = false;
    for (std::size_t i = 0; i < replay.size(); ++i) {
      if (replay[i] == "--out" && i + 1 < replay.size()) {
        replay[i + 1] = c.out_path;
        replaced = true;
      } else if (replay[i].rfind("--out=", 0) == 0) {
        replay[i] = "--out=" + c.out_path;
        replaced = true;
      }
    }
    if (!replaced) {
      replay.push_back("--out");
      replay.push_back(c.out_path);
    }
    if (!replay.empty() && replay[0] == "rerun") throw InputError("refusing to rerun a rerun manifest");
    return run(replay);
  }

  const Loaded l = load_model(c);
  const auto& spec = l.model.spec;

  if (*fit) {
    const auto records = read_patient_csv_file(data_path, spec);
    const FitResult result = fit_mle(spec, records, l.theta0);
    emit(c.out_path, results_document(manifest_for("fit", args, l, 0),
                                      fit_report(l.model, result, records.size())));
    return kExitOk;
  }

  if (*sim) {
    if (n < 1) throw InputError("--n must be at least 1");
    const Generator gen = shift_kind.empty()
                              ? Generator(spec, l.theta0, l.model.covariates)
                              : apply_shift(spec, l.theta0, l.model.covariates,
                                            make_shift(shift_kind, targets, shift_c));
    Rng rng(c.seed, 0);
    PatientRecord r = PatientRecord::empty_for(spec);
    std::string out = csv_manifest_line(manifest_for("simulate", args, l, c.seed), nullptr);
    out += patient_csv_header(spec) + "\n";
    for (long i = 1; i <= n; ++i) {
      gen.sample_into(rng, r);
      out += patient_csv_row(spec, i, r) + "\n";
    }
    emit(c.out_path, out);
    return kExitOk;
  }

  if (*cal) {
    if (!(target > 1.0)) throw InputError("--target-arl must exceed 1");
    if (reps < 1) throw InputError("--reps must be at least 1");
    ChartConfig cfg = chart_config(l, chart, false);
    CalibrationOptions opts;
    opts.target_arl = target;
    opts.rel_tolerance = tolerance;
    opts.reps_schedule = {std::max(reps / 10, 1L), std::max(reps / 2, 1L), reps};
    opts.max_rl = max_rl;
    opts.seed = c.seed;
    opts.threads = c.threads;
    if (phase1 > 0) opts.phase1 = Phase1Refit{phase1, l.model.covariates};
    const Generator gen(spec, l.theta0, l.model.covariates);
    const CalibrationResult res = calibrate_h(gen, spec, l.theta0, cfg, opts);
    Json result = calibration_json(res);
    cfg.h = res.h;
    Json config = chart_echo(cfg);
    config["target_arl"] = target;
    config["rel_tolerance"] = tolerance;
    config["reps_schedule"] = opts.reps_schedule;
    config["max_rl"] = opts.effective_max_rl();
    config["seed"] = c.seed;
    config["phase1_size"] = phase1;
    result["config"] = std::move(config);
    if (res.achieved_arl.censoring_warning()) {
      std::cerr << "warning: censored replications; achieved ARL is a lower bound\n";
    }
    if (!res.converged) std::cerr << "warning: calibration stopped outside the tolerance\n";
    emit(c.out_path, results_document(manifest_for("calibrate", args, l, c.seed), result));
    return kExitOk;
  }

  if (*study) {
    const ShiftSpec shift = make_shift(shift_kind, targets, 0.0);
    const std::vector<double> grid = parse_c_grid(c_grid);
    const ChartConfig cfg = chart_config(l, chart, true);
    const auto ch = std::make_shared<const MewmaChart>(cfg);
    const StudySettings settings{c.seed, c.threads};
    std::vector<StudyRow> rows;
    if (pair_grid) {
      if (shift.kind != ShiftKind::coefficient_pair || shift.targets.size() != 2) {
        throw ShiftError("--pair-grid needs --shift coefficient-pair with two targets");
      }
      rows = run_pair_study(spec, l.theta0, l.model.covariates, ch,
                            {{shift.targets[0], shift.targets[1]}}, grid, study_reps, study_max_rl,
                            settings);
    } else {
      rows = run_arl_study(spec, l.theta0, l.model.covariates, ch,
                           StudyGrid{shift, grid, study_reps, study_max_rl}, settings);
    }
    Json meta = chart_echo(cfg);
    meta["model_hash"] = l.hash;
    meta["seed"] = c.seed;
    meta["max_rl"] = study_max_rl;
    const RunManifest m = manifest_for("study", args, l, c.seed);
    emit(c.out_path, csv_manifest_line(m, meta) + study_csv_body(rows));
    if (!plot_path.empty()) write_text_file(plot_path, csv_manifest_line(m, meta) + study_plot_csv_body(rows));
    bool censored = false;
    for (const auto& r : rows) censored = censored || r.arl.censoring_warning();
    if (censored) std::cerr << "warning: censored replications; affected ARLs are lower bounds\n";
    return kExitOk;
  }

  if (*mon) {
    const ChartConfig cfg = chart_config(l, chart, true);
    const auto ch = std::make_shared<const MewmaChart>(cfg);
    std::ifstream file;
    std::istream* in = &std::cin;
    if (!data_path.empty() && data_path != "-") {
      file.open(data_path);
      if (!file) throw InputError(fmt::format("cannot open '{}'", data_path));
      in = &file;
    }
    std::ofstream out_file;
    std::ostream* out = &std::cout;
    if (!c.out_path.empty() && c.out_path != "-") {
      out_file.open(c.out_path, std::ios::binary | std::ios::trunc);
      if (!out_file) throw InputError(fmt::format("cannot write '{}'", c.out_path));
      out = &out_file;
    }
    Json meta = chart_echo(cfg);
    meta["model_hash"] = l.hash;
    *out << csv_manifest_line(manifest_for("monitor", args, l, 0), meta) << "t,t2,signal,post_signal\n"
         << std::flush;
    PatientCsvReader reader(*in, spec);
    ScoreMonitor monitor(spec, l.theta0, ch);
    PatientRecord r = PatientRecord::empty_for(spec);
    bool signalled = false;
    while (reader.next(r)) {
      const TraceRow row = monitor.push(r);
      const bool post = signalled;
      signalled = signalled || row.signal;
      *out << row.t << ',' << format_number(row.t2) << ',' << (row.signal ? 1 : 0) << ','
           << (post ? 1 : 0) << '\n'
           << std::flush;
    }
    return kExitOk;
  }
  return kExitInput;
}

int run(const std::vector<std::string>& args) {
  try {
    return dispatch(args);
  } catch (const ShiftError& e) {
    std::cerr << "error: invalid shift: " << e.what() << "\n";
    return kExitShift;
  } catch (const CalibrationError& e) {
    std::cerr << "error: calibration failed: " << e.what() << "\n";
    return kExitCalibration;
  } catch (const FitError& e) {
    std::cerr << "error: fit failed: " << e.what() << "\n";
    return kExitFit;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}
