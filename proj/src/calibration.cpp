#include "smewma/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "smewma/error.hpp"
#include "smewma/likelihood.hpp"
#include "smewma/parallel.hpp"

namespace smewma {

namespace {

constexpr int kPhase1Attempts = 20;
constexpr double kMaxLimit = 1e6;

struct ReplicationSetup {
  ParamVector theta;
  std::shared_ptr<const MewmaChart> chart;
};

ReplicationSetup refit_phase1(const DagModelSpec& spec, const ParamVector& theta0,
                              const MewmaChart& chart, const Phase1Refit& phase1, Rng& rng) {
  const Generator in_control(spec, theta0, phase1.covariates);
  std::vector<PatientRecord> records(static_cast<std::size_t>(phase1.size),
                                     PatientRecord::empty_for(spec));
  for (int attempt = 0; attempt < kPhase1Attempts; ++attempt) {
    for (auto& r : records) in_control.sample_into(rng, r);
    try {
      FitResult fit = fit_mle(spec, records, theta0);
      ChartConfig config = chart.config();
      config.sigma_s = expected_score_covariance(spec, fit.theta, phase1.covariates).sigma;
      return {std::move(fit.theta), std::make_shared<const MewmaChart>(std::move(config))};
    } catch (const FitError&) {
    } catch (const SingularityError&) {
    }
  }
  throw FitError(fmt::format("Phase-I refit failed on {} consecutive samples of size {}",
                             kPhase1Attempts, phase1.size));
}

}  // namespace

std::vector<long> simulate_run_lengths(const Generator& generator, const DagModelSpec& spec,
                                       const ParamVector& theta0,
                                       const std::shared_ptr<const MewmaChart>& chart,
                                       const ArlOptions& options) {
  if (options.reps < 1) throw InputError("reps must be at least 1");
  if (options.max_rl < 1) throw InputError("max_rl must be at least 1");
  if (options.phase1 && options.phase1->size < 1) throw InputError("Phase-I size must be positive");
  if (chart->config().sigma_s.rows() != spec.dimension() || theta0.size() != spec.dimension()) {
    throw InputError("chart and coefficient vector do not match the model dimension");
  }

  std::vector<long> run_lengths(static_cast<std::size_t>(options.reps), 0);
  parallel_for(run_lengths.size(), resolve_threads(options.threads),
               [&](std::size_t begin, std::size_t end) {
                 PatientRecord record = PatientRecord::empty_for(spec);
                 ScoreVector s(spec.dimension());
                 std::optional<MewmaState> shared_state;
                 if (!options.phase1) shared_state.emplace(chart);

                 for (std::size_t rep = begin; rep < end; ++rep) {
                   Rng rng(options.seed, rep);
                   std::optional<ReplicationSetup> setup;
                   std::optional<MewmaState> own_state;
                   MewmaState* state = nullptr;
                   const Eigen::VectorXd* theta = &theta0.values();
                   if (options.phase1) {
                     setup = refit_phase1(spec, theta0, *chart, *options.phase1, rng);
                     own_state.emplace(setup->chart);
                     state = &*own_state;
                     theta = &setup->theta.values();
                   } else {
                     shared_state->reset();
                     state = &*shared_state;
                   }

                   long rl = options.max_rl;
                   for (long t = 1; t <= options.max_rl; ++t) {
                     generator.sample_into(rng, record);
                     s.setZero();
                     add_record_score(spec, *theta, record, s);
                     if (state->update(s).signal) {
                       rl = t;
                       break;
                     }
                   }
                   run_lengths[rep] = rl;
                 }
               });
  return run_lengths;
}

ArlResult summarize_run_lengths(const std::vector<long>& run_lengths, long max_rl) {
  ArlResult result;
  result.reps = static_cast<long>(run_lengths.size());
  result.max_rl = max_rl;
  if (run_lengths.empty()) return result;
  // integer sums keep the summary independent of reduction order
  __int128 sum = 0, sum_sq = 0;
  for (long rl : run_lengths) {
    sum += rl;
    sum_sq += static_cast<__int128>(rl) * rl;
  }
  const double n = static_cast<double>(run_lengths.size());
  result.mean_rl = static_cast<double>(sum) / n;
  if (run_lengths.size() > 1) {
    const __int128 centered = sum_sq * static_cast<__int128>(run_lengths.size()) - sum * sum;
    const double var = static_cast<double>(centered) / (n * (n - 1.0));
    result.std_error = std::sqrt(std::max(var, 0.0) / n);
  }
  return result;
}

ArlResult estimate_arl(const Generator& generator, const DagModelSpec& spec,
                       const ParamVector& theta0, const std::shared_ptr<const MewmaChart>& chart,
                       const ArlOptions& options) {
  if (options.max_rl < 1) throw InputError("max_rl must be at least 1");
  ArlOptions opts = options;
  // run one step past max_rl so censored runs can be told apart from a signal at max_rl
  opts.max_rl = options.max_rl + 1;
  std::vector<long> rls = simulate_run_lengths(generator, spec, theta0, chart, opts);
  long censored = 0;
  for (auto& rl : rls) {
    if (rl > options.max_rl) {
      rl = options.max_rl;
      ++censored;
    }
  }
  ArlResult result = summarize_run_lengths(rls, options.max_rl);
  result.censored = censored;
  return result;
}

long CalibrationOptions::effective_max_rl() const {
  return max_rl > 0 ? max_rl : static_cast<long>(std::ceil(20.0 * target_arl));
}

CalibrationResult calibrate_h(const Generator& generator, const DagModelSpec& spec,
                              const ParamVector& theta0, const ChartConfig& config_without_h,
                              const CalibrationOptions& options) {
  if (!(options.target_arl > 1.0)) throw InputError("target ARL must exceed 1");
  if (!(options.rel_tolerance > 0.0)) throw InputError("relative tolerance must be positive");
  if (options.reps_schedule.empty()) throw InputError("replication schedule is empty");
  if (static_cast<double>(config_without_h.warmup) >= options.target_arl) {
    throw CalibrationError("warmup is not below the target ARL; no limit can reach the target");
  }

  ChartConfig base = config_without_h;
  base.h = 0.0;
  const auto chart0 = std::make_shared<const MewmaChart>(base);
  const long max_rl = options.effective_max_rl();

  CalibrationResult result;
  const double target = options.target_arl;
  std::map<std::pair<double, long>, ArlResult> memo;
  auto evaluate = [&](double h, long reps) {
    if (auto it = memo.find({h, reps}); it != memo.end()) return it->second;
    ArlOptions arl_opts;
    arl_opts.reps = reps;
    arl_opts.max_rl = max_rl;
    arl_opts.seed = options.seed;
    arl_opts.phase1 = options.phase1;
    arl_opts.threads = options.threads;
    ArlResult arl = estimate_arl(generator, spec, theta0, chart0->with_limit(h), arl_opts);
    result.evaluations.push_back({h, arl, reps});
    ++result.iterations;
    memo.emplace(std::make_pair(h, reps), arl);
    return arl;
  };
  auto within = [&](const ArlResult& a) {
    return std::abs(a.mean_rl - target) / target < options.rel_tolerance;
  };

  // h = 0 gives run length `warmup` for every replication, below target
  double lo = 0.0;
  double hi = options.h_initial > 0.0 ? options.h_initial : static_cast<double>(chart0->dimension());
  std::optional<double> candidate;

  for (std::size_t stage = 0; stage < options.reps_schedule.size(); ++stage) {
    const long reps = options.reps_schedule[stage];
    const bool last = stage + 1 == options.reps_schedule.size();

    if (candidate) {
      const ArlResult a = evaluate(*candidate, reps);
      if (within(a)) {
        result.h = *candidate;
        result.achieved_arl = a;
        result.converged = true;
        continue;
      }
      if (a.mean_rl < target) {
        lo = *candidate;
      } else {
        hi = *candidate;
      }
    }

    // re-establish the bracket under this stage's random numbers, widening
    // geometrically from the current width (doubling h when lo = 0)
    double width = hi - lo;
    while (evaluate(hi, reps).mean_rl <= target) {
      lo = hi;
      hi += width;
      width *= 2.0;
      if (hi > kMaxLimit) {
        throw CalibrationError(fmt::format(
            "could not bracket target ARL {} with h in (0, {:g}]", target, kMaxLimit));
      }
    }
    width = hi - lo;
    while (lo > 0.0 && evaluate(lo, reps).mean_rl >= target) {
      hi = lo;
      lo = std::max(0.0, lo - width);
      width *= 2.0;
    }

    candidate.reset();
    std::optional<CalibrationEvaluation> closest;
    for (int k = 0; k < options.max_bisections; ++k) {
      const double mid = 0.5 * (lo + hi);
      const ArlResult a = evaluate(mid, reps);
      if (!closest || std::abs(a.mean_rl - target) < std::abs(closest->arl.mean_rl - target)) {
        closest = CalibrationEvaluation{mid, a, reps};
      }
      if (within(a)) {
        candidate = mid;
        break;
      }
      if (a.mean_rl < target) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    if (!candidate) candidate = closest->h;
    result.h = closest->h;
    result.achieved_arl = closest->arl;
    result.converged = within(closest->arl);
    if (last) break;
  }
  result.h_low = lo;
  result.h_high = hi;
  if (!(result.h_low < result.h && result.h <= result.h_high)) {
    // the accepted candidate came from an earlier stage's bracket
    result.h_low = std::min(result.h_low, std::nextafter(result.h, 0.0));
    result.h_high = std::max(result.h_high, result.h);
  }

  auto& evals = result.evaluations;
  for (std::size_t i = 0; i < evals.size() && !result.nonmonotone; ++i) {
    for (std::size_t j = 0; j < evals.size(); ++j) {
      if (evals[i].h < evals[j].h) {
        const double se = std::hypot(evals[i].arl.std_error, evals[j].arl.std_error);
        if (evals[i].arl.mean_rl > evals[j].arl.mean_rl + 3.0 * se) {
          result.nonmonotone = true;
          break;
        }
      }
    }
  }
  return result;
}

}  // namespace smewma
