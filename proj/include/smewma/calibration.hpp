#pragma once

// Monte Carlo run-length estimation and control-limit search.

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "smewma/mewma.hpp"
#include "smewma/model.hpp"
#include "smewma/simulate.hpp"

namespace smewma {

struct ArlResult {
  double mean_rl = 0.0;
  double std_error = 0.0;
  long reps = 0;
  /// Replications that reached max_rl without a signal. When non-zero,
  /// mean_rl is a lower bound on the ARL.
  long censored = 0;
  long max_rl = 0;

  bool censoring_warning() const { return censored > 0; }
};

/// Re-estimate the in-control coefficients from a fresh Phase-I sample in
/// every replication, and chart with those estimates.
struct Phase1Refit {
  long size = 500;
  CovariateModel covariates;
};

struct ArlOptions {
  long reps = 5000;
  long max_rl = 4000;
  std::uint64_t seed = 1;
  std::optional<Phase1Refit> phase1;
  int threads = 0;  // 0: SCORE_MEWMA_THREADS or hardware concurrency
};

/// Zero-state run lengths: replication i draws patients from `generator`
/// using the random stream (seed, i), scores them at theta0 and records the
/// first signal time (max_rl if none). Results depend only on the seed.
ArlResult estimate_arl(const Generator& generator, const DagModelSpec& spec,
                       const ParamVector& theta0, const std::shared_ptr<const MewmaChart>& chart,
                       const ArlOptions& options);

/// Per-replication run lengths behind estimate_arl.
std::vector<long> simulate_run_lengths(const Generator& generator, const DagModelSpec& spec,
                                       const ParamVector& theta0,
                                       const std::shared_ptr<const MewmaChart>& chart,
                                       const ArlOptions& options);

ArlResult summarize_run_lengths(const std::vector<long>& run_lengths, long max_rl);

struct CalibrationOptions {
  double target_arl = 200.0;
  double rel_tolerance = 0.02;
  std::vector<long> reps_schedule = {1000, 5000, 10000};
  long max_rl = 0;  // 0: 20 * target_arl
  std::uint64_t seed = 1;
  double h_initial = 0.0;  // 0: chart dimension
  int max_bisections = 60;
  std::optional<Phase1Refit> phase1;
  int threads = 0;

  long effective_max_rl() const;
};

struct CalibrationEvaluation {
  double h = 0.0;
  ArlResult arl;
  long stage_reps = 0;
};

struct CalibrationResult {
  double h = 0.0;
  ArlResult achieved_arl;
  int iterations = 0;  // ARL evaluations
  double h_low = 0.0;
  double h_high = 0.0;
  /// False when the final stage exhausted its bisections without meeting
  /// rel_tolerance; h is then the closest evaluated limit.
  bool converged = false;
  /// Some pair of evaluations decreased in h beyond 3 combined standard errors.
  bool nonmonotone = false;
  std::vector<CalibrationEvaluation> evaluations;
};

/// Bisection on h. Each stage of reps_schedule uses common random numbers,
/// so the estimated ARL is nondecreasing in h within a stage. Throws
/// CalibrationError when no bracket exists in (0, 1e6] and InputError when
/// target_arl <= 1.
CalibrationResult calibrate_h(const Generator& generator, const DagModelSpec& spec,
                              const ParamVector& theta0, const ChartConfig& config_without_h,
                              const CalibrationOptions& options);

}  // namespace smewma
