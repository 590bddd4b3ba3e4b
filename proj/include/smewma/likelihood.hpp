#pragma once

// Log-likelihood, score and Fisher information of the DAG of logistic
// regressions, plus Phase-I maximum likelihood fitting.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "smewma/model.hpp"

namespace smewma {

using ScoreVector = Eigen::VectorXd;
/// p x p, block diagonal with one block per node.
using InfoMatrix = Eigen::MatrixXd;

double log_likelihood(const DagModelSpec& spec, const ParamVector& theta,
                      std::span<const PatientRecord> records);

ScoreVector score(const DagModelSpec& spec, const ParamVector& theta,
                  std::span<const PatientRecord> records);

/// out += score contribution of one complete record. No allocation.
void add_record_score(const DagModelSpec& spec, const Eigen::VectorXd& theta,
                      const PatientRecord& record, Eigen::Ref<Eigen::VectorXd> out);

/// Observed information sum_t u u' mu (1 - mu), per node block.
InfoMatrix fisher_information(const DagModelSpec& spec, const ParamVector& theta,
                              std::span<const PatientRecord> records);

/// out += weight * information contribution of one record.
void add_record_information(const DagModelSpec& spec, const Eigen::VectorXd& theta,
                            const PatientRecord& record, double weight,
                            Eigen::Ref<Eigen::MatrixXd> out);

struct ScoreCovarianceOptions {
  /// Exact enumeration is used when covariates + outcomes fit this limit.
  int max_binary_variables = 20;
  bool allow_monte_carlo = true;
  long monte_carlo_samples = 100000;
  std::uint64_t seed = 0x5eed;
};

struct ScoreCovariance {
  InfoMatrix sigma;
  bool exact = true;
  long samples = 0;            // Monte Carlo only
  InfoMatrix std_error;        // Monte Carlo only; zero for exact results
};

/// Per-patient score covariance Sigma_S = E[u u' mu (1 - mu)] over the joint
/// law of (x, z, y) under theta. Falls back to Monte Carlo averaging when
/// the model is too large to enumerate (if allowed; otherwise InputError).
ScoreCovariance expected_score_covariance(const DagModelSpec& spec, const ParamVector& theta,
                                         const CovariateModel& covariates,
                                         const ScoreCovarianceOptions& options = {});

ScoreCovariance monte_carlo_score_covariance(const DagModelSpec& spec, const ParamVector& theta,
                                             const CovariateModel& covariates, long samples,
                                             std::uint64_t seed);

/// Average observed information over Phase-I records.
InfoMatrix empirical_score_covariance(const DagModelSpec& spec, const ParamVector& theta,
                                      std::span<const PatientRecord> records);

struct FitOptions {
  double tolerance = 1e-8;  // on the max-norm of each node's score
  int max_iterations = 100;
  int max_halvings = 30;
  double separation_threshold = 15.0;
};

struct NodeFitReport {
  std::string node;
  int iterations = 0;
  double score_max_norm = 0.0;
};

struct FitResult {
  ParamVector theta;
  InfoMatrix information;
  std::vector<NodeFitReport> nodes;
  double log_likelihood = 0.0;

  /// sqrt(diag(I^{-1})), computed block by block.
  Eigen::VectorXd standard_errors(const DagModelSpec& spec) const;
};

/// Newton-Raphson with step halving, node by node. Throws FitError on
/// non-convergence, separation, or a degenerate design column, and
/// InputError when there are no records or a record is incomplete.
FitResult fit_mle(const DagModelSpec& spec, std::span<const PatientRecord> records,
                  const ParamVector& theta_init, const FitOptions& options = {});

/// Symmetric inverse square root via eigendecomposition. Throws
/// SingularityError when an eigenvalue is below rel_floor * largest.
Eigen::MatrixXd inverse_sqrt_spd(const Eigen::MatrixXd& m, double rel_floor = 1e-10);

/// M_n(t) = I^{-1/2} n^{-1/2} sum_{i <= t} S_i with n = records.size() and
/// I the per-patient information. Offline diagnostic only.
Eigen::VectorXd standardized_cumulative_score(const DagModelSpec& spec, const ParamVector& theta0,
                                              std::span<const PatientRecord> records,
                                              std::size_t t, const InfoMatrix& information);

}  // namespace smewma
