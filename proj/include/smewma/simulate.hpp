#pragma once

// Ancestral sampling from the DAG model and the four shift types used to
// build out-of-control data-generating processes.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "smewma/model.hpp"
#include "smewma/rng.hpp"

namespace smewma {

enum class ShiftKind { coefficient, coefficient_pair, mean_additive, mean_odds };

std::string_view to_string(ShiftKind kind);
/// Accepts "coefficient", "coefficient-pair", "mean-additive", "mean-odds".
ShiftKind parse_shift_kind(std::string_view text);

struct ShiftSpec {
  ShiftKind kind = ShiftKind::coefficient;
  /// Coefficient names (coefficient kinds) or one outcome id (mean kinds).
  std::vector<std::string> targets;
  double c = 0.0;
};

/// Post-transform of one node's mean response.
struct MeanShift {
  std::size_t node = 0;
  ShiftKind kind = ShiftKind::mean_additive;
  double c = 0.0;

  double apply(double mu) const {
    if (kind == ShiftKind::mean_additive) return mu * (1.0 + c);
    return c * mu / (1.0 - mu + c * mu);
  }
};

/// A data-generating rule: covariate marginals, generating coefficients and
/// an optional mean transform on one node. Immutable and shareable.
class Generator {
 public:
  Generator(const DagModelSpec& spec, ParamVector theta, const CovariateModel& covariates,
            std::optional<MeanShift> mean_shift = std::nullopt);

  const DagModelSpec& spec() const { return *spec_; }
  const ParamVector& theta() const { return theta_; }
  const std::vector<double>& process_prevalence() const { return px_; }
  const std::vector<double>& risk_prevalence() const { return pz_; }
  const std::optional<MeanShift>& mean_shift() const { return mean_shift_; }

  /// P(Y_v = 1 | parents) under this rule, parents taken from `record`.
  double node_mean(std::size_t node, const PatientRecord& record) const {
    double mu = mean_response(linear_predictor_unchecked(*spec_, theta_.values(), node, record));
    if (mean_shift_ && mean_shift_->node == node) mu = mean_shift_->apply(mu);
    return mu;
  }

  /// Draws x and z from their marginals, then each y_v in node order.
  /// `record` must be shaped for this spec; it is overwritten.
  void sample_into(Rng& rng, PatientRecord& record) const;
  PatientRecord sample(Rng& rng) const;

  /// Joint probability of a complete record under the DAG factorization
  /// (covariate marginals times the product of node conditionals).
  double probability(const PatientRecord& record) const;

  /// Visits every configuration of covariates and outcomes with positive
  /// probability. Throws InputError when the model has more than
  /// `max_binary_variables` binary variables.
  void for_each_configuration(const std::function<void(const PatientRecord&, double)>& visit,
                              int max_binary_variables = 24) const;

 private:
  std::shared_ptr<const DagModelSpec> spec_;
  ParamVector theta_;
  std::vector<double> px_;
  std::vector<double> pz_;
  std::optional<MeanShift> mean_shift_;
};

PatientRecord sample_patient(const DagModelSpec& spec, const ParamVector& theta,
                             const CovariateModel& covariates, Rng& rng);

/// Builds the out-of-control generator for `shift`. Coefficient shifts set
/// Mean-shift targets rewritten to the declared node id (matching is
/// case-insensitive). Other shifts and unknown targets pass through.
ShiftSpec canonical_shift(const DagModelSpec& spec, ShiftSpec shift);

/// theta_j -> (1 + c) theta_j in generation only; mean shifts transform the
/// target node's mean. Throws ShiftError for unknown targets, arity
/// mismatches, c <= 0 on odds shifts, or additive shifts that push any
/// reachable mean out of (0, 1).
Generator apply_shift(const DagModelSpec& spec, const ParamVector& theta0,
                      const CovariateModel& covariates, const ShiftSpec& shift);

}  // namespace smewma
