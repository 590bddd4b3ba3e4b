#include "smewma/likelihood.hpp"

#include <cmath>

#include <fmt/format.h>

#include "smewma/error.hpp"
#include "smewma/simulate.hpp"

namespace smewma {

namespace {

void require_complete(std::span<const PatientRecord> records) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].complete()) {
      throw InputError(fmt::format("record {} has absent outcomes", i + 1));
    }
  }
}

}  // namespace

double log_likelihood(const DagModelSpec& spec, const ParamVector& theta,
                      std::span<const PatientRecord> records) {
  require_complete(records);
  double total = 0.0;
  for (const auto& record : records) {
    for (std::size_t v = 0; v < spec.node_count(); ++v) {
      const double eta = linear_predictor_unchecked(spec, theta.values(), v, record);
      total += record.y[v] * eta - softplus(eta);
    }
  }
  return total;
}

void add_record_score(const DagModelSpec& spec, const Eigen::VectorXd& theta,
                      const PatientRecord& record, Eigen::Ref<Eigen::VectorXd> out) {
  for (std::size_t v = 0; v < spec.node_count(); ++v) {
    const double resid =
        record.y[v] - mean_response(linear_predictor_unchecked(spec, theta, v, record));
    const auto begin = spec.layout().block(v).begin;
    const auto terms = spec.terms(v);
    for (std::size_t j = 0; j < terms.size(); ++j) {
      out[begin + static_cast<Eigen::Index>(j)] += design_value(terms[j], record) * resid;
    }
  }
}

ScoreVector score(const DagModelSpec& spec, const ParamVector& theta,
                  std::span<const PatientRecord> records) {
  require_complete(records);
  ScoreVector s = ScoreVector::Zero(spec.dimension());
  for (const auto& record : records) add_record_score(spec, theta.values(), record, s);
  return s;
}

void add_record_information(const DagModelSpec& spec, const Eigen::VectorXd& theta,
                            const PatientRecord& record, double weight,
                            Eigen::Ref<Eigen::MatrixXd> out) {
  for (std::size_t v = 0; v < spec.node_count(); ++v) {
    const double mu = mean_response(linear_predictor_unchecked(spec, theta, v, record));
    const double w = weight * mu * (1.0 - mu);
    const auto begin = spec.layout().block(v).begin;
    const auto terms = spec.terms(v);
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const double ui = design_value(terms[i], record);
      if (ui == 0.0) continue;
      for (std::size_t j = 0; j < terms.size(); ++j) {
        out(begin + static_cast<Eigen::Index>(i), begin + static_cast<Eigen::Index>(j)) +=
            w * ui * design_value(terms[j], record);
      }
    }
  }
}

InfoMatrix fisher_information(const DagModelSpec& spec, const ParamVector& theta,
                              std::span<const PatientRecord> records) {
  require_complete(records);
  const auto p = spec.dimension();
  InfoMatrix info = InfoMatrix::Zero(p, p);
  for (const auto& record : records) add_record_information(spec, theta.values(), record, 1.0, info);
  return info;
}

ScoreCovariance expected_score_covariance(const DagModelSpec& spec, const ParamVector& theta,
                                          const CovariateModel& covariates,
                                          const ScoreCovarianceOptions& options) {
  const std::size_t binary_vars =
      spec.process_ids().size() + spec.risk_ids().size() + spec.node_count();
  if (binary_vars > static_cast<std::size_t>(options.max_binary_variables)) {
    if (!options.allow_monte_carlo) {
      throw InputError(fmt::format(
          "model has {} binary variables, above the enumeration limit of {}, and Monte Carlo "
          "fallback is disabled",
          binary_vars, options.max_binary_variables));
    }
    return monte_carlo_score_covariance(spec, theta, covariates, options.monte_carlo_samples,
                                        options.seed);
  }

  const Generator gen(spec, theta, covariates);
  const auto p = spec.dimension();
  ScoreCovariance out;
  out.sigma = InfoMatrix::Zero(p, p);
  out.std_error = InfoMatrix::Zero(p, p);
  gen.for_each_configuration(
      [&](const PatientRecord& record, double prob) {
        add_record_information(spec, theta.values(), record, prob, out.sigma);
      },
      options.max_binary_variables);
  out.exact = true;
  return out;
}

ScoreCovariance monte_carlo_score_covariance(const DagModelSpec& spec, const ParamVector& theta,
                                             const CovariateModel& covariates, long samples,
                                             std::uint64_t seed) {
  if (samples < 2) throw InputError("Monte Carlo score covariance needs at least 2 samples");
  const Generator gen(spec, theta, covariates);
  const auto p = spec.dimension();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd one(p, p);
  PatientRecord record = PatientRecord::empty_for(spec);
  Rng rng(seed, 0);
  for (long i = 0; i < samples; ++i) {
    gen.sample_into(rng, record);
    one.setZero();
    add_record_information(spec, theta.values(), record, 1.0, one);
    sum += one;
    sum_sq += one.cwiseProduct(one);
  }
  const double n = static_cast<double>(samples);
  ScoreCovariance out;
  out.sigma = sum / n;
  const Eigen::MatrixXd var = (sum_sq / n - out.sigma.cwiseProduct(out.sigma)) * (n / (n - 1.0));
  out.std_error = (var.cwiseMax(0.0) / n).cwiseSqrt();
  out.exact = false;
  out.samples = samples;
  return out;
}

InfoMatrix empirical_score_covariance(const DagModelSpec& spec, const ParamVector& theta,
                                      std::span<const PatientRecord> records) {
  if (records.empty()) throw InputError("empirical score covariance needs at least one record");
  return fisher_information(spec, theta, records) / static_cast<double>(records.size());
}

// ---------------------------------------------------------------------------
// Maximum likelihood

Eigen::VectorXd FitResult::standard_errors(const DagModelSpec& spec) const {
  Eigen::VectorXd se(information.rows());
  for (const auto& b : spec.layout().blocks()) {
    const Eigen::MatrixXd block = information.block(b.begin, b.begin, b.size, b.size);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(block);
    const Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(b.size, b.size));
    se.segment(b.begin, b.size) = inv.diagonal().cwiseMax(0.0).cwiseSqrt();
  }
  return se;
}

namespace {

struct NodeObjective {
  double loglik = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;  // negated: the information
};

double node_loglik(const DagModelSpec& spec, std::size_t node, const Eigen::VectorXd& theta,
                   std::span<const PatientRecord> records) {
  double ll = 0.0;
  for (const auto& record : records) {
    const double eta = linear_predictor_unchecked(spec, theta, node, record);
    ll += record.y[node] * eta - softplus(eta);
  }
  return ll;
}

NodeObjective node_objective(const DagModelSpec& spec, std::size_t node,
                             const Eigen::VectorXd& theta, std::span<const PatientRecord> records) {
  const auto terms = spec.terms(node);
  const auto k = static_cast<Eigen::Index>(terms.size());
  NodeObjective obj;
  obj.gradient = Eigen::VectorXd::Zero(k);
  obj.hessian = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd u(k);
  for (const auto& record : records) {
    for (Eigen::Index j = 0; j < k; ++j) u[j] = design_value(terms[static_cast<std::size_t>(j)], record);
    const double eta = linear_predictor_unchecked(spec, theta, node, record);
    const double mu = mean_response(eta);
    obj.loglik += record.y[node] * eta - softplus(eta);
    obj.gradient += u * (record.y[node] - mu);
    obj.hessian.selfadjointView<Eigen::Lower>().rankUpdate(u, mu * (1.0 - mu));
  }
  obj.hessian = obj.hessian.selfadjointView<Eigen::Lower>();
  return obj;
}

}  // namespace

FitResult fit_mle(const DagModelSpec& spec, std::span<const PatientRecord> records,
                  const ParamVector& theta_init, const FitOptions& options) {
  if (records.empty()) throw InputError("cannot fit: no records");
  require_complete(records);
  if (theta_init.size() != spec.dimension()) {
    throw InputError("initial coefficient vector does not match the model");
  }

  FitResult result{theta_init, InfoMatrix::Zero(spec.dimension(), spec.dimension()), {}, 0.0};
  Eigen::VectorXd& theta = result.theta.values();

  for (std::size_t v = 0; v < spec.node_count(); ++v) {
    const auto& node_id = spec.nodes()[v].id;
    const auto& block = spec.layout().block(v);
    const auto terms = spec.terms(v);

    for (std::size_t j = 0; j < terms.size(); ++j) {
      bool varies = false;
      for (const auto& record : records) {
        if (design_value(terms[j], record) != 0.0) {
          varies = true;
          break;
        }
      }
      if (!varies) {
        throw FitError(fmt::format("node '{}': design column for '{}' is identically zero", node_id,
                                   spec.layout().name(block.begin + static_cast<Eigen::Index>(j))));
      }
    }

    NodeFitReport report{node_id, 0, 0.0};
    NodeObjective obj = node_objective(spec, v, theta, records);
    bool converged = false;
    for (int iter = 0;; ++iter) {
      report.iterations = iter;
      report.score_max_norm = obj.gradient.cwiseAbs().maxCoeff();
      if (report.score_max_norm < options.tolerance) {
        converged = true;
        break;
      }
      const double max_coef = theta.segment(block.begin, block.size).cwiseAbs().maxCoeff();
      if (max_coef > options.separation_threshold) {
        throw FitError(fmt::format(
            "node '{}': separation detected (coefficient magnitude {:.3g} exceeds {} with score "
            "max-norm {:.3g})",
            node_id, max_coef, options.separation_threshold, report.score_max_norm));
      }
      if (iter == options.max_iterations) break;

      Eigen::LLT<Eigen::MatrixXd> llt(obj.hessian);
      if (llt.info() != Eigen::Success) {
        throw FitError(fmt::format("node '{}': information matrix is not positive definite", node_id));
      }
      const Eigen::VectorXd step = llt.solve(obj.gradient);

      const Eigen::VectorXd current = theta.segment(block.begin, block.size);
      double scale = 1.0;
      for (int halving = 0;; ++halving) {
        theta.segment(block.begin, block.size) = current + scale * step;
        // slack absorbs summation rounding once the step is at the optimum's noise level
        const double slack = 1e-12 * (1.0 + std::abs(obj.loglik));
        if (node_loglik(spec, v, theta, records) >= obj.loglik - slack ||
            halving == options.max_halvings) {
          break;
        }
        scale *= 0.5;
      }
      obj = node_objective(spec, v, theta, records);
    }
    if (!converged) {
      throw FitError(fmt::format(
          "node '{}': Newton iterations did not converge after {} iterations (score max-norm {:.3g})",
          node_id, options.max_iterations, report.score_max_norm));
    }
    result.information.block(block.begin, block.begin, block.size, block.size) = obj.hessian;
    result.log_likelihood += obj.loglik;
    result.nodes.push_back(report);
  }
  return result;
}

Eigen::MatrixXd inverse_sqrt_spd(const Eigen::MatrixXd& m, double rel_floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) throw SingularityError("eigendecomposition failed");
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double largest = lambda.cwiseAbs().maxCoeff();
  if (!(lambda.minCoeff() > rel_floor * largest)) {
    throw SingularityError(fmt::format(
        "information matrix is singular: smallest eigenvalue {:.3g}, largest {:.3g}",
        lambda.minCoeff(), largest));
  }
  return eig.eigenvectors() * lambda.cwiseSqrt().cwiseInverse().asDiagonal() *
         eig.eigenvectors().transpose();
}

Eigen::VectorXd standardized_cumulative_score(const DagModelSpec& spec, const ParamVector& theta0,
                                              std::span<const PatientRecord> records,
                                              std::size_t t, const InfoMatrix& information) {
  if (t > records.size()) {
    throw InputError(fmt::format("t = {} exceeds the number of records ({})", t, records.size()));
  }
  const Eigen::MatrixXd root = inverse_sqrt_spd(information);
  if (t == 0) return Eigen::VectorXd::Zero(spec.dimension());
  const ScoreVector s = score(spec, theta0, records.first(t));
  return root * s / std::sqrt(static_cast<double>(records.size()));
}

}  // namespace smewma
