#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "smewma/error.hpp"
#include "smewma/likelihood.hpp"
#include "smewma/model.hpp"
#include "test_support.hpp"

using namespace smewma;
using testing_support::simulate;

namespace {

constexpr double kLn2 = 0.69314718055994531;

ParamVector perturbed(const ParamVector& base, std::mt19937_64& gen, double sd) {
  std::normal_distribution<double> noise(0.0, sd);
  Eigen::VectorXd v = base.values();
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += noise(gen);
  return base.with_values(v);
}

PatientRecord record_with_y(const DagModelSpec& spec, std::int8_t y) {
  PatientRecord r = PatientRecord::empty_for(spec);
  r.y[0] = y;
  return r;
}

double rel_err(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1.0); }

}  // namespace

TEST_CASE("intercept-only log-likelihood and score at zero") {
  const DagModelSpec spec = testing_support::intercept_only_spec();
  const ParamVector theta = spec.make_params();
  std::vector<PatientRecord> one{record_with_y(spec, 1)};
  CHECK(log_likelihood(spec, theta, one) == doctest::Approx(-kLn2).epsilon(1e-15));
  CHECK(score(spec, theta, one)[0] == doctest::Approx(0.5));

  std::vector<PatientRecord> many;
  for (int i = 0; i < 37; ++i) many.push_back(record_with_y(spec, static_cast<std::int8_t>(i % 3 == 0)));
  CHECK(log_likelihood(spec, theta, many) == doctest::Approx(-37 * kLn2).epsilon(1e-14));
  const InfoMatrix info = fisher_information(spec, theta, many);
  CHECK(info(0, 0) == doctest::Approx(37.0 / 4.0).epsilon(1e-15));
}

TEST_CASE("log-likelihood equals the direct product of node probabilities") {
  const Model m = default_delivery_model();
  const auto records = simulate(m, m.params, 1000, 5);
  double direct = 0.0;
  for (const auto& r : records) direct += testing_support::direct_log_probability(m, m.params, r);
  CHECK(std::abs(log_likelihood(m.spec, m.params, records) - direct) <= 1e-10 * std::abs(direct));
}

TEST_CASE("score matches the finite-difference gradient") {
  const Model m = default_delivery_model();
  std::mt19937_64 gen(11);
  const double step = 1e-6;
  for (int inst = 0; inst < 10; ++inst) {
    const ParamVector theta = perturbed(m.params, gen, 0.5);
    const auto records = simulate(m, theta, 300, 100 + inst);
    const ScoreVector s = score(m.spec, theta, records);
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      Eigen::VectorXd plus = theta.values(), minus = theta.values();
      plus[j] += step;
      minus[j] -= step;
      const double fd = (log_likelihood(m.spec, theta.with_values(plus), records) -
                         log_likelihood(m.spec, theta.with_values(minus), records)) /
                        (2.0 * step);
      CHECK(rel_err(s[j], fd) < 1e-5);
    }
  }
}

TEST_CASE("information matches the negated finite-difference Hessian") {
  const Model m = default_delivery_model();
  std::mt19937_64 gen(12);
  for (int inst = 0; inst < 3; ++inst) {
    const ParamVector theta = perturbed(m.params, gen, 0.5);
    const auto records = simulate(m, theta, 300, 200 + inst);
    const InfoMatrix info = fisher_information(m.spec, theta, records);
    auto ll = [&](Eigen::Index i, double di, Eigen::Index j, double dj) {
      Eigen::VectorXd v = theta.values();
      v[i] += di;
      v[j] += dj;
      return log_likelihood(m.spec, theta.with_values(v), records);
    };
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      for (Eigen::Index j = 0; j < theta.size(); ++j) {
        auto second = [&](double h) {
          return (ll(i, h, j, h) - ll(i, h, j, -h) - ll(i, -h, j, h) + ll(i, -h, j, -h)) / (4.0 * h * h);
        };
        // Richardson extrapolation cancels the O(h^2) term
        const double fd = (4.0 * second(1e-3) - second(2e-3)) / 3.0;
        CHECK(rel_err(info(i, j), -fd) < 1e-5);
        if (m.spec.layout().node_of(i) != m.spec.layout().node_of(j)) CHECK(info(i, j) == 0.0);
      }
    }
  }
}

TEST_CASE("expected score covariance") {
  SUBCASE("intercept-only node") {
    const DagModelSpec spec = testing_support::intercept_only_spec();
    ParamVector theta = spec.make_params();
    theta["a"] = -0.8;
    const double mu = 1.0 / (1.0 + std::exp(0.8));
    const ScoreCovariance sc = expected_score_covariance(spec, theta, CovariateModel{});
    CHECK(sc.exact);
    CHECK(sc.sigma(0, 0) == doctest::Approx(mu * (1.0 - mu)).epsilon(1e-14));
  }
  SUBCASE("enumeration limit without fallback") {
    const Model m = default_delivery_model();
    ScoreCovarianceOptions opts;
    opts.max_binary_variables = 4;
    opts.allow_monte_carlo = false;
    CHECK_THROWS_AS(expected_score_covariance(m.spec, m.params, m.covariates, opts), InputError);
    opts.allow_monte_carlo = true;
    opts.monte_carlo_samples = 1000;
    CHECK_FALSE(expected_score_covariance(m.spec, m.params, m.covariates, opts).exact);
  }
  SUBCASE("enumeration agrees with Monte Carlo") {
    const Model m = default_delivery_model();
    const InfoMatrix exact = expected_score_covariance(m.spec, m.params, m.covariates).sigma;
    const ScoreCovariance mc = monte_carlo_score_covariance(m.spec, m.params, m.covariates, 50000, 3);
    // per-entry z scores; the bound allows for the 153 distinct entries
    double worst = 0.0;
    for (Eigen::Index i = 0; i < exact.rows(); ++i) {
      for (Eigen::Index j = 0; j < exact.cols(); ++j) {
        if (mc.std_error(i, j) == 0.0) {
          CHECK(mc.sigma(i, j) == exact(i, j));
        } else {
          worst = std::max(worst, std::abs(mc.sigma(i, j) - exact(i, j)) / mc.std_error(i, j));
        }
      }
    }
    CHECK(worst < 4.5);
  }
  SUBCASE("empirical mode is the average observed information") {
    const Model m = default_delivery_model();
    const auto records = simulate(m, m.params, 200, 9);
    const InfoMatrix emp = empirical_score_covariance(m.spec, m.params, records);
    CHECK((emp - fisher_information(m.spec, m.params, records) / 200.0).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("score has mean zero under the in-control model") {
  const Model m = default_delivery_model();
  const long n = 100000;
  const auto records = simulate(m, m.params, n, 31);
  const InfoMatrix sigma = expected_score_covariance(m.spec, m.params, m.covariates).sigma;
  const ScoreVector mean = score(m.spec, m.params, records) / static_cast<double>(n);
  for (Eigen::Index j = 0; j < mean.size(); ++j) {
    const double se = std::sqrt(sigma(j, j) / static_cast<double>(n));
    CHECK(std::abs(mean[j]) < 4.0 * se);
  }
}

TEST_CASE("fit_mle") {
  SUBCASE("intercept-only closed form") {
    const DagModelSpec spec = testing_support::intercept_only_spec();
    std::vector<PatientRecord> records;
    for (int i = 0; i < 40; ++i) records.push_back(record_with_y(spec, static_cast<std::int8_t>(i < 13)));
    const FitResult fit = fit_mle(spec, records, spec.make_params());
    CHECK(fit.theta["a"] == doctest::Approx(std::log(13.0 / 27.0)).epsilon(1e-10));
    CHECK(score(spec, fit.theta, records).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("score vanishes at the estimate") {
    const Model m = default_delivery_model();
    const auto records = simulate(m, m.params, 2000, 4);
    const FitResult fit = fit_mle(m.spec, records, m.params);
    CHECK(score(m.spec, fit.theta, records).cwiseAbs().maxCoeff() < 1e-8);
    const Eigen::VectorXd se = fit.standard_errors(m.spec);
    CHECK(se.allFinite());
    CHECK((se.array() > 0.0).all());
  }
  SUBCASE("perfect prediction is reported as separation") {
    const DagModelSpec spec = testing_support::one_covariate_spec();
    std::vector<PatientRecord> records;
    for (int i = 0; i < 50; ++i) {
      PatientRecord r = PatientRecord::empty_for(spec);
      r.x[0] = static_cast<std::uint8_t>(i % 2);
      r.y[0] = static_cast<std::int8_t>(i % 2);
      records.push_back(r);
    }
    CHECK_THROWS_WITH_AS(fit_mle(spec, records, spec.make_params()), doctest::Contains("separation"),
                         FitError);
  }
  SUBCASE("a covariate that never occurs") {
    const DagModelSpec spec = testing_support::one_covariate_spec();
    std::vector<PatientRecord> records;
    for (int i = 0; i < 20; ++i) {
      PatientRecord r = PatientRecord::empty_for(spec);
      r.x[0] = 0;
      r.y[0] = static_cast<std::int8_t>(i % 3 == 0);
      records.push_back(r);
    }
    CHECK_THROWS_WITH_AS(fit_mle(spec, records, spec.make_params()), doctest::Contains("'b'"), FitError);
  }
  SUBCASE("no records") {
    const Model m = default_delivery_model();
    CHECK_THROWS_AS(fit_mle(m.spec, std::vector<PatientRecord>{}, m.params), InputError);
  }
  SUBCASE("blocks are fitted independently") {
    const Model m = default_delivery_model();
    auto records = simulate(m, m.params, 1500, 8);
    const FitResult base = fit_mle(m.spec, records, m.params);
    // y1 has no children, so shuffling it only touches its own block
    std::vector<std::int8_t> y1;
    for (const auto& r : records) y1.push_back(r.y[0]);
    std::mt19937_64 gen(1);
    std::shuffle(y1.begin(), y1.end(), gen);
    for (std::size_t i = 0; i < records.size(); ++i) records[i].y[0] = y1[i];
    const FitResult shuffled = fit_mle(m.spec, records, m.params);
    for (std::size_t v = 1; v < m.spec.node_count(); ++v) {
      CHECK(shuffled.theta.block(v) == base.theta.block(v));
    }
  }
}

TEST_CASE("standardized cumulative score") {
  const Model m = default_delivery_model();
  const InfoMatrix sigma = expected_score_covariance(m.spec, m.params, m.covariates).sigma;
  const auto small = simulate(m, m.params, 50, 1);
  CHECK(standardized_cumulative_score(m.spec, m.params, small, 0, sigma).isZero(0.0));
  CHECK_THROWS_AS(standardized_cumulative_score(m.spec, m.params, small, 51, sigma), InputError);
  CHECK_THROWS_AS(standardized_cumulative_score(m.spec, m.params, small, 10, InfoMatrix::Zero(17, 17)),
                  SingularityError);

  // at t = n each component has unit variance across replications
  const int reps = 2000;
  const long n = 100;
  Eigen::MatrixXd draws(reps, sigma.rows());
  for (int k = 0; k < reps; ++k) {
    const auto records = simulate(m, m.params, n, 1000 + k);
    draws.row(k) = standardized_cumulative_score(m.spec, m.params, records, n, sigma).transpose();
  }
  for (Eigen::Index j = 0; j < draws.cols(); ++j) {
    const Eigen::VectorXd col = draws.col(j);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / (reps - 1);
    const double fourth = (col.array() - mean).pow(4).mean();
    const double se = std::sqrt((fourth - var * var) / reps);
    CHECK(std::abs(var - 1.0) < 4.0 * se);
  }
}

TEST_CASE("inverse square root") {
  Eigen::MatrixXd a(2, 2);
  a << 4.0, 1.0, 1.0, 3.0;
  const Eigen::MatrixXd r = inverse_sqrt_spd(a);
  CHECK((r * a * r - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-14);
  Eigen::MatrixXd s(2, 2);
  s << 1.0, 1.0, 1.0, 1.0;
  CHECK_THROWS_AS(inverse_sqrt_spd(s), SingularityError);
}
