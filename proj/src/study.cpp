#include "smewma/study.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "smewma/error.hpp"

namespace smewma {

namespace {

ArlOptions arl_options(long reps, long max_rl, const StudySettings& settings) {
  ArlOptions o;
  o.reps = reps;
  o.max_rl = max_rl;
  o.seed = settings.seed;
  o.threads = settings.threads;
  return o;
}

}  // namespace

std::vector<StudyRow> run_arl_study(const DagModelSpec& spec, const ParamVector& theta0,
                                    const CovariateModel& covariates,
                                    const std::shared_ptr<const MewmaChart>& chart,
                                    const StudyGrid& grid, const StudySettings& settings) {
  if (grid.c_values.empty()) throw InputError("c grid is empty");
  std::vector<Generator> generators;
  std::vector<ShiftSpec> shifts;
  for (double c : grid.c_values) {
    ShiftSpec s = canonical_shift(spec, grid.shift);
    s.c = c;
    generators.push_back(apply_shift(spec, theta0, covariates, s));
    shifts.push_back(std::move(s));
  }
  const ArlOptions opts = arl_options(grid.reps, grid.max_rl, settings);
  std::vector<StudyRow> rows;
  for (std::size_t i = 0; i < generators.size(); ++i) {
    rows.push_back({shifts[i], estimate_arl(generators[i], spec, theta0, chart, opts), std::nullopt});
  }
  return rows;
}

Generator apply_pair_shift(const DagModelSpec& spec, const ParamVector& theta0,
                           const CovariateModel& covariates, const std::string& first,
                           double c_first, const std::string& second, double c_second) {
  if (first == second) throw ShiftError("coefficient-pair shift needs two distinct coefficients");
  for (const auto* name : {&first, &second}) {
    if (!spec.layout().contains(*name)) throw ShiftError(fmt::format("unknown coefficient '{}'", *name));
  }
  if (!std::isfinite(c_first) || !std::isfinite(c_second)) {
    throw ShiftError("shift factor c must be finite");
  }
  ParamVector theta = theta0;
  theta[first] = (1.0 + c_first) * theta0[first];
  theta[second] = (1.0 + c_second) * theta0[second];
  return Generator(spec, std::move(theta), covariates);
}

std::vector<StudyRow> run_pair_study(const DagModelSpec& spec, const ParamVector& theta0,
                                     const CovariateModel& covariates,
                                     const std::shared_ptr<const MewmaChart>& chart,
                                     const std::vector<std::pair<std::string, std::string>>& pairs,
                                     const std::vector<double>& c_grid, long reps, long max_rl,
                                     const StudySettings& settings) {
  if (c_grid.empty()) throw InputError("c grid is empty");
  if (pairs.empty()) throw InputError("no coefficient pairs given");

  struct Job {
    StudyRow row;
    Generator generator;
  };
  std::vector<Job> jobs;
  for (auto [a, b] : pairs) {
    if (b < a) std::swap(a, b);
    for (double ca : c_grid) {
      for (double cb : c_grid) {
        ShiftSpec s{ShiftKind::coefficient_pair, {a, b}, cb};
        jobs.push_back({{s, {}, ca}, apply_pair_shift(spec, theta0, covariates, a, ca, b, cb)});
      }
    }
    for (const auto& single : {a, b}) {
      for (double c : c_grid) {
        ShiftSpec s{ShiftKind::coefficient, {single}, c};
        jobs.push_back({{s, {}, std::nullopt}, apply_shift(spec, theta0, covariates, s)});
      }
    }
  }
  const ArlOptions opts = arl_options(reps, max_rl, settings);
  std::vector<StudyRow> rows;
  rows.reserve(jobs.size());
  for (auto& job : jobs) {
    job.row.arl = estimate_arl(job.generator, spec, theta0, chart, opts);
    rows.push_back(std::move(job.row));
  }
  return rows;
}

}  // namespace smewma
