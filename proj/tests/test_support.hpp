#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "smewma/model.hpp"
#include "smewma/rng.hpp"
#include "smewma/simulate.hpp"

namespace testing_support {

using namespace smewma;

/// One outcome "y" with an intercept only.
inline DagModelSpec intercept_only_spec() {
  NodeSpec y{"y", "logit", "a", {}, {}, {}};
  return DagModelSpec({}, {y});
}

/// One outcome "y" with intercept "a" and a process covariate "x" (slope "b").
inline DagModelSpec one_covariate_spec() {
  NodeSpec y{"y", "logit", "a", {{"x", "b"}}, {}, {}};
  return DagModelSpec({{"x", CovariateKind::process}}, {y});
}

inline std::vector<PatientRecord> simulate(const Model& m, const ParamVector& theta, long n,
                                           std::uint64_t seed) {
  Generator g(m.spec, theta, m.covariates);
  Rng rng(seed, 0);
  std::vector<PatientRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) out.push_back(g.sample(rng));
  return out;
}

/// Independent oracle: log P(y | x, z) as a direct product of Bernoulli
/// probabilities, each logistic evaluated from the coefficient names.
inline double direct_log_probability(const Model& m, const ParamVector& theta,
                                     const PatientRecord& r) {
  const auto& spec = m.spec;
  double lp = 0.0;
  for (std::size_t v = 0; v < spec.node_count(); ++v) {
    const auto& node = spec.nodes()[v];
    double eta = theta[node.intercept_name];
    for (const auto& p : node.process_parents) {
      const auto& ids = spec.process_ids();
      const auto k = std::find(ids.begin(), ids.end(), p.var) - ids.begin();
      eta += theta[p.coef_name] * r.x[static_cast<std::size_t>(k)];
    }
    for (const auto& p : node.risk_parents) {
      const auto& ids = spec.risk_ids();
      const auto k = std::find(ids.begin(), ids.end(), p.var) - ids.begin();
      eta += theta[p.coef_name] * r.z[static_cast<std::size_t>(k)];
    }
    for (const auto& p : node.outcome_parents) {
      eta += theta[p.coef_name] * r.y[spec.node_index(p.var)];
    }
    const double prob1 = 1.0 / (1.0 + std::exp(-eta));
    lp += std::log(r.y[v] == 1 ? prob1 : 1.0 - prob1);
  }
  return lp;
}

inline std::string temp_dir(const std::string& sub = "") {
  const std::filesystem::path dir = std::filesystem::path(SMEWMA_TEST_TMP) / sub;
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace testing_support
