#pragma once

// Out-of-control ARL tables over grids of shift sizes.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "smewma/calibration.hpp"
#include "smewma/mewma.hpp"
#include "smewma/simulate.hpp"

namespace smewma {

struct StudyGrid {
  ShiftSpec shift;  // c is taken from c_values
  std::vector<double> c_values;
  long reps = 5000;
  long max_rl = 4000;
};

struct StudyRow {
  ShiftSpec shift;
  ArlResult arl;
  /// Pair studies: c on the first target (the second target uses shift.c).
  std::optional<double> c_first;
};

struct StudySettings {
  std::uint64_t seed = 1;
  int threads = 0;
};

/// One row per c. Every row uses the same seed, so rows share random numbers.
/// Invalid shifts throw ShiftError before any simulation runs.
std::vector<StudyRow> run_arl_study(const DagModelSpec& spec, const ParamVector& theta0,
                                    const CovariateModel& covariates,
                                    const std::shared_ptr<const MewmaChart>& chart,
                                    const StudyGrid& grid, const StudySettings& settings);

/// For each pair (a, b) and each (c_a, c_b) in c_grid x c_grid, a
/// simultaneous shift with c_a on a and c_b on b, followed by single-shift
/// rows for a alone and for b alone at each c. Each pair is ordered by name
/// first, so listing order does not affect the table.
std::vector<StudyRow> run_pair_study(const DagModelSpec& spec, const ParamVector& theta0,
                                     const CovariateModel& covariates,
                                     const std::shared_ptr<const MewmaChart>& chart,
                                     const std::vector<std::pair<std::string, std::string>>& pairs,
                                     const std::vector<double>& c_grid, long reps, long max_rl,
                                     const StudySettings& settings);

/// Generator for a pair shift with different factors on the two coefficients.
Generator apply_pair_shift(const DagModelSpec& spec, const ParamVector& theta0,
                           const CovariateModel& covariates, const std::string& first,
                           double c_first, const std::string& second, double c_second);

}  // namespace smewma
