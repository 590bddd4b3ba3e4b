#pragma once

// Score-based multivariate EWMA chart:
//   W_t  = R S_t + (I - R) W_{t-1},   W_0 = 0
//   T2_t = W_t' Sigma_{W_t}^{-1} W_t
// with R = diag(r) and Sigma_{W_t} = R Sigma_S R + (I - R) Sigma_{W_{t-1}} (I - R).

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "smewma/likelihood.hpp"
#include "smewma/model.hpp"

namespace smewma {

enum class CovarianceMode { exact_recursive, asymptotic };

std::string_view to_string(CovarianceMode mode);
/// Accepts "exact-recursive" or "asymptotic".
CovarianceMode parse_covariance_mode(std::string_view text);

struct ChartConfig {
  /// Smoothing per monitored coordinate, each in (0, 1]. A single value is
  /// broadcast to every coordinate.
  Eigen::VectorXd r = Eigen::VectorXd::Constant(1, 0.1);
  double h = 1.0;
  /// Per-patient score covariance over all p coefficients.
  InfoMatrix sigma_s;
  CovarianceMode covariance_mode = CovarianceMode::exact_recursive;
  /// First patient index at which a signal may be raised.
  long warmup = 1;
  /// Monitored coefficient positions; empty means all p.
  std::vector<Eigen::Index> coordinates;
  /// Optional coefficient names (length p) used in error messages.
  std::vector<std::string> coordinate_names;
};

ChartConfig make_chart_config(double r, double h, InfoMatrix sigma_s);

/// Validated chart definition plus the deterministic Sigma_{W_t} schedule,
/// precomputed until it reaches its floating-point fixed point (or the
/// cache limit). Immutable and shareable between threads.
class MewmaChart {
 public:
  /// Throws InputError for an invalid config and SingularityError when any
  /// Sigma_{W_t} has condition number above 1e12.
  explicit MewmaChart(ChartConfig config, long cache_limit = 4096);

  const ChartConfig& config() const { return config_; }
  Eigen::Index dimension() const { return static_cast<Eigen::Index>(coords_.size()); }
  const std::vector<Eigen::Index>& coordinates() const { return coords_; }
  const Eigen::VectorXd& smoothing() const { return r_; }
  const Eigen::MatrixXd& sigma_s() const { return sigma_s_; }
  double h() const { return config_.h; }

  /// Number of cached steps; if stationary(), step cached_steps() holds for all later t.
  long cached_steps() const { return static_cast<long>(schedule_->steps.size()); }
  bool stationary() const { return schedule_->stationary; }

  /// Sigma_{W_t} for t >= 1, evaluated by the configured covariance mode.
  Eigen::MatrixXd sigma_w(long t) const;

  /// Same chart with a different control limit; shares the schedule.
  std::shared_ptr<const MewmaChart> with_limit(double h) const;

 private:
  friend class MewmaState;

  struct Step {
    Eigen::MatrixXd sigma;
    Eigen::MatrixXd precision;
  };
  struct Schedule {
    std::vector<Step> steps;
    bool stationary = false;
  };

  const Step& step(long t) const {
    const auto& steps = schedule_->steps;
    return t <= static_cast<long>(steps.size()) ? steps[static_cast<std::size_t>(t - 1)] : steps.back();
  }

  /// Next Sigma_{W_t} from Sigma_{W_{t-1}}.
  void recurse(const Eigen::MatrixXd& previous, Eigen::MatrixXd& next) const;
  Eigen::MatrixXd checked_precision(const Eigen::MatrixXd& sigma, long t) const;

  ChartConfig config_;
  std::vector<Eigen::Index> coords_;
  Eigen::VectorXd r_;
  Eigen::MatrixXd sigma_s_;
  std::shared_ptr<const Schedule> schedule_;
};

struct UpdateResult {
  double t2 = 0.0;
  bool signal = false;
};

/// One chart stream. Not thread-safe; use one state per stream.
class MewmaState {
 public:
  explicit MewmaState(std::shared_ptr<const MewmaChart> chart);

  const MewmaChart& chart() const { return *chart_; }
  const Eigen::VectorXd& w() const { return w_; }
  long t() const { return t_; }
  /// Sigma_{W_t}; the zero matrix at t = 0.
  const Eigen::MatrixXd& sigma_w() const;

  /// Advances with the full p-length score of the next patient.
  UpdateResult update(const ScoreVector& s);

  void reset();

 private:
  std::shared_ptr<const MewmaChart> chart_;
  Eigen::VectorXd w_;
  long t_ = 0;
  Eigen::MatrixXd zero_;
  Eigen::MatrixXd own_sigma_;  // beyond a non-stationary cache
  Eigen::VectorXd scratch_;
};

MewmaState init_state(std::shared_ptr<const MewmaChart> chart);
MewmaState init_state(const ChartConfig& config);

/// r [1 - (1 - r)^{2t}] / (2 - r) * Sigma_S. Throws InputError when the
/// entries of r differ or t < 1.
Eigen::MatrixXd sigma_w_closed_form(long t, const Eigen::VectorXd& r, const Eigen::MatrixXd& sigma_s);
Eigen::MatrixXd sigma_w_closed_form(long t, double r, const Eigen::MatrixXd& sigma_s);

struct TraceRow {
  long t = 0;
  double t2 = 0.0;
  bool signal = false;
};

/// Scores each incoming record at theta0 and feeds the chart.
class ScoreMonitor {
 public:
  ScoreMonitor(const DagModelSpec& spec, ParamVector theta0, std::shared_ptr<const MewmaChart> chart);

  TraceRow push(const PatientRecord& record);
  const MewmaState& state() const { return state_; }

 private:
  const DagModelSpec* spec_;
  ParamVector theta0_;
  MewmaState state_;
  ScoreVector score_;
};

struct StreamOptions {
  bool stop_at_signal = true;
};

std::vector<TraceRow> run_stream(const DagModelSpec& spec, const ParamVector& theta0,
                                 std::shared_ptr<const MewmaChart> chart,
                                 std::span<const PatientRecord> records,
                                 const StreamOptions& options = {});

}  // namespace smewma
