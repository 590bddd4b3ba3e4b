#include "smewma/mewma.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "smewma/error.hpp"

namespace smewma {

std::string_view to_string(CovarianceMode mode) {
  return mode == CovarianceMode::exact_recursive ? "exact-recursive" : "asymptotic";
}

CovarianceMode parse_covariance_mode(std::string_view text) {
  if (text == "exact-recursive") return CovarianceMode::exact_recursive;
  if (text == "asymptotic") return CovarianceMode::asymptotic;
  throw InputError(fmt::format("unknown covariance mode '{}'", text));
}

ChartConfig make_chart_config(double r, double h, InfoMatrix sigma_s) {
  ChartConfig config;
  config.r = Eigen::VectorXd::Constant(1, r);
  config.h = h;
  config.sigma_s = std::move(sigma_s);
  return config;
}

// ---------------------------------------------------------------------------
// MewmaChart

namespace {

constexpr double kMaxCondition = 1e12;

bool bitwise_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

MewmaChart::MewmaChart(ChartConfig config, long cache_limit) : config_(std::move(config)) {
  const auto p = config_.sigma_s.rows();
  if (p == 0 || config_.sigma_s.cols() != p) {
    throw InputError("chart needs a square, non-empty score covariance");
  }
  if (!(config_.h >= 0.0) || !std::isfinite(config_.h)) {
    throw InputError("control limit h must be finite and non-negative");
  }
  if (config_.warmup < 1) throw InputError("warmup must be at least 1");
  if (!config_.coordinate_names.empty() &&
      static_cast<Eigen::Index>(config_.coordinate_names.size()) != p) {
    throw InputError("coordinate_names must have one entry per coefficient");
  }

  if (config_.coordinates.empty()) {
    coords_.resize(static_cast<std::size_t>(p));
    for (Eigen::Index i = 0; i < p; ++i) coords_[static_cast<std::size_t>(i)] = i;
  } else {
    coords_ = config_.coordinates;
    for (auto c : coords_) {
      if (c < 0 || c >= p) throw InputError(fmt::format("monitored coordinate {} out of range", c));
    }
    auto sorted = coords_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw InputError("monitored coordinates must be distinct");
    }
  }
  const auto q = static_cast<Eigen::Index>(coords_.size());

  if (config_.r.size() == 1) {
    r_ = Eigen::VectorXd::Constant(q, config_.r[0]);
  } else if (config_.r.size() == q) {
    r_ = config_.r;
  } else {
    throw InputError(fmt::format("smoothing vector has {} entries, chart dimension is {}",
                                 config_.r.size(), q));
  }
  for (Eigen::Index i = 0; i < q; ++i) {
    if (!(r_[i] > 0.0 && r_[i] <= 1.0)) {
      throw InputError(fmt::format("smoothing value r = {} outside (0, 1]", r_[i]));
    }
  }

  sigma_s_.resize(q, q);
  for (Eigen::Index i = 0; i < q; ++i) {
    for (Eigen::Index j = 0; j < q; ++j) {
      sigma_s_(i, j) = config_.sigma_s(coords_[static_cast<std::size_t>(i)],
                                       coords_[static_cast<std::size_t>(j)]);
    }
  }
  checked_precision(sigma_s_, 0);

  if (config_.covariance_mode == CovarianceMode::asymptotic) {
    Eigen::MatrixXd sigma(q, q);
    for (Eigen::Index i = 0; i < q; ++i) {
      for (Eigen::Index j = 0; j < q; ++j) {
        sigma(i, j) = r_[i] * r_[j] * sigma_s_(i, j) / (1.0 - (1.0 - r_[i]) * (1.0 - r_[j]));
      }
    }
    Eigen::MatrixXd precision = checked_precision(sigma, 1);
    auto schedule = std::make_shared<Schedule>();
    schedule->steps.push_back({std::move(sigma), std::move(precision)});
    schedule->stationary = true;
    schedule_ = std::move(schedule);
    return;
  }

  auto schedule = std::make_shared<Schedule>();
  Eigen::MatrixXd previous = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd next(q, q);
  for (long t = 1; t <= std::max(cache_limit, 1L); ++t) {
    recurse(previous, next);
    if (t > 1 && bitwise_equal(next, previous)) {
      schedule->stationary = true;
      break;
    }
    Eigen::MatrixXd precision = checked_precision(next, t);
    schedule->steps.push_back({next, std::move(precision)});
    previous = next;
  }
  schedule_ = std::move(schedule);
}

std::shared_ptr<const MewmaChart> MewmaChart::with_limit(double h) const {
  if (!(h >= 0.0) || !std::isfinite(h)) {
    throw InputError("control limit h must be finite and non-negative");
  }
  auto copy = std::make_shared<MewmaChart>(*this);
  copy->config_.h = h;
  return copy;
}

void MewmaChart::recurse(const Eigen::MatrixXd& previous, Eigen::MatrixXd& next) const {
  const auto q = r_.size();
  for (Eigen::Index j = 0; j < q; ++j) {
    for (Eigen::Index i = 0; i < q; ++i) {
      next(i, j) = r_[i] * r_[j] * sigma_s_(i, j) + (1.0 - r_[i]) * (1.0 - r_[j]) * previous(i, j);
    }
  }
}

Eigen::MatrixXd MewmaChart::checked_precision(const Eigen::MatrixXd& sigma, long t) const {
  const auto q = sigma.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  bool suspect = llt.info() != Eigen::Success;
  if (!suspect) {
    const auto d = llt.matrixL().toDenseMatrix().diagonal().cwiseAbs();
    const double ratio = d.maxCoeff() / d.minCoeff();
    // (max L_ii / min L_ii)^2 is a lower bound on the condition number
    suspect = !(ratio * ratio <= kMaxCondition);
  }
  if (suspect) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
    const auto& lambda = eig.eigenvalues();
    const double largest = lambda.cwiseAbs().maxCoeff();
    const double smallest = lambda[0];
    if (!(smallest > 0.0) || largest / smallest > kMaxCondition) {
      const Eigen::VectorXd v = eig.eigenvectors().col(0);
      std::string offending;
      for (Eigen::Index i = 0; i < q; ++i) {
        if (std::abs(v[i]) > 0.1) {
          const auto coord = coords_[static_cast<std::size_t>(i)];
          if (!offending.empty()) offending += ", ";
          offending += config_.coordinate_names.empty()
                           ? fmt::format("#{}", coord)
                           : config_.coordinate_names[static_cast<std::size_t>(coord)];
        }
      }
      const std::string what = t == 0 ? std::string("score covariance")
                                      : fmt::format("Sigma_W at t = {}", t);
      throw SingularityError(fmt::format(
          "{} is numerically singular (eigenvalues {:.3g} .. {:.3g}); offending coordinates: {}",
          what, smallest, largest, offending));
    }
    // condition is acceptable even though the cheap bound flagged it
    Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma);
    return ldlt.solve(Eigen::MatrixXd::Identity(q, q));
  }
  Eigen::MatrixXd precision = llt.solve(Eigen::MatrixXd::Identity(q, q));
  return (precision + precision.transpose()) * 0.5;
}

Eigen::MatrixXd MewmaChart::sigma_w(long t) const {
  if (t < 1) throw InputError("Sigma_W is defined for t >= 1");
  if (t <= cached_steps() || stationary()) return step(t).sigma;
  Eigen::MatrixXd previous = schedule_->steps.back().sigma;
  Eigen::MatrixXd next(previous.rows(), previous.cols());
  for (long k = cached_steps() + 1; k <= t; ++k) {
    recurse(previous, next);
    previous = next;
  }
  return previous;
}

// ---------------------------------------------------------------------------
// MewmaState

MewmaState::MewmaState(std::shared_ptr<const MewmaChart> chart) : chart_(std::move(chart)) {
  const auto q = chart_->dimension();
  w_ = Eigen::VectorXd::Zero(q);
  zero_ = Eigen::MatrixXd::Zero(q, q);
  scratch_.resize(q);
}

const Eigen::MatrixXd& MewmaState::sigma_w() const {
  if (t_ == 0) return zero_;
  if (t_ <= chart_->cached_steps() || chart_->stationary()) return chart_->step(t_).sigma;
  return own_sigma_;
}

UpdateResult MewmaState::update(const ScoreVector& s) {
  const auto& chart = *chart_;
  const auto& r = chart.r_;
  const auto q = chart.dimension();
  if (s.size() != chart.config_.sigma_s.rows()) {
    throw InputError(fmt::format("score has {} entries, chart expects {}", s.size(),
                                 chart.config_.sigma_s.rows()));
  }
  for (Eigen::Index i = 0; i < q; ++i) {
    const double si = s[chart.coords_[static_cast<std::size_t>(i)]];
    w_[i] = r[i] * si + (1.0 - r[i]) * w_[i];
  }
  ++t_;

  double t2;
  if (t_ <= chart.cached_steps() || chart.stationary()) {
    scratch_.noalias() = chart.step(t_).precision * w_;
    t2 = w_.dot(scratch_);
  } else {
    if (t_ == chart.cached_steps() + 1) own_sigma_ = chart.schedule_->steps.back().sigma;
    Eigen::MatrixXd next(q, q);
    chart.recurse(own_sigma_, next);
    own_sigma_ = std::move(next);
    const Eigen::MatrixXd precision = chart.checked_precision(own_sigma_, t_);
    scratch_.noalias() = precision * w_;
    t2 = w_.dot(scratch_);
  }
  t2 = std::max(t2, 0.0);
  return {t2, t_ >= chart.config_.warmup && t2 > chart.config_.h};
}

void MewmaState::reset() {
  w_.setZero();
  t_ = 0;
}

MewmaState init_state(std::shared_ptr<const MewmaChart> chart) { return MewmaState(std::move(chart)); }

MewmaState init_state(const ChartConfig& config) {
  return MewmaState(std::make_shared<const MewmaChart>(config));
}

Eigen::MatrixXd sigma_w_closed_form(long t, const Eigen::VectorXd& r, const Eigen::MatrixXd& sigma_s) {
  if (r.size() == 0) throw InputError("empty smoothing vector");
  for (Eigen::Index i = 1; i < r.size(); ++i) {
    if (r[i] != r[0]) throw InputError("closed-form Sigma_W requires equal smoothing values");
  }
  return sigma_w_closed_form(t, r[0], sigma_s);
}

Eigen::MatrixXd sigma_w_closed_form(long t, double r, const Eigen::MatrixXd& sigma_s) {
  if (t < 1) throw InputError("closed-form Sigma_W is defined for t >= 1");
  if (!(r > 0.0 && r <= 1.0)) throw InputError("smoothing value outside (0, 1]");
  const double factor = r * (1.0 - std::pow(1.0 - r, 2.0 * static_cast<double>(t))) / (2.0 - r);
  return factor * sigma_s;
}

// ---------------------------------------------------------------------------
// Streams

ScoreMonitor::ScoreMonitor(const DagModelSpec& spec, ParamVector theta0,
                           std::shared_ptr<const MewmaChart> chart)
    : spec_(&spec), theta0_(std::move(theta0)), state_(std::move(chart)) {
  if (theta0_.size() != spec.dimension() || state_.chart().sigma_s().rows() == 0 ||
      state_.chart().config().sigma_s.rows() != spec.dimension()) {
    throw InputError("chart and coefficient vector do not match the model dimension");
  }
  score_.resize(spec.dimension());
}

TraceRow ScoreMonitor::push(const PatientRecord& record) {
  if (!record.complete()) throw InputError("record has absent outcomes");
  score_.setZero();
  add_record_score(*spec_, theta0_.values(), record, score_);
  const auto result = state_.update(score_);
  return {state_.t(), result.t2, result.signal};
}

std::vector<TraceRow> run_stream(const DagModelSpec& spec, const ParamVector& theta0,
                                 std::shared_ptr<const MewmaChart> chart,
                                 std::span<const PatientRecord> records,
                                 const StreamOptions& options) {
  ScoreMonitor monitor(spec, theta0, std::move(chart));
  std::vector<TraceRow> trace;
  trace.reserve(records.size());
  for (const auto& record : records) {
    trace.push_back(monitor.push(record));
    if (options.stop_at_signal && trace.back().signal) break;
  }
  return trace;
}

}  // namespace smewma
