#include "smewma/simulate.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <fmt/format.h>

#include "smewma/error.hpp"

namespace smewma {

std::string_view to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::coefficient: return "coefficient";
    case ShiftKind::coefficient_pair: return "coefficient-pair";
    case ShiftKind::mean_additive: return "mean-additive";
    case ShiftKind::mean_odds: return "mean-odds";
  }
  return "unknown";
}

ShiftKind parse_shift_kind(std::string_view text) {
  for (auto k : {ShiftKind::coefficient, ShiftKind::coefficient_pair, ShiftKind::mean_additive,
                 ShiftKind::mean_odds}) {
    if (text == to_string(k)) return k;
  }
  throw ShiftError(fmt::format("unknown shift kind '{}'", text));
}

Generator::Generator(const DagModelSpec& spec, ParamVector theta, const CovariateModel& covariates,
                     std::optional<MeanShift> mean_shift)
    : spec_(std::make_shared<const DagModelSpec>(spec)),
      theta_(std::move(theta)),
      mean_shift_(mean_shift) {
  if (theta_.size() != spec_->dimension()) {
    throw InputError("generator coefficients do not match the model dimension");
  }
  std::tie(px_, pz_) = covariates.aligned(spec);
}

void Generator::sample_into(Rng& rng, PatientRecord& record) const {
  for (std::size_t i = 0; i < px_.size(); ++i) record.x[i] = rng.bernoulli(px_[i]) ? 1 : 0;
  for (std::size_t i = 0; i < pz_.size(); ++i) record.z[i] = rng.bernoulli(pz_[i]) ? 1 : 0;
  for (std::size_t v = 0; v < spec_->node_count(); ++v) {
    record.y[v] = rng.bernoulli(node_mean(v, record)) ? 1 : 0;
  }
}

PatientRecord Generator::sample(Rng& rng) const {
  PatientRecord record = PatientRecord::empty_for(*spec_);
  sample_into(rng, record);
  return record;
}

double Generator::probability(const PatientRecord& record) const {
  double p = 1.0;
  for (std::size_t i = 0; i < px_.size(); ++i) p *= record.x[i] ? px_[i] : 1.0 - px_[i];
  for (std::size_t i = 0; i < pz_.size(); ++i) p *= record.z[i] ? pz_[i] : 1.0 - pz_[i];
  for (std::size_t v = 0; v < spec_->node_count(); ++v) {
    const double mu = node_mean(v, record);
    p *= record.y[v] ? mu : 1.0 - mu;
  }
  return p;
}

void Generator::for_each_configuration(
    const std::function<void(const PatientRecord&, double)>& visit, int max_binary_variables) const {
  const std::size_t nx = px_.size();
  const std::size_t nz = pz_.size();
  const std::size_t nv = spec_->node_count();
  const std::size_t total = nx + nz + nv;
  if (total > static_cast<std::size_t>(max_binary_variables)) {
    throw InputError(fmt::format("exact enumeration over {} binary variables exceeds the limit of {}",
                                 total, max_binary_variables));
  }
  PatientRecord record = PatientRecord::empty_for(*spec_);

  // Depth-first over covariates then outcomes; zero-probability branches are pruned.
  std::function<void(std::size_t, double)> recurse = [&](std::size_t level, double prob) {
    if (level == total) {
      visit(record, prob);
      return;
    }
    double p1;
    if (level < nx) {
      p1 = px_[level];
    } else if (level < nx + nz) {
      p1 = pz_[level - nx];
    } else {
      p1 = node_mean(level - nx - nz, record);
    }
    for (int value = 0; value <= 1; ++value) {
      const double p = value ? p1 : 1.0 - p1;
      if (p <= 0.0) continue;
      if (level < nx) {
        record.x[level] = static_cast<std::uint8_t>(value);
      } else if (level < nx + nz) {
        record.z[level - nx] = static_cast<std::uint8_t>(value);
      } else {
        record.y[level - nx - nz] = static_cast<std::int8_t>(value);
      }
      recurse(level + 1, prob * p);
    }
    if (level >= nx + nz) record.y[level - nx - nz] = PatientRecord::kAbsent;
  };
  recurse(0, 1.0);
}

PatientRecord sample_patient(const DagModelSpec& spec, const ParamVector& theta,
                             const CovariateModel& covariates, Rng& rng) {
  return Generator(spec, theta, covariates).sample(rng);
}

namespace {

std::optional<std::size_t> find_node_ci(const DagModelSpec& spec, std::string_view id) {
  auto lower = [](std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return out;
  };
  const std::string want = lower(id);
  for (std::size_t v = 0; v < spec.node_count(); ++v) {
    if (lower(spec.nodes()[v].id) == want) return v;
  }
  return std::nullopt;
}

// Extremes of a node's in-control mean over every parent configuration that
// can occur: covariates with prevalence strictly inside (0, 1) take both
// values, outcome parents always take both values under a logit link.
std::pair<double, double> reachable_mean_range(const Generator& gen, std::size_t node) {
  const auto& spec = gen.spec();
  const auto terms = spec.terms(node);
  std::vector<std::vector<std::uint8_t>> choices;
  for (const auto& term : terms) {
    if (term.source == TermSource::intercept) continue;
    double prev = 0.5;
    if (term.source == TermSource::process) prev = gen.process_prevalence()[static_cast<std::size_t>(term.index)];
    if (term.source == TermSource::risk) prev = gen.risk_prevalence()[static_cast<std::size_t>(term.index)];
    if (prev <= 0.0) {
      choices.push_back({0});
    } else if (prev >= 1.0) {
      choices.push_back({1});
    } else {
      choices.push_back({0, 1});
    }
  }

  PatientRecord record = PatientRecord::empty_for(spec);
  std::fill(record.y.begin(), record.y.end(), 0);
  double lo = 1.0, hi = 0.0;
  std::vector<std::size_t> pick(choices.size(), 0);
  while (true) {
    std::size_t k = 0;
    for (const auto& term : terms) {
      if (term.source == TermSource::intercept) continue;
      const auto value = choices[k][pick[k]];
      const auto idx = static_cast<std::size_t>(term.index);
      if (term.source == TermSource::process) record.x[idx] = value;
      if (term.source == TermSource::risk) record.z[idx] = value;
      if (term.source == TermSource::outcome) record.y[idx] = static_cast<std::int8_t>(value);
      ++k;
    }
    const double mu = mean_response(linear_predictor_unchecked(spec, gen.theta().values(), node, record));
    lo = std::min(lo, mu);
    hi = std::max(hi, mu);

    std::size_t pos = 0;
    while (pos < pick.size() && ++pick[pos] == choices[pos].size()) pick[pos++] = 0;
    if (pos == pick.size()) break;
  }
  return {lo, hi};
}

}  // namespace

ShiftSpec canonical_shift(const DagModelSpec& spec, ShiftSpec shift) {
  if (shift.kind == ShiftKind::mean_additive || shift.kind == ShiftKind::mean_odds) {
    for (auto& t : shift.targets) {
      if (const auto node = find_node_ci(spec, t)) t = spec.nodes()[*node].id;
    }
  }
  return shift;
}

Generator apply_shift(const DagModelSpec& spec, const ParamVector& theta0,
                      const CovariateModel& covariates, const ShiftSpec& shift) {
  if (!std::isfinite(shift.c)) throw ShiftError("shift factor c must be finite");
  switch (shift.kind) {
    case ShiftKind::coefficient:
    case ShiftKind::coefficient_pair: {
      const std::size_t arity = shift.kind == ShiftKind::coefficient ? 1 : 2;
      if (shift.targets.size() != arity) {
        throw ShiftError(fmt::format("{} shift needs exactly {} target coefficient(s), got {}",
                                     to_string(shift.kind), arity, shift.targets.size()));
      }
      if (arity == 2 && shift.targets[0] == shift.targets[1]) {
        throw ShiftError("coefficient-pair shift needs two distinct coefficients");
      }
      ParamVector theta = theta0;
      for (const auto& name : shift.targets) {
        if (!spec.layout().contains(name)) {
          throw ShiftError(fmt::format("unknown coefficient '{}'", name));
        }
        theta[name] = (1.0 + shift.c) * theta0[name];
      }
      return Generator(spec, std::move(theta), covariates);
    }
    case ShiftKind::mean_additive:
    case ShiftKind::mean_odds: {
      if (shift.targets.size() != 1) {
        throw ShiftError(fmt::format("{} shift needs exactly one target outcome, got {}",
                                     to_string(shift.kind), shift.targets.size()));
      }
      const auto node = find_node_ci(spec, shift.targets[0]);
      if (!node) throw ShiftError(fmt::format("unknown outcome '{}'", shift.targets[0]));
      if (shift.kind == ShiftKind::mean_odds && !(shift.c > 0.0)) {
        throw ShiftError("odds-ratio shift requires c > 0");
      }
      Generator in_control(spec, theta0, covariates);
      if (shift.kind == ShiftKind::mean_additive) {
        const auto [lo, hi] = reachable_mean_range(in_control, *node);
        if (!(hi * (1.0 + shift.c) < 1.0) || !(lo * (1.0 + shift.c) > 0.0)) {
          throw ShiftError(fmt::format(
              "additive mean shift c = {} on '{}' moves the mean outside (0, 1) "
              "(reachable in-control mean range [{:.6g}, {:.6g}])",
              shift.c, spec.nodes()[*node].id, lo, hi));
        }
      }
      return Generator(spec, theta0, covariates, MeanShift{*node, shift.kind, shift.c});
    }
  }
  throw ShiftError("unhandled shift kind");
}

}  // namespace smewma
