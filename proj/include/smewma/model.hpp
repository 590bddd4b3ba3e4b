#pragma once

// Multistage process model: a DAG of binary outcomes, each a logistic
// regression on process variables, risk factors and upstream outcomes.

#include <cstddef>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace smewma {

enum class CovariateKind { process, risk };

std::string_view to_string(CovariateKind kind);

struct CovariateDecl {
  std::string id;
  CovariateKind kind = CovariateKind::process;

  bool operator==(const CovariateDecl&) const = default;
};

/// One parent edge: the parent variable and the name of its coefficient.
struct ParentRef {
  std::string var;
  std::string coef_name;

  bool operator==(const ParentRef&) const = default;
};

struct NodeSpec {
  std::string id;
  std::string link = "logit";
  std::string intercept_name;
  std::vector<ParentRef> process_parents;
  std::vector<ParentRef> outcome_parents;
  std::vector<ParentRef> risk_parents;

  bool operator==(const NodeSpec&) const = default;
};

/// Source of one design-matrix column u_vj.
enum class TermSource : std::uint8_t { intercept, process, outcome, risk };

struct DesignTerm {
  TermSource source = TermSource::intercept;
  int index = 0;  // into x, y or z depending on source
};

struct CoefficientBlock {
  std::size_t node = 0;
  Eigen::Index begin = 0;
  Eigen::Index size = 0;
};

/// Name <-> position map of the flat coefficient vector. Blocks are
/// contiguous, one per node in node order; within a block the order is
/// intercept, process parents, outcome parents, risk parents.
class ParamLayout {
 public:
  ParamLayout(std::vector<std::string> names, std::vector<CoefficientBlock> blocks);

  Eigen::Index size() const { return static_cast<Eigen::Index>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(Eigen::Index i) const { return names_[static_cast<std::size_t>(i)]; }
  const std::vector<CoefficientBlock>& blocks() const { return blocks_; }
  const CoefficientBlock& block(std::size_t node) const { return blocks_[node]; }

  /// Position of a coefficient; throws InputError for unknown names.
  Eigen::Index index_of(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t node_of(Eigen::Index i) const { return node_of_[static_cast<std::size_t>(i)]; }

 private:
  std::vector<std::string> names_;
  std::vector<CoefficientBlock> blocks_;
  std::vector<std::size_t> node_of_;
  std::unordered_map<std::string, Eigen::Index> index_;
};

class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(std::shared_ptr<const ParamLayout> layout, Eigen::VectorXd values);

  Eigen::Index size() const { return values_.size(); }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }
  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const { return layout_; }

  double operator[](std::string_view name) const { return values_[layout_->index_of(name)]; }
  double& operator[](std::string_view name) { return values_[layout_->index_of(name)]; }

  /// Coefficient `pos` of node `node`'s block.
  double at(std::size_t node, Eigen::Index pos) const;

  auto block(std::size_t node) const {
    const auto& b = layout_->block(node);
    return values_.segment(b.begin, b.size);
  }
  auto block(std::size_t node) {
    const auto& b = layout_->block(node);
    return values_.segment(b.begin, b.size);
  }

  ParamVector with_values(Eigen::VectorXd values) const;

  bool operator==(const ParamVector& other) const;

 private:
  std::shared_ptr<const ParamLayout> layout_;
  Eigen::VectorXd values_;
};

/// Validated DAG structure. Immutable once constructed.
class DagModelSpec {
 public:
  /// Throws ModelError when the structure is invalid: outcome parents that
  /// do not precede their child, undeclared variables, duplicate coefficient
  /// names, unsupported link tags.
  DagModelSpec(std::vector<CovariateDecl> covariates, std::vector<NodeSpec> nodes);

  const std::vector<NodeSpec>& nodes() const { return nodes_; }
  const std::vector<CovariateDecl>& covariates() const { return covariates_; }
  const std::vector<std::string>& process_ids() const { return process_ids_; }
  const std::vector<std::string>& risk_ids() const { return risk_ids_; }

  std::size_t node_count() const { return nodes_.size(); }
  Eigen::Index dimension() const { return layout_->size(); }

  /// Design-matrix column sources for node v, aligned with its coefficient block.
  std::span<const DesignTerm> terms(std::size_t node) const { return terms_[node]; }

  std::size_t node_index(std::string_view id) const;
  bool has_node(std::string_view id) const;

  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const { return layout_; }

  ParamVector make_params() const;

  bool operator==(const DagModelSpec& other) const {
    return covariates_ == other.covariates_ && nodes_ == other.nodes_;
  }

 private:
  std::vector<CovariateDecl> covariates_;
  std::vector<NodeSpec> nodes_;
  std::vector<std::string> process_ids_;
  std::vector<std::string> risk_ids_;
  std::vector<std::vector<DesignTerm>> terms_;
  std::shared_ptr<const ParamLayout> layout_;
};

/// One patient. Outcome entries may be absent while a record is being
/// generated node by node.
struct PatientRecord {
  static constexpr std::int8_t kAbsent = -1;

  std::vector<std::uint8_t> x;  // process variables, in DagModelSpec::process_ids order
  std::vector<std::uint8_t> z;  // risk factors, in DagModelSpec::risk_ids order
  std::vector<std::int8_t> y;   // outcomes, in node order

  static PatientRecord empty_for(const DagModelSpec& spec);
  bool complete() const;

  bool operator==(const PatientRecord&) const = default;
};

/// Independent Bernoulli marginals for the exogenous covariates.
struct CovariateModel {
  std::map<std::string, double> prevalence;

  /// Prevalences aligned with process_ids() and risk_ids(); throws
  /// InputError if any covariate is missing or out of [0, 1].
  std::pair<std::vector<double>, std::vector<double>> aligned(const DagModelSpec& spec) const;

  bool operator==(const CovariateModel&) const = default;
};

/// A parsed model config: structure, coefficient values, covariate law.
struct Model {
  DagModelSpec spec;
  ParamVector params;
  CovariateModel covariates;
  /// Names of values that are not taken from the source data (for example
  /// intercepts and prevalences chosen for the shipped default model).
  std::vector<std::string> implementer_supplied;

  bool operator==(const Model& other) const = default;
};

/// Parses the JSON model config. Syntax errors report line and column;
/// unknown fields are rejected.
Model parse_model_spec(std::string_view config_text);

/// Canonical JSON text; parse_model_spec(serialize_model(m)) == m.
std::string serialize_model(const Model& model);

/// 64-bit FNV-1a hash of the canonical serialization, as "fnv1a64:<hex>".
std::string model_hash(const Model& model);

/// The four-stage maternity delivery model with the published slope
/// estimates. Intercepts and covariate prevalences are implementer-supplied
/// and listed in Model::implementer_supplied.
Model default_delivery_model();

/// eta = alpha_v + x'beta_v + y_pa(v)'gamma_v + z'delta_v. Throws InputError
/// if a parent outcome is absent.
double linear_predictor(const DagModelSpec& spec, const ParamVector& theta, std::size_t node,
                        const PatientRecord& record);

/// Same as linear_predictor with a raw coefficient vector and no checks.
inline double linear_predictor_unchecked(const DagModelSpec& spec, const Eigen::VectorXd& theta,
                                         std::size_t node, const PatientRecord& record) {
  const auto& block = spec.layout().block(node);
  const auto terms = spec.terms(node);
  double eta = 0.0;
  for (std::size_t j = 0; j < terms.size(); ++j) {
    const auto& term = terms[j];
    const double coef = theta[block.begin + static_cast<Eigen::Index>(j)];
    switch (term.source) {
      case TermSource::intercept: eta += coef; break;
      case TermSource::process: eta += coef * record.x[static_cast<std::size_t>(term.index)]; break;
      case TermSource::outcome: eta += coef * record.y[static_cast<std::size_t>(term.index)]; break;
      case TermSource::risk: eta += coef * record.z[static_cast<std::size_t>(term.index)]; break;
    }
  }
  return eta;
}

/// Value of design column j of node v for this record.
inline double design_value(const DesignTerm& term, const PatientRecord& record) {
  switch (term.source) {
    case TermSource::intercept: return 1.0;
    case TermSource::process: return record.x[static_cast<std::size_t>(term.index)];
    case TermSource::outcome: return record.y[static_cast<std::size_t>(term.index)];
    case TermSource::risk: return record.z[static_cast<std::size_t>(term.index)];
  }
  return 0.0;
}

/// Inverse logit, evaluated without overflow for large |eta|.
inline double mean_response(double eta) {
  if (eta >= 0.0) {
    return 1.0 / (1.0 + std::exp(-eta));
  }
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

/// log(1 + exp(eta)) without overflow.
inline double softplus(double eta) {
  return (eta > 0.0 ? eta : 0.0) + std::log1p(std::exp(-std::abs(eta)));
}

}  // namespace smewma
