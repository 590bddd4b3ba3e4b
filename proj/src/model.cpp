#include "smewma/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_set>

#include <fmt/format.h>
#include "json.hpp"

#include "smewma/error.hpp"

namespace smewma {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(CovariateKind kind) {
  return kind == CovariateKind::process ? "process" : "risk";
}

// ---------------------------------------------------------------------------
// ParamLayout / ParamVector

ParamLayout::ParamLayout(std::vector<std::string> names, std::vector<CoefficientBlock> blocks)
    : names_(std::move(names)), blocks_(std::move(blocks)), node_of_(names_.size(), 0) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    index_.emplace(names_[i], static_cast<Eigen::Index>(i));
  }
  for (const auto& b : blocks_) {
    for (Eigen::Index j = 0; j < b.size; ++j) {
      node_of_[static_cast<std::size_t>(b.begin + j)] = b.node;
    }
  }
}

Eigen::Index ParamLayout::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw InputError(fmt::format("unknown coefficient '{}'", name));
  }
  return it->second;
}

bool ParamLayout::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout, Eigen::VectorXd values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_->size()) {
    throw InputError(fmt::format("parameter vector has {} values, layout expects {}",
                                 values_.size(), layout_->size()));
  }
}

double ParamVector::at(std::size_t node, Eigen::Index pos) const {
  const auto& b = layout_->block(node);
  if (pos < 0 || pos >= b.size) {
    throw InputError(fmt::format("coefficient position {} outside block of size {}", pos, b.size));
  }
  return values_[b.begin + pos];
}

ParamVector ParamVector::with_values(Eigen::VectorXd values) const {
  return ParamVector(layout_, std::move(values));
}

bool ParamVector::operator==(const ParamVector& other) const {
  if (layout_ == nullptr || other.layout_ == nullptr) {
    return layout_ == other.layout_;
  }
  if (layout_->names() != other.layout_->names()) return false;
  if (values_.size() != other.values_.size()) return false;
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    if (values_[i] != other.values_[i]) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// DagModelSpec

DagModelSpec::DagModelSpec(std::vector<CovariateDecl> covariates, std::vector<NodeSpec> nodes)
    : covariates_(std::move(covariates)), nodes_(std::move(nodes)) {
  if (nodes_.empty()) {
    throw ModelError("model declares no outcome nodes");
  }

  std::unordered_map<std::string, std::pair<CovariateKind, int>> covariate_slot;
  for (const auto& c : covariates_) {
    if (c.id.empty()) throw ModelError("covariate with empty id");
    auto& ids = c.kind == CovariateKind::process ? process_ids_ : risk_ids_;
    if (!covariate_slot.emplace(c.id, std::pair{c.kind, static_cast<int>(ids.size())}).second) {
      throw ModelError(fmt::format("covariate '{}' declared twice", c.id));
    }
    ids.push_back(c.id);
  }

  std::unordered_map<std::string, int> node_slot;
  for (std::size_t v = 0; v < nodes_.size(); ++v) {
    const auto& id = nodes_[v].id;
    if (id.empty()) throw ModelError("outcome node with empty id");
    if (covariate_slot.count(id) != 0) {
      throw ModelError(fmt::format("node id '{}' collides with a covariate id", id));
    }
    if (!node_slot.emplace(id, static_cast<int>(v)).second) {
      throw ModelError(fmt::format("outcome node '{}' declared twice", id));
    }
  }

  std::vector<std::string> names;
  std::vector<CoefficientBlock> blocks;
  std::unordered_set<std::string> seen_coef;
  auto claim = [&](const std::string& coef, const std::string& node) {
    if (coef.empty()) {
      throw ModelError(fmt::format("node '{}' has a coefficient with empty name", node));
    }
    if (!seen_coef.insert(coef).second) {
      throw ModelError(fmt::format("duplicate coefficient name '{}' (node '{}')", coef, node));
    }
    names.push_back(coef);
  };

  terms_.resize(nodes_.size());
  for (std::size_t v = 0; v < nodes_.size(); ++v) {
    const auto& node = nodes_[v];
    if (node.link != "logit") {
      throw ModelError(fmt::format("node '{}': unsupported link '{}' (only logit is implemented)",
                                   node.id, node.link));
    }
    CoefficientBlock block{v, static_cast<Eigen::Index>(names.size()), 0};
    auto& terms = terms_[v];
    std::unordered_set<std::string> parents_seen;

    claim(node.intercept_name, node.id);
    terms.push_back({TermSource::intercept, 0});

    auto add_covariate = [&](const ParentRef& p, CovariateKind expected) {
      auto it = covariate_slot.find(p.var);
      if (it == covariate_slot.end()) {
        throw ModelError(fmt::format("node '{}' references undeclared covariate '{}'", node.id, p.var));
      }
      if (it->second.first != expected) {
        throw ModelError(fmt::format("node '{}' lists '{}' as a {} parent but it is declared as {}",
                                     node.id, p.var, to_string(expected),
                                     to_string(it->second.first)));
      }
      if (!parents_seen.insert(p.var).second) {
        throw ModelError(fmt::format("node '{}' lists parent '{}' twice", node.id, p.var));
      }
      claim(p.coef_name, node.id);
      terms.push_back({expected == CovariateKind::process ? TermSource::process : TermSource::risk,
                       it->second.second});
    };

    for (const auto& p : node.process_parents) add_covariate(p, CovariateKind::process);
    for (const auto& p : node.outcome_parents) {
      auto it = node_slot.find(p.var);
      if (it == node_slot.end()) {
        throw ModelError(fmt::format("node '{}' references undeclared outcome '{}'", node.id, p.var));
      }
      if (static_cast<std::size_t>(it->second) >= v) {
        throw ModelError(fmt::format(
            "cycle or order violation: outcome parent '{}' of node '{}' does not precede it",
            p.var, node.id));
      }
      if (!parents_seen.insert(p.var).second) {
        throw ModelError(fmt::format("node '{}' lists parent '{}' twice", node.id, p.var));
      }
      claim(p.coef_name, node.id);
      terms.push_back({TermSource::outcome, it->second});
    }
    for (const auto& p : node.risk_parents) add_covariate(p, CovariateKind::risk);

    block.size = static_cast<Eigen::Index>(names.size()) - block.begin;
    blocks.push_back(block);
  }

  layout_ = std::make_shared<const ParamLayout>(std::move(names), std::move(blocks));
}

std::size_t DagModelSpec::node_index(std::string_view id) const {
  for (std::size_t v = 0; v < nodes_.size(); ++v) {
    if (nodes_[v].id == id) return v;
  }
  throw InputError(fmt::format("unknown outcome node '{}'", id));
}

bool DagModelSpec::has_node(std::string_view id) const {
  return std::any_of(nodes_.begin(), nodes_.end(), [&](const auto& n) { return n.id == id; });
}

ParamVector DagModelSpec::make_params() const {
  return ParamVector(layout_, Eigen::VectorXd::Zero(layout_->size()));
}

// ---------------------------------------------------------------------------
// Records and covariates

PatientRecord PatientRecord::empty_for(const DagModelSpec& spec) {
  PatientRecord r;
  r.x.assign(spec.process_ids().size(), 0);
  r.z.assign(spec.risk_ids().size(), 0);
  r.y.assign(spec.node_count(), kAbsent);
  return r;
}

bool PatientRecord::complete() const {
  return std::none_of(y.begin(), y.end(), [](std::int8_t v) { return v == kAbsent; });
}

std::pair<std::vector<double>, std::vector<double>> CovariateModel::aligned(
    const DagModelSpec& spec) const {
  auto lookup = [&](const std::string& id) {
    auto it = prevalence.find(id);
    if (it == prevalence.end()) {
      throw InputError(fmt::format("no prevalence given for covariate '{}'", id));
    }
    if (!(it->second >= 0.0 && it->second <= 1.0)) {
      throw InputError(fmt::format("prevalence of '{}' is outside [0, 1]", id));
    }
    return it->second;
  };
  std::vector<double> px, pz;
  for (const auto& id : spec.process_ids()) px.push_back(lookup(id));
  for (const auto& id : spec.risk_ids()) pz.push_back(lookup(id));
  return {std::move(px), std::move(pz)};
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ModelError(fmt::format("model config {}: {}", where, what));
}

void check_keys(const ordered_json& obj, const std::string& where,
                std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) fail(where, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(where, fmt::format("unknown field '{}'", key));
    }
  }
}

const ordered_json& require(const ordered_json& obj, const std::string& where, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(where, fmt::format("missing field '{}'", key));
  return *it;
}

std::string get_string(const ordered_json& obj, const std::string& where, const char* key) {
  const auto& v = require(obj, where, key);
  if (!v.is_string()) fail(where, fmt::format("field '{}' must be a string", key));
  return v.get<std::string>();
}

double get_number(const ordered_json& obj, const std::string& where, const char* key) {
  const auto& v = require(obj, where, key);
  if (!v.is_number()) fail(where, fmt::format("field '{}' must be a number", key));
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(where, fmt::format("field '{}' must be finite", key));
  return d;
}

const ordered_json* optional_array(const ordered_json& obj, const std::string& where,
                                   const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) return nullptr;
  if (!it->is_array()) fail(where, fmt::format("field '{}' must be an array", key));
  return &*it;
}

std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

Model parse_model_spec(std::string_view config_text) {
  ordered_json root;
  try {
    root = ordered_json::parse(config_text.begin(), config_text.end());
  } catch (const nlohmann::json::parse_error& e) {
    // e.byte is one past the offending character
    auto [line, col] = line_column(config_text, e.byte == 0 ? 0 : e.byte - 1);
    throw ModelError(fmt::format("model config syntax error at line {}, column {}: {}", line, col,
                                 e.what()));
  }
  check_keys(root, "root", {"covariates", "nodes", "implementer_supplied"});

  std::vector<CovariateDecl> covariates;
  CovariateModel cov_model;
  if (const auto* arr = optional_array(root, "root", "covariates")) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const auto& c = (*arr)[i];
      const std::string where = fmt::format("covariates[{}]", i);
      check_keys(c, where, {"id", "kind", "prevalence"});
      CovariateDecl decl;
      decl.id = get_string(c, where, "id");
      const auto kind = get_string(c, where, "kind");
      if (kind == "process") {
        decl.kind = CovariateKind::process;
      } else if (kind == "risk") {
        decl.kind = CovariateKind::risk;
      } else {
        fail(where, fmt::format("kind must be 'process' or 'risk', got '{}'", kind));
      }
      const double prev = get_number(c, where, "prevalence");
      if (prev < 0.0 || prev > 1.0) fail(where, "prevalence must lie in [0, 1]");
      cov_model.prevalence[decl.id] = prev;
      covariates.push_back(std::move(decl));
    }
  }

  std::vector<NodeSpec> nodes;
  std::vector<std::pair<std::string, double>> values;
  const auto& node_arr = require(root, "root", "nodes");
  if (!node_arr.is_array()) fail("root", "field 'nodes' must be an array");
  for (std::size_t v = 0; v < node_arr.size(); ++v) {
    const auto& n = node_arr[v];
    const std::string where = fmt::format("nodes[{}]", v);
    check_keys(n, where,
               {"id", "link", "intercept", "process_parents", "outcome_parents", "risk_parents"});
    NodeSpec node;
    node.id = get_string(n, where, "id");
    if (n.contains("link")) node.link = get_string(n, where, "link");
    const auto& icpt = require(n, where, "intercept");
    check_keys(icpt, where + ".intercept", {"coef_name", "value"});
    node.intercept_name = get_string(icpt, where + ".intercept", "coef_name");
    values.emplace_back(node.intercept_name, get_number(icpt, where + ".intercept", "value"));

    auto read_parents = [&](const char* key, std::vector<ParentRef>& out) {
      const auto* arr = optional_array(n, where, key);
      if (arr == nullptr) return;
      for (std::size_t j = 0; j < arr->size(); ++j) {
        const auto& p = (*arr)[j];
        const std::string pw = fmt::format("{}.{}[{}]", where, key, j);
        check_keys(p, pw, {"var", "coef_name", "value"});
        ParentRef ref{get_string(p, pw, "var"), get_string(p, pw, "coef_name")};
        values.emplace_back(ref.coef_name, get_number(p, pw, "value"));
        out.push_back(std::move(ref));
      }
    };
    read_parents("process_parents", node.process_parents);
    read_parents("outcome_parents", node.outcome_parents);
    read_parents("risk_parents", node.risk_parents);
    nodes.push_back(std::move(node));
  }

  std::vector<std::string> supplied;
  if (const auto* arr = optional_array(root, "root", "implementer_supplied")) {
    for (const auto& s : *arr) {
      if (!s.is_string()) fail("implementer_supplied", "entries must be strings");
      supplied.push_back(s.get<std::string>());
    }
  }

  DagModelSpec spec(std::move(covariates), std::move(nodes));
  ParamVector params = spec.make_params();
  for (const auto& [name, value] : values) params[name] = value;
  return Model{std::move(spec), std::move(params), std::move(cov_model), std::move(supplied)};
}

std::string serialize_model(const Model& model) {
  const auto& spec = model.spec;
  ordered_json root = ordered_json::object();
  ordered_json covs = ordered_json::array();
  for (const auto& c : spec.covariates()) {
    ordered_json j;
    j["id"] = c.id;
    j["kind"] = std::string(to_string(c.kind));
    auto it = model.covariates.prevalence.find(c.id);
    j["prevalence"] = it == model.covariates.prevalence.end() ? 0.0 : it->second;
    covs.push_back(std::move(j));
  }
  root["covariates"] = std::move(covs);

  ordered_json nodes = ordered_json::array();
  for (const auto& n : spec.nodes()) {
    ordered_json j;
    j["id"] = n.id;
    j["link"] = n.link;
    j["intercept"] = {{"coef_name", n.intercept_name}, {"value", model.params[n.intercept_name]}};
    auto parents = [&](const std::vector<ParentRef>& refs) {
      ordered_json arr = ordered_json::array();
      for (const auto& p : refs) {
        arr.push_back({{"var", p.var}, {"coef_name", p.coef_name}, {"value", model.params[p.coef_name]}});
      }
      return arr;
    };
    j["process_parents"] = parents(n.process_parents);
    j["outcome_parents"] = parents(n.outcome_parents);
    j["risk_parents"] = parents(n.risk_parents);
    nodes.push_back(std::move(j));
  }
  root["nodes"] = std::move(nodes);
  root["implementer_supplied"] = model.implementer_supplied;
  return root.dump(2) + "\n";
}

std::string model_hash(const Model& model) {
  const std::string text = serialize_model(model);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("fnv1a64:{:016x}", h);
}

Model default_delivery_model() {
  // Slopes are the published estimates. Intercepts and prevalences are
  // chosen so in-control adverse-event rates fall between 5% and 20%, with
  // max mu_3 < 0.2 so additive mean shifts up to c = 4 stay valid on Y3.
  std::vector<CovariateDecl> covariates = {
      {"x1", CovariateKind::process},  // labour induced
      {"x2", CovariateKind::process},  // mechanical instruments used
      {"z1", CovariateKind::risk},     // posterior or transverse presentation
      {"z2", CovariateKind::risk},     // first birth
  };
  std::vector<NodeSpec> nodes = {
      {"y1", "logit", "alpha1", {{"x1", "beta11"}}, {}, {{"z1", "delta11"}}},
      {"y2", "logit", "alpha2", {}, {}, {{"z1", "delta12"}, {"z2", "delta22"}}},
      {"y3", "logit", "alpha3", {{"x2", "beta23"}}, {{"y2", "gamma23"}},
       {{"z1", "delta13"}, {"z2", "delta23"}}},
      {"y4", "logit", "alpha4", {{"x1", "beta14"}, {"x2", "beta24"}},
       {{"y2", "gamma24"}, {"y3", "gamma34"}}, {{"z2", "delta24"}}},
  };
  DagModelSpec spec(std::move(covariates), std::move(nodes));
  ParamVector params = spec.make_params();
  const std::pair<const char*, double> values[] = {
      {"beta11", -1.724}, {"delta11", 0.730}, {"delta12", 1.682}, {"delta22", 1.262},
      {"beta23", 0.597},  {"gamma23", 0.342}, {"delta13", 0.467}, {"delta23", 0.758},
      {"beta14", 0.316},  {"beta24", 1.140},  {"gamma24", 0.482}, {"gamma34", 1.267},
      {"delta24", 0.374},
      // implementer-supplied
      {"alpha1", -1.5},   {"alpha2", -2.7},   {"alpha3", -3.56},  {"alpha4", -3.5},
  };
  for (const auto& [name, value] : values) params[name] = value;

  CovariateModel cov;
  cov.prevalence = {{"x1", 0.25}, {"x2", 0.15}, {"z1", 0.10}, {"z2", 0.45}};

  std::vector<std::string> supplied = {"alpha1", "alpha2", "alpha3", "alpha4",
                                       "prevalence:x1", "prevalence:x2", "prevalence:z1",
                                       "prevalence:z2"};
  return Model{std::move(spec), std::move(params), std::move(cov), std::move(supplied)};
}

double linear_predictor(const DagModelSpec& spec, const ParamVector& theta, std::size_t node,
                        const PatientRecord& record) {
  if (node >= spec.node_count()) {
    throw InputError(fmt::format("node index {} out of range", node));
  }
  for (const auto& term : spec.terms(node)) {
    if (term.source == TermSource::outcome &&
        record.y.at(static_cast<std::size_t>(term.index)) == PatientRecord::kAbsent) {
      throw InputError(fmt::format("node '{}': parent outcome '{}' is absent",
                                   spec.nodes()[node].id,
                                   spec.nodes()[static_cast<std::size_t>(term.index)].id));
    }
    if (term.source == TermSource::process && static_cast<std::size_t>(term.index) >= record.x.size()) {
      throw InputError("record is missing process variables");
    }
    if (term.source == TermSource::risk && static_cast<std::size_t>(term.index) >= record.z.size()) {
      throw InputError("record is missing risk factors");
    }
  }
  return linear_predictor_unchecked(spec, theta.values(), node, record);
}

}  // namespace smewma
