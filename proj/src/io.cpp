#include "smewma/io.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <istream>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "smewma/error.hpp"

namespace smewma {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

void split_fields(std::string_view line, std::vector<std::string_view>& out) {
  out.clear();
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

double parse_real(std::string_view text, std::string_view what) {
  const std::string s(trim(text));
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || !std::isfinite(v)) {
    throw InputError(fmt::format("invalid number '{}' in {}", s, what));
  }
  return v;
}

}  // namespace

PatientCsvReader::PatientCsvReader(std::istream& in, const DagModelSpec& spec)
    : in_(&in), spec_(&spec) {
  std::string header;
  if (!next_line(header)) throw InputError("patient CSV is empty (no header row)");
  split_fields(header, fields_);
  width_ = fields_.size();
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    if (!column.emplace(std::string(fields_[i]), i).second) {
      throw InputError(fmt::format("line {}: duplicate column '{}'", line_, fields_[i]));
    }
  }
  auto find = [&](const std::string& id) {
    auto it = column.find(id);
    if (it == column.end()) {
      throw InputError(fmt::format("patient CSV header is missing required column '{}'", id));
    }
    return it->second;
  };
  for (const auto& id : spec.process_ids()) x_cols_.push_back(find(id));
  for (const auto& id : spec.risk_ids()) z_cols_.push_back(find(id));
  for (const auto& node : spec.nodes()) y_cols_.push_back(find(node.id));
}

bool PatientCsvReader::next_line(std::string& out) {
  while (std::getline(*in_, out)) {
    ++line_;
    const std::string_view t = trim(out);
    if (t.empty() || t.front() == '#') continue;
    return true;
  }
  return false;
}

bool PatientCsvReader::next(PatientRecord& record) {
  if (!next_line(buffer_)) return false;
  split_fields(buffer_, fields_);
  if (fields_.size() != width_) {
    throw InputError(fmt::format("line {}: expected {} fields, found {}", line_, width_,
                                 fields_.size()));
  }
  auto value = [&](std::size_t col, const std::string& id) -> std::uint8_t {
    const std::string_view f = fields_[col];
    if (f == "0") return 0;
    if (f == "1") return 1;
    throw InputError(fmt::format("line {}: column '{}' must be 0 or 1, got '{}'", line_, id, f));
  };
  record.x.resize(x_cols_.size());
  record.z.resize(z_cols_.size());
  record.y.resize(y_cols_.size());
  for (std::size_t i = 0; i < x_cols_.size(); ++i) record.x[i] = value(x_cols_[i], spec_->process_ids()[i]);
  for (std::size_t i = 0; i < z_cols_.size(); ++i) record.z[i] = value(z_cols_[i], spec_->risk_ids()[i]);
  for (std::size_t i = 0; i < y_cols_.size(); ++i) {
    record.y[i] = static_cast<std::int8_t>(value(y_cols_[i], spec_->nodes()[i].id));
  }
  return true;
}

std::vector<PatientRecord> read_patient_csv(std::istream& in, const DagModelSpec& spec) {
  PatientCsvReader reader(in, spec);
  std::vector<PatientRecord> records;
  PatientRecord r = PatientRecord::empty_for(spec);
  while (reader.next(r)) records.push_back(r);
  if (records.empty()) throw InputError("patient CSV has no data rows");
  return records;
}

std::vector<PatientRecord> read_patient_csv_file(const std::string& path, const DagModelSpec& spec) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("cannot open '{}'", path));
  return read_patient_csv(in, spec);
}

std::string patient_csv_header(const DagModelSpec& spec) {
  std::string out = "id";
  for (const auto& c : spec.covariates()) out += "," + c.id;
  for (const auto& n : spec.nodes()) out += "," + n.id;
  return out;
}

std::string patient_csv_row(const DagModelSpec& spec, long id, const PatientRecord& record) {
  std::string out = std::to_string(id);
  std::size_t xi = 0, zi = 0;
  for (const auto& c : spec.covariates()) {
    const auto v = c.kind == CovariateKind::process ? record.x[xi++] : record.z[zi++];
    out += v ? ",1" : ",0";
  }
  for (auto y : record.y) out += y == 1 ? ",1" : ",0";
  return out;
}

std::vector<double> parse_c_grid(std::string_view text) {
  const std::string_view t = trim(text);
  if (t.empty()) throw InputError("c grid is empty");
  std::vector<double> out;
  if (t.find(':') != std::string_view::npos) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
      const auto colon = t.find(':', start);
      parts.push_back(t.substr(start, colon == std::string_view::npos ? colon : colon - start));
      if (colon == std::string_view::npos) break;
      start = colon + 1;
    }
    if (parts.size() != 3) throw InputError(fmt::format("c grid range '{}' must be start:stop:step", t));
    const double a = parse_real(parts[0], "c grid");
    const double b = parse_real(parts[1], "c grid");
    const double step = parse_real(parts[2], "c grid");
    if (!(step > 0.0)) throw InputError("c grid step must be positive");
    if (b < a - 1e-9) throw InputError("c grid stop is below start");
    const long n = static_cast<long>(std::floor((b - a) / step + 1e-9));
    if (n > 1000000) throw InputError("c grid has too many points");
    for (long k = 0; k <= n; ++k) {
      // snap to a short decimal so 0.2 + 3*0.2 prints as 0.8
      const double v = a + static_cast<double>(k) * step;
      out.push_back(std::stod(fmt::format("{:.12g}", v)));
    }
  } else {
    std::vector<std::string_view> parts;
    split_fields(t, parts);
    for (auto p : parts) out.push_back(parse_real(p, "c grid"));
  }
  return out;
}

std::string format_number(double v) { return fmt::format("{}", v); }

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(fmt::format("cannot open '{}'", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError(fmt::format("cannot write '{}'", path));
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw InputError(fmt::format("failed writing '{}'", path));
}

Json parse_json_text(std::string_view text, std::string_view what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw InputError(fmt::format("{}: JSON syntax error at line {}, column {}", what, line, col));
  }
}

ParamVector load_params(const Json& doc, const ParamVector& base) {
  ParamVector out = base;
  auto set = [&](const std::string& name, const Json& v) {
    if (!out.layout().contains(name)) throw InputError(fmt::format("unknown coefficient '{}'", name));
    if (!v.is_number()) throw InputError(fmt::format("coefficient '{}' must be a number", name));
    out[name] = v.get<double>();
  };
  try {
    if (doc.is_object() && doc.contains("values")) {
      if (!doc.at("values").is_object()) throw InputError("'values' must be an object");
      for (const auto& [k, v] : doc.at("values").items()) set(k, v);
      return out;
    }
    if (doc.is_object() && doc.contains("result") && doc.at("result").contains("coefficients")) {
      for (const auto& c : doc.at("result").at("coefficients")) set(c.at("name").get<std::string>(), c.at("estimate"));
      return out;
    }
  } catch (const Json::exception& e) {
    throw InputError(fmt::format("malformed parameter file: {}", e.what()));
  }
  throw InputError("parameter file must contain 'values' or a fit report 'result.coefficients'");
}

Json RunManifest::to_json() const {
  Json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["command"] = command;
  j["args"] = args;
  j["model_hash"] = model_hash;
  j["seed"] = seed;
  j["created_at"] = created_at;
  return j;
}

RunManifest RunManifest::from_json(const Json& j) {
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.args = j.at("args").get<std::vector<std::string>>();
    m.model_hash = j.value("model_hash", std::string{});
    m.seed = j.value("seed", std::uint64_t{0});
    m.created_at = j.value("created_at", std::string{});
    return m;
  } catch (const Json::exception& e) {
    throw InputError(fmt::format("malformed run manifest: {}", e.what()));
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string results_document(const RunManifest& manifest, const Json& result) {
  Json doc;
  doc["manifest"] = manifest.to_json();
  doc["result"] = result;
  return doc.dump(2) + "\n";
}

Json fit_report(const Model& model, const FitResult& fit, std::size_t n_records) {
  const auto& spec = model.spec;
  const Eigen::VectorXd se = fit.standard_errors(spec);
  const auto& layout = spec.layout();
  Json coefs = Json::array();
  for (Eigen::Index i = 0; i < layout.size(); ++i) {
    Json c;
    c["name"] = layout.name(i);
    c["node"] = spec.nodes()[layout.node_of(i)].id;
    c["estimate"] = fit.theta.values()[i];
    c["std_error"] = se[i];
    coefs.push_back(std::move(c));
  }
  Json nodes = Json::array();
  for (const auto& n : fit.nodes) {
    nodes.push_back({{"node", n.node}, {"iterations", n.iterations}, {"score_max_norm", n.score_max_norm},
                     {"converged", true}});
  }
  Json r;
  r["coefficients"] = std::move(coefs);
  r["nodes"] = std::move(nodes);
  r["log_likelihood"] = fit.log_likelihood;
  r["n_records"] = n_records;
  r["implementer_supplied"] = model.implementer_supplied;
  return r;
}

Json arl_json(const ArlResult& arl) {
  Json j;
  j["mean_rl"] = arl.mean_rl;
  j["std_error"] = arl.std_error;
  j["reps"] = arl.reps;
  j["censored"] = arl.censored;
  j["max_rl"] = arl.max_rl;
  j["censoring_warning"] = arl.censoring_warning();
  return j;
}

Json calibration_json(const CalibrationResult& result) {
  Json j;
  j["h"] = result.h;
  j["achieved_arl"] = arl_json(result.achieved_arl);
  j["iterations"] = result.iterations;
  j["bracket"] = {result.h_low, result.h_high};
  j["converged"] = result.converged;
  j["nonmonotone"] = result.nonmonotone;
  Json evals = Json::array();
  for (const auto& e : result.evaluations) {
    evals.push_back({{"h", e.h}, {"reps", e.stage_reps}, {"mean_rl", e.arl.mean_rl},
                     {"std_error", e.arl.std_error}, {"censored", e.arl.censored}});
  }
  j["evaluations"] = std::move(evals);
  return j;
}

std::string csv_manifest_line(const RunManifest& manifest, const Json& extra) {
  Json j;
  j["manifest"] = manifest.to_json();
  if (!extra.is_null()) j["metadata"] = extra;
  return "# " + j.dump() + "\n";
}

namespace {

bool has_pair_rows(const std::vector<StudyRow>& rows) {
  for (const auto& r : rows) {
    if (r.c_first) return true;
  }
  return false;
}

std::string targets_field(const ShiftSpec& s) {
  std::string out;
  for (std::size_t i = 0; i < s.targets.size(); ++i) out += (i ? "+" : "") + s.targets[i];
  return out;
}

}  // namespace

std::string study_csv_body(const std::vector<StudyRow>& rows) {
  const bool pair = has_pair_rows(rows);
  std::string out = "shift_kind,targets,c,mean_rl,std_error,reps,censored";
  out += pair ? ",c_first\n" : "\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{}", to_string(r.shift.kind), targets_field(r.shift),
                       format_number(r.shift.c), format_number(r.arl.mean_rl),
                       format_number(r.arl.std_error), r.arl.reps, r.arl.censored);
    if (pair) out += "," + (r.c_first ? format_number(*r.c_first) : std::string{});
    out += "\n";
  }
  return out;
}

std::string study_plot_csv_body(const std::vector<StudyRow>& rows) {
  const bool pair = has_pair_rows(rows);
  std::string out = pair ? "shift_kind,targets,c_first,c,mean_rl,ci_low,ci_high\n"
                         : "c,mean_rl,ci_low,ci_high\n";
  for (const auto& r : rows) {
    const double half = 1.96 * r.arl.std_error;
    if (pair) {
      out += fmt::format("{},{},{},", to_string(r.shift.kind), targets_field(r.shift),
                         r.c_first ? format_number(*r.c_first) : std::string{});
    }
    out += fmt::format("{},{},{},{}\n", format_number(r.shift.c), format_number(r.arl.mean_rl),
                       format_number(r.arl.mean_rl - half), format_number(r.arl.mean_rl + half));
  }
  return out;
}

RunManifest read_manifest(const std::string& path) {
  const std::string text = read_text_file(path);
  std::string_view t = trim(std::string_view(text).substr(0, text.find('\n')));
  if (!t.empty() && t.front() == '#') {
    t.remove_prefix(1);
    const Json j = parse_json_text(t, path);
    if (!j.contains("manifest")) throw InputError(fmt::format("'{}' has no run manifest", path));
    return RunManifest::from_json(j.at("manifest"));
  }
  const Json j = parse_json_text(text, path);
  if (!j.is_object() || !j.contains("manifest")) {
    throw InputError(fmt::format("'{}' has no run manifest", path));
  }
  return RunManifest::from_json(j.at("manifest"));
}

}  // namespace smewma
