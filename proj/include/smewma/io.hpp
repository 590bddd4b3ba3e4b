#pragma once

// File formats: patient CSV, study and trace CSV, JSON reports and run
// manifests, c-grid syntax.

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "smewma/calibration.hpp"
#include "smewma/likelihood.hpp"
#include "smewma/model.hpp"
#include "smewma/study.hpp"

namespace smewma {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kToolName = "score-mewma";
inline constexpr std::string_view kToolVersion = "1.0.0";

/// Incremental reader for patient CSV. Lines starting with '#' and blank
/// lines are skipped; an optional "id" column and unknown columns are
/// ignored. Every covariate and outcome of the model must have a column.
/// Errors throw InputError naming the line number and column.
class PatientCsvReader {
 public:
  PatientCsvReader(std::istream& in, const DagModelSpec& spec);

  /// Reads the next data row into `record`; false at end of input.
  bool next(PatientRecord& record);
  /// Line number (1-based) of the last row read.
  long line() const { return line_; }

 private:
  bool next_line(std::string& out);

  std::istream* in_;
  const DagModelSpec* spec_;
  long line_ = 0;
  std::size_t width_ = 0;
  // column index for each x, z and y entry
  std::vector<std::size_t> x_cols_, z_cols_, y_cols_;
  std::vector<std::string_view> fields_;
  std::string buffer_;
};

/// Reads a whole patient CSV. Throws InputError if it holds no data rows.
std::vector<PatientRecord> read_patient_csv(std::istream& in, const DagModelSpec& spec);
std::vector<PatientRecord> read_patient_csv_file(const std::string& path, const DagModelSpec& spec);

/// Header "id,<covariates in declaration order>,<outcomes in node order>".
std::string patient_csv_header(const DagModelSpec& spec);
std::string patient_csv_row(const DagModelSpec& spec, long id, const PatientRecord& record);

/// "a,b,c" or "start:stop:step" (stop included when within 1e-9).
std::vector<double> parse_c_grid(std::string_view text);

/// Shortest round-trip decimal form.
std::string format_number(double v);

std::string read_text_file(const std::string& path);
/// Writes atomically enough for our purposes: whole content, then close.
void write_text_file(const std::string& path, std::string_view content);
Json parse_json_text(std::string_view text, std::string_view what);

/// Coefficient values from either a fit report ({"result":{"coefficients":
/// [{"name","estimate"}...]}}) or {"values":{"name":value,...}}. Names not
/// listed keep their value in `base`; unknown names throw InputError.
ParamVector load_params(const Json& doc, const ParamVector& base);

struct RunManifest {
  std::string command;
  std::vector<std::string> args;  // full argument vector after the program name
  std::string model_hash;
  std::uint64_t seed = 0;
  std::string created_at;  // informational; excluded from payload comparison

  Json to_json() const;
  static RunManifest from_json(const Json& j);
};

std::string utc_timestamp();

/// {"manifest": ..., "result": ...} as indented JSON with a trailing newline.
std::string results_document(const RunManifest& manifest, const Json& result);

Json fit_report(const Model& model, const FitResult& fit, std::size_t n_records);
Json arl_json(const ArlResult& arl);
Json calibration_json(const CalibrationResult& result);

/// "# <manifest json>" comment line for CSV outputs.
std::string csv_manifest_line(const RunManifest& manifest, const Json& extra);

/// Study table: header plus one row per entry. Pair studies add c_first.
std::string study_csv_body(const std::vector<StudyRow>& rows);
std::string study_plot_csv_body(const std::vector<StudyRow>& rows);

/// Manifest line of a CSV or JSON output file.
RunManifest read_manifest(const std::string& path);

}  // namespace smewma
