#pragma once

#include <stdexcept>
#include <string>

namespace cluscov {

// Stable machine-readable error codes. The CLI maps these to exit status:
// config-class errors exit 2, estimation-class errors exit 1.
enum class errc {
  empty_input,
  non_finite_entry,
  length_mismatch,
  invalid_moment_order,
  degenerate_sample,
  not_symmetric,
  indefinite_matrix,
  singular_covariance,
  singular_instrument_moment,
  rank_deficient_design,
  rank_deficient_restriction,
  non_convergence,
  non_finite_objective,
  singular_hessian,
  singular_weight,
  rank_deficient_jacobian,
  wrong_weight_mode,
  non_psd_covariance,
  wrong_config,
  parse_error,
  missing_column,
  empty_file,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::empty_input: return "EmptyInput";
    case errc::non_finite_entry: return "NonFiniteEntry";
    case errc::length_mismatch: return "LengthMismatch";
    case errc::invalid_moment_order: return "InvalidMomentOrder";
    case errc::degenerate_sample: return "DegenerateSample";
    case errc::not_symmetric: return "NotSymmetric";
    case errc::indefinite_matrix: return "IndefiniteMatrix";
    case errc::singular_covariance: return "SingularCovariance";
    case errc::singular_instrument_moment: return "SingularInstrumentMoment";
    case errc::rank_deficient_design: return "RankDeficientDesign";
    case errc::rank_deficient_restriction: return "RankDeficientRestriction";
    case errc::non_convergence: return "NonConvergence";
    case errc::non_finite_objective: return "NonFiniteObjective";
    case errc::singular_hessian: return "SingularHessian";
    case errc::singular_weight: return "SingularWeight";
    case errc::rank_deficient_jacobian: return "RankDeficientJacobian";
    case errc::wrong_weight_mode: return "WrongWeightMode";
    case errc::non_psd_covariance: return "NonPsdCovariance";
    case errc::wrong_config: return "WrongConfig";
    case errc::parse_error: return "ParseError";
    case errc::missing_column: return "MissingColumn";
    case errc::empty_file: return "EmptyFile";
  }
  return "Unknown";
}

inline bool errc_is_config(errc c) {
  switch (c) {
    case errc::wrong_config:
    case errc::invalid_moment_order:
    case errc::parse_error:
    case errc::missing_column:
    case errc::empty_file:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Error(errc code, const std::string& message, long line, long column)
      : Error(code, message + " (line " + std::to_string(line) + ", column " +
                        std::to_string(column) + ")") {
    line_ = line;
    column_ = column;
  }

  errc code() const noexcept { return code_; }
  long line() const noexcept { return line_; }
  long column() const noexcept { return column_; }

 private:
  errc code_;
  long line_ = -1;
  long column_ = -1;
};

}  // namespace cluscov
