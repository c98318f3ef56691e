#pragma once

#include <stdexcept>
#include <string>

namespace zicb {

enum class ErrorCode {
  NonBinaryOutcome,
  RaggedDesign,
  EmptyCluster,
  DuplicateSubjectId,
  NonFiniteCovariate,
  BoundaryParameter,
  InvalidOrder,
  NonFiniteIntegrand,
  NonConvergence,
  SingularHessian,
  NonPDWorkingCorrelation,
  SingularBread,
  BoundarySolution,
  InsufficientData,
  NegativeLambda,
  MismatchedFits,
  InvalidLevel,
  InvalidDesign,
  EmptyReplicationSet,
  MissingColumn,
  ParseError,
  UnknownEstimator,
  UnsupportedLink,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace zicb
