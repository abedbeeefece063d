#pragma once

#include <stdexcept>
#include <string>

namespace latentjm {

enum class ErrorCode {
  InvalidKnots,
  InvalidDegree,
  InvalidDomain,
  OutOfDomain,
  InvalidOrder,
  InvalidVariance,
  DegenerateLikelihood,
  OrphanLongitudinal,
  FollowupAfterEvent,
  ParseError,
  DuplicateCell,
  NoData,
  DegenerateLatentProcess,
  SingularInformation,
  RankDeficient,
  ZeroLikelihood,
  UnderdeterminedInit,
  InsufficientReplicates,
  EmptyRiskSet,
  InvalidSpec,
  IoError,
};

const char* error_code_name(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace latentjm
