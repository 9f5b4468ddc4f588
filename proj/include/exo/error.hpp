#pragma once

#include <stdexcept>
#include <string>

namespace exo {

enum class ErrorKind {
  InvalidArgument,
  PreconditionViolated,
  AttitudeSingular,
  SingularJacobian,
  NoConvergence,
  RankDeficientConstraint,
  Diverged,
  PhaseOutOfRange,
  ParseError,
  SchemaVersionMismatch,
  NoFeasiblePoint,
  NotHurwitz,
  SolveFailed,
  DegenerateBall,
  NoContact,
  BudgetExhausted,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::PreconditionViolated: return "PreconditionViolated";
    case ErrorKind::AttitudeSingular: return "AttitudeSingular";
    case ErrorKind::SingularJacobian: return "SingularJacobian";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::RankDeficientConstraint: return "RankDeficientConstraint";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::PhaseOutOfRange: return "PhaseOutOfRange";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorKind::NoFeasiblePoint: return "NoFeasiblePoint";
    case ErrorKind::NotHurwitz: return "NotHurwitz";
    case ErrorKind::SolveFailed: return "SolveFailed";
    case ErrorKind::DegenerateBall: return "DegenerateBall";
    case ErrorKind::NoContact: return "NoContact";
    case ErrorKind::BudgetExhausted: return "BudgetExhausted";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace exo
