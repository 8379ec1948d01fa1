#pragma once

#include <stdexcept>
#include <string>

namespace moluq {

enum class Err {
  // smiles
  EmptyInput,
  UnknownToken,
  UnmatchedParenthesis,
  UnmatchedRingClosure,
  DegreeOverflow,
  // tensors / autodiff
  ShapeMismatch,
  NonFiniteValue,
  NonFiniteGradient,
  NonFiniteLoss,
  NonFiniteUpdate,
  LengthMismatch,
  // training
  CorpusTooSmall,
  // data / harness
  PoolExhausted,
  EmptyFamily,
  EmptyRecords,
  DegenerateInput,
  FileNotFound,
  MissingColumn,
  NoValidRows,
  FractionInvalid,
  BadCheckpoint,
  BadConfig,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::EmptyInput: return "EmptyInput";
    case Err::UnknownToken: return "UnknownToken";
    case Err::UnmatchedParenthesis: return "UnmatchedParenthesis";
    case Err::UnmatchedRingClosure: return "UnmatchedRingClosure";
    case Err::DegreeOverflow: return "DegreeOverflow";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::NonFiniteValue: return "NonFiniteValue";
    case Err::NonFiniteGradient: return "NonFiniteGradient";
    case Err::NonFiniteLoss: return "NonFiniteLoss";
    case Err::NonFiniteUpdate: return "NonFiniteUpdate";
    case Err::LengthMismatch: return "LengthMismatch";
    case Err::CorpusTooSmall: return "CorpusTooSmall";
    case Err::PoolExhausted: return "PoolExhausted";
    case Err::EmptyFamily: return "EmptyFamily";
    case Err::EmptyRecords: return "EmptyRecords";
    case Err::DegenerateInput: return "DegenerateInput";
    case Err::FileNotFound: return "FileNotFound";
    case Err::MissingColumn: return "MissingColumn";
    case Err::NoValidRows: return "NoValidRows";
    case Err::FractionInvalid: return "FractionInvalid";
    case Err::BadCheckpoint: return "BadCheckpoint";
    case Err::BadConfig: return "BadConfig";
  }
  return "Unknown";
}

class MoluqError : public std::runtime_error {
 public:
  MoluqError(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}

  Err code() const noexcept { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) {
  throw MoluqError(code, msg);
}

}  // namespace moluq
