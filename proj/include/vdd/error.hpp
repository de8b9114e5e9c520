#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vdd {

// Error codes shared by every module. The code is part of the contract:
// callers match on it, the message is for humans.
enum class Errc {
  EmptySupport,
  TraceMiss,
  VocabMismatch,
  DuplicateRecord,
  InvalidDegradation,
  BadCandidate,
  ShapeMismatch,
  BadParam,
  NotBinary,
  ParseError,
  IoError,
  BadConfig,
};

inline std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::EmptySupport:       return "EmptySupport";
    case Errc::TraceMiss:          return "TraceMiss";
    case Errc::VocabMismatch:      return "VocabMismatch";
    case Errc::DuplicateRecord:    return "DuplicateRecord";
    case Errc::InvalidDegradation: return "InvalidDegradation";
    case Errc::BadCandidate:       return "BadCandidate";
    case Errc::ShapeMismatch:      return "ShapeMismatch";
    case Errc::BadParam:           return "BadParam";
    case Errc::NotBinary:          return "NotBinary";
    case Errc::ParseError:         return "ParseError";
    case Errc::IoError:            return "IoError";
    case Errc::BadConfig:          return "BadConfig";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace vdd
