#pragma once

#include <stdexcept>
#include <string>

namespace megw {

enum class DecodeErrc {
  Truncated,
  Version,
  Flags,
  MessageType,
  Length,
  NotIpv4,
  NotGtp,
  UnknownKind,
  NoBearers,
  DuplicateBearer,
};

inline const char* to_string(DecodeErrc e) {
  switch (e) {
    case DecodeErrc::Truncated: return "Truncated";
    case DecodeErrc::Version: return "Version";
    case DecodeErrc::Flags: return "Flags";
    case DecodeErrc::MessageType: return "MessageType";
    case DecodeErrc::Length: return "Length";
    case DecodeErrc::NotIpv4: return "NotIpv4";
    case DecodeErrc::NotGtp: return "NotGtp";
    case DecodeErrc::UnknownKind: return "UnknownKind";
    case DecodeErrc::NoBearers: return "NoBearers";
    case DecodeErrc::DuplicateBearer: return "DuplicateBearer";
  }
  return "?";
}

class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  DecodeErrc code() const noexcept { return code_; }

 private:
  DecodeErrc code_;
};

class EncodeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class SelectError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ConflictError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class TopologyError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class StateError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace megw
