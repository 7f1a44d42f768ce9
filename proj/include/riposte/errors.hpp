#pragma once

#include <stdexcept>
#include <string>

namespace riposte {

enum class Errc {
  invalid_argument,    // caller violated a documented precondition
  decode_error,        // malformed serialized input
  protocol_violation,  // peer broke the wire or audit protocol
  epoch_closed,        // write arrived after the epoch stopped accepting
  not_validated,       // update attempted with a key that never passed validation
  crypto_failure,      // unexpected failure inside a crypto primitive
  io_failure,          // socket/file problem
  timeout,             // deadline expired waiting for a counterpart
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::decode_error: return "DecodeError";
    case Errc::protocol_violation: return "ProtocolViolation";
    case Errc::epoch_closed: return "EpochClosed";
    case Errc::not_validated: return "NotValidated";
    case Errc::crypto_failure: return "CryptoFailure";
    case Errc::io_failure: return "IoFailure";
    case Errc::timeout: return "Timeout";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace riposte
