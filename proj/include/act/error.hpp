#pragma once

#include <stdexcept>
#include <string>

namespace act {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text: JSONL lines, model responses, config values.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A value parsed fine but violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation's precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Transport failure talking to a model endpoint (after retries).
class BackendError : public Error {
 public:
  using Error::Error;
};

/// The backend cannot serve the requested strategy (e.g. no logprobs).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// Operation is not allowed in the run's current stage.
class StageError : public Error {
 public:
  using Error::Error;
};

/// Second submission for an already-reviewed item.
class ConflictError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite objective.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace act
