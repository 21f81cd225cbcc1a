#pragma once

#include <stdexcept>
#include <string>

namespace cyclevol {

// Root of every error thrown by the library. Callers that only need to tell
// "our" failures apart from std ones can catch this.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SpecError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class VersionError : public FormatError { using FormatError::FormatError; };
class ValidationError : public Error { using Error::Error; };
class BoundsError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class EmptyMemoryError : public Error { using Error::Error; };
class SamplingError : public Error { using Error::Error; };
class NotFoundError : public Error { using Error::Error; };
class KeyError : public Error { using Error::Error; };
class ExhaustedError : public Error { using Error::Error; };
class InsufficientInputError : public Error { using Error::Error; };
// Operation not valid in the current session state.
class StateError : public Error { using Error::Error; };

class TrainingError : public Error {
public:
    TrainingError(const std::string& what, long step) : Error(what), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

}  // namespace cyclevol
