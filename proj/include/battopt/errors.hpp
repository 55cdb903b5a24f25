#pragma once

#include <stdexcept>
#include <string>

namespace battopt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define BATTOPT_DEFINE_ERROR(Name)          \
  class Name : public Error {               \
   public:                                  \
    explicit Name(const std::string& what)  \
        : Error(#Name ": " + what) {}       \
  }

BATTOPT_DEFINE_ERROR(InvalidSpec);
BATTOPT_DEFINE_ERROR(ComplementarityViolation);
BATTOPT_DEFINE_ERROR(BoundViolation);
BATTOPT_DEFINE_ERROR(LengthMismatch);
BATTOPT_DEFINE_ERROR(EtaOutOfRange);
BATTOPT_DEFINE_ERROR(DimensionMismatch);
BATTOPT_DEFINE_ERROR(InvalidProblem);
BATTOPT_DEFINE_ERROR(SolverNotOptimal);
BATTOPT_DEFINE_ERROR(MismatchedResult);
BATTOPT_DEFINE_ERROR(TooLarge);
BATTOPT_DEFINE_ERROR(AllComplementary);
BATTOPT_DEFINE_ERROR(UnknownKind);
BATTOPT_DEFINE_ERROR(IoError);
BATTOPT_DEFINE_ERROR(ConfigError);

#undef BATTOPT_DEFINE_ERROR

}  // namespace battopt
