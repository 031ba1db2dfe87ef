#pragma once

#include <stdexcept>
#include <string>

namespace arc {

// Error families. The CLI maps each family onto a process exit code.
enum class ErrorKind {
  kConfig,         // invalid configuration / usage
  kInput,          // input data violates a precondition
  kParse,          // malformed annotation / detection file
  kIo,             // unreadable or unwritable file
  kFormat,         // bad bitstream or checkpoint container
  kModelMismatch,  // bitstream produced by a different model
  kEncode,         // symbol outside the frozen table
  kDecode,         // truncated or inconsistent payload
  kFreeze,         // entropy model cannot be frozen into a table
  kNumeric,        // NaN / Inf encountered
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define ARC_DEFINE_ERROR(Name, Kind)                 \
  class Name : public Error {                        \
   public:                                           \
    explicit Name(const std::string& what)           \
        : Error(ErrorKind::Kind, what) {}            \
  };

ARC_DEFINE_ERROR(ConfigError, kConfig)
ARC_DEFINE_ERROR(InputError, kInput)
ARC_DEFINE_ERROR(ParseError, kParse)
ARC_DEFINE_ERROR(IoError, kIo)
ARC_DEFINE_ERROR(FormatError, kFormat)
ARC_DEFINE_ERROR(ModelMismatchError, kModelMismatch)
ARC_DEFINE_ERROR(EncodeError, kEncode)
ARC_DEFINE_ERROR(DecodeError, kDecode)
ARC_DEFINE_ERROR(FreezeError, kFreeze)
ARC_DEFINE_ERROR(NumericError, kNumeric)

#undef ARC_DEFINE_ERROR

}  // namespace arc
