#pragma once

#include <stdexcept>
#include <string>

namespace optree {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };
struct LengthError : Error { using Error::Error; };
struct MaskedConstError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct CondWidthError : Error { using Error::Error; };
struct SampleError : Error { using Error::Error; };
struct TokenizeError : Error { using Error::Error; };
struct MissingKeyError : Error { using Error::Error; };
struct VersionError : Error { using Error::Error; };
struct TopologyError : Error { using Error::Error; };
struct NonFiniteLossError : Error { using Error::Error; };
struct NoDescentError : Error { using Error::Error; };
struct GradCheckFailure : Error { using Error::Error; };
struct DegenerateImageError : Error { using Error::Error; };
struct LengthMismatchError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

enum class ReconstructReason {
  ok,
  dangling_children,
  trailing_tokens,
  unknown_token,
  missing_eos,
  const_underflow,
};

const char* to_string(ReconstructReason r);

struct ReconstructionError : Error {
  ReconstructReason reason;
  explicit ReconstructionError(ReconstructReason r)
      : Error(std::string("reconstruction failed: ") + to_string(r)), reason(r) {}
};

struct ParseError : Error {
  std::size_t offset;
  std::string expected;
  ParseError(std::size_t off, std::string exp)
      : Error("parse error at offset " + std::to_string(off) + ", expected " + exp),
        offset(off),
        expected(std::move(exp)) {}
};

}  // namespace optree
