#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace odefilter {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed expression text. `position` is a byte offset into the input.
struct SyntaxError : Error {
  SyntaxError(std::size_t pos, const std::string& expected_set)
      : Error("syntax error at position " + std::to_string(pos) + ": expected " + expected_set),
        position(pos),
        expected(expected_set) {}
  std::size_t position;
  std::string expected;
};

/// Call to a function outside the supported set.
struct UnknownFunctionError : Error {
  explicit UnknownFunctionError(const std::string& fn)
      : Error("unknown function '" + fn + "'"), name(fn) {}
  std::string name;
};

/// Evaluation touched a symbol with no binding.
struct UnboundSymbolError : Error {
  explicit UnboundSymbolError(const std::string& sym)
      : Error("unbound symbol '" + sym + "'"), name(sym) {}
  std::string name;
};

/// ln/sqrt of a negative, division by exact zero, pow outside its domain.
struct DomainError : Error {
  using Error::Error;
};

/// Density evaluation requested for a zero-width distribution.
struct DegenerateDensityError : Error {
  using Error::Error;
};

struct CsvParseError : Error {
  CsvParseError(int line_no, const std::string& what_)
      : Error("csv line " + std::to_string(line_no) + ": " + what_), line(line_no) {}
  int line;
};

struct NonMonotonicTimeError : Error {
  explicit NonMonotonicTimeError(int line_no)
      : Error("csv line " + std::to_string(line_no) + ": time values must be strictly increasing"),
        line(line_no) {}
  int line;
};

struct ModelFileError : Error {
  ModelFileError(int line_no, const std::string& what_)
      : Error("model file line " + std::to_string(line_no) + ": " + what_), line(line_no) {}
  int line;
};

/// Intra-slice dependency cycle found while compiling a model.
struct CyclicIntraSliceError : Error {
  using Error::Error;
};

/// Every particle carries -inf log weight; the filter cannot continue.
struct AllWeightsDegenerateError : Error {
  AllWeightsDegenerateError() : Error("all particle weights are degenerate (-inf)") {}
};

/// A rejected step would need a size below the controller's minimum.
struct StepUnderflowError : Error {
  using Error::Error;
};

/// A reference trajectory left the finite range.
struct NonFiniteError : Error {
  using Error::Error;
};

/// Metric computation found no shared times after the run-in.
struct NoOverlapError : Error {
  using Error::Error;
};

}  // namespace odefilter
