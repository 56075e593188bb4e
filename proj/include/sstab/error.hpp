#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sstab {

// Root of every error the library raises. The CLI maps all of these to
// exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed track record. Carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class StructuralError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class ParameterError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class SequencingError : public Error { using Error::Error; };
class FitError : public Error { using Error::Error; };
class MetricError : public Error { using Error::Error; };

// Rigid MLS could not normalise the rotation term (all targets collapsed
// onto their centroid, or collinear/degenerate configurations).
class DegenerateWarpError : public Error {
 public:
  DegenerateWarpError(std::size_t index, const std::string& what)
      : Error(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t iterate, const std::string& what)
      : Error(what), iterate_(iterate) {}
  std::size_t iterate() const noexcept { return iterate_; }

 private:
  std::size_t iterate_;
};

// Weight file problems.
class WeightFormatError : public Error { using Error::Error; };
class VersionError : public WeightFormatError { using WeightFormatError::WeightFormatError; };
class ChecksumError : public WeightFormatError { using WeightFormatError::WeightFormatError; };
class ManifestError : public WeightFormatError { using WeightFormatError::WeightFormatError; };

}  // namespace sstab
