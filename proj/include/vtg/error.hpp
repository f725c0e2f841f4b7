#pragma once

#include <stdexcept>
#include <string>

namespace vtg {

enum class Errc {
  NotPositiveDefinite,
  DimensionMismatch,
  DomainError,
  EmptyInput,
  TooFewSamples,
  CorruptFile,
  IoError,
  LayerOutOfRange,
  IndexOutOfRange,
  UniverseMismatch,
  AllClustersEmpty,
  IndivisibleDimensions,
  ShapeMismatch,
  NonFiniteLoss,
  FootprintOverflow,
  ConstructionFailed,
  TooFewCleanEpisodes,
  InvalidConfig,
};

const char* errc_name(Errc code);

/// Single exception type for the library; `code()` identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace vtg
