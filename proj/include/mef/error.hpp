#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mef {

enum class ErrorCode {
  // tensor / layer math
  EmptyTensor,
  ChannelMismatch,
  DimMismatch,
  ShapeMismatch,
  LengthMismatch,
  PoolLargerThanInput,
  ShapeUnderflow,
  StaleCache,
  InvalidSpec,
  // training
  BatchLargerThanDataset,
  NonFiniteLoss,
  // data
  ParseError,
  RaggedSeries,
  NegativeValue,
  SeriesTooShort,
  InsufficientData,
  ChannelUnavailable,
  BadChannelCount,
  // correlation
  UndefinedCorrelation,
  // metrics
  NonPositiveMax,
  RaggedInput,
  // federated
  EmptyList,
  // experiment runner
  ConfigError,
  MissingResults,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyTensor: return "EmptyTensor";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::PoolLargerThanInput: return "PoolLargerThanInput";
    case ErrorCode::ShapeUnderflow: return "ShapeUnderflow";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::BatchLargerThanDataset: return "BatchLargerThanDataset";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::RaggedSeries: return "RaggedSeries";
    case ErrorCode::NegativeValue: return "NegativeValue";
    case ErrorCode::SeriesTooShort: return "SeriesTooShort";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::ChannelUnavailable: return "ChannelUnavailable";
    case ErrorCode::BadChannelCount: return "BadChannelCount";
    case ErrorCode::UndefinedCorrelation: return "UndefinedCorrelation";
    case ErrorCode::NonPositiveMax: return "NonPositiveMax";
    case ErrorCode::RaggedInput: return "RaggedInput";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::MissingResults: return "MissingResults";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` identifies the failure family.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Data ingestion failure carrying the 1-based source line (0 when not line-specific).
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Layer-level failure annotated with the 0-based layer index in a network.
class LayerError : public Error {
 public:
  LayerError(ErrorCode code, std::size_t layer, const std::string& what)
      : Error(code, "layer " + std::to_string(layer) + ": " + what), layer_(layer) {}

  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace mef
