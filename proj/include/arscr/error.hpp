#pragma once

#include <stdexcept>
#include <string>

namespace arscr {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class WavError : public Error {
 public:
  enum class Kind { Io, MalformedHeader, UnsupportedFormat, UnsupportedChannels, UnsupportedBitDepth, UnsupportedSampleRate };
  WavError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class CheckpointError : public Error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, ChecksumMismatch, UnknownTensor, MissingTensor, ShapeMismatch };
  CheckpointError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Configuration error carrying the JSON pointer of the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& msg)
      : Error("config error at " + (path.empty() ? std::string("/") : path) + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace arscr
