#pragma once

#include <stdexcept>
#include <string>

namespace pmq {

// Error taxonomy shared by all modules. Everything derives from Error so
// callers can catch the whole family at the CLI boundary.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Argument outside its mathematical domain (q outside (0,1), nonpositive delta, ...).
class DomainError : public Error {
public:
  using Error::Error;
};

// Raster/tensor dimensions do not line up.
class ShapeError : public Error {
public:
  using Error::Error;
};

// An aggregate was requested over zero valid pixels.
class EmptySampleError : public Error {
public:
  using Error::Error;
};

// Georeferencing or quality metadata is missing or inconsistent.
class MetadataError : public Error {
public:
  using Error::Error;
};

// A band has max == min and cannot be normalized.
class DegenerateBandError : public Error {
public:
  using Error::Error;
};

// Checkpoint exists but does not match the requested config/version.
class IncompatibleCheckpointError : public Error {
public:
  using Error::Error;
};

// A file is not parseable as the expected container.
class FormatError : public Error {
public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
  using Error::Error;
};

// Dataset too small for the requested split.
class SizeError : public Error {
public:
  using Error::Error;
};

// Invalid configuration value.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Filesystem problem; message carries the path.
class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace pmq
