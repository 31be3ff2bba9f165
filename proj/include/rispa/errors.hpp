#pragma once

#include <cstddef>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

namespace rispa {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Two points of the scene coincide so a propagation term is singular.
struct GeometryError : Error {
  using Error::Error;
};

/// Bad argument or violated precondition.
struct InvalidArgument : Error {
  using Error::Error;
};

/// Configuration file problem. `key()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error("config error at key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Malformed data file. `line()` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::string path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), path_(std::move(path)), line_(line) {}
  const std::string& path() const noexcept { return path_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string path_;
  std::size_t line_;
};

/// Well-formed data that violates a domain invariant.
struct ValidationError : Error {
  using Error::Error;
};

/// A pipeline stage needs an artifact produced by an earlier stage.
class MissingDependency : public Error {
 public:
  explicit MissingDependency(std::string stage)
      : Error("missing dependency: " + stage), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace rispa

namespace rispa {

/// Receives non-fatal diagnostics (out-of-range targets, digest mismatches).
using WarningSink = std::function<void(const std::string&)>;

inline void warn(const WarningSink& sink, const std::string& message) {
  if (sink) {
    sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace rispa
