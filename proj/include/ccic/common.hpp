#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ccic {

using SiteId = std::string;
using VarId = std::string;
using LoopId = std::string;
using SimTime = double;  // simulated seconds

/// Base error for every failure surfaced by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or inconsistent configuration (plant, model, scenario files).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Link protocol violations (sequence gaps at the sender, bad frames).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A referenced entity (site, advisory, command) does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// The request conflicts with current state (e.g. re-acknowledging an advisory).
class ConflictError : public Error {
 public:
  using Error::Error;
};

/// Text parse failure with a 1-based source position.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line, int column)
      : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

// 64-bit FNV-1a; used for config hashes and training-set fingerprints.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) noexcept { update(s.data(), s.size()); }
  void update(double v) noexcept { update(&v, sizeof v); }
  std::uint64_t digest() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v);

/// Formats a double with 17 significant digits (lossless round-trip).
std::string format_exact(double v);

}  // namespace ccic
