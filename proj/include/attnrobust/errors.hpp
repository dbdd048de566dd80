// SPDX-License-Identifier: Apache-2.0
/**
 * @file   errors.hpp
 * @brief  Exception types shared across the library.
 */
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace attnrobust {

/// A caller broke an operation's precondition (e.g. a labeled-only routine
/// was handed an unlabeled batch).
class PreconditionError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Malformed corpus input; carries the 1-based line number.
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string &source, std::size_t line,
             const std::string &what)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + what),
      line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// A label outside the label set fixed by the training split.
class LabelError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or exploding loss during training; the CLI maps it to exit
/// code 3.
class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace attnrobust
