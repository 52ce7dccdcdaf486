// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace civet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes; the message names the offending axes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. calling backward on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::size_t line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Malformed binary input. offset is the byte position where parsing failed.
class ParseError : public Error {
 public:
  enum class Kind { bad_magic, truncated, bad_dims, io };

  ParseError(Kind kind, std::size_t offset, const std::string& what)
      : Error("offset " + std::to_string(offset) + ": " + what),
        kind_(kind),
        offset_(offset) {}

  Kind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

enum class CheckpointErrc {
  io = 1,
  corrupt_header = 2,
  version_mismatch = 3,
  shape_mismatch = 4,
};

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what)
      : Error(what), code_(code) {}

  CheckpointErrc code() const noexcept { return code_; }

 private:
  CheckpointErrc code_;
};

/// Raised by the training loop when a loss stops being finite.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t batch_index)
      : Error(what), batch_index_(batch_index) {}

  std::size_t batch_index() const noexcept { return batch_index_; }

 private:
  std::size_t batch_index_;
};

}  // namespace civet
