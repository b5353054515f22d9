// Copyright 2026 The pdarts Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace pdarts {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

#define PDARTS_DEFINE_ERROR(Name, tag)                          \
  class Name : public Error {                                   \
   public:                                                      \
    using Error::Error;                                         \
    const char* kind() const noexcept override { return tag; }  \
  };

PDARTS_DEFINE_ERROR(ShapeError, "shape")
PDARTS_DEFINE_ERROR(ConfigError, "config")
PDARTS_DEFINE_ERROR(ContractError, "contract")
PDARTS_DEFINE_ERROR(InvalidOperationError, "invalid_operation")
PDARTS_DEFINE_ERROR(ParseError, "parse")
PDARTS_DEFINE_ERROR(VersionError, "version")
PDARTS_DEFINE_ERROR(IoError, "io")
PDARTS_DEFINE_ERROR(ValidationError, "validation")

#undef PDARTS_DEFINE_ERROR

/// Raised when a loss or decomposition produces non-finite values. Carries
/// the training position (or layer) so that sweep failures are diagnosable.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, long epoch = -1, long batch = -1)
      : Error(what), epoch_(epoch), batch_(batch) {}
  const char* kind() const noexcept override { return "numeric"; }
  long epoch() const noexcept { return epoch_; }
  long batch() const noexcept { return batch_; }

 private:
  long epoch_;
  long batch_;
};

}  // namespace pdarts
