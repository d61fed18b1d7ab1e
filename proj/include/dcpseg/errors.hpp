/*
 * Copyright 2026 The dcpseg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace dcpseg {

/// Grids (or vectors) that must agree in shape do not.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Rejected configuration or flag value. The CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite loss or otherwise unusable numbers. Exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class IoErrorKind { open_failed, bad_magic, bad_header, truncated, dtype_mismatch, write_failed };

/// File-level failures. Exit code 4.
class IoError : public std::runtime_error {
 public:
  IoError(IoErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  IoErrorKind kind() const noexcept { return kind_; }

 private:
  IoErrorKind kind_;
};

}  // namespace dcpseg
