/* Copyright 2026 The ul-tta Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace ultta {

// Error categories. Each maps onto a CLI exit code (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 3; }
};

// Invalid hyperparameters, mismatched dimensions, bad CLI input.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
  int exit_code() const noexcept override { return 1; }
};

// Non-finite values, zero vectors, out-of-range labels.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
  int exit_code() const noexcept override { return 2; }
};

// Malformed or truncated binary/JSON files.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
  int exit_code() const noexcept override { return 2; }
};

// Missing or unreadable/unwritable files.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("i/o error: " + msg) {}
  int exit_code() const noexcept override { return 2; }
};

// Operation called in a state where it is undefined (empty window, no labels).
class StateError : public Error {
 public:
  explicit StateError(const std::string& msg) : Error("state error: " + msg) {}
  int exit_code() const noexcept override { return 3; }
};

}  // namespace ultta
