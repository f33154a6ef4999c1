// Copyright 2026 The qnc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef QNC_ERROR_HPP
#define QNC_ERROR_HPP

#include <stdexcept>
#include <string>

namespace qnc {

/// Error categories. The numeric values double as process exit codes and as
/// the status codes of the C API.
enum class ErrorKind : int {
    usage = 1,
    data = 2,
    numerical = 3,
};

class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string &message) : std::runtime_error(message), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

/// Invalid arguments, violated preconditions, malformed configuration.
class ValidationError : public Error {
   public:
    explicit ValidationError(const std::string &message) : Error(ErrorKind::usage, message) {}
};

/// Bad or inconsistent input data (files, datasets, models).
class DataError : public Error {
   public:
    explicit DataError(const std::string &message) : Error(ErrorKind::data, message) {}
};

/// Non-convergence or non-finite values in a numerical routine.
class NumericalError : public Error {
   public:
    explicit NumericalError(const std::string &message) : Error(ErrorKind::numerical, message) {}
};

/// Distinct failure modes when decoding a QNCD stream.
enum class FormatFault {
    bad_magic,
    version_mismatch,
    truncated,
    checksum,
    bad_header,
    trailing_data,
};

class FormatError : public DataError {
   public:
    FormatError(FormatFault fault, const std::string &message) : DataError(message), fault_(fault) {}
    FormatFault fault() const noexcept { return fault_; }

   private:
    FormatFault fault_;
};

}  // namespace qnc

#endif
