// Copyright 2026 The nice Authors
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

#ifndef NICE_ERROR_HPP
#define NICE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace nicekit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define NICE_DEFINE_ERROR(Name)        \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  };

NICE_DEFINE_ERROR(DimensionError)
NICE_DEFINE_ERROR(InvalidKernelError)
NICE_DEFINE_ERROR(DegenerateBatchError)
NICE_DEFINE_ERROR(ArgumentError)
NICE_DEFINE_ERROR(FormatError)
NICE_DEFINE_ERROR(CorruptionError)
NICE_DEFINE_ERROR(IntegrityError)
NICE_DEFINE_ERROR(NumericalError)
NICE_DEFINE_ERROR(MappingError)
NICE_DEFINE_ERROR(CoverageError)
NICE_DEFINE_ERROR(LeakageError)
NICE_DEFINE_ERROR(UnsupportedError)
NICE_DEFINE_ERROR(NormalizationError)
NICE_DEFINE_ERROR(ValidationError)

#undef NICE_DEFINE_ERROR

}  // namespace nicekit

#endif  // NICE_ERROR_HPP
