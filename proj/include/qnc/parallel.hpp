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

#ifndef QNC_PARALLEL_HPP
#define QNC_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace qnc {

/// Worker count: $QNC_THREADS when set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
unsigned default_thread_count();

/// Runs body(i) for i in [0, n) on up to `threads` workers (0 = default).
/// Indices are handed out in contiguous blocks; the first exception thrown
/// by any worker is rethrown on the caller after all workers finish.
void parallel_for(size_t n, unsigned threads, const std::function<void(size_t)> &body);

}  // namespace qnc

#endif
