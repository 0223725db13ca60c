// include/mbndiar/common.h
//
// Copyright (c)  2026  The mbndiar Authors
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

#ifndef MBNDIAR_COMMON_H_
#define MBNDIAR_COMMON_H_

#include <algorithm>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace mbndiar {

// One embedding per row.
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Malformed input files, violated preconditions on user data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Singular matrices, failed decompositions.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad command-line or config usage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// splitmix64 finalizer; used to derive independent sub-seeds.
inline uint64_t Mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a, stable across platforms and runs.
inline uint64_t HashString(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Runs fn(i) for i in [0, count) on up to num_threads threads. Each index is
// visited exactly once; callers write to disjoint slots so the result does
// not depend on the schedule.
inline void ParallelFor(int count, int num_threads,
                        const std::function<void(int)> &fn) {
  num_threads = std::max(1, std::min(num_threads, count));
  if (num_threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(num_threads);
  {
    std::vector<std::jthread> workers;
    workers.reserve(num_threads);
    for (int t = 0; t < num_threads; ++t) {
      workers.emplace_back([&, t] {
        try {
          for (int i = t; i < count; i += num_threads) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace mbndiar

#endif  // MBNDIAR_COMMON_H_
