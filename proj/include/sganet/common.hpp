// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <exception>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace sganet {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrixd = Matrix<double>;
using Matrixf = Matrix<float>;
using Vectord = Vector<double>;

enum class Modality : int { k2D = 0, k3D = 1 };

inline constexpr std::array<Modality, 2> kModalities{Modality::k2D, Modality::k3D};

constexpr int index_of(Modality m) { return static_cast<int>(m); }

constexpr Modality complement(Modality m) {
  return m == Modality::k2D ? Modality::k3D : Modality::k2D;
}

inline std::string_view modality_name(Modality m) { return m == Modality::k2D ? "2d" : "3d"; }

// Exit-code-carrying error families used across the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 1; }
};

class UsageError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 4; }
};

// Collects non-fatal diagnostics. Also echoed to stderr when `echo` is set.
struct Warnings {
  std::vector<std::string> messages;
  bool echo = false;

  void add(std::string msg);
  bool empty() const { return messages.empty(); }
};

inline void warn(Warnings* sink, std::string msg) {
  if (sink != nullptr) sink->add(std::move(msg));
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
// thrown by any task is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::clamp<long>(threads, 1, static_cast<long>(std::max<std::size_t>(n, 1))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace sganet
