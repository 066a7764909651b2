// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sganet/common.hpp"

namespace sganet {

// Row-major f32 array with an arbitrary number of extents.
struct Tensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::uint64_t> shape, std::vector<float> data);

  static Tensor zeros(std::vector<std::uint64_t> shape);

  std::uint64_t numel() const;
  std::size_t ndim() const { return shape.size(); }

  float& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  float at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  bool operator==(const Tensor&) const = default;
};

class TensorError : public DataError {
 public:
  enum class Kind { kIo, kBadMagic, kLengthMismatch, kNonFinite };

  TensorError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// FT32 layout: "FT32", u32 ndim, ndim x u64 extents, row-major f32 payload (all little-endian).
Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const Tensor& tensor);

Tensor decode_tensor(std::span<const unsigned char> bytes);
std::vector<unsigned char> encode_tensor(const Tensor& tensor);

// 2-D helpers between Tensor and Eigen. Narrowing to f32 happens in to_tensor.
template <typename Scalar>
Matrix<Scalar> to_matrix(const Tensor& t) {
  if (t.ndim() != 2) throw DataError("expected a 2-D tensor");
  Matrix<Scalar> m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(t.data[i]);
  return m;
}

template <typename Derived>
Tensor to_tensor(const Eigen::MatrixBase<Derived>& m) {
  Tensor t;
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      t.data[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<float>(m(r, c));
  return t;
}

}  // namespace sganet
