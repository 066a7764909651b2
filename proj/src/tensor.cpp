// SPDX-License-Identifier: Apache-2.0
#include "sganet/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

namespace sganet {
namespace {

constexpr char kMagic[4] = {'F', 'T', '3', '2'};

template <typename UInt>
void put_le(std::vector<unsigned char>& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

template <typename UInt>
UInt get_le(std::span<const unsigned char> bytes, std::size_t offset) {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[offset + i]) << (8 * i);
  return v;
}

void check_finite(const std::vector<float>& data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw TensorError(TensorError::Kind::kNonFinite,
                        "non-finite value at flat index " + std::to_string(i));
    }
  }
}

std::uint64_t product(const std::vector<std::uint64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::uint64_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
  if (product(shape) != data.size()) {
    throw TensorError(TensorError::Kind::kLengthMismatch, "tensor data length does not match shape");
  }
}

Tensor Tensor::zeros(std::vector<std::uint64_t> shape) {
  const auto n = product(shape);
  return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
}

std::uint64_t Tensor::numel() const { return product(shape); }

std::vector<unsigned char> encode_tensor(const Tensor& tensor) {
  if (tensor.numel() != tensor.data.size()) {
    throw TensorError(TensorError::Kind::kLengthMismatch, "tensor data length does not match shape");
  }
  check_finite(tensor.data);
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  out.reserve(8 + 8 * tensor.shape.size() + 4 * tensor.data.size());
  put_le(out, static_cast<std::uint32_t>(tensor.shape.size()));
  for (auto e : tensor.shape) put_le(out, e);
  for (float f : tensor.data) put_le(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

Tensor decode_tensor(std::span<const unsigned char> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw TensorError(TensorError::Kind::kBadMagic, "bad FT32 magic");
  }
  const auto ndim = get_le<std::uint32_t>(bytes, 4);
  std::size_t offset = 8;
  if (bytes.size() < offset + 8ull * ndim) {
    throw TensorError(TensorError::Kind::kLengthMismatch, "truncated FT32 header");
  }
  Tensor t;
  t.shape.resize(ndim);
  for (auto& e : t.shape) {
    e = get_le<std::uint64_t>(bytes, offset);
    offset += 8;
  }
  const std::uint64_t n = product(t.shape);
  const std::size_t payload = bytes.size() - offset;
  if (payload % 4 != 0 || payload / 4 != n) {
    throw TensorError(TensorError::Kind::kLengthMismatch,
                      "FT32 payload holds " + std::to_string(payload / 4) + " floats, header expects " +
                          std::to_string(n));
  }
  t.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    t.data[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset));
    offset += 4;
  }
  check_finite(t.data);
  return t;
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorError(TensorError::Kind::kIo, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const TensorError& e) {
    throw TensorError(e.kind(), path.string() + ": " + e.what());
  }
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  const auto bytes = encode_tensor(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TensorError(TensorError::Kind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw TensorError(TensorError::Kind::kIo, "write failed for " + path.string());
}

}  // namespace sganet
