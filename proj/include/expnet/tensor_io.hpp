#pragma once

#include "expnet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace expnet {

/// Tensor file layout: "EXPT", u32 version, u32 rank, rank x u64 extents,
/// then the values as little-endian float32 in row-major order.
inline constexpr std::uint32_t kTensorFileVersion = 1;

template <typename Scalar>
void write_tensor(const std::filesystem::path& path, const Tensor<Scalar>& tensor);

template <typename Scalar>
std::string encode_tensor(const Tensor<Scalar>& tensor);

template <typename Scalar = float>
Tensor<Scalar> read_tensor(const std::filesystem::path& path);

template <typename Scalar = float>
Tensor<Scalar> decode_tensor(const std::string& bytes, const std::string& origin = "<memory>");

/// 64-bit FNV-1a digest of a byte string.
std::uint64_t fnv1a64(const std::string& bytes);
std::string read_file_bytes(const std::filesystem::path& path);

}  // namespace expnet
