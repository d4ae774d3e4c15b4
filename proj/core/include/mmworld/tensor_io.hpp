#pragma once

#include <string>

#include "mmworld/tensor.hpp"

namespace mmw {

/// Reads a whole file; throws std::runtime_error if unreadable.
std::string read_file(const std::string& path);
/// Writes via temp file + rename so readers never observe partial output.
void atomic_write_file(const std::string& path, const std::string& bytes);

// TNSR container: "TNSR", u8 version=1, u8 dtype (0 = f32), u32 ndim,
// ndim x u64 extents, little-endian f32 payload.
void write_tnsr(const std::string& path, const Tensor& t);
Tensor read_tnsr(const std::string& path);

}  // namespace mmw
