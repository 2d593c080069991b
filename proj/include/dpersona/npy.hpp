#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

// Minimal NumPy .npy (format 1.0) reader/writer for little-endian float32 and uint8.
namespace dpersona::io {

template <typename T>
struct NpyArray {
  std::vector<std::int64_t> shape;
  std::vector<T> data;
};

template <typename T>
void write_npy(const std::filesystem::path& path, const std::vector<std::int64_t>& shape, const std::vector<T>& data);

/// Throws std::runtime_error if the dtype or layout is not the expected one.
template <typename T>
NpyArray<T> read_npy(const std::filesystem::path& path);

}  // namespace dpersona::io
