#pragma once

#include <filesystem>

#include "mmcoord/types.hpp"

namespace mmcoord {

// Embedding matrix file: "MMEB", u32 version (=1), u32 rows, u32 cols, then
// rows*cols float32 values, row-major, all little-endian.
inline constexpr std::uint32_t kMmebVersion = 1;

struct MmebHeader {
  std::uint32_t version = kMmebVersion;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
};

MmebHeader read_mmeb_header(const std::filesystem::path& path);
Matrix read_mmeb(const std::filesystem::path& path);

/// Values are rounded to float32 on write.
void write_mmeb(const std::filesystem::path& path, const Matrix& values);

}  // namespace mmcoord
