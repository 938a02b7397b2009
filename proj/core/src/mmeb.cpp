#include "mmcoord/mmeb.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "mmcoord/error.hpp"

namespace mmcoord {
namespace {

constexpr std::array<char, 4> kMagic{'M', 'M', 'E', 'B'};

std::uint32_t decode_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void encode_u32(std::uint32_t v, unsigned char* p) {
  p[0] = static_cast<unsigned char>(v & 0xFF);
  p[1] = static_cast<unsigned char>((v >> 8) & 0xFF);
  p[2] = static_cast<unsigned char>((v >> 16) & 0xFF);
  p[3] = static_cast<unsigned char>((v >> 24) & 0xFF);
}

MmebHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 16> raw{};
  if (!in.read(reinterpret_cast<char*>(raw.data()), raw.size())) {
    throw_validation("truncated embedding file header: " + path.string());
  }
  if (std::memcmp(raw.data(), kMagic.data(), kMagic.size()) != 0) {
    throw_validation("bad magic in embedding file: " + path.string());
  }
  MmebHeader h;
  h.version = decode_u32(raw.data() + 4);
  h.rows = decode_u32(raw.data() + 8);
  h.cols = decode_u32(raw.data() + 12);
  if (h.version != kMmebVersion) {
    throw_validation("unsupported embedding file version " + std::to_string(h.version) + ": " +
                     path.string());
  }
  return h;
}

}  // namespace

MmebHeader read_mmeb_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_validation("cannot open embedding file: " + path.string());
  return parse_header(in, path);
}

Matrix read_mmeb(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_validation("cannot open embedding file: " + path.string());
  const MmebHeader h = parse_header(in, path);

  const std::size_t count = static_cast<std::size_t>(h.rows) * h.cols;
  std::vector<unsigned char> bytes(count * 4);
  if (count > 0 && !in.read(reinterpret_cast<char*>(bytes.data()),
                            static_cast<std::streamsize>(bytes.size()))) {
    throw_validation("truncated embedding file payload: " + path.string());
  }

  Matrix out(h.rows, h.cols);
  double* dst = out.data();
  for (std::size_t i = 0; i < count; ++i) {
    dst[i] = static_cast<double>(std::bit_cast<float>(decode_u32(bytes.data() + 4 * i)));
  }
  return out;
}

void write_mmeb(const std::filesystem::path& path, const Matrix& values) {
  std::vector<unsigned char> bytes(16 + static_cast<std::size_t>(values.size()) * 4);
  std::memcpy(bytes.data(), kMagic.data(), kMagic.size());
  encode_u32(kMmebVersion, bytes.data() + 4);
  encode_u32(static_cast<std::uint32_t>(values.rows()), bytes.data() + 8);
  encode_u32(static_cast<std::uint32_t>(values.cols()), bytes.data() + 12);

  const double* src = values.data();
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    encode_u32(std::bit_cast<std::uint32_t>(static_cast<float>(src[i])),
               bytes.data() + 16 + 4 * static_cast<std::size_t>(i));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_validation("cannot write embedding file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw_validation("failed writing embedding file: " + path.string());
}

}  // namespace mmcoord
