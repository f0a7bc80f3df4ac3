#pragma once

// Binary network files. Layout, all little-endian:
//   "SSNW" | u32 version | u32 skip_mode | u64 input_dim | u64 task_dim | u64 depth
//   per layer: u64 t_out | u64 d_in | u64 rank | f64 lambda | f64 censor_threshold
//              | U (t_out x rank, row-major f64) | V (rank x d_in, row-major f64) | sigma (t_out f64)
//   u32 CRC32 of every preceding byte

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ssn/error.hpp"
#include "ssn/network.hpp"

namespace ssn {

inline constexpr std::array<char, 4> kModelMagic = {'S', 'S', 'N', 'W'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t size) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void matrix(const Matrix& m) {
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) f64(m(i, j));
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int b = 0; b < n; ++b) bytes_.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xFFu));
  }
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t size, std::string path) : data_(data), size_(size), path_(std::move(path)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  Matrix matrix(Index rows, Index cols) {
    need(static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * 8u);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = f64();
    return m;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > remaining())
      fail(ErrorKind::Truncated, path_ + ": model file ends early at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int b = 0; b < n; ++b) v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(b)]) << (8 * b);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string path_;
};

/// Upper bound on any stored dimension; guards allocations on corrupt headers.
inline constexpr std::uint64_t kMaxModelDim = std::uint64_t{1} << 31;

inline Index checked_dim(std::uint64_t v, const std::string& path, const char* what) {
  if (v == 0 || v > kMaxModelDim) fail(ErrorKind::Truncated, path + ": implausible " + std::string(what) + " " + std::to_string(v));
  return static_cast<Index>(v);
}

}  // namespace detail

/// Writes the file body with trailing checksum into memory.
inline std::vector<unsigned char> serialize_model(const SubspaceNetwork& net) {
  require(!net.layers.empty(), ErrorKind::EmptyInput, "refusing to save an empty network");
  net.validate();
  detail::ByteWriter w;
  w.raw(kModelMagic.data(), kModelMagic.size());
  w.u32(kModelVersion);
  w.u32(net.skip_mode == SkipMode::Concat ? 0u : 1u);
  w.u64(static_cast<std::uint64_t>(net.input_dim));
  w.u64(static_cast<std::uint64_t>(net.task_dim));
  w.u64(static_cast<std::uint64_t>(net.depth()));
  for (const auto& layer : net.layers) {
    w.u64(static_cast<std::uint64_t>(layer.t_out()));
    w.u64(static_cast<std::uint64_t>(layer.d_in()));
    w.u64(static_cast<std::uint64_t>(layer.rank()));
    w.f64(layer.lambda);
    w.f64(layer.censor_threshold);
    w.matrix(layer.U);
    w.matrix(layer.V);
    w.matrix(layer.sigma);
  }
  auto& bytes = w.bytes();
  const std::uint32_t crc = detail::crc32_of(bytes.data(), bytes.size());
  w.u32(crc);
  return std::move(bytes);
}

inline SubspaceNetwork deserialize_model(const std::vector<unsigned char>& bytes, const std::string& path = "<memory>") {
  if (bytes.size() < kModelMagic.size() || std::memcmp(bytes.data(), kModelMagic.data(), kModelMagic.size()) != 0)
    fail(ErrorKind::BadMagic, path + ": not a subspace network file");
  if (bytes.size() < kModelMagic.size() + 8)
    fail(ErrorKind::Checksum, path + ": model file too short to hold a header and checksum (truncated)");
  detail::ByteReader header(bytes.data() + kModelMagic.size(), 4, path);
  const std::uint32_t version = header.u32();
  if (version != kModelVersion)
    fail(ErrorKind::VersionMismatch,
         path + ": format version " + std::to_string(version) + ", expected " + std::to_string(kModelVersion));
  const std::size_t body = bytes.size() - 4;
  detail::ByteReader tail(bytes.data() + body, 4, path);
  if (tail.u32() != detail::crc32_of(bytes.data(), body))
    fail(ErrorKind::Checksum, path + ": checksum mismatch (file corrupt or truncated)");

  detail::ByteReader r(bytes.data() + kModelMagic.size() + 4, body - kModelMagic.size() - 4, path);
  SubspaceNetwork net;
  const std::uint32_t mode = r.u32();
  if (mode > 1) fail(ErrorKind::Truncated, path + ": unknown skip mode code " + std::to_string(mode));
  net.skip_mode = mode == 0 ? SkipMode::Concat : SkipMode::Naive;
  net.input_dim = detail::checked_dim(r.u64(), path, "input dimension");
  net.task_dim = detail::checked_dim(r.u64(), path, "task dimension");
  const Index depth = detail::checked_dim(r.u64(), path, "depth");
  for (Index k = 0; k < depth; ++k) {
    SubspaceLayer layer;
    const Index t = detail::checked_dim(r.u64(), path, "layer outputs");
    const Index d = detail::checked_dim(r.u64(), path, "layer inputs");
    const Index rank = detail::checked_dim(r.u64(), path, "layer rank");
    layer.lambda = r.f64();
    layer.censor_threshold = r.f64();
    layer.U = r.matrix(t, rank);
    layer.V = r.matrix(rank, d);
    layer.sigma = r.matrix(t, 1);
    net.layers.push_back(std::move(layer));
  }
  if (r.remaining() != 0)
    fail(ErrorKind::Truncated, path + ": " + std::to_string(r.remaining()) + " unexpected bytes before the checksum");
  net.validate();
  return net;
}

/// Writes to a sibling temporary file, then renames over `path`.
inline void write_file_atomic(const std::string& path, const void* data, std::size_t size) {
  const std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write '" + tmp.string() + "'");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    out.flush();
    if (!out) fail(ErrorKind::Io, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorKind::Io, "cannot rename into '" + path + "'");
  }
}

inline void write_file_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

inline void save_model(const SubspaceNetwork& net, const std::string& path) {
  const auto bytes = serialize_model(net);
  write_file_atomic(path, bytes.data(), bytes.size());
}

inline SubspaceNetwork load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::Io, "read failed for '" + path + "'");
  return deserialize_model(bytes, path);
}

}  // namespace ssn
