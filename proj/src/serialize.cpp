#include "pad/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace pad::io {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError(std::string("truncated input while reading ") + what);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) {
    throw IoError("truncated tensor payload");
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

constexpr std::uint32_t kTensorVersion = 1;

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("PADT", 4);
  put_u32(os, kTensorVersion);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) put_f64(os, v);
}

void write_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_tensor(os, t);
  if (!os) throw IoError("write failed: " + path);
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "PADT", 4) != 0) {
    throw IoError("bad tensor magic (expected PADT)");
  }
  const std::uint32_t version = get_u32(is, "tensor version");
  if (version != kTensorVersion) {
    throw IoError("unsupported tensor version " + std::to_string(version));
  }
  const std::uint32_t rank = get_u32(is, "tensor rank");
  if (rank > 8) throw IoError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = get_u32(is, "tensor dim");
    n *= shape[i];
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = get_f64(is);
  return Tensor(std::move(shape), std::move(data));
}

Tensor read_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing file: " + path);
  return read_tensor(is);
}

void write_checkpoint(const std::string& path, const std::vector<Parameter>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("PADC", 4);
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter& p : params) {
    put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_tensor(os, p.value);
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<Parameter> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing file: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "PADC", 4) != 0) {
    throw IoError("bad checkpoint magic (expected PADC): " + path);
  }
  const std::uint32_t count = get_u32(is, "record count");
  std::vector<Parameter> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = get_u32(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError("truncated checkpoint name");
    Parameter p;
    p.name = std::move(name);
    p.value = read_tensor(is);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace pad::io
