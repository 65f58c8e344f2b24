#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nao/errors.hpp"
#include "nao/params.hpp"

namespace nao {

// Checkpoint container: magic "NAOCKPT1", then for each named parameter
// name length (u32 LE), UTF-8 name, rank (u32), dims (u32 each), values
// (f64 LE). Parameters appear in store order; the stream ends at EOF.
namespace ckpt {

inline constexpr char kMagic[8] = {'N', 'A', 'O', 'C', 'K', 'P', 'T', '1'};

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

inline void save(const std::string& path, const ParamStore& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 8);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    const ValueGrid& v = params.value(i);
    write_u32(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_u32(os, std::uint32_t(v.rank()));
    for (std::size_t dim : v.shape) write_u32(os, std::uint32_t(dim));
    for (double x : v.values) write_f64(os, x);
  }
  if (!os) throw ConfigError("checkpoint write failed: " + path);
}

inline ParamStore load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw ConfigError("bad checkpoint magic in " + path);
  ParamStore out;
  while (true) {
    std::uint32_t name_len = read_u32(is);
    if (is.eof()) break;
    if (!is) throw ConfigError("truncated checkpoint: " + path);
    std::string name(name_len, '\0');
    is.read(name.data(), std::streamsize(name_len));
    std::uint32_t rank = read_u32(is);
    std::vector<std::size_t> shape(rank);
    for (auto& dim : shape) dim = read_u32(is);
    ValueGrid v(shape);
    for (double& x : v.values) x = read_f64(is);
    if (!is) throw ConfigError("truncated checkpoint: " + path);
    out.add(std::move(name), std::move(v));
  }
  return out;
}

}  // namespace ckpt
}  // namespace nao
