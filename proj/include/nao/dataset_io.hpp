#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nao/checkpoint.hpp"
#include "nao/errors.hpp"
#include "nao/radial.hpp"

namespace nao {

// Binary dataset container: magic "NAODATA1"; header fields (u32/f64 little
// endian): layout tag, N_u, N_f, d, n_samples, then dx, dr, delta; then per
// sample: task id (u32), function id (u32), column indices (i64 as f64-safe
// u64), u-token values, f-token values (f64 LE, row-major).
namespace dataio {

inline constexpr char kMagic[8] = {'N', 'A', 'O', 'D', 'A', 'T', 'A', '1'};

struct DatasetHeader {
  TokenLayout layout = TokenLayout::radial;
  std::size_t n_u = 0, n_f = 0, d = 0, n_samples = 0;
  double dx = 0.0, dr = 0.0, delta = 0.0;
};

inline void save(const std::string& path, const std::vector<TokenPair>& samples,
                 double delta) {
  if (samples.empty()) throw ConfigError("dataset save: no samples");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot open dataset for writing: " + path);
  const TokenPair& first = samples.front();
  os.write(kMagic, 8);
  ckpt::write_u32(os, first.layout == TokenLayout::radial ? 0u : 1u);
  ckpt::write_u32(os, std::uint32_t(first.u.rows()));
  ckpt::write_u32(os, std::uint32_t(first.f.rows()));
  ckpt::write_u32(os, std::uint32_t(first.u.cols()));
  ckpt::write_u32(os, std::uint32_t(samples.size()));
  ckpt::write_f64(os, first.x_weight);
  ckpt::write_f64(os, first.row_weight);
  ckpt::write_f64(os, delta);
  for (const TokenPair& s : samples) {
    if (!s.u.same_shape(first.u) || !s.f.same_shape(first.f))
      throw ShapeError("dataset save: inhomogeneous sample shapes");
    ckpt::write_u32(os, std::uint32_t(s.task_id));
    ckpt::write_u32(os, std::uint32_t(s.function_id));
    ckpt::write_u32(os, std::uint32_t(s.columns.size()));
    for (std::int64_t c : s.columns) ckpt::write_f64(os, double(c));
    for (double v : s.u.values) ckpt::write_f64(os, v);
    for (double v : s.f.values) ckpt::write_f64(os, v);
  }
  if (!os) throw ConfigError("dataset write failed: " + path);
}

inline std::vector<TokenPair> load(const std::string& path, DatasetHeader* header = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open dataset: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw ConfigError("bad dataset magic in " + path);
  DatasetHeader h;
  h.layout = ckpt::read_u32(is) == 0u ? TokenLayout::radial : TokenLayout::paired;
  h.n_u = ckpt::read_u32(is);
  h.n_f = ckpt::read_u32(is);
  h.d = ckpt::read_u32(is);
  h.n_samples = ckpt::read_u32(is);
  h.dx = ckpt::read_f64(is);
  h.dr = ckpt::read_f64(is);
  h.delta = ckpt::read_f64(is);
  std::vector<TokenPair> out;
  out.reserve(h.n_samples);
  for (std::size_t s = 0; s < h.n_samples; ++s) {
    TokenPair tp;
    tp.layout = h.layout;
    tp.x_weight = h.dx;
    tp.row_weight = h.dr;
    tp.task_id = int(ckpt::read_u32(is));
    tp.function_id = int(ckpt::read_u32(is));
    const std::size_t nc = ckpt::read_u32(is);
    tp.columns.resize(nc);
    for (auto& c : tp.columns) c = std::int64_t(ckpt::read_f64(is));
    tp.u = ValueGrid::matrix(h.n_u, h.d);
    for (double& v : tp.u.values) v = ckpt::read_f64(is);
    tp.f = ValueGrid::matrix(h.n_f, h.d);
    for (double& v : tp.f.values) v = ckpt::read_f64(is);
    if (!is) throw ConfigError("truncated dataset: " + path);
    out.push_back(std::move(tp));
  }
  if (header) *header = h;
  return out;
}

inline std::string fmt_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Inspection export: one row per token entry.
inline void export_csv(const std::string& path, const std::vector<TokenPair>& samples) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot open csv for writing: " + path);
  os << "sample,task,function,kind,row,col,value\n";
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const TokenPair& tp = samples[s];
    for (std::size_t k = 0; k < tp.u.rows(); ++k)
      for (std::size_t j = 0; j < tp.u.cols(); ++j)
        os << s << ',' << tp.task_id << ',' << tp.function_id << ",u," << k << ',' << j
           << ',' << fmt_g17(tp.u.at(k, j)) << '\n';
    for (std::size_t k = 0; k < tp.f.rows(); ++k)
      for (std::size_t j = 0; j < tp.f.cols(); ++j)
        os << s << ',' << tp.task_id << ',' << tp.function_id << ",f," << k << ',' << j
           << ',' << fmt_g17(tp.f.at(k, j)) << '\n';
  }
}

}  // namespace dataio
}  // namespace nao
