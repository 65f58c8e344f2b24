#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nao/errors.hpp"
#include "nao/params.hpp"
#include "nao/radial.hpp"
#include "nao/rng.hpp"
#include "nao/tape.hpp"
#include "nao/tensor.hpp"

namespace nao {

// ---------------------------------------------------------------------------
// Variants and configuration
// ---------------------------------------------------------------------------

enum class Mixer { discrete, continuous };
enum class Activation { linear, softmax };
enum class Inputs { u_and_f, u_only };

struct NaoVariant {
  Mixer mixer = Mixer::continuous;
  Activation activation = Activation::linear;
  Inputs inputs = Inputs::u_and_f;
};

// mlp: W^{P,u} is a perceptron over the kernel's coordinates (mesh-free);
// dense: trainable grid matrices bound to the token mesh.
enum class HeadKind { mlp, dense };

struct HeadConfig {
  std::vector<std::size_t> hidden = {32, 64};
  double slope = 0.01;
};

// L counts every layer including the kernel-map layer, so a model runs L-1
// attention layers before the head. L >= 2: the kernel-map layer needs at
// least one preceding token representation.
struct ModelConfig {
  int layers = 3;
  std::size_t d = 302;
  std::size_t d_k = 10;
  NaoVariant variant;
  HeadKind head_kind = HeadKind::mlp;  // resolved from the mixer by default
  HeadConfig head;
  std::uint64_t init_seed = 1;
  TokenLayout layout = TokenLayout::radial;
};

inline HeadKind default_head_kind(Mixer mixer) {
  return mixer == Mixer::continuous ? HeadKind::mlp : HeadKind::dense;
}

struct NaoParameters {
  ModelConfig config;
  ParamStore store;
  std::size_t head_rows = 0;  // mesh size dense heads are bound to (0 for MLP heads)
};

struct KernelEstimate {
  ValueGrid values;  // N x 1 (radial) or N x N (paired)
  double dr = 0.0;
  TokenLayout layout = TokenLayout::radial;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

inline void add_mlp(ParamStore& store, Rng& rng, const std::string& prefix,
                    std::size_t in_dim, const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> dims;
  dims.push_back(in_dim);
  for (std::size_t h : hidden) dims.push_back(h);
  dims.push_back(1);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const double bound = 1.0 / std::sqrt(double(dims[i]));
    store.add(prefix + ".w" + std::to_string(i),
              rng.uniform_matrix(dims[i], dims[i + 1], -bound, bound));
    store.add(prefix + ".b" + std::to_string(i), ValueGrid::matrix(1, dims[i + 1]));
  }
}

}  // namespace detail

// mesh_rows: u-token row count; dense heads are sized to it and stay bound
// to that mesh. MLP heads ignore it.
inline NaoParameters init_nao(const ModelConfig& cfg, std::size_t mesh_rows = 0) {
  if (cfg.layers < 2)
    throw ConfigError("L=" + std::to_string(cfg.layers) +
                      ": a kernel-map layer requires at least one preceding token "
                      "representation (L >= 2)");
  if (cfg.d == 0 || cfg.d_k == 0) throw ConfigError("d and d_k must be positive");
  NaoParameters p;
  p.config = cfg;
  Rng rng(cfg.init_seed);
  const double bound = 1.0 / std::sqrt(double(cfg.d));
  for (int l = 1; l <= cfg.layers; ++l) {
    p.store.add("attn" + std::to_string(l) + ".wq",
                rng.uniform_matrix(cfg.d, cfg.d_k, -bound, bound));
    p.store.add("attn" + std::to_string(l) + ".wk",
                rng.uniform_matrix(cfg.d, cfg.d_k, -bound, bound));
  }
  const bool use_f = cfg.variant.inputs == Inputs::u_and_f;
  if (cfg.head_kind == HeadKind::dense) {
    if (mesh_rows == 0) throw ConfigError("dense heads need the token mesh size");
    p.head_rows = mesh_rows;
    const double hb = 1.0 / std::sqrt(double(mesh_rows));
    p.store.add("head.u", rng.uniform_matrix(mesh_rows, mesh_rows, -hb, hb));
    if (use_f) {
      const std::size_t f_cols = cfg.layout == TokenLayout::radial ? 1 : mesh_rows;
      p.store.add("head.f", ValueGrid::matrix(mesh_rows, f_cols));
    }
  } else {
    const std::size_t in_dim = cfg.layout == TokenLayout::radial ? 1 : 4;
    detail::add_mlp(p.store, rng, "head.u", in_dim, cfg.head.hidden);
    if (use_f) {
      if (cfg.layout == TokenLayout::radial)
        p.store.add("head.f", ValueGrid::matrix(1, 1));  // scalar, starts at zero
      else
        detail::add_mlp(p.store, rng, "head.f", in_dim, cfg.head.hidden);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward graph
// ---------------------------------------------------------------------------

struct ForwardOptions {
  // Evaluate attention in the reference order (materialized score matrices)
  // instead of the low-rank order; softmax always materializes.
  bool materialize_scores = false;
};

struct ForwardGraph {
  Tape tape;
  std::vector<int> param_ids;  // aligned with store order
  int kernel = -1;
  int prediction = -1;
};

namespace detail {

inline int mlp_forward(Tape& t, const std::vector<int>& ids, std::size_t first,
                       std::size_t n_layers, int input, std::size_t rows, double slope) {
  int h = input;
  for (std::size_t i = 0; i < n_layers; ++i) {
    h = t.matmul(h, ids[first + 2 * i]);
    h = t.add(h, t.broadcast_rows(ids[first + 2 * i + 1], rows));
    if (i + 1 < n_layers) h = t.leaky_relu(h, slope);
  }
  return h;
}

inline ValueGrid row_weight_tile(std::size_t n_u, std::size_t n_f, std::size_t d,
                                 double u_w, double f_w) {
  ValueGrid w = ValueGrid::matrix(n_u + n_f, d);
  for (std::size_t i = 0; i < n_u; ++i)
    for (std::size_t j = 0; j < d; ++j) w.at(i, j) = u_w;
  for (std::size_t i = n_u; i < n_u + n_f; ++i)
    for (std::size_t j = 0; j < d; ++j) w.at(i, j) = f_w;
  return w;
}

}  // namespace detail

inline ForwardGraph build_forward(const NaoParameters& p, const TokenPair& tokens,
                                  const ForwardOptions& opts = {}) {
  const ModelConfig& cfg = p.config;
  const NaoVariant& variant = cfg.variant;
  const std::size_t N = tokens.u.rows();
  const std::size_t d = tokens.u.cols();
  const std::size_t Nf = tokens.f.rows();
  if (d != cfg.d)
    throw ShapeError("token width " + std::to_string(d) + " does not match model d=" +
                     std::to_string(cfg.d));
  if (tokens.layout != cfg.layout) throw ConfigError("token layout does not match model");
  if (variant.mixer == Mixer::continuous && variant.activation == Activation::softmax)
    throw ConfigError("continuous forward assumes linear activation; softmax unsupported");
  if (cfg.head_kind == HeadKind::dense && p.head_rows != N)
    throw ShapeError("dense heads are mesh-bound: built for " + std::to_string(p.head_rows) +
                     " rows, tokens have " + std::to_string(N));

  const bool use_f = variant.inputs == Inputs::u_and_f;
  const bool continuous = variant.mixer == Mixer::continuous;
  const bool softmax = variant.activation == Activation::softmax;
  const bool mlp_head = cfg.head_kind == HeadKind::mlp;
  const bool lowrank = !softmax && !opts.materialize_scores;
  const double inv_sqrt_dk = 1.0 / std::sqrt(double(cfg.d_k));

  ForwardGraph g;
  Tape& t = g.tape;
  g.param_ids.reserve(p.store.size());
  for (std::size_t i = 0; i < p.store.size(); ++i)
    g.param_ids.push_back(t.leaf(p.store.value(i), true));
  auto pid = [&](const std::string& name) {
    return g.param_ids[std::size_t(p.store.index_of(name))];
  };

  const int u_tok = t.constant(tokens.u);
  const int f_tok = use_f ? t.constant(tokens.f) : -1;
  int X = use_f ? t.concat(u_tok, f_tok, 0) : u_tok;

  // Row quadrature weights for the continuous mixer: dr on u rows; the
  // single radial f row is a point evidence row with unit weight.
  int weighted_rows = -1;
  if (continuous) {
    const double f_w = cfg.layout == TokenLayout::radial ? 1.0 : tokens.row_weight;
    weighted_rows = t.constant(detail::row_weight_tile(N, use_f ? Nf : 0, d,
                                                       tokens.row_weight, f_w));
  }

  for (int l = 1; l < cfg.layers; ++l) {
    const int wq = pid("attn" + std::to_string(l) + ".wq");
    const int wk = pid("attn" + std::to_string(l) + ".wk");
    const int P = t.matmul(X, wq);
    const int Q = t.matmul(X, wk);
    const int Z = continuous ? t.mul(X, weighted_rows) : X;
    int mixed;
    if (lowrank) {
      mixed = t.scale(t.matmul(P, t.matmul(t.transpose(Q), Z)), inv_sqrt_dk);
    } else {
      int scores = t.scale(t.matmul(P, t.transpose(Q)), inv_sqrt_dk);
      if (softmax) scores = t.row_softmax(scores);
      mixed = t.matmul(scores, Z);
    }
    X = t.add(mixed, X);
  }

  const int U_L = use_f ? t.slice_rows(X, 0, N) : X;
  const int F_L = use_f ? t.slice_rows(X, N, N + Nf) : -1;

  const int wqL = pid("attn" + std::to_string(cfg.layers) + ".wq");
  const int wkL = pid("attn" + std::to_string(cfg.layers) + ".wk");
  const int Pu = t.matmul(U_L, wqL);
  const int Qu = t.matmul(U_L, wkL);
  const int Pf = use_f ? t.matmul(F_L, wqL) : -1;

  int kernel = -1;
  if (cfg.layout == TokenLayout::radial) {
    int k_row;  // 1 x N
    if (mlp_head) {
      ValueGrid r_col = ValueGrid::matrix(N, 1);
      for (std::size_t k = 0; k < N; ++k) r_col.at(k, 0) = double(k + 1) * tokens.row_weight;
      const int w_head = detail::mlp_forward(t, g.param_ids,
                                             std::size_t(p.store.index_of("head.u.w0")),
                                             cfg.head.hidden.size() + 1, t.constant(r_col),
                                             N, cfg.head.slope);
      const int wT = t.transpose(w_head);  // 1 x N
      if (lowrank) {
        k_row = t.scale(t.matmul(t.matmul(wT, Pu), t.transpose(Qu)),
                        inv_sqrt_dk * tokens.row_weight);
      } else {
        int Au = t.scale(t.matmul(Pu, t.transpose(Qu)), inv_sqrt_dk);
        if (softmax) Au = t.row_softmax(Au);
        k_row = t.scale(t.matmul(wT, Au), tokens.row_weight);
      }
      if (use_f) {
        int Af = t.scale(t.matmul(Pf, t.transpose(Qu)), inv_sqrt_dk);  // 1 x N
        if (softmax) Af = t.row_softmax(Af);
        k_row = t.add(k_row, t.matmul(pid("head.f"), Af));
      }
    } else {
      // Dense heads: K[k] = sum_k' head.u[k,k'] s(Au)[k',k] + head.f[k] s(Af)[k]
      int Au = t.scale(t.matmul(Pu, t.transpose(Qu)), inv_sqrt_dk);
      if (softmax) Au = t.row_softmax(Au);
      const int k_col = t.row_sum(t.mul(pid("head.u"), t.transpose(Au)));
      int k_full = k_col;
      if (use_f) {
        int Af = t.scale(t.matmul(Pf, t.transpose(Qu)), inv_sqrt_dk);
        if (softmax) Af = t.row_softmax(Af);
        k_full = t.add(k_col, t.mul(pid("head.f"), t.transpose(Af)));
      }
      k_row = t.transpose(k_full);
    }
    kernel = t.transpose(k_row);  // N x 1
    g.prediction = t.scale(t.matmul(k_row, u_tok), tokens.row_weight);
  } else {
    int Au = t.scale(t.matmul(Pu, t.transpose(Qu)), inv_sqrt_dk);
    if (softmax) Au = t.row_softmax(Au);
    int Af = -1;
    if (use_f) {
      Af = t.scale(t.matmul(Pf, t.transpose(Qu)), inv_sqrt_dk);
      if (softmax) Af = t.row_softmax(Af);
    }
    if (mlp_head) {
      const std::size_t n_side = std::size_t(std::lround(std::sqrt(double(N))));
      const double h = n_side > 1 ? 1.0 / double(n_side - 1) : 1.0;
      ValueGrid coords = ValueGrid::matrix(N * N, 4);
      for (std::size_t a = 0; a < N; ++a)
        for (std::size_t b = 0; b < N; ++b) {
          double* row = &coords.values[(a * N + b) * 4];
          row[0] = double(a % n_side) * h;
          row[1] = double(a / n_side) * h;
          row[2] = double(b % n_side) * h;
          row[3] = double(b / n_side) * h;
        }
      const int pair_const = t.constant(coords);
      const int mu = t.reshape(detail::mlp_forward(t, g.param_ids,
                                                   std::size_t(p.store.index_of("head.u.w0")),
                                                   cfg.head.hidden.size() + 1, pair_const,
                                                   N * N, cfg.head.slope),
                               {N, N});
      kernel = t.scale(t.matmul(mu, Au), tokens.row_weight);
      if (use_f) {
        const int mf = t.reshape(detail::mlp_forward(t, g.param_ids,
                                                     std::size_t(p.store.index_of("head.f.w0")),
                                                     cfg.head.hidden.size() + 1, pair_const,
                                                     N * N, cfg.head.slope),
                                 {N, N});
        kernel = t.add(kernel, t.scale(t.matmul(mf, Af), tokens.row_weight));
      }
    } else {
      kernel = t.matmul(pid("head.u"), Au);
      if (use_f) kernel = t.add(kernel, t.matmul(pid("head.f"), Af));
    }
    g.kernel = kernel;
    g.prediction = t.scale(t.matmul(kernel, u_tok), tokens.row_weight);
    return g;
  }
  g.kernel = kernel;
  return g;
}

// ---------------------------------------------------------------------------
// Operation-level entry points
// ---------------------------------------------------------------------------

// Single attention layer: X' = sigma((1/sqrt(d_k)) X Wq Wk^T X^T) X + X.
inline ValueGrid attn_layer_forward(const ValueGrid& X, const ValueGrid& wq,
                                    const ValueGrid& wk, Activation act) {
  if (X.rank() != 2 || wq.rank() != 2 || wk.rank() != 2 || X.cols() != wq.rows() ||
      X.cols() != wk.rows() || wq.cols() != wk.cols())
    throw ShapeError("attn layer: incompatible shapes " + shape_str(X.shape) + ", " +
                     shape_str(wq.shape) + ", " + shape_str(wk.shape));
  Tape t;
  const int x = t.constant(X);
  int scores = t.scale(t.matmul(t.matmul(x, t.constant(wq)),
                                t.transpose(t.matmul(x, t.constant(wk)))),
                       1.0 / std::sqrt(double(wq.cols())));
  if (act == Activation::softmax) scores = t.row_softmax(scores);
  const int out = t.add(t.matmul(scores, x), x);
  return t.value(out);
}

inline KernelEstimate kernel_map_forward(const NaoParameters& p, const TokenPair& tokens,
                                         const ForwardOptions& opts = {}) {
  ForwardGraph g = build_forward(p, tokens, opts);
  KernelEstimate est;
  est.values = g.tape.value(g.kernel);
  est.dr = tokens.row_weight;
  est.layout = tokens.layout;
  return est;
}

struct ContinuousForwardResult {
  KernelEstimate kernel;
  ValueGrid prediction;
};

// Integral-form forward pass: identical graph with the Riemann-sum weights
// applied explicitly. Requires a continuous-mixer parameter set.
inline ContinuousForwardResult continuous_forward(const NaoParameters& p,
                                                  const TokenPair& tokens,
                                                  const ForwardOptions& opts = {}) {
  if (p.config.variant.mixer != Mixer::continuous)
    throw ConfigError("continuous_forward needs a continuous-mixer parameter set");
  ForwardGraph g = build_forward(p, tokens, opts);
  ContinuousForwardResult out;
  out.kernel.values = g.tape.value(g.kernel);
  out.kernel.dr = tokens.row_weight;
  out.kernel.layout = tokens.layout;
  out.prediction = g.tape.value(g.prediction);
  return out;
}

// Riemann-sum application of the estimated kernel to a u-token.
inline ValueGrid predict(const KernelEstimate& kernel, const ValueGrid& u_token,
                         double row_weight) {
  const ValueGrid& K = kernel.values;
  if (kernel.layout == TokenLayout::radial) {
    if (K.rows() != u_token.rows() || K.cols() != 1)
      throw ShapeError("predict: kernel " + shape_str(K.shape) + " vs u-token " +
                       shape_str(u_token.shape));
    ValueGrid out = ValueGrid::matrix(1, u_token.cols());
    for (std::size_t k = 0; k < K.rows(); ++k) {
      const double kv = K.at(k, 0) * row_weight;
      for (std::size_t j = 0; j < u_token.cols(); ++j) out.at(0, j) += kv * u_token.at(k, j);
    }
    return out;
  }
  if (K.cols() != u_token.rows())
    throw ShapeError("predict: kernel " + shape_str(K.shape) + " vs u-token " +
                     shape_str(u_token.shape));
  ValueGrid out = ValueGrid::matrix(K.rows(), u_token.cols());
  for (std::size_t i = 0; i < K.rows(); ++i)
    for (std::size_t k = 0; k < K.cols(); ++k) {
      const double kv = K.at(i, k) * row_weight;
      if (kv == 0.0) continue;
      for (std::size_t j = 0; j < u_token.cols(); ++j) out.at(i, j) += kv * u_token.at(k, j);
    }
  return out;
}

// Direct nested-Riemann evaluation of the two-layer limit kernel: the head
// applied to raw tokens, summed index by index. Independent of the graph
// path; used as the convergence and agreement oracle.
inline KernelEstimate lemma1_reference_kernel(const NaoParameters& p, const TokenPair& tokens) {
  if (p.config.layers != 2)
    throw ConfigError("two-layer limit formula needs L=2, got L=" +
                      std::to_string(p.config.layers));
  if (p.config.variant.activation != Activation::linear ||
      p.config.head_kind != HeadKind::mlp)
    throw ConfigError("two-layer limit formula assumes linear activation and an MLP head");
  const std::size_t N = tokens.u.rows();
  const std::size_t d = tokens.u.cols();
  const double dr = tokens.row_weight;
  const ValueGrid& wq = p.store.at("attn2.wq");
  const ValueGrid& wk = p.store.at("attn2.wk");
  const std::size_t dk = wq.cols();
  const double inv_sqrt_dk = 1.0 / std::sqrt(double(dk));

  // W^{QK}[j,j'] = (1/sqrt(dk)) sum_l wq[j,l] wk[j',l]
  ValueGrid Wqk = ValueGrid::matrix(d, d);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t j2 = 0; j2 < d; ++j2) {
      double s = 0.0;
      for (std::size_t l = 0; l < dk; ++l) s += wq.at(j, l) * wk.at(j2, l);
      Wqk.at(j, j2) = inv_sqrt_dk * s;
    }

  // W^{P,u}(r) from the MLP head, evaluated pointwise.
  const HeadConfig& hc = p.config.head;
  auto head_u = [&](double r) {
    std::vector<double> h = {r};
    const std::size_t n_layers = hc.hidden.size() + 1;
    for (std::size_t i = 0; i < n_layers; ++i) {
      const ValueGrid& w = p.store.at("head.u.w" + std::to_string(i));
      const ValueGrid& b = p.store.at("head.u.b" + std::to_string(i));
      std::vector<double> nxt(w.cols());
      for (std::size_t c = 0; c < w.cols(); ++c) {
        double s = b.at(0, c);
        for (std::size_t rr = 0; rr < w.rows(); ++rr) s += h[rr] * w.at(rr, c);
        nxt[c] = (i + 1 < n_layers) ? (s > 0.0 ? s : hc.slope * s) : s;
      }
      h = std::move(nxt);
    }
    return h[0];
  };
  const double w_pf = p.config.variant.inputs == Inputs::u_and_f
                          ? p.store.at("head.f").at(0, 0)
                          : 0.0;

  // v[k][j] = sum_j' W^{QK}[j,j'] g[u](r_k, x_j')
  ValueGrid v = ValueGrid::matrix(N, d);
  for (std::size_t k = 0; k < N; ++k)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t j2 = 0; j2 < d; ++j2) s += Wqk.at(j, j2) * tokens.u.at(k, j2);
      v.at(k, j) = s;
    }

  KernelEstimate est;
  est.values = ValueGrid::matrix(N, 1);
  est.dr = dr;
  est.layout = TokenLayout::radial;
  for (std::size_t k = 0; k < N; ++k) {
    double acc = 0.0;
    for (std::size_t kp = 0; kp < N; ++kp) {
      double inner = 0.0;
      for (std::size_t j = 0; j < d; ++j) inner += tokens.u.at(kp, j) * v.at(k, j);
      acc += head_u(double(kp + 1) * dr) * inner * dr;
    }
    if (p.config.variant.inputs == Inputs::u_and_f) {
      double inner_f = 0.0;
      for (std::size_t j = 0; j < d; ++j) inner_f += tokens.f.at(0, j) * v.at(k, j);
      acc += w_pf * inner_f;
    }
    est.values.at(k, 0) = acc;
  }
  return est;
}

}  // namespace nao
