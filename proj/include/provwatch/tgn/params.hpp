#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "provwatch/featurize.hpp"
#include "provwatch/nn/tensor.hpp"
#include "provwatch/types.hpp"

namespace provwatch::tgn {

struct ModelConfig {
  std::size_t feature_dim = 16;  // |Φ|
  std::size_t state_dim = 100;   // |s(v)|
  std::size_t neighbors = 20;    // |N|
  std::size_t embed_dim = 200;   // |z|
  std::size_t time_dim = 16;
  std::size_t heads = 2;
  std::uint64_t seed = 0;
  std::uint64_t hash_seed = 0;

  std::size_t edge_dim() const { return edge_encoding_dim(feature_dim); }
  std::size_t query_dim() const { return state_dim + feature_dim + time_dim; }
  std::size_t neighbor_dim() const { return state_dim + edge_dim() + time_dim; }
  std::size_t message_dim() const { return edge_dim() + time_dim; }
  std::size_t decoder_hidden() const { return std::max<std::size_t>(1, embed_dim / 2); }

  void validate() const {
    if (feature_dim == 0 || state_dim == 0 || embed_dim == 0 || time_dim == 0 || heads == 0)
      throw std::invalid_argument("model dimensions must be positive");
    if (state_dim % heads != 0) throw std::invalid_argument("state_dim must be divisible by heads");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Encoder (time encoding, attention layer, projection), GRU state updater and MLP decoder.
template <class T>
struct ModelParams {
  using Tensor = nn::Tensor<T>;

  ModelConfig config;

  Tensor time_omega, time_phase;
  Tensor attn_wq, attn_bq, attn_wk, attn_bk, attn_wv, attn_bv, attn_wo, attn_bo, attn_wr, attn_br;
  Tensor norm_gamma, norm_beta;
  Tensor proj_w, proj_b;
  Tensor gru_wi, gru_bi, gru_wh, gru_bh;  // gate blocks ordered reset | update | candidate
  Tensor dec_w1, dec_b1, dec_w2, dec_b2, dec_w3, dec_b3;

  template <class F>
  void for_each(F&& f) {
    f("time_omega", time_omega);
    f("time_phase", time_phase);
    f("attn_wq", attn_wq);
    f("attn_bq", attn_bq);
    f("attn_wk", attn_wk);
    f("attn_bk", attn_bk);
    f("attn_wv", attn_wv);
    f("attn_bv", attn_bv);
    f("attn_wo", attn_wo);
    f("attn_bo", attn_bo);
    f("attn_wr", attn_wr);
    f("attn_br", attn_br);
    f("norm_gamma", norm_gamma);
    f("norm_beta", norm_beta);
    f("proj_w", proj_w);
    f("proj_b", proj_b);
    f("gru_wi", gru_wi);
    f("gru_bi", gru_bi);
    f("gru_wh", gru_wh);
    f("gru_bh", gru_bh);
    f("dec_w1", dec_w1);
    f("dec_b1", dec_b1);
    f("dec_w2", dec_w2);
    f("dec_b2", dec_b2);
    f("dec_w3", dec_w3);
    f("dec_b3", dec_b3);
  }

  template <class F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each([&](const char* name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for_each([&](const char*, const Tensor& t) { out.push_back(t); });
    return out;
  }

  /// Deep copy; the copy's tensors are independent leaves.
  ModelParams clone() const {
    ModelParams c;
    c.config = config;
    auto src = tensors();
    std::size_t i = 0;
    c.for_each([&](const char*, Tensor& t) { t = Tensor::parameter(src[i++].value()); });
    return c;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const char*, const Tensor& t) { ok = ok && t.value().allFinite(); });
    return ok;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const char*, const Tensor& t) { n += static_cast<std::size_t>(t.value().size()); });
    return n;
  }

  /// Fan-in scaled uniform weights, zero biases, unit layer-norm gain and geometric
  /// time-encoding frequencies.
  static ModelParams initialize(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    std::mt19937_64 rng(cfg.seed);
    auto weight = [&](std::size_t in, std::size_t out) {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      nn::Matrix<T> m(in, out);
      for (nn::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(bound * u(rng));
      return Tensor::parameter(std::move(m));
    };
    auto constant_row = [](std::size_t n, T v) { return Tensor::parameter(nn::Matrix<T>::Constant(1, n, v)); };

    const std::size_t S = cfg.state_dim, Q = cfg.query_dim(), K = cfg.neighbor_dim(), Z = cfg.embed_dim,
                      H = cfg.decoder_hidden(), M = cfg.message_dim(), D = cfg.time_dim;

    nn::Matrix<T> omega(1, D);
    for (std::size_t i = 0; i < D; ++i) {
      const double e = D > 1 ? 9.0 * static_cast<double>(i) / static_cast<double>(D - 1) : 0.0;
      omega(0, i) = static_cast<T>(std::pow(10.0, -e));
    }
    p.time_omega = Tensor::parameter(std::move(omega));
    p.time_phase = constant_row(D, T(0));

    p.attn_wq = weight(Q, S);
    p.attn_bq = constant_row(S, T(0));
    p.attn_wk = weight(K, S);
    p.attn_bk = constant_row(S, T(0));
    p.attn_wv = weight(K, S);
    p.attn_bv = constant_row(S, T(0));
    p.attn_wo = weight(S, S);
    p.attn_bo = constant_row(S, T(0));
    p.attn_wr = weight(Q, S);
    p.attn_br = constant_row(S, T(0));
    p.norm_gamma = constant_row(S, T(1));
    p.norm_beta = constant_row(S, T(0));
    p.proj_w = weight(2 * S, Z);
    p.proj_b = constant_row(Z, T(0));
    p.gru_wi = weight(M, 3 * S);
    p.gru_bi = constant_row(3 * S, T(0));
    p.gru_wh = weight(S, 3 * S);
    p.gru_bh = constant_row(3 * S, T(0));
    p.dec_w1 = weight(Z, H);
    p.dec_b1 = constant_row(H, T(0));
    p.dec_w2 = weight(H, H);
    p.dec_b2 = constant_row(H, T(0));
    p.dec_w3 = weight(H, kNumRelations);
    p.dec_b3 = constant_row(kNumRelations, T(0));
    return p;
  }
};

// ---------------------------------------------------------------------------
// Binary model container
//
//   magic "PWTGNMDL" | u32 version | u32 scalar bytes
//   u32 feature_dim, state_dim, neighbors, embed_dim, time_dim, heads | u64 seed, hash_seed
//   u32 tensor count, then per tensor: u32 name length, name, u32 rows, u32 cols, raw data
//
// All integers little-endian.

inline constexpr char kModelMagic[8] = {'P', 'W', 'T', 'G', 'N', 'M', 'D', 'L'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

template <class I>
void put(std::ostream& out, I v) {
  unsigned char b[sizeof(I)];
  for (std::size_t i = 0; i < sizeof(I); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), sizeof(I));
}

template <class I>
I get(std::istream& in) {
  unsigned char b[sizeof(I)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(I))) throw PipelineError("truncated model file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(I); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<I>(v);
}

}  // namespace detail

template <class T>
void save_model(std::ostream& out, const ModelParams<T>& p) {
  const ModelConfig& c = p.config;
  out.write(kModelMagic, sizeof(kModelMagic));
  detail::put<std::uint32_t>(out, kModelFormatVersion);
  detail::put<std::uint32_t>(out, sizeof(T));
  for (std::size_t v : {c.feature_dim, c.state_dim, c.neighbors, c.embed_dim, c.time_dim, c.heads})
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  detail::put<std::uint64_t>(out, c.seed);
  detail::put<std::uint64_t>(out, c.hash_seed);
  std::uint32_t count = 0;
  p.for_each([&](const char*, const auto&) { ++count; });
  detail::put<std::uint32_t>(out, count);
  p.for_each([&](const char* name, const nn::Tensor<T>& t) {
    const std::uint32_t len = static_cast<std::uint32_t>(std::strlen(name));
    detail::put<std::uint32_t>(out, len);
    out.write(name, len);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
    out.write(reinterpret_cast<const char*>(t.value().data()), static_cast<std::streamsize>(t.value().size() * sizeof(T)));
  });
  if (!out) throw PipelineError("failed writing model");
}

template <class T>
ModelParams<T> load_model(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kModelMagic, 8) != 0) throw PipelineError("not a model file");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != kModelFormatVersion) throw PipelineError("unsupported model version " + std::to_string(version));
  const auto scalar = detail::get<std::uint32_t>(in);
  if (scalar != sizeof(float) && scalar != sizeof(double)) throw PipelineError("bad scalar width in model file");
  ModelConfig c;
  c.feature_dim = detail::get<std::uint32_t>(in);
  c.state_dim = detail::get<std::uint32_t>(in);
  c.neighbors = detail::get<std::uint32_t>(in);
  c.embed_dim = detail::get<std::uint32_t>(in);
  c.time_dim = detail::get<std::uint32_t>(in);
  c.heads = detail::get<std::uint32_t>(in);
  c.seed = detail::get<std::uint64_t>(in);
  c.hash_seed = detail::get<std::uint64_t>(in);
  c.validate();
  ModelParams<T> p = ModelParams<T>::initialize(c);
  const auto count = detail::get<std::uint32_t>(in);
  std::uint32_t expected = 0;
  p.for_each([&](const char*, const auto&) { ++expected; });
  if (count != expected) throw PipelineError("model tensor count mismatch");
  p.for_each([&](const char* name, nn::Tensor<T>& t) {
    const auto len = detail::get<std::uint32_t>(in);
    std::string got(len, '\0');
    in.read(got.data(), len);
    if (got != name) throw PipelineError("model tensor '" + got + "' where '" + name + "' expected");
    const auto rows = detail::get<std::uint32_t>(in);
    const auto cols = detail::get<std::uint32_t>(in);
    if (rows != t.rows() || cols != t.cols()) throw PipelineError("shape mismatch for tensor '" + got + "'");
    nn::Matrix<T>& m = t.mutable_value();
    if (scalar == sizeof(T)) {
      in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(T)));
    } else if (scalar == sizeof(float)) {
      std::vector<float> buf(static_cast<std::size_t>(m.size()));
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
      for (std::size_t i = 0; i < buf.size(); ++i) m.data()[i] = static_cast<T>(buf[i]);
    } else {
      std::vector<double> buf(static_cast<std::size_t>(m.size()));
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
      for (std::size_t i = 0; i < buf.size(); ++i) m.data()[i] = static_cast<T>(buf[i]);
    }
    if (!in) throw PipelineError("truncated model file");
  });
  return p;
}

template <class T>
void save_model(const std::string& path, const ModelParams<T>& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write model '" + path + "'");
  save_model(out, p);
}

template <class T>
ModelParams<T> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot open model '" + path + "'");
  return load_model<T>(in);
}

}  // namespace provwatch::tgn
