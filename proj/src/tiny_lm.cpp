#include "longppl/tiny_lm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "longppl/error.hpp"

namespace longppl {

namespace {

constexpr int kCheckpointFormatVersion = 1;

// Four interleaved partial sums so the compiler can vectorize without
// reassociating.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// y[r] = sum_c A[r, c] x[c]
inline void matvec(const double* A, const double* x, double* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot(A + r * cols, x, cols);
}

// y[c] += sum_r A[r, c] x[r]
inline void matvec_t_add(const double* A, const double* x, double* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const double* a = A + r * cols;
    for (std::size_t c = 0; c < cols; ++c) y[c] += a[c] * xr;
  }
}

// G[r, c] += a[r] b[c]
inline void outer_add(double* G, const double* a, const double* b, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double ar = a[r];
    if (ar == 0.0) continue;
    double* g = G + r * cols;
    for (std::size_t c = 0; c < cols; ++c) g[c] += ar * b[c];
  }
}

}  // namespace

void TinyLMConfig::validate() const {
  if (vocab_size < 1 || vocab_size > kMaxVocab) {
    throw ConfigError("tiny LM vocab_size must be in [1, " + std::to_string(kMaxVocab) + "]");
  }
  if (context_window < 1 || context_window > kMaxContext) {
    throw ConfigError("tiny LM context_window must be in [1, " + std::to_string(kMaxContext) + "]");
  }
  if (embedding_dim < 1 || hidden_dim < 1 || conv_width < 1 || n_heads < 1) {
    throw ConfigError("tiny LM dimensions must be positive");
  }
  if (embedding_dim % n_heads != 0) throw ConfigError("tiny LM embedding_dim must be divisible by n_heads");
  if (parameter_count() > kMaxParameters) {
    throw ConfigError("tiny LM has " + std::to_string(parameter_count()) + " parameters, above the " +
                      std::to_string(kMaxParameters) + " limit");
  }
}

struct TinyLM::Layout {
  std::size_t V, D, H, W;
  std::size_t E, C, Wq, Wk, Wv, Wo, W1, b1, W2, b2, U, c, total;

  explicit Layout(const TinyLMConfig& cfg)
      : V(cfg.vocab_size), D(cfg.embedding_dim), H(cfg.hidden_dim), W(cfg.conv_width) {
    std::size_t off = 0;
    auto take = [&](std::size_t n) {
      const std::size_t at = off;
      off += n;
      return at;
    };
    E = take((V + 1) * D);  // row V is BOS
    C = take((W - 1) * D * D);
    Wq = take(D * D);
    Wk = take(D * D);
    Wv = take(D * D);
    Wo = take(D * D);
    W1 = take(H * D);
    b1 = take(H);
    W2 = take(D * H);
    b2 = take(D);
    U = take(V * D);
    c = take(V);
    total = off;
  }
};

std::size_t TinyLMConfig::parameter_count() const { return TinyLM::Layout(*this).total; }

void to_json(nlohmann::json& j, const TinyLMConfig& c) {
  j = {{"vocab_size", c.vocab_size},       {"context_window", c.context_window},
       {"embedding_dim", c.embedding_dim}, {"hidden_dim", c.hidden_dim},
       {"conv_width", c.conv_width},       {"n_heads", c.n_heads},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TinyLMConfig& c) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.context_window = j.value("context_window", c.context_window);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.conv_width = j.value("conv_width", c.conv_width);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.seed = j.value("seed", c.seed);
}

struct TinyLM::Cache {
  std::size_t n = 0;
  std::vector<TokenId> inputs;  // BOS-shifted
  std::vector<double> x, q, k, v, att, u, h, z, g, logp;  // att is heads x n x n
};

TinyLM::TinyLM(const TinyLMConfig& config) : config_(config) {
  config_.validate();
  const Layout L(config_);
  params_.assign(L.total, 0.0);

  std::mt19937_64 rng(config_.seed);
  auto fill = [&](std::size_t offset, std::size_t count, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::size_t i = 0; i < count; ++i) params_[offset + i] = dist(rng);
  };
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(L.D));
  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(L.H));
  fill(L.E, (L.V + 1) * L.D, 1.0);
  fill(L.C, (L.W - 1) * L.D * L.D, 0.5 * inv_sqrt_d);
  fill(L.Wq, L.D * L.D, inv_sqrt_d);
  fill(L.Wk, L.D * L.D, inv_sqrt_d);
  fill(L.Wv, L.D * L.D, inv_sqrt_d);
  fill(L.Wo, L.D * L.D, inv_sqrt_d);
  fill(L.W1, L.H * L.D, inv_sqrt_d);
  fill(L.W2, L.D * L.H, 0.5 * inv_sqrt_h);
  fill(L.U, L.V * L.D, 0.5 * inv_sqrt_d);
}

void TinyLM::run(std::span<const TokenId> tokens, Cache& cache, std::size_t from) const {
  const Layout L(config_);
  const std::size_t n = tokens.size();
  if (n == 0) throw ContractError("tiny LM needs at least one token");
  if (from >= n) throw ContractError("output start past the sequence end");
  if (n > config_.context_window) {
    throw ContractError("sequence of " + std::to_string(n) + " tokens exceeds the context window of " +
                        std::to_string(config_.context_window));
  }
  const std::size_t V = L.V, D = L.D, H = L.H;
  const double* P = params_.data();

  cache.n = n;
  cache.inputs.resize(n);
  cache.inputs[0] = static_cast<TokenId>(V);
  for (std::size_t p = 0; p < n; ++p) {
    if (tokens[p] < 0 || static_cast<std::size_t>(tokens[p]) >= V) {
      throw ContractError("token id " + std::to_string(tokens[p]) + " outside the tiny LM vocabulary");
    }
    if (p + 1 < n) cache.inputs[p + 1] = tokens[p];
  }

  auto emb = [&](std::size_t p) { return P + L.E + static_cast<std::size_t>(cache.inputs[p]) * D; };

  cache.x.assign(n * D, 0.0);
  std::vector<double> tmp(std::max(D, H));
  for (std::size_t p = 0; p < n; ++p) {
    double* xp = &cache.x[p * D];
    std::copy(emb(p), emb(p) + D, xp);
    for (std::size_t o = 1; o < L.W && o <= p; ++o) {
      matvec(P + L.C + (o - 1) * D * D, emb(p - o), tmp.data(), D, D);
      for (std::size_t i = 0; i < D; ++i) xp[i] += tmp[i];
    }
  }

  cache.q.resize(n * D);
  cache.k.resize(n * D);
  cache.v.resize(n * D);
  for (std::size_t p = 0; p < n; ++p) {
    if (p >= from) matvec(P + L.Wq, &cache.x[p * D], &cache.q[p * D], D, D);
    matvec(P + L.Wk, &cache.x[p * D], &cache.k[p * D], D, D);
    matvec(P + L.Wv, &cache.x[p * D], &cache.v[p * D], D, D);
  }

  const std::size_t heads = config_.n_heads, hd = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  cache.att.assign(heads * n * n, 0.0);
  cache.u.assign(n * D, 0.0);
  cache.h.resize(n * D);
  for (std::size_t p = from; p < n; ++p) {
    double* up = &cache.u[p * D];
    for (std::size_t hh = 0; hh < heads; ++hh) {
      const std::size_t o = hh * hd;
      double* a = &cache.att[(hh * n + p) * n];
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= p; ++j) {
        a[j] = dot(&cache.q[p * D + o], &cache.k[j * D + o], hd) * scale;
        mx = std::max(mx, a[j]);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j <= p; ++j) {
        a[j] = std::exp(a[j] - mx);
        sum += a[j];
      }
      for (std::size_t j = 0; j <= p; ++j) {
        a[j] /= sum;
        const double* vj = &cache.v[j * D + o];
        for (std::size_t i = 0; i < hd; ++i) up[o + i] += a[j] * vj[i];
      }
    }
    matvec(P + L.Wo, up, tmp.data(), D, D);
    for (std::size_t i = 0; i < D; ++i) cache.h[p * D + i] = cache.x[p * D + i] + tmp[i];
  }

  cache.z.resize(n * H);
  cache.g.resize(n * D);
  std::vector<double> r(H);
  for (std::size_t p = from; p < n; ++p) {
    double* zp = &cache.z[p * H];
    matvec(P + L.W1, &cache.h[p * D], zp, H, D);
    for (std::size_t i = 0; i < H; ++i) zp[i] += P[L.b1 + i];
    for (std::size_t i = 0; i < H; ++i) r[i] = zp[i] > 0.0 ? zp[i] : 0.0;
    matvec(P + L.W2, r.data(), tmp.data(), D, H);
    for (std::size_t i = 0; i < D; ++i) cache.g[p * D + i] = cache.h[p * D + i] + tmp[i] + P[L.b2 + i];
  }

  cache.logp.resize(n * V);
  for (std::size_t p = from; p < n; ++p) {
    double* lp = &cache.logp[p * V];
    matvec(P + L.U, &cache.g[p * D], lp, V, D);
    double mx = -INFINITY;
    for (std::size_t t = 0; t < V; ++t) {
      lp[t] += P[L.c + t];
      mx = std::max(mx, lp[t]);
    }
    double sum = 0.0;
    for (std::size_t t = 0; t < V; ++t) sum += std::exp(lp[t] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t t = 0; t < V; ++t) lp[t] -= lse;
  }
}

LogProbMatrix TinyLM::forward(std::span<const TokenId> tokens) const {
  Cache cache;
  run(tokens, cache);
  return {cache.n, config_.vocab_size, std::move(cache.logp)};
}

std::vector<double> TinyLM::target_logprobs(std::span<const TokenId> tokens, std::size_t from) const {
  Cache cache;
  run(tokens, cache, from);
  const std::size_t V = config_.vocab_size;
  std::vector<double> out;
  out.reserve(tokens.size() - from);
  for (std::size_t p = from; p < tokens.size(); ++p) {
    out.push_back(cache.logp[p * V + static_cast<std::size_t>(tokens[p])]);
  }
  return out;
}

std::vector<double> TinyLM::accumulate_gradients(std::span<const TokenId> tokens,
                                                 std::span<const double> weights,
                                                 std::span<double> grad) const {
  if (weights.size() != tokens.size()) throw ContractError("one weight per token is required");
  return accumulate_gradients(
      tokens, [&](std::span<const double>) { return std::vector<double>(weights.begin(), weights.end()); }, grad);
}

std::vector<double> TinyLM::accumulate_gradients(std::span<const TokenId> tokens, const WeightFn& weight_fn,
                                                 std::span<double> grad) const {
  if (grad.size() != params_.size()) throw ContractError("gradient buffer has the wrong size");
  Cache cache;
  run(tokens, cache);

  const Layout L(config_);
  const std::size_t n = cache.n, V = L.V, D = L.D, H = L.H;
  const double* P = params_.data();
  double* G = grad.data();

  std::vector<double> out(n);
  for (std::size_t p = 0; p < n; ++p) out[p] = cache.logp[p * V + static_cast<std::size_t>(tokens[p])];
  const auto weights = weight_fn(out);
  if (weights.size() != n) throw ContractError("one weight per token is required");

  std::vector<double> dg(n * D, 0.0);
  std::vector<double> dlogit(V);
  for (std::size_t p = 0; p < n; ++p) {
    const double w = weights[p];
    if (w == 0.0) continue;
    const double* lp = &cache.logp[p * V];
    for (std::size_t t = 0; t < V; ++t) dlogit[t] = w * std::exp(lp[t]);
    dlogit[static_cast<std::size_t>(tokens[p])] -= w;
    outer_add(G + L.U, dlogit.data(), &cache.g[p * D], V, D);
    for (std::size_t t = 0; t < V; ++t) G[L.c + t] += dlogit[t];
    matvec_t_add(P + L.U, dlogit.data(), &dg[p * D], V, D);
  }

  // MLP block; dh collects the residual path.
  std::vector<double> dh(dg);
  std::vector<double> r(H), dr(H);
  for (std::size_t p = 0; p < n; ++p) {
    const double* dgp = &dg[p * D];
    const double* zp = &cache.z[p * H];
    for (std::size_t i = 0; i < H; ++i) r[i] = zp[i] > 0.0 ? zp[i] : 0.0;
    outer_add(G + L.W2, dgp, r.data(), D, H);
    for (std::size_t i = 0; i < D; ++i) G[L.b2 + i] += dgp[i];
    std::fill(dr.begin(), dr.end(), 0.0);
    matvec_t_add(P + L.W2, dgp, dr.data(), D, H);
    for (std::size_t i = 0; i < H; ++i) dr[i] = zp[i] > 0.0 ? dr[i] : 0.0;
    outer_add(G + L.W1, dr.data(), &cache.h[p * D], H, D);
    for (std::size_t i = 0; i < H; ++i) G[L.b1 + i] += dr[i];
    matvec_t_add(P + L.W1, dr.data(), &dh[p * D], H, D);
  }

  // Attention block.
  std::vector<double> dx(dh);
  std::vector<double> du(n * D, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    outer_add(G + L.Wo, &dh[p * D], &cache.u[p * D], D, D);
    matvec_t_add(P + L.Wo, &dh[p * D], &du[p * D], D, D);
  }
  const std::size_t heads = config_.n_heads, hd = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> dq(n * D, 0.0), dk(n * D, 0.0), dv(n * D, 0.0);
  std::vector<double> da(n);
  for (std::size_t hh = 0; hh < heads; ++hh) {
    const std::size_t o = hh * hd;
    for (std::size_t p = 0; p < n; ++p) {
      const double* a = &cache.att[(hh * n + p) * n];
      const double* dup = &du[p * D + o];
      double mean = 0.0;
      for (std::size_t j = 0; j <= p; ++j) {
        da[j] = dot(dup, &cache.v[j * D + o], hd);
        mean += a[j] * da[j];
        double* dvj = &dv[j * D + o];
        for (std::size_t i = 0; i < hd; ++i) dvj[i] += a[j] * dup[i];
      }
      const double* qp = &cache.q[p * D + o];
      double* dqp = &dq[p * D + o];
      for (std::size_t j = 0; j <= p; ++j) {
        const double ds = a[j] * (da[j] - mean) * scale;
        if (ds == 0.0) continue;
        const double* kj = &cache.k[j * D + o];
        double* dkj = &dk[j * D + o];
        for (std::size_t i = 0; i < hd; ++i) {
          dqp[i] += ds * kj[i];
          dkj[i] += ds * qp[i];
        }
      }
    }
  }
  for (std::size_t p = 0; p < n; ++p) {
    const double* xp = &cache.x[p * D];
    outer_add(G + L.Wq, &dq[p * D], xp, D, D);
    outer_add(G + L.Wk, &dk[p * D], xp, D, D);
    outer_add(G + L.Wv, &dv[p * D], xp, D, D);
    matvec_t_add(P + L.Wq, &dq[p * D], &dx[p * D], D, D);
    matvec_t_add(P + L.Wk, &dk[p * D], &dx[p * D], D, D);
    matvec_t_add(P + L.Wv, &dv[p * D], &dx[p * D], D, D);
  }

  // Token mixing and embeddings.
  std::vector<double> de(n * D, 0.0);
  auto emb = [&](std::size_t p) { return P + L.E + static_cast<std::size_t>(cache.inputs[p]) * D; };
  for (std::size_t p = 0; p < n; ++p) {
    const double* dxp = &dx[p * D];
    for (std::size_t i = 0; i < D; ++i) de[p * D + i] += dxp[i];
    for (std::size_t o = 1; o < L.W && o <= p; ++o) {
      outer_add(G + L.C + (o - 1) * D * D, dxp, emb(p - o), D, D);
      matvec_t_add(P + L.C + (o - 1) * D * D, dxp, &de[(p - o) * D], D, D);
    }
  }
  for (std::size_t p = 0; p < n; ++p) {
    double* gE = G + L.E + static_cast<std::size_t>(cache.inputs[p]) * D;
    for (std::size_t i = 0; i < D; ++i) gE[i] += de[p * D + i];
  }
  return out;
}

double TinyLMScorer::logprob(std::span<const TokenId> context, TokenId target) const {
  std::vector<TokenId> seq(context.begin(), context.end());
  seq.push_back(target);
  return model_.target_logprobs(seq).back();
}

std::vector<double> TinyLMScorer::score_sequence(std::span<const TokenId> seq, std::size_t) const {
  return model_.target_logprobs(seq);
}

std::vector<double> TinyLMScorer::score_suffix(std::span<const TokenId> seq, std::size_t,
                                               std::size_t from) const {
  return model_.target_logprobs(seq, from);
}

GradientSet tiny_lm_gradients(const TinyLM& model, std::span<const std::vector<TokenId>> batch,
                              std::span<const std::vector<double>> weights) {
  if (batch.size() != weights.size()) throw ContractError("one weight vector per sequence is required");
  GradientSet out;
  out.grad.assign(model.parameters().size(), 0.0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto logp = model.accumulate_gradients(batch[b], weights[b], out.grad);
    for (std::size_t i = 0; i < logp.size(); ++i) out.loss -= weights[b][i] * logp[i];
  }
  return out;
}

double tiny_lm_weighted_loss(const TinyLM& model, std::span<const std::vector<TokenId>> batch,
                             std::span<const std::vector<double>> weights) {
  if (batch.size() != weights.size()) throw ContractError("one weight vector per sequence is required");
  double loss = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (weights[b].size() != batch[b].size()) throw ContractError("one weight per token is required");
    const auto logp = model.target_logprobs(batch[b]);
    for (std::size_t i = 0; i < logp.size(); ++i) loss -= weights[b][i] * logp[i];
  }
  return loss;
}

void save_checkpoint(const TinyLM& model, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const nlohmann::json header = {{"format_version", kCheckpointFormatVersion},
                                 {"config", model.config()},
                                 {"seed", model.config().seed},
                                 {"parameter_count", model.parameters().size()}};
  out << header.dump() << '\n';
  const auto params = model.parameters();
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) throw Error("failed writing " + path.string());
}

TinyLM load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, std::string("checkpoint header is not JSON: ") + e.what());
  }
  if (header.value("format_version", 0) != kCheckpointFormatVersion) {
    throw ParseError(1, "unsupported checkpoint format_version");
  }
  TinyLM model(header.at("config").get<TinyLMConfig>());
  const auto expected = header.at("parameter_count").get<std::size_t>();
  auto params = model.parameters();
  if (expected != params.size()) throw ParseError(1, "checkpoint parameter_count does not match its config");
  in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(params.size() * sizeof(double))) {
    throw ParseError(2, "checkpoint payload is truncated");
  }
  return model;
}

}  // namespace longppl
