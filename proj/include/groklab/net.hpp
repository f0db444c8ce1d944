#pragma once

// Two-layer ReLU MLP over a 4-token sequence, with or without a learned
// embedding table in front:
//
//   with embeddings:  x = [E[a], E[op], E[b], E[eq]]  (length 4d)
//   without:          x = [a, op, b, eq] / V          (length 4)
//   h = relu(W1 x + b1),  logits = W2 h + b2,  loss = mean cross-entropy.
//
// Gradients are derived by hand; the embedding gradient is a scatter-add so
// rows of tokens absent from a batch are exactly zero.

#include "groklab/binio.hpp"
#include "groklab/common.hpp"
#include "groklab/modspace.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace groklab {

enum class InputEncoding : std::uint32_t { Scaled = 0, Raw = 1 };

struct MlpDims {
  int vocab = 99;
  int classes = 97;
  int embed_dim = 128;
  int hidden = 512;
  bool embed = true;
  InputEncoding encoding = InputEncoding::Scaled;  // no-embedding mode only

  int input_width() const noexcept { return embed ? 4 * embed_dim : 4; }

  static MlpDims for_task(const ModTask& task, int embed_dim = 128, int hidden = -1,
                          bool embed = true) {
    MlpDims d;
    d.vocab = task.vocab_size();
    d.classes = task.p();
    d.embed_dim = embed_dim;
    d.hidden = hidden > 0 ? hidden : 4 * embed_dim;
    d.embed = embed;
    return d;
  }

  void validate() const {
    if (vocab < 3 || classes < 1 || embed_dim < 1 || hidden < 1 || classes > vocab) {
      throw std::invalid_argument("invalid model dimensions");
    }
  }
  friend bool operator==(const MlpDims&, const MlpDims&) = default;
};

struct MlpParams {
  MlpDims dims;
  Mat E;   // vocab x embed_dim (0 x 0 without embeddings)
  Mat W1;  // hidden x input_width
  Vec b1;
  Mat W2;  // classes x hidden
  Vec b2;

  bool all_finite() const {
    return E.allFinite() && W1.allFinite() && b1.allFinite() && W2.allFinite() && b2.allFinite();
  }
  std::size_t size() const {
    return static_cast<std::size_t>(E.size() + W1.size() + b1.size() + W2.size() + b2.size());
  }
  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    return a.dims == b.dims && a.E == b.E && a.W1 == b.W1 && a.b1 == b.b1 && a.W2 == b.W2 &&
           a.b2 == b.b2;
  }
};

/// Gradient of the mean loss, shaped like MlpParams.
struct Grads {
  Mat E, W1;
  Vec b1;
  Mat W2;
  Vec b2;
  std::vector<char> touched;  // per token: present in the batch
};

struct ForwardCache {
  Mat input;   // n x input_width
  Mat pre;     // n x hidden
  Mat hidden;  // n x hidden
  Mat gate;    // n x hidden, 1 where the ReLU passes
  Mat logits;  // n x classes
  Mat probs;   // n x classes
};

struct InitOptions {
  double embed_scale = 1.0;  // multiplier on the N(0, 1) embedding entries
};

/// E ~ N(0, 1) * embed_scale, W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
inline MlpParams init_params(const MlpDims& dims, std::uint64_t seed, InitOptions opt = {}) {
  dims.validate();
  Rng rng(mix_seed(seed, stream::kInit));
  MlpParams p;
  p.dims = dims;
  if (dims.embed) {
    std::normal_distribution<double> normal(0.0, 1.0);
    p.E.resize(dims.vocab, dims.embed_dim);
    for (Eigen::Index i = 0; i < p.E.size(); ++i) p.E.data()[i] = normal(rng) * opt.embed_scale;
  } else {
    p.E.resize(0, 0);
  }
  auto uniform_fill = [&rng](Mat& m, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  p.W1.resize(dims.hidden, dims.input_width());
  uniform_fill(p.W1, dims.input_width());
  p.b1 = Vec::Zero(dims.hidden);
  p.W2.resize(dims.classes, dims.hidden);
  uniform_fill(p.W2, dims.hidden);
  p.b2 = Vec::Zero(dims.classes);
  return p;
}

inline void check_batch(const MlpParams& params, std::span<const Example> batch) {
  const auto& d = params.dims;
  for (const auto& ex : batch) {
    for (int t : ex.tokens) {
      if (t < 0 || t >= d.vocab) throw std::invalid_argument("token id out of range");
    }
    if (ex.label < 0 || ex.label >= d.classes) throw std::invalid_argument("label out of range");
  }
}

/// Builds the first-layer input rows for a batch.
inline Mat encode_inputs(const MlpParams& params, std::span<const Example> batch) {
  const auto& d = params.dims;
  const auto n = static_cast<Eigen::Index>(batch.size());
  Mat x(n, d.input_width());
  if (d.embed) {
    if (params.E.rows() != d.vocab || params.E.cols() != d.embed_dim) {
      throw std::invalid_argument("embedding shape mismatch");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < 4; ++j) {
        x.block(i, j * d.embed_dim, 1, d.embed_dim) =
            params.E.row(batch[static_cast<std::size_t>(i)].tokens[static_cast<std::size_t>(j)]);
      }
    }
  } else {
    const double scale = d.encoding == InputEncoding::Scaled ? 1.0 / d.vocab : 1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < 4; ++j) {
        x(i, j) = batch[static_cast<std::size_t>(i)].tokens[static_cast<std::size_t>(j)] * scale;
      }
    }
  }
  return x;
}

namespace detail {

inline void check_shapes(const MlpParams& p) {
  const auto& d = p.dims;
  if (p.W1.rows() != d.hidden || p.W1.cols() != d.input_width() || p.b1.size() != d.hidden ||
      p.W2.rows() != d.classes || p.W2.cols() != d.hidden || p.b2.size() != d.classes) {
    throw std::invalid_argument("parameter shapes are inconsistent with dims");
  }
}

// A given gate replaces the ReLU pattern (pre > 0), freezing the piecewise-
// linear region; this is how the Hessian diagnostics avoid kink crossings.
inline Mat logits_of(const MlpParams& params, const Mat& x, Mat* pre_out, Mat* hidden_out,
                     const Mat* gate = nullptr, Mat* gate_out = nullptr) {
  Mat pre = x * params.W1.transpose();
  pre.rowwise() += params.b1.transpose();
  Mat hidden;
  if (gate) {
    if (gate->rows() != pre.rows() || gate->cols() != pre.cols()) {
      throw std::invalid_argument("gate shape does not match the batch");
    }
    hidden = pre.cwiseProduct(*gate);
    if (gate_out) *gate_out = *gate;
  } else {
    hidden = pre.cwiseMax(0.0);
    if (gate_out) *gate_out = (pre.array() > 0.0).cast<double>().matrix();
  }
  Mat logits = hidden * params.W2.transpose();
  logits.rowwise() += params.b2.transpose();
  if (pre_out) *pre_out = std::move(pre);
  if (hidden_out) *hidden_out = std::move(hidden);
  return logits;
}

// Row-wise stable softmax; returns the per-row cross-entropy against labels.
inline Vec softmax_xent(const Mat& logits, std::span<const Example> batch, Mat* probs_out) {
  const auto n = logits.rows();
  Vec losses(n);
  Mat probs(n, logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    probs.row(i) = (logits.row(i).array() - m).exp().matrix();
    const double z = probs.row(i).sum();
    probs.row(i) /= z;
    losses(i) = m + std::log(z) - logits(i, batch[static_cast<std::size_t>(i)].label);
  }
  if (probs_out) *probs_out = std::move(probs);
  return losses;
}

// Incremental mean; equal terms give back that term exactly.
struct RunningMean {
  double mean = 0.0;
  std::size_t count = 0;
  void add(const Vec& xs) {
    for (Eigen::Index i = 0; i < xs.size(); ++i) {
      ++count;
      mean += (xs(i) - mean) / static_cast<double>(count);
    }
  }
};

}  // namespace detail

struct ForwardResult {
  double loss = 0.0;
  ForwardCache cache;
};

inline ForwardResult forward(const MlpParams& params, std::span<const Example> batch,
                             const Mat* gate = nullptr) {
  detail::check_shapes(params);
  if (batch.empty()) throw std::invalid_argument("empty batch");
  check_batch(params, batch);
  if (!params.all_finite()) throw NonFiniteError("forward: parameters contain non-finite values");
  ForwardResult r;
  r.cache.input = encode_inputs(params, batch);
  r.cache.logits =
      detail::logits_of(params, r.cache.input, &r.cache.pre, &r.cache.hidden, gate, &r.cache.gate);
  detail::RunningMean mean;
  mean.add(detail::softmax_xent(r.cache.logits, batch, &r.cache.probs));
  r.loss = mean.mean;
  return r;
}

inline Grads backward(const MlpParams& params, std::span<const Example> batch,
                      const ForwardCache& cache) {
  const auto& d = params.dims;
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (cache.probs.rows() != n) throw std::invalid_argument("cache does not match batch");

  Mat dlogits = cache.probs;
  for (Eigen::Index i = 0; i < n; ++i) dlogits(i, batch[static_cast<std::size_t>(i)].label) -= 1.0;
  dlogits /= static_cast<double>(n);

  Grads g;
  g.W2.noalias() = dlogits.transpose() * cache.hidden;
  g.b2 = dlogits.colwise().sum().transpose();
  Mat dpre = dlogits * params.W2;
  dpre.array() *= cache.gate.array();
  g.W1.noalias() = dpre.transpose() * cache.input;
  g.b1 = dpre.colwise().sum().transpose();

  g.touched.assign(static_cast<std::size_t>(d.vocab), 0);
  for (const auto& ex : batch) {
    for (int t : ex.tokens) g.touched[static_cast<std::size_t>(t)] = 1;
  }
  if (d.embed) {
    const Mat dx = dpre * params.W1;
    g.E = Mat::Zero(d.vocab, d.embed_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < 4; ++j) {
        g.E.row(batch[static_cast<std::size_t>(i)].tokens[static_cast<std::size_t>(j)]) +=
            dx.block(i, j * d.embed_dim, 1, d.embed_dim);
      }
    }
  } else {
    g.E.resize(0, 0);
  }
  return g;
}

/// Loss and gradient in one call.
inline std::pair<double, Grads> loss_and_grad(const MlpParams& params,
                                              std::span<const Example> batch,
                                              const Mat* gate = nullptr) {
  auto fr = forward(params, batch, gate);
  return {fr.loss, backward(params, batch, fr.cache)};
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean loss and accuracy over a set of examples, evaluated in chunks. The
/// predicted class is the first index attaining the maximum logit.
inline EvalResult evaluate(const MlpParams& params, std::span<const Example> examples,
                           std::size_t chunk = 1024) {
  EvalResult r;
  if (examples.empty()) return r;
  detail::check_shapes(params);
  check_batch(params, examples);
  detail::RunningMean loss;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < examples.size(); start += chunk) {
    const auto part = examples.subspan(start, std::min(chunk, examples.size() - start));
    const Mat logits = detail::logits_of(params, encode_inputs(params, part), nullptr, nullptr);
    loss.add(detail::softmax_xent(logits, part, nullptr));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < logits.cols(); ++c) {
        if (logits(i, c) > logits(i, best)) best = c;
      }
      if (best == part[static_cast<std::size_t>(i)].label) ++correct;
    }
  }
  r.loss = loss.mean;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
  return r;
}

inline double accuracy(const MlpParams& params, std::span<const Example> examples) {
  return evaluate(params, examples).accuracy;
}

// ---------------------------------------------------------------------------
// Flat views, in the fixed tensor order E, W1, b1, W2, b2.

enum class Block { E, W1, All };

struct BlockRange {
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

inline BlockRange block_range(const MlpDims& d, Block block) {
  const Eigen::Index e = d.embed ? static_cast<Eigen::Index>(d.vocab) * d.embed_dim : 0;
  const Eigen::Index w1 = static_cast<Eigen::Index>(d.hidden) * d.input_width();
  const Eigen::Index total = e + w1 + d.hidden + static_cast<Eigen::Index>(d.classes) * d.hidden +
                             d.classes;
  switch (block) {
    case Block::E: return {0, e};
    case Block::W1: return {e, w1};
    case Block::All: return {0, total};
  }
  return {};
}

template <class P>
Vec flatten(const P& t) {
  Vec v(t.E.size() + t.W1.size() + t.b1.size() + t.W2.size() + t.b2.size());
  Eigen::Index o = 0;
  auto put = [&](const auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) v(o++) = m.data()[i];
  };
  put(t.E);
  put(t.W1);
  put(t.b1);
  put(t.W2);
  put(t.b2);
  return v;
}

inline void unflatten(const Vec& v, MlpParams& t) {
  if (static_cast<std::size_t>(v.size()) != t.size()) throw std::invalid_argument("flat size mismatch");
  Eigen::Index o = 0;
  auto get = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = v(o++);
  };
  get(t.E);
  get(t.W1);
  get(t.b1);
  get(t.W2);
  get(t.b2);
}

// ---------------------------------------------------------------------------
// Checkpoint: "GROKPRM\0", u32 version, u32 embed, u32 encoding, u32 vocab,
// classes, embed_dim, hidden, then each tensor as u64 rows, u64 cols and
// row-major little-endian f64 entries.

inline constexpr char kParamsMagic[8] = {'G', 'R', 'O', 'K', 'P', 'R', 'M', '\0'};
inline constexpr std::uint32_t kParamsVersion = 1;

inline void save_params(std::ostream& os, const MlpParams& p) {
  BinaryWriter w(os);
  w.bytes(kParamsMagic, sizeof(kParamsMagic));
  w.put<std::uint32_t>(kParamsVersion);
  w.put<std::uint32_t>(p.dims.embed ? 1 : 0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.dims.encoding));
  for (int v : {p.dims.vocab, p.dims.classes, p.dims.embed_dim, p.dims.hidden}) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  }
  w.matrix(p.E);
  w.matrix(p.W1);
  w.matrix(p.b1.transpose());
  w.matrix(p.W2);
  w.matrix(p.b2.transpose());
}

inline MlpParams load_params(std::istream& is, const std::string& source) {
  BinaryReader r(is, source);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (!std::equal(magic, magic + 8, kParamsMagic)) {
    throw FormatError(source, 0, "not a groklab parameter checkpoint (bad magic)");
  }
  const auto ver_at = r.offset();
  if (r.get<std::uint32_t>() != kParamsVersion) {
    throw FormatError(source, ver_at, "unsupported checkpoint version");
  }
  MlpParams p;
  const auto embed = r.get<std::uint32_t>();
  const auto enc = r.get<std::uint32_t>();
  if (embed > 1 || enc > 1) r.fail("invalid mode flags");
  p.dims.embed = embed == 1;
  p.dims.encoding = static_cast<InputEncoding>(enc);
  const auto dims_at = r.offset();
  p.dims.vocab = static_cast<int>(r.get<std::uint32_t>());
  p.dims.classes = static_cast<int>(r.get<std::uint32_t>());
  p.dims.embed_dim = static_cast<int>(r.get<std::uint32_t>());
  p.dims.hidden = static_cast<int>(r.get<std::uint32_t>());
  try {
    p.dims.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(source, dims_at, e.what());
  }
  const auto& d = p.dims;
  p.E = d.embed ? r.matrix(d.vocab, d.embed_dim, "E") : r.matrix(0, 0, "E");
  p.W1 = r.matrix(d.hidden, d.input_width(), "W1");
  p.b1 = r.matrix(1, d.hidden, "b1").row(0).transpose();
  p.W2 = r.matrix(d.classes, d.hidden, "W2");
  p.b2 = r.matrix(1, d.classes, "b2").row(0).transpose();
  r.expect_end();
  return p;
}

}  // namespace groklab
