#pragma once

// Update rules: SGD with weight decay, Adam with decoupled (or coupled L2)
// weight decay, and Adam-LR, which runs the embedding block at c times the
// base learning rate. In adaptive mode c is periodically reset to
//   clamp(sigma_max(E) / sigma_max(W1) * f_W / f_E, c_min, c_max).

#include "groklab/binio.hpp"
#include "groklab/linalg.hpp"
#include "groklab/net.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <string>
#include <vector>

namespace groklab {

enum class OptKind { SGD, Adam, AdamLR };
enum class RatioMode { Fixed, Adaptive };

inline std::string_view opt_name(OptKind k) {
  switch (k) {
    case OptKind::SGD: return "sgd";
    case OptKind::Adam: return "adam";
    case OptKind::AdamLR: return "adam_lr";
  }
  return "?";
}

inline OptKind parse_opt(std::string_view s) {
  if (s == "sgd") return OptKind::SGD;
  if (s == "adam") return OptKind::Adam;
  if (s == "adam_lr") return OptKind::AdamLR;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

struct OptConfig {
  OptKind kind = OptKind::Adam;
  double lr = 1e-3;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Adam-LR only.
  RatioMode ratio_mode = RatioMode::Fixed;
  double ratio = 10.0;  // fixed c, and the starting c in adaptive mode
  int recompute_every = 100;
  double c_min = 1.0;
  double c_max = 50.0;
  // Adam only. Coupled: lambda * theta is added to the gradient before the
  // moment updates (L2 penalty). Decoupled: theta *= 1 - lr * lambda.
  bool coupled_decay = true;
  // Untouched embedding rows get neither moment updates, decay nor steps.
  bool strict_sparse = false;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be > 0");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw std::invalid_argument("eps must be > 0");
    if (kind == OptKind::AdamLR) {
      if (!(ratio > 0.0)) throw std::invalid_argument("ratio must be > 0");
      if (ratio_mode == RatioMode::Adaptive) {
        if (recompute_every < 1) throw std::invalid_argument("recompute_every must be >= 1");
        if (!(c_min >= 1.0 && c_max >= c_min)) {
          throw std::invalid_argument("adaptive ratio needs 1 <= c_min <= c_max");
        }
      }
    }
  }
};

struct TensorSet {
  Mat E, W1;
  Vec b1;
  Mat W2;
  Vec b2;

  static TensorSet zeros_like(const MlpParams& p) {
    return {Mat::Zero(p.E.rows(), p.E.cols()), Mat::Zero(p.W1.rows(), p.W1.cols()),
            Vec::Zero(p.b1.size()), Mat::Zero(p.W2.rows(), p.W2.cols()), Vec::Zero(p.b2.size())};
  }
  friend bool operator==(const TensorSet& a, const TensorSet& b) {
    return a.E == b.E && a.W1 == b.W1 && a.b1 == b.b1 && a.W2 == b.W2 && a.b2 == b.b2;
  }
};

struct OptState {
  TensorSet m, v;
  long long step = 0;
  long long f_E = 0;  // steps where any embedding row got a nonzero gradient
  long long f_W = 0;  // steps where W1 got a nonzero gradient
  std::vector<long long> token_updates;  // per-token count of touched steps
  double ratio = 1.0;                    // current c_t (Adam-LR)
  long long ratio_failures = 0;

  friend bool operator==(const OptState&, const OptState&) = default;
};

inline OptState make_opt_state(const MlpParams& p, const OptConfig& cfg) {
  OptState s;
  s.m = TensorSet::zeros_like(p);
  s.v = TensorSet::zeros_like(p);
  s.token_updates.assign(static_cast<std::size_t>(p.dims.vocab), 0);
  s.ratio = cfg.kind == OptKind::AdamLR
                ? (cfg.ratio_mode == RatioMode::Adaptive
                       ? std::clamp(cfg.ratio, cfg.c_min, cfg.c_max)
                       : cfg.ratio)
                : 1.0;
  return s;
}

namespace detail {

inline void check_grad_shapes(const MlpParams& p, const Grads& g) {
  if (g.E.rows() != p.E.rows() || g.E.cols() != p.E.cols() || g.W1.rows() != p.W1.rows() ||
      g.W1.cols() != p.W1.cols() || g.b1.size() != p.b1.size() || g.W2.rows() != p.W2.rows() ||
      g.W2.cols() != p.W2.cols() || g.b2.size() != p.b2.size()) {
    throw std::invalid_argument("gradient shapes do not match parameters");
  }
}

inline void count_updates(const Grads& g, OptState& s) {
  ++s.step;
  if (g.E.size() > 0 && (g.E.array() != 0.0).any()) ++s.f_E;
  if ((g.W1.array() != 0.0).any()) ++s.f_W;
  if (s.token_updates.size() < g.touched.size()) s.token_updates.resize(g.touched.size(), 0);
  for (std::size_t t = 0; t < g.touched.size(); ++t) s.token_updates[t] += g.touched[t] ? 1 : 0;
}

inline void ensure_finite(const MlpParams& p, const char* who) {
  if (!p.all_finite()) {
    throw NonFiniteError(std::string(who) + ": update produced non-finite parameters");
  }
}

// One Adam update of a single tensor (all rows active).
template <class P, class G, class M>
void adam_tensor(P& theta, const G& grad, M& m, M& v, const OptConfig& cfg, double lr,
                 double bc1, double bc2) {
  if (theta.size() == 0) return;
  if (cfg.coupled_decay && cfg.weight_decay > 0.0) {
    const auto g = (grad.array() + cfg.weight_decay * theta.array()).eval();
    m.array() = cfg.beta1 * m.array() + (1.0 - cfg.beta1) * g;
    v.array() = cfg.beta2 * v.array() + (1.0 - cfg.beta2) * g.square();
  } else {
    m.array() = cfg.beta1 * m.array() + (1.0 - cfg.beta1) * grad.array();
    v.array() = cfg.beta2 * v.array() + (1.0 - cfg.beta2) * grad.array().square();
    if (cfg.weight_decay > 0.0) theta.array() *= (1.0 - cfg.lr * cfg.weight_decay);
  }
  theta.array() -= lr * ((m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps));
}

inline void adam_update(MlpParams& p, const Grads& g, const OptConfig& cfg, OptState& s,
                        double embed_lr) {
  check_grad_shapes(p, g);
  count_updates(g, s);
  const double t = static_cast<double>(s.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  if (cfg.strict_sparse && p.E.size() > 0) {
    for (Eigen::Index r = 0; r < p.E.rows(); ++r) {
      if (!g.touched[static_cast<std::size_t>(r)]) continue;
      auto th = p.E.row(r);
      auto mr = s.m.E.row(r);
      auto vr = s.v.E.row(r);
      adam_tensor(th, g.E.row(r), mr, vr, cfg, embed_lr, bc1, bc2);
    }
  } else {
    adam_tensor(p.E, g.E, s.m.E, s.v.E, cfg, embed_lr, bc1, bc2);
  }
  adam_tensor(p.W1, g.W1, s.m.W1, s.v.W1, cfg, cfg.lr, bc1, bc2);
  adam_tensor(p.b1, g.b1, s.m.b1, s.v.b1, cfg, cfg.lr, bc1, bc2);
  adam_tensor(p.W2, g.W2, s.m.W2, s.v.W2, cfg, cfg.lr, bc1, bc2);
  adam_tensor(p.b2, g.b2, s.m.b2, s.v.b2, cfg, cfg.lr, bc1, bc2);
}

}  // namespace detail

/// theta <- (1 - lr * wd) * theta - lr * grad for every tensor; untouched
/// embedding rows still decay.
inline void sgd_step(MlpParams& p, const Grads& g, const OptConfig& cfg, OptState& s) {
  detail::check_grad_shapes(p, g);
  detail::count_updates(g, s);
  const double keep = 1.0 - cfg.lr * cfg.weight_decay;
  auto upd = [&](auto& theta, const auto& grad) {
    theta.array() = keep * theta.array() - cfg.lr * grad.array();
  };
  if (cfg.strict_sparse && p.E.size() > 0) {
    for (Eigen::Index r = 0; r < p.E.rows(); ++r) {
      if (!g.touched[static_cast<std::size_t>(r)]) continue;
      auto row = p.E.row(r);
      upd(row, g.E.row(r));
    }
  } else {
    upd(p.E, g.E);
  }
  upd(p.W1, g.W1);
  upd(p.b1, g.b1);
  upd(p.W2, g.W2);
  upd(p.b2, g.b2);
  detail::ensure_finite(p, "sgd_step");
}

inline void adam_step(MlpParams& p, const Grads& g, const OptConfig& cfg, OptState& s) {
  detail::adam_update(p, g, cfg, s, cfg.lr);
  detail::ensure_finite(p, "adam_step");
}

/// Current adaptive ratio candidate; throws if the spectral estimate failed.
inline double adaptive_ratio(const MlpParams& p, const OptState& s, const OptConfig& cfg) {
  const auto se = sigma_max_detail(p.E);
  const auto sw = sigma_max_detail(p.W1);
  if (!se.converged || !sw.converged || !(sw.value > 0.0)) {
    throw std::runtime_error("sigma_max power iteration did not converge");
  }
  const double freq = static_cast<double>(s.f_W) / static_cast<double>(std::max<long long>(s.f_E, 1));
  return std::clamp(se.value / sw.value * freq, cfg.c_min, cfg.c_max);
}

inline void adam_lr_step(MlpParams& p, const Grads& g, const OptConfig& cfg, OptState& s) {
  if (cfg.kind != OptKind::AdamLR) throw std::invalid_argument("adam_lr_step needs an AdamLR config");
  if (cfg.ratio_mode == RatioMode::Fixed) {
    s.ratio = cfg.ratio;
  } else if (s.step % cfg.recompute_every == 0) {
    // Counters for the step about to be taken are included so f_E >= 1.
    OptState probe = s;
    detail::count_updates(g, probe);
    try {
      s.ratio = adaptive_ratio(p, probe, cfg);
    } catch (const std::runtime_error& e) {
      ++s.ratio_failures;
      std::cerr << "warning: adam_lr: keeping c=" << s.ratio << " at step " << s.step << ": "
                << e.what() << '\n';
    }
  }
  detail::adam_update(p, g, cfg, s, s.ratio * cfg.lr);
  detail::ensure_finite(p, "adam_lr_step");
}

inline void opt_step(MlpParams& p, const Grads& g, const OptConfig& cfg, OptState& s) {
  switch (cfg.kind) {
    case OptKind::SGD: sgd_step(p, g, cfg, s); break;
    case OptKind::Adam: adam_step(p, g, cfg, s); break;
    case OptKind::AdamLR: adam_lr_step(p, g, cfg, s); break;
  }
}

// ---------------------------------------------------------------------------
// "GROKOPT\0", u32 version, u32 kind, i64 step, f_E, f_W, ratio_failures,
// f64 ratio, u64 token count + i64 counts, then m and v tensor sets in the
// parameter order, using the checkpoint tensor encoding.

inline constexpr char kOptMagic[8] = {'G', 'R', 'O', 'K', 'O', 'P', 'T', '\0'};
inline constexpr std::uint32_t kOptVersion = 1;

inline void save_opt_state(std::ostream& os, const OptState& s, OptKind kind) {
  BinaryWriter w(os);
  w.bytes(kOptMagic, sizeof(kOptMagic));
  w.put<std::uint32_t>(kOptVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kind));
  w.put<std::int64_t>(s.step);
  w.put<std::int64_t>(s.f_E);
  w.put<std::int64_t>(s.f_W);
  w.put<std::int64_t>(s.ratio_failures);
  w.put<double>(s.ratio);
  w.put<std::uint64_t>(s.token_updates.size());
  for (long long c : s.token_updates) w.put<std::int64_t>(c);
  for (const TensorSet* ts : {&s.m, &s.v}) {
    w.matrix(ts->E);
    w.matrix(ts->W1);
    w.matrix(ts->b1.transpose());
    w.matrix(ts->W2);
    w.matrix(ts->b2.transpose());
  }
}

inline OptState load_opt_state(std::istream& is, const std::string& source, const MlpDims& d,
                               OptKind* kind_out = nullptr) {
  BinaryReader r(is, source);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (!std::equal(magic, magic + 8, kOptMagic)) {
    throw FormatError(source, 0, "not a groklab optimizer state (bad magic)");
  }
  if (r.get<std::uint32_t>() != kOptVersion) r.fail("unsupported optimizer state version");
  const auto kind = r.get<std::uint32_t>();
  if (kind > 2) r.fail("invalid optimizer kind");
  if (kind_out) *kind_out = static_cast<OptKind>(kind);
  OptState s;
  s.step = r.get<std::int64_t>();
  s.f_E = r.get<std::int64_t>();
  s.f_W = r.get<std::int64_t>();
  s.ratio_failures = r.get<std::int64_t>();
  s.ratio = r.get<double>();
  const auto n_tok = r.get<std::uint64_t>();
  if (n_tok != static_cast<std::uint64_t>(d.vocab)) r.fail("token counter length mismatch");
  s.token_updates.resize(n_tok);
  for (auto& c : s.token_updates) c = r.get<std::int64_t>();
  const Eigen::Index er = d.embed ? d.vocab : 0, ec = d.embed ? d.embed_dim : 0;
  for (TensorSet* ts : {&s.m, &s.v}) {
    ts->E = r.matrix(er, ec, "E");
    ts->W1 = r.matrix(d.hidden, d.input_width(), "W1");
    ts->b1 = r.matrix(1, d.hidden, "b1").row(0).transpose();
    ts->W2 = r.matrix(d.classes, d.hidden, "W2");
    ts->b2 = r.matrix(1, d.classes, "b2").row(0).transpose();
  }
  r.expect_end();
  return s;
}

}  // namespace groklab
