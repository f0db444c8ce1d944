#pragma once

// Diagnostics over a parameter snapshot: blockwise Hessian eigenvalues from
// finite-difference Hessian-vector products, singular values and effective
// ranks, the embedding DFT spectrum, the scalar embedding ODE, and gradient
// heatmaps.

#include "groklab/linalg.hpp"
#include "groklab/net.hpp"
#include "groklab/plot.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <numbers>
#include <optional>
#include <sstream>

namespace groklab {

// ---------------------------------------------------------------------------
// Hessian-vector products

/// Central difference of a gradient map along v:
///   Hv ~ [grad(theta + h v) - grad(theta - h v)] / (2h),  h = eps_fd (1 + |theta|) / |v|.
template <class GradFn>
Vec hvp(GradFn&& grad, const Vec& theta, const Vec& v, double eps_fd = 1e-5) {
  const double nv = v.norm();
  if (!(nv > 0.0)) throw std::invalid_argument("hvp: direction must be nonzero");
  if (!(eps_fd > 0.0)) throw std::invalid_argument("hvp: eps_fd must be > 0");
  const double h = eps_fd * (1.0 + theta.norm()) / nv;
  const Vec plus = grad(Vec(theta + h * v));
  const Vec minus = grad(Vec(theta - h * v));
  Vec out = (plus - minus) / (2.0 * h);
  if (!out.allFinite()) {
    throw NonFiniteError("hvp: non-finite result at step " + format_double(h));
  }
  return out;
}

namespace detail {

inline Vec masked(const Vec& v, BlockRange r) {
  Vec out = Vec::Zero(v.size());
  out.segment(r.offset, r.size) = v.segment(r.offset, r.size);
  return out;
}

}  // namespace detail

/// Model HVP on a batch, restricted to one block: out-of-block components of
/// v and of the result are zeroed. |theta| is taken over the block. Both
/// gradients keep the ReLU pattern of theta, so the difference quotient is
/// that of the smooth piece containing theta rather than of a kink crossing.
inline Vec hvp(const MlpParams& params, const Vec& v, std::span<const Example> batch, Block block,
               double eps_fd = 1e-5) {
  const BlockRange r = block_range(params.dims, block);
  if (r.size == 0) throw std::invalid_argument("hvp: empty block");
  if (static_cast<std::size_t>(v.size()) != params.size()) {
    throw std::invalid_argument("hvp: direction size does not match the parameters");
  }
  const Vec theta = flatten(params);
  const Vec vb = detail::masked(v, r);
  const double nv = vb.norm();
  if (!(nv > 0.0)) throw std::invalid_argument("hvp: direction has no component in the block");
  if (!(eps_fd > 0.0)) throw std::invalid_argument("hvp: eps_fd must be > 0");
  const double h = eps_fd * (1.0 + theta.segment(r.offset, r.size).norm()) / nv;
  const Mat gate = forward(params, batch).cache.gate;
  MlpParams work = params;
  auto grad_at = [&](double s) {
    unflatten(theta + s * vb, work);
    return flatten(loss_and_grad(work, batch, &gate).second);
  };
  Vec out = (grad_at(h) - grad_at(-h)) / (2.0 * h);
  if (!out.allFinite()) throw NonFiniteError("hvp: non-finite result at step " + format_double(h));
  return detail::masked(out, r);
}

/// Largest-magnitude Hessian eigenvalue of one block by power iteration from
/// a seeded Gaussian start.
inline EigenEstimate power_method_max_eig(const MlpParams& params, std::span<const Example> batch,
                                          Block block, int iters = 100, double tol = 1e-6,
                                          std::uint64_t seed = 0, double eps_fd = 1e-5) {
  const BlockRange r = block_range(params.dims, block);
  if (r.size == 0) throw std::invalid_argument("power method: empty block");
  Rng rng(mix_seed(seed, stream::kPower));
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec v0 = Vec::Zero(static_cast<Eigen::Index>(params.size()));
  for (Eigen::Index i = 0; i < r.size; ++i) v0(r.offset + i) = normal(rng);
  return power_iteration([&](const Vec& v) { return hvp(params, v, batch, block, eps_fd); },
                         std::move(v0), iters, tol);
}

// ---------------------------------------------------------------------------
// Ranks

struct ProductRanks {
  std::array<int, 4> position{};  // rank(E W^(j)^T), j = 1..4
  int combined = 0;               // rank([E W^(1)^T, ..., E W^(4)^T])
};

/// W1 is split columnwise into four h x d position blocks W^(j).
inline ProductRanks product_ranks(const Mat& E, const Mat& W1, double rel_tol = 1e-3) {
  const Eigen::Index d = E.cols();
  if (E.size() == 0 || W1.cols() != 4 * d) {
    throw std::invalid_argument("product_ranks: W1 must have 4 * embed_dim columns");
  }
  const Eigen::Index h = W1.rows();
  ProductRanks r;
  Mat all(E.rows(), 4 * h);
  for (int j = 0; j < 4; ++j) {
    const Mat prod = E * W1.block(0, j * d, h, d).transpose();
    r.position[static_cast<std::size_t>(j)] = effective_rank(prod, rel_tol);
    all.block(0, j * h, E.rows(), h) = prod;
  }
  r.combined = effective_rank(all, rel_tol);
  return r;
}

// ---------------------------------------------------------------------------
// Fourier spectrum over operand tokens

/// Per-frequency l2 norm (over embedding coordinates) of the unitary DFT of
/// rows 0..p-1 of E, for all p frequencies.
inline std::vector<double> dft_norms(const Mat& E, int p) {
  if (p < 1 || p > E.rows()) throw std::invalid_argument("dft: p exceeds the embedding row count");
  const auto n = static_cast<std::size_t>(p);
  std::vector<double> c(n), s(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double ang = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(p);
    c[k] = std::cos(ang);
    s[k] = std::sin(ang);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(p));
  std::vector<double> out(n);
  Vec re(E.cols()), im(E.cols());
  for (std::size_t k = 0; k < n; ++k) {
    re.setZero();
    im.setZero();
    for (std::size_t a = 0; a < n; ++a) {
      const std::size_t idx = (k * a) % n;
      re += c[idx] * E.row(static_cast<Eigen::Index>(a)).transpose();
      im -= s[idx] * E.row(static_cast<Eigen::Index>(a)).transpose();
    }
    out[k] = scale * std::sqrt(re.squaredNorm() + im.squaredNorm());
  }
  return out;
}

/// First ceil(p/2) entries of dft_norms (the rest mirror them).
inline std::vector<double> fft_spectrum(const Mat& E, int p) {
  auto all = dft_norms(E, p);
  all.resize(static_cast<std::size_t>((p + 1) / 2));
  return all;
}

// ---------------------------------------------------------------------------
// Embedding ODE  de/dt = -lambda e - p g

struct OdeTrace {
  double lambda = 0.0, p = 0.0, g = 0.0, e0 = 0.0;
  double equilibrium = 0.0;  // -p g / lambda
  double C = 0.0;            // e0 - equilibrium
  double eps = 0.0;
  double dt = 0.0;
  std::vector<double> t, e;
  std::optional<double> T_eps;  // first time |e - equilibrium| <= eps
  double max_closed_form_error = 0.0;

  double closed_form(double time) const { return C * std::exp(-lambda * time) + equilibrium; }
};

/// Classic RK4 with `steps` equal steps over [0, horizon]. T_eps is located
/// between grid points by log-linear interpolation of |e - equilibrium|.
inline OdeTrace simulate_embedding_ode(double lambda, double p, double g, double e0, double horizon,
                                       double eps, int steps = 20000) {
  if (!(lambda > 0.0)) throw std::invalid_argument("ode: lambda must be > 0");
  if (!(horizon > 0.0)) throw std::invalid_argument("ode: horizon must be > 0");
  if (!(eps > 0.0)) throw std::invalid_argument("ode: eps must be > 0");
  if (steps < 1) throw std::invalid_argument("ode: steps must be >= 1");
  OdeTrace tr;
  tr.lambda = lambda;
  tr.p = p;
  tr.g = g;
  tr.e0 = e0;
  tr.eps = eps;
  tr.equilibrium = -p * g / lambda;
  tr.C = e0 - tr.equilibrium;
  tr.dt = horizon / steps;
  auto f = [&](double e) { return -lambda * e - p * g; };
  tr.t.reserve(static_cast<std::size_t>(steps) + 1);
  tr.e.reserve(static_cast<std::size_t>(steps) + 1);
  double e = e0;
  tr.t.push_back(0.0);
  tr.e.push_back(e);
  if (std::abs(e - tr.equilibrium) <= eps) tr.T_eps = 0.0;
  for (int k = 1; k <= steps; ++k) {
    const double h = tr.dt;
    const double k1 = f(e), k2 = f(e + 0.5 * h * k1), k3 = f(e + 0.5 * h * k2), k4 = f(e + h * k3);
    const double prev = e;
    e += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!std::isfinite(e)) throw NonFiniteError("ode: trajectory diverged");
    const double time = k * h;
    tr.t.push_back(time);
    tr.e.push_back(e);
    tr.max_closed_form_error = std::max(tr.max_closed_form_error, std::abs(e - tr.closed_form(time)));
    const double d1 = std::abs(e - tr.equilibrium);
    if (!tr.T_eps && d1 <= eps) {
      const double d0 = std::abs(prev - tr.equilibrium);
      const double t0 = time - h;
      tr.T_eps = d1 > 0.0 && d0 > d1 ? t0 + h * std::log(d0 / eps) / std::log(d0 / d1) : time;
    }
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Gradient heatmaps

inline void write_csv_matrix(std::ostream& os, const Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

inline Mat read_csv_matrix(std::istream& is, const std::string& source = "csv") {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const auto field = std::string_view(line).substr(start, comma - start);
      try {
        row.push_back(parse_double(field));
      } catch (const std::exception&) {
        throw std::runtime_error(source + ": line " + std::to_string(rows.size() + 1) +
                                 ": bad number '" + std::string(field) + "'");
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error(source + ": ragged row " + std::to_string(rows.size() + 1));
    }
    rows.push_back(std::move(row));
  }
  Mat m(static_cast<Eigen::Index>(rows.size()),
        rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

struct HeatmapFiles {
  std::filesystem::path grad_E, grad_W1, svg;
};

/// Writes |dL/dE| (transposed: one column per token) and |dL/dW1| as CSV,
/// plus both panels as one SVG on a shared log scale.
inline HeatmapFiles grad_heatmap(const Grads& g, const std::filesystem::path& dir,
                                 const std::string& stem = "grad") {
  std::filesystem::create_directories(dir);
  HeatmapFiles f{dir / (stem + "_E.csv"), dir / (stem + "_W1.csv"), dir / (stem + "_heatmap.svg")};
  auto write = [](const std::filesystem::path& path, auto&& body) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    body(os);
    if (!os) throw std::runtime_error("write failed: " + path.string());
  };
  std::vector<svg::HeatPanel> panels;
  if (g.E.size() > 0) {
    const Mat e = g.E.cwiseAbs().transpose();
    write(f.grad_E, [&](std::ostream& os) { write_csv_matrix(os, e); });
    panels.push_back({"|dL/dE| (columns = tokens)", e});
  } else {
    f.grad_E.clear();
  }
  const Mat w = g.W1.cwiseAbs();
  write(f.grad_W1, [&](std::ostream& os) { write_csv_matrix(os, w); });
  panels.push_back({"|dL/dW1|", w});
  write(f.svg, [&](std::ostream& os) { svg::heatmaps(os, panels); });
  return f;
}

// ---------------------------------------------------------------------------
// Report

/// Fixed evaluation batch for curvature diagnostics: up to `size` examples
/// drawn without replacement from `pool`, in pool order.
inline std::vector<Example> make_probe_batch(std::span<const Example> pool, std::uint64_t seed,
                                             std::size_t size = 512) {
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(mix_seed(seed, stream::kProbe));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(size, idx.size()));
  std::sort(idx.begin(), idx.end());
  std::vector<Example> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(pool[i]);
  return out;
}

struct DiagOptions {
  bool hessian = true;
  int power_iters = 100;
  double power_tol = 1e-6;
  double eps_fd = 1e-5;
  double rank_tol = 1e-3;
  std::uint64_t seed = 0;
};

/// Quantities that do not apply (E-related ones without embeddings, Hessian
/// ones when disabled) are NaN or -1.
struct DiagReport {
  long long step = 0;
  double lambda_max_E = std::numeric_limits<double>::quiet_NaN();
  double lambda_max_W = std::numeric_limits<double>::quiet_NaN();
  double residual_E = std::numeric_limits<double>::quiet_NaN();
  double residual_W = std::numeric_limits<double>::quiet_NaN();
  bool converged_E = false, converged_W = false;
  double sigma_max_E = std::numeric_limits<double>::quiet_NaN();
  double sigma_max_W = 0.0;
  int rank_E = -1, rank_W = 0, rank_EW = -1;
  std::array<int, 4> rank_EW_pos{-1, -1, -1, -1};
  std::vector<double> fft_norms;
};

inline DiagReport compute_diag_report(const MlpParams& params, std::span<const Example> probe,
                                      long long step, const DiagOptions& opt = {}) {
  DiagReport r;
  r.step = step;
  const bool embed = params.dims.embed;
  if (opt.hessian) {
    if (probe.empty()) throw std::invalid_argument("diagnostics: empty probe batch");
    if (embed) {
      const auto e = power_method_max_eig(params, probe, Block::E, opt.power_iters, opt.power_tol,
                                          opt.seed, opt.eps_fd);
      r.lambda_max_E = e.value;
      r.residual_E = e.residual;
      r.converged_E = e.converged;
    }
    const auto w = power_method_max_eig(params, probe, Block::W1, opt.power_iters, opt.power_tol,
                                        opt.seed, opt.eps_fd);
    r.lambda_max_W = w.value;
    r.residual_W = w.residual;
    r.converged_W = w.converged;
  }
  r.sigma_max_W = sigma_max(params.W1);
  r.rank_W = effective_rank(params.W1, opt.rank_tol);
  if (embed) {
    r.sigma_max_E = sigma_max(params.E);
    r.rank_E = effective_rank(params.E, opt.rank_tol);
    const auto pr = product_ranks(params.E, params.W1, opt.rank_tol);
    r.rank_EW_pos = pr.position;
    r.rank_EW = pr.combined;
    r.fft_norms = fft_spectrum(params.E, params.dims.classes);
  }
  return r;
}

namespace detail {

inline std::string field(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }
inline std::string field(int v) { return v >= 0 ? std::to_string(v) : std::string(); }

}  // namespace detail

inline void write_diag_header(std::ostream& os, int fft_len) {
  os << "step,lambda_max_E,residual_E,converged_E,lambda_max_W,residual_W,converged_W,"
        "sigma_max_E,sigma_max_W,rank_E,rank_W,rank_EW,rank_EW_1,rank_EW_2,rank_EW_3,rank_EW_4";
  for (int k = 0; k < fft_len; ++k) os << ",fft_" << k;
  os << '\n';
}

inline void write_diag_row(std::ostream& os, const DiagReport& r, int fft_len) {
  os << r.step << ',' << detail::field(r.lambda_max_E) << ',' << detail::field(r.residual_E) << ','
     << (std::isfinite(r.lambda_max_E) ? (r.converged_E ? "1" : "0") : "") << ','
     << detail::field(r.lambda_max_W) << ',' << detail::field(r.residual_W) << ','
     << (std::isfinite(r.lambda_max_W) ? (r.converged_W ? "1" : "0") : "") << ','
     << detail::field(r.sigma_max_E) << ',' << detail::field(r.sigma_max_W) << ','
     << detail::field(r.rank_E) << ',' << detail::field(r.rank_W) << ',' << detail::field(r.rank_EW);
  for (int v : r.rank_EW_pos) os << ',' << detail::field(v);
  for (int k = 0; k < fft_len; ++k) {
    os << ',';
    if (static_cast<std::size_t>(k) < r.fft_norms.size()) {
      os << format_double(r.fft_norms[static_cast<std::size_t>(k)]);
    }
  }
  os << '\n';
}

}  // namespace groklab
