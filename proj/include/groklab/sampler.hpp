#pragma once

// Mini-batch construction and frequency-aware token probabilities.
//
// The frequency-aware target distribution maximizes
//   sum_i p_i L_i^2 + gamma * H(p)   over the probability simplex,
// whose maximizer is the softmax of L^2 / gamma. As gamma -> 0 it collapses
// onto argmax L_i^2.

#include "groklab/modspace.hpp"
#include "groklab/net.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

namespace groklab {

enum class BatchStrategy { Random, Uniform, Skewed, FrequencyAware };

inline std::string_view batch_strategy_name(BatchStrategy s) {
  switch (s) {
    case BatchStrategy::Random: return "random";
    case BatchStrategy::Uniform: return "uniform";
    case BatchStrategy::Skewed: return "skewed";
    case BatchStrategy::FrequencyAware: return "freq_aware";
  }
  return "?";
}

inline BatchStrategy parse_batch_strategy(std::string_view s) {
  if (s == "random") return BatchStrategy::Random;
  if (s == "uniform") return BatchStrategy::Uniform;
  if (s == "skewed") return BatchStrategy::Skewed;
  if (s == "freq_aware") return BatchStrategy::FrequencyAware;
  throw std::invalid_argument("unknown batch strategy '" + std::string(s) + "'");
}

using Batch = std::vector<Example>;

struct BatchPlan {
  BatchStrategy strategy = BatchStrategy::Random;
  int batch_size = 512;
  std::uint64_t seed = 0;
  // FrequencyAware: entropy weight and per-token gradient bounds (empty = uniform).
  double gamma = 1.0;
  std::vector<double> bounds;
  // Skewed: the power law of the split (same exponent and ranking seed).
  double skew_exponent = 1.5;
  std::uint64_t skew_seed = 0;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be > 0");
    for (double l : bounds) {
      if (!(l >= 0.0) || !std::isfinite(l)) {
        throw std::invalid_argument("bound estimates must be finite and >= 0");
      }
    }
  }
};

/// Closed-form maximizer of sum p_i L_i^2 + gamma H(p): softmax(L^2 / gamma).
inline std::vector<double> solve_entropy_probs(std::span<const double> bounds, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
  if (bounds.empty()) throw std::invalid_argument("empty bound vector");
  std::vector<double> z(bounds.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!std::isfinite(bounds[i])) throw std::invalid_argument("bounds must be finite");
    z[i] = bounds[i] * bounds[i] / gamma;
  }
  const double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double& x : z) {
    x = std::exp(x - m);
    total += x;
  }
  for (double& x : z) x /= total;
  return z;
}

/// gamma -> 0 limit: all mass on argmax L_i^2, shared equally over exact ties.
inline std::vector<double> argmax_limit_probs(std::span<const double> bounds) {
  if (bounds.empty()) throw std::invalid_argument("empty bound vector");
  double best = -1.0;
  for (double l : bounds) best = std::max(best, l * l);
  std::vector<double> p(bounds.size(), 0.0);
  std::size_t ties = 0;
  for (std::size_t i = 0; i < p.size(); ++i) ties += bounds[i] * bounds[i] == best ? 1 : 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (bounds[i] * bounds[i] == best) p[i] = 1.0 / static_cast<double>(ties);
  }
  return p;
}

/// Per-token bound: max of the last `window` recorded gradient norms. Tokens
/// with no record get the median of the recorded tokens' bounds (0 if none).
inline std::vector<double> estimate_bounds(const std::vector<std::vector<double>>& history,
                                           int window) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  std::vector<double> bounds(history.size(), 0.0);
  std::vector<double> seen;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    if (h.empty()) continue;
    const auto from = h.size() > static_cast<std::size_t>(window) ? h.end() - window : h.begin();
    bounds[i] = *std::max_element(from, h.end());
    seen.push_back(bounds[i]);
  }
  double median = 0.0;
  if (!seen.empty()) {
    std::sort(seen.begin(), seen.end());
    const std::size_t k = seen.size();
    median = k % 2 ? seen[k / 2] : 0.5 * (seen[k / 2 - 1] + seen[k / 2]);
  }
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (history[i].empty()) bounds[i] = median;
  }
  return bounds;
}

/// Rolling record of per-token embedding-gradient norms.
class GradientBoundTracker {
 public:
  GradientBoundTracker(int vocab, int window)
      : window_(window), history_(static_cast<std::size_t>(vocab)) {
    if (window < 1) throw std::invalid_argument("window must be >= 1");
  }

  void record(const Grads& g) {
    if (g.E.size() == 0) return;
    for (std::size_t t = 0; t < history_.size() && t < g.touched.size(); ++t) {
      if (!g.touched[t]) continue;
      auto& h = history_[t];
      h.push_back(g.E.row(static_cast<Eigen::Index>(t)).norm());
      if (h.size() > static_cast<std::size_t>(window_)) h.erase(h.begin());
    }
  }
  std::vector<double> bounds() const { return estimate_bounds(history_, window_); }

 private:
  int window_;
  std::vector<std::vector<double>> history_;
};

namespace detail {

inline std::vector<std::size_t> batch_sizes(std::size_t n, int batch_size) {
  const auto b = static_cast<std::size_t>(batch_size);
  std::vector<std::size_t> sizes;
  for (std::size_t start = 0; start < n; start += b) sizes.push_back(std::min(b, n - start));
  return sizes;
}

inline std::vector<Batch> chunk(std::span<const Example> train, const std::vector<std::size_t>& order,
                                int batch_size) {
  std::vector<Batch> out;
  std::size_t pos = 0;
  for (std::size_t size : batch_sizes(order.size(), batch_size)) {
    Batch b;
    b.reserve(size);
    for (std::size_t k = 0; k < size; ++k) b.push_back(train[order[pos++]]);
    out.push_back(std::move(b));
  }
  return out;
}

inline std::vector<Batch> weighted_draws(std::span<const Example> train,
                                         const std::vector<double>& weights, int batch_size,
                                         Rng& rng) {
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::vector<Batch> out;
  for (std::size_t size : batch_sizes(train.size(), batch_size)) {
    Batch b;
    b.reserve(size);
    for (std::size_t k = 0; k < size; ++k) b.push_back(train[pick(rng)]);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace detail

/// One epoch of batches: ceil(|train| / B) batches totalling |train| examples.
///
/// Random shuffles; Uniform interleaves a-value strata in a fixed per-epoch
/// order so any B >= p consecutive examples cover every active a-value;
/// Skewed and FrequencyAware draw with replacement, the former so that the
/// a-values follow the split's power law, the latter with example weight
/// (p*_a + p*_b) / 2.
inline std::vector<Batch> make_batches(std::span<const Example> train, const BatchPlan& plan,
                                       std::uint64_t epoch_seed) {
  plan.validate();
  if (train.empty()) throw std::invalid_argument("make_batches: empty train set");
  Rng rng(mix_seed(mix_seed(plan.seed, stream::kBatches), epoch_seed));
  const int p = train.front().tokens[1];

  switch (plan.strategy) {
    case BatchStrategy::Random: {
      std::vector<std::size_t> order(train.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      return detail::chunk(train, order, plan.batch_size);
    }
    case BatchStrategy::Uniform: {
      std::vector<std::vector<std::size_t>> strata(static_cast<std::size_t>(p));
      for (std::size_t i = 0; i < train.size(); ++i) {
        strata[static_cast<std::size_t>(train[i].a())].push_back(i);
      }
      for (auto& s : strata) std::shuffle(s.begin(), s.end(), rng);
      std::vector<std::size_t> visit(strata.size());
      std::iota(visit.begin(), visit.end(), std::size_t{0});
      std::shuffle(visit.begin(), visit.end(), rng);
      std::vector<std::size_t> order;
      order.reserve(train.size());
      for (std::size_t round = 0; order.size() < train.size(); ++round) {
        for (std::size_t a : visit) {
          if (round < strata[a].size()) order.push_back(strata[a][round]);
        }
      }
      return detail::chunk(train, order, plan.batch_size);
    }
    case BatchStrategy::Skewed: {
      const auto target = skew_weights(p, plan.skew_exponent, plan.skew_seed);
      std::vector<double> count(static_cast<std::size_t>(p), 0.0);
      for (const auto& ex : train) count[static_cast<std::size_t>(ex.a())] += 1.0;
      std::vector<double> w(train.size());
      for (std::size_t i = 0; i < train.size(); ++i) {
        const auto a = static_cast<std::size_t>(train[i].a());
        w[i] = target[a] / count[a];
      }
      return detail::weighted_draws(train, w, plan.batch_size, rng);
    }
    case BatchStrategy::FrequencyAware: {
      std::vector<double> w(train.size(), 1.0);
      if (!plan.bounds.empty()) {
        const auto pstar = solve_entropy_probs(plan.bounds, plan.gamma);
        for (std::size_t i = 0; i < train.size(); ++i) {
          const auto a = static_cast<std::size_t>(train[i].a());
          const auto b = static_cast<std::size_t>(train[i].b());
          if (a >= pstar.size() || b >= pstar.size()) {
            throw std::invalid_argument("bound vector shorter than the vocabulary");
          }
          w[i] = 0.5 * (pstar[a] + pstar[b]);
        }
      }
      return detail::weighted_draws(train, w, plan.batch_size, rng);
    }
  }
  return {};
}

/// Token histogram of a split (train and test counts, per-example occurrence
/// rate and batch inclusion probability at the given batch size).
inline void write_token_histogram(std::ostream& os, const Split& s, int batch_size) {
  std::vector<long long> test_freq(static_cast<std::size_t>(s.vocab_size()), 0);
  for (const auto& ex : s.test) {
    for (int t : ex.tokens) ++test_freq[static_cast<std::size_t>(t)];
  }
  const auto q = token_occurrence_rate(s);
  const auto incl = inclusion_probability(s, batch_size);
  os << "token,train_count,test_count,occurrence_rate,inclusion_prob\n";
  for (std::size_t t = 0; t < q.size(); ++t) {
    os << t << ',' << s.token_freq[t] << ',' << test_freq[t] << ',' << format_double(q[t]) << ','
       << format_double(incl[t]) << '\n';
  }
}

}  // namespace groklab
