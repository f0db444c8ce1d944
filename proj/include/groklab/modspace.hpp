#pragma once

// Modular-arithmetic datasets: task definition, tokenization, train/test
// splits, token statistics and the additive/multiplicative isomorphism.
//
// Token layout for modulus p: operands are 0..p-1, the operation symbol is
// p and the equality symbol is p+1, so the vocabulary has p+2 entries.

#include "groklab/common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace groklab {

enum class Op { Add, Mul, Div, SumSquares };

inline std::string_view op_name(Op op) {
  switch (op) {
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::SumSquares: return "sumsq";
  }
  return "?";
}

inline Op parse_op(std::string_view s) {
  if (s == "add") return Op::Add;
  if (s == "mul") return Op::Mul;
  if (s == "div") return Op::Div;
  if (s == "sumsq") return Op::SumSquares;
  throw std::invalid_argument("unknown operation '" + std::string(s) +
                              "' (expected add, mul, div or sumsq)");
}

constexpr bool is_prime(long long n) noexcept {
  if (n < 2) return false;
  for (long long d = 2; d * d <= n; ++d) {
    if (n % d == 0) return false;
  }
  return true;
}

constexpr long long pow_mod(long long base, long long exp, long long m) noexcept {
  long long result = 1 % m;
  base %= m;
  while (exp > 0) {
    if (exp & 1) result = result * base % m;
    base = base * base % m;
    exp >>= 1;
  }
  return result;
}

/// An arithmetic task over Z/pZ with p prime.
class ModTask {
 public:
  ModTask(Op op, int p) : op_(op), p_(p) {
    if (!is_prime(p)) {
      throw std::invalid_argument("modulus p=" + std::to_string(p) + " is not prime");
    }
  }

  Op op() const noexcept { return op_; }
  int p() const noexcept { return p_; }
  int vocab_size() const noexcept { return p_ + 2; }
  int op_token() const noexcept { return p_; }
  int eq_token() const noexcept { return p_ + 1; }
  int b_min() const noexcept { return op_ == Op::Div ? 1 : 0; }

  /// Result of the operation; b must be invertible for Div.
  int apply(int a, int b) const {
    const long long p = p_;
    switch (op_) {
      case Op::Add: return static_cast<int>((a + b) % p);
      case Op::Mul: return static_cast<int>(1LL * a * b % p);
      case Op::Div:
        if (b % p_ == 0) throw std::invalid_argument("division by zero mod p");
        return static_cast<int>(1LL * a * pow_mod(b, p - 2, p) % p);
      case Op::SumSquares: return static_cast<int>((1LL * a * a + 1LL * b * b) % p);
    }
    return 0;
  }

  std::size_t domain_size() const noexcept {
    return static_cast<std::size_t>(p_) * static_cast<std::size_t>(p_ - b_min());
  }

  friend bool operator==(const ModTask&, const ModTask&) = default;

 private:
  Op op_;
  int p_;
};

struct Example {
  std::array<int, 4> tokens{};  // [a, op, b, eq]
  int label = 0;

  int a() const noexcept { return tokens[0]; }
  int b() const noexcept { return tokens[2]; }
  friend bool operator==(const Example&, const Example&) = default;
};

/// All (a, b) pairs of the task's domain in row-major order.
inline std::vector<Example> enumerate_examples(const ModTask& task) {
  std::vector<Example> out;
  out.reserve(task.domain_size());
  for (int a = 0; a < task.p(); ++a) {
    for (int b = task.b_min(); b < task.p(); ++b) {
      out.push_back(Example{{a, task.op_token(), b, task.eq_token()}, task.apply(a, b)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

enum class SplitStrategy { Random, Uniform, Skewed };

inline std::string_view strategy_name(SplitStrategy s) {
  switch (s) {
    case SplitStrategy::Random: return "random";
    case SplitStrategy::Uniform: return "uniform";
    case SplitStrategy::Skewed: return "skewed";
  }
  return "?";
}

inline SplitStrategy parse_split_strategy(std::string_view s) {
  if (s == "random") return SplitStrategy::Random;
  if (s == "uniform") return SplitStrategy::Uniform;
  if (s == "skewed") return SplitStrategy::Skewed;
  throw std::invalid_argument("unknown split strategy '" + std::string(s) + "'");
}

struct SplitSpec {
  SplitStrategy strategy = SplitStrategy::Random;
  double test_frac = 0.2;
  double train_frac_total = 0.30;
  double skew_exponent = 1.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(test_frac > 0.0 && test_frac < 1.0)) {
      throw std::invalid_argument("test_frac must lie in (0, 1)");
    }
    if (!(train_frac_total > 0.0 && train_frac_total <= 1.0 - test_frac + 1e-12)) {
      throw std::invalid_argument("train_frac_total must lie in (0, 1 - test_frac]");
    }
    if (!(skew_exponent >= 0.0) || !std::isfinite(skew_exponent)) {
      throw std::invalid_argument("skew_exponent must be finite and >= 0");
    }
  }
};

struct Split {
  int p = 0;
  std::vector<Example> train;
  std::vector<Example> test;
  // Positions of the examples in the enumeration the split was drawn from.
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> test_index;
  // Occurrences of each token over all train sequences (sums to 4 |train|).
  std::vector<long long> token_freq;

  int vocab_size() const noexcept { return p + 2; }
};

/// floor(frac * n), tolerant to representation error just below an integer.
inline std::size_t fraction_count(double frac, std::size_t n) {
  return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + 1e-9));
}

/// Fixed permutation of the a-values used to rank them for the power law:
/// entry r is the a-value with rank r.
inline std::vector<int> skew_permutation(int p, std::uint64_t seed) {
  std::vector<int> perm(static_cast<std::size_t>(p));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix_seed(seed, stream::kSkewPerm));
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

/// Normalized power-law weight of every a-value: (rank(a)+1)^(-exponent).
inline std::vector<double> skew_weights(int p, double exponent, std::uint64_t seed) {
  const auto perm = skew_permutation(p, seed);
  std::vector<double> w(static_cast<std::size_t>(p));
  double total = 0.0;
  for (int r = 0; r < p; ++r) {
    const double x = std::pow(static_cast<double>(r + 1), -exponent);
    w[static_cast<std::size_t>(perm[static_cast<std::size_t>(r)])] = x;
    total += x;
  }
  for (double& x : w) x /= total;
  return w;
}

namespace detail {

// Picks `count` pairs so that each row and column stays within its quota.
// Greedy random fill followed by augmenting paths (bipartite b-matching).
class StratifiedSelector {
 public:
  StratifiedSelector(std::vector<int> pair_row, std::vector<int> pair_col, int rows, int cols)
      : row_(std::move(pair_row)), col_(std::move(pair_col)),
        row_pairs_(static_cast<std::size_t>(rows)), col_pairs_(static_cast<std::size_t>(cols)) {
    for (std::size_t e = 0; e < row_.size(); ++e) {
      row_pairs_[static_cast<std::size_t>(row_[e])].push_back(e);
      col_pairs_[static_cast<std::size_t>(col_[e])].push_back(e);
    }
  }

  std::vector<char> select(std::size_t count, const std::vector<int>& row_quota,
                           const std::vector<int>& col_quota, Rng& rng) {
    const std::size_t rows = row_pairs_.size(), cols = col_pairs_.size();
    std::vector<char> chosen(row_.size(), 0);
    std::vector<int> row_load(rows, 0), col_load(cols, 0);
    std::vector<std::size_t> order(row_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t total = 0;
    for (std::size_t e : order) {
      if (total == count) break;
      const auto r = static_cast<std::size_t>(row_[e]), c = static_cast<std::size_t>(col_[e]);
      if (row_load[r] < row_quota[r] && col_load[c] < col_quota[c]) {
        chosen[e] = 1;
        ++row_load[r];
        ++col_load[c];
        ++total;
      }
    }
    while (total < count && augment(chosen, row_load, col_load, row_quota, col_quota)) ++total;
    if (total < count) return {};
    return chosen;
  }

 private:
  bool augment(std::vector<char>& chosen, std::vector<int>& row_load, std::vector<int>& col_load,
               const std::vector<int>& row_quota, const std::vector<int>& col_quota) {
    const std::size_t rows = row_pairs_.size(), cols = col_pairs_.size();
    constexpr std::size_t kNone = static_cast<std::size_t>(-1);
    std::vector<std::size_t> row_via(rows, kNone), col_via(cols, kNone);
    std::vector<char> row_seen(rows, 0), col_seen(cols, 0);
    std::deque<std::size_t> queue;  // rows only; columns are expanded inline
    for (std::size_t r = 0; r < rows; ++r) {
      if (row_load[r] < row_quota[r]) {
        row_seen[r] = 1;
        queue.push_back(r);
      }
    }
    while (!queue.empty()) {
      const std::size_t r = queue.front();
      queue.pop_front();
      for (std::size_t e : row_pairs_[r]) {
        if (chosen[e]) continue;
        const auto c = static_cast<std::size_t>(col_[e]);
        if (col_seen[c]) continue;
        col_seen[c] = 1;
        col_via[c] = e;
        if (col_load[c] < col_quota[c]) {
          // Flip the alternating path back to its source row.
          std::size_t cc = c;
          ++col_load[c];
          while (true) {
            const std::size_t add = col_via[cc];
            chosen[add] = 1;
            const auto rr = static_cast<std::size_t>(row_[add]);
            if (row_via[rr] == kNone) {
              ++row_load[rr];
              break;
            }
            const std::size_t drop = row_via[rr];
            chosen[drop] = 0;
            cc = static_cast<std::size_t>(col_[drop]);
          }
          return true;
        }
        for (std::size_t back : col_pairs_[c]) {
          if (!chosen[back]) continue;
          const auto r2 = static_cast<std::size_t>(row_[back]);
          if (row_seen[r2]) continue;
          row_seen[r2] = 1;
          row_via[r2] = back;
          queue.push_back(r2);
        }
      }
    }
    return false;
  }

  std::vector<int> row_, col_;
  std::vector<std::vector<std::size_t>> row_pairs_, col_pairs_;
};

inline std::vector<int> spread_quota(std::size_t total, int bins, int slack, Rng& rng) {
  std::vector<int> q(static_cast<std::size_t>(bins),
                     static_cast<int>(total / static_cast<std::size_t>(bins)) + slack);
  if (slack == 0) {
    std::vector<std::size_t> idx(q.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < total % static_cast<std::size_t>(bins); ++i) ++q[idx[i]];
  }
  return q;
}

}  // namespace detail

/// Partitions an enumeration into disjoint train/test sets.
///
/// The test set is a uniform random subset of size floor(test_frac * N). The
/// train set (size floor(train_frac_total * N)) is drawn from the remainder:
/// Random picks uniformly, Uniform balances every a-row and b-column to within
/// one example of n_train/p, Skewed draws a-rows from a power law over a
/// seeded ranking of the a-values and then pairs uniformly within the row.
inline Split split(const std::vector<Example>& examples, const SplitSpec& spec) {
  spec.validate();
  if (examples.size() < 10) throw std::invalid_argument("split needs at least 10 examples");
  const int p = examples.front().tokens[1];
  for (const auto& ex : examples) {
    if (ex.tokens[1] != p || ex.tokens[3] != p + 1) {
      throw std::invalid_argument("examples come from different tasks");
    }
  }
  const std::size_t n = examples.size();
  const std::size_t n_test = fraction_count(spec.test_frac, n);
  const std::size_t n_train = fraction_count(spec.train_frac_total, n);
  if (n_test == 0 || n_train == 0 || n_test + n_train > n) {
    throw std::invalid_argument("split fractions leave an empty or overlapping partition");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng test_rng(mix_seed(spec.seed, stream::kSplitTest));
  std::shuffle(order.begin(), order.end(), test_rng);
  std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(rest.begin(), rest.end());

  Rng rng(mix_seed(spec.seed, stream::kSplitTrain));
  std::vector<std::size_t> train_idx;
  train_idx.reserve(n_train);

  switch (spec.strategy) {
    case SplitStrategy::Random: {
      std::shuffle(rest.begin(), rest.end(), rng);
      train_idx.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_train));
      break;
    }
    case SplitStrategy::Uniform: {
      if (n_train < static_cast<std::size_t>(p)) {
        throw std::invalid_argument("uniform stratification impossible: n_train=" +
                                    std::to_string(n_train) + " < p=" + std::to_string(p));
      }
      int b_lo = p;
      for (const auto& ex : examples) b_lo = std::min(b_lo, ex.b());
      const int cols = p - b_lo;
      std::vector<int> pr, pc;
      for (std::size_t i : rest) {
        pr.push_back(examples[i].a());
        pc.push_back(examples[i].b() - b_lo);
      }
      detail::StratifiedSelector selector(pr, pc, p, cols);
      std::vector<char> chosen;
      for (int slack = 0; slack <= 1 && chosen.empty(); ++slack) {
        auto rq = detail::spread_quota(n_train, p, slack, rng);
        auto cq = detail::spread_quota(n_train, cols, slack, rng);
        chosen = selector.select(n_train, rq, cq, rng);
      }
      if (chosen.empty()) {
        throw std::invalid_argument("uniform stratification impossible for this test split");
      }
      for (std::size_t e = 0; e < rest.size(); ++e) {
        if (chosen[e]) train_idx.push_back(rest[e]);
      }
      std::shuffle(train_idx.begin(), train_idx.end(), rng);
      break;
    }
    case SplitStrategy::Skewed: {
      std::vector<std::vector<std::size_t>> rows(static_cast<std::size_t>(p));
      for (std::size_t i : rest) rows[static_cast<std::size_t>(examples[i].a())].push_back(i);
      for (auto& r : rows) std::shuffle(r.begin(), r.end(), rng);
      auto weights = skew_weights(p, spec.skew_exponent, spec.seed);
      for (std::size_t a = 0; a < rows.size(); ++a) {
        if (rows[a].empty()) weights[a] = 0.0;
      }
      std::discrete_distribution<int> pick(weights.begin(), weights.end());
      while (train_idx.size() < n_train) {
        const auto a = static_cast<std::size_t>(pick(rng));
        train_idx.push_back(rows[a].back());
        rows[a].pop_back();
        if (rows[a].empty()) {
          weights[a] = 0.0;
          pick = std::discrete_distribution<int>(weights.begin(), weights.end());
        }
      }
      break;
    }
  }

  Split s;
  s.p = p;
  s.train_index = std::move(train_idx);
  s.test_index = std::move(test_idx);
  s.train.reserve(s.train_index.size());
  s.test.reserve(s.test_index.size());
  for (std::size_t i : s.train_index) s.train.push_back(examples[i]);
  for (std::size_t i : s.test_index) s.test.push_back(examples[i]);
  s.token_freq.assign(static_cast<std::size_t>(p + 2), 0);
  for (const auto& ex : s.train) {
    for (int t : ex.tokens) ++s.token_freq[static_cast<std::size_t>(t)];
  }
  return s;
}

/// Per-token probability q_i that one uniformly drawn train example contains token i.
inline std::vector<double> token_occurrence_rate(const Split& s) {
  std::vector<double> q(static_cast<std::size_t>(s.vocab_size()), 0.0);
  if (s.train.empty()) return q;
  for (const auto& ex : s.train) {
    std::array<int, 4> t = ex.tokens;
    std::sort(t.begin(), t.end());
    const auto last = std::unique(t.begin(), t.end());
    for (auto it = t.begin(); it != last; ++it) q[static_cast<std::size_t>(*it)] += 1.0;
  }
  for (double& x : q) x /= static_cast<double>(s.train.size());
  return q;
}

/// Probability that token i appears in a batch of `batch_size` examples drawn
/// uniformly with replacement: 1 - (1 - q_i)^B.
inline std::vector<double> inclusion_probability(const Split& s, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  auto q = token_occurrence_rate(s);
  for (double& x : q) x = 1.0 - std::pow(1.0 - x, batch_size);
  return q;
}

// ---------------------------------------------------------------------------
// Cyclic-group structure

/// Smallest primitive root modulo p.
inline int find_generator(int p) {
  if (!is_prime(p) || p < 3) throw std::invalid_argument("find_generator needs a prime p >= 3");
  for (int g = 2; g < p; ++g) {
    long long x = 1;
    int order = 0;
    do {
      x = x * g % p;
      ++order;
    } while (x != 1);
    if (order == p - 1) return g;
  }
  throw std::logic_error("no generator found");  // unreachable for prime p
}

/// phi(k) = g^k mod p for k in 0..p-2: (Z_{p-1}, +) -> (Z_p^*, *).
inline std::vector<int> isomorphism_map(int p) {
  const int g = find_generator(p);
  std::vector<int> phi(static_cast<std::size_t>(p - 1));
  long long x = 1;
  for (auto& v : phi) {
    v = static_cast<int>(x);
    x = x * g % p;
  }
  return phi;
}

// ---------------------------------------------------------------------------
// Text format: header "p=<p> op=<name>", then "a op b eq label" per line.

inline void write_dataset(std::ostream& os, const ModTask& task, const std::vector<Example>& xs) {
  os << "p=" << task.p() << " op=" << op_name(task.op()) << '\n';
  for (const auto& ex : xs) {
    os << ex.tokens[0] << ' ' << ex.tokens[1] << ' ' << ex.tokens[2] << ' ' << ex.tokens[3] << ' '
       << ex.label << '\n';
  }
}

struct Dataset {
  ModTask task;
  std::vector<Example> examples;
};

inline Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("dataset: missing header line");
  int p = 0;
  std::string op_field;
  {
    std::istringstream hs(line);
    std::string pf;
    hs >> pf >> op_field;
    if (pf.rfind("p=", 0) != 0 || op_field.rfind("op=", 0) != 0) {
      throw std::runtime_error("dataset: malformed header '" + line + "'");
    }
    p = static_cast<int>(parse_int(std::string_view(pf).substr(2)));
  }
  Dataset ds{ModTask(parse_op(std::string_view(op_field).substr(3)), p), {}};
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Example ex;
    for (int& t : ex.tokens) ls >> t;
    ls >> ex.label;
    std::string extra;
    if (!ls || (ls >> extra)) {
      throw std::runtime_error("dataset: malformed line " + std::to_string(lineno));
    }
    const auto& task = ds.task;
    if (ex.tokens[1] != task.op_token() || ex.tokens[3] != task.eq_token() || ex.a() < 0 ||
        ex.a() >= p || ex.b() < task.b_min() || ex.b() >= p ||
        ex.label != task.apply(ex.a(), ex.b())) {
      throw std::runtime_error("dataset: inconsistent example on line " + std::to_string(lineno));
    }
    ds.examples.push_back(ex);
  }
  return ds;
}

}  // namespace groklab
