#pragma once

// Training loop, grokking detection and grid sweeps.

#include "groklab/diag.hpp"
#include "groklab/modspace.hpp"
#include "groklab/net.hpp"
#include "groklab/optim.hpp"
#include "groklab/sampler.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

namespace groklab {

struct RunConfig {
  Op op = Op::Mul;
  int p = 97;
  SplitSpec split;  // split.seed is overwritten by `seed`
  std::optional<BatchStrategy> batch_strategy;  // unset: follows the split strategy
  int batch_size = 512;
  double gamma = 1.0;
  int bound_window = 50;
  int embed_dim = 128;
  int hidden = -1;  // -1: 4 * embed_dim
  bool embed = true;
  InputEncoding encoding = InputEncoding::Scaled;
  double embed_scale = 1.0;
  OptConfig opt;
  int epochs = 1000;
  int eval_every = 10;
  int diag_every = 0;  // 0 = off
  DiagOptions diag;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir;  // empty: nothing written
  int checkpoint_every = 0;       // 0: final checkpoint only
  bool record_wall_time = false;
  bool token_log = true;
  bool early_stop = false;
  double tau = 0.95;
  int sustain = 3;

  ModTask task() const { return ModTask(op, p); }

  BatchStrategy effective_batch_strategy() const {
    if (batch_strategy) return *batch_strategy;
    switch (split.strategy) {
      case SplitStrategy::Random: return BatchStrategy::Random;
      case SplitStrategy::Uniform: return BatchStrategy::Uniform;
      case SplitStrategy::Skewed: return BatchStrategy::Skewed;
    }
    return BatchStrategy::Random;
  }

  MlpDims dims() const {
    auto d = MlpDims::for_task(task(), embed_dim, hidden, embed);
    d.encoding = encoding;
    return d;
  }

  void validate() const {
    (void)task();
    split.validate();
    opt.validate();
    dims().validate();
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
    if (diag_every < 0) throw std::invalid_argument("diag_every must be >= 0");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (bound_window < 1) throw std::invalid_argument("bound_window must be >= 1");
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
    if (!(embed_scale >= 0.0) || !std::isfinite(embed_scale)) {
      throw std::invalid_argument("embed_scale must be finite and >= 0");
    }
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in (0, 1]");
    if (sustain < 1) throw std::invalid_argument("sustain must be >= 1");
    if (diag_every > 0 && diag.hessian && (diag.power_iters < 1 || !(diag.power_tol > 0.0))) {
      throw std::invalid_argument("power iteration settings must be positive");
    }
  }
};

struct EvalRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  std::optional<double> wall_ms;
  std::optional<DiagReport> diag;
};

struct GrokMetrics {
  std::optional<int> t_fit, t_gen, delay;
};

struct TrainLog {
  std::vector<EvalRecord> records;
  GrokMetrics grok;
  bool aborted = false;
  std::string error;
  int last_good_epoch = -1;
  int epochs_run = 0;
  bool stopped_early = false;
  std::size_t train_size = 0, test_size = 0;
  std::vector<std::string> files;

  const EvalRecord* last() const { return records.empty() ? nullptr : &records.back(); }
};

/// First epoch of a run of `sustain` consecutive records satisfying `hit`.
template <class Pred>
std::optional<int> first_sustained(const std::vector<EvalRecord>& recs, int sustain, Pred hit) {
  int run = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    run = hit(recs[i]) ? run + 1 : 0;
    if (run == sustain) return recs[i + 1 - static_cast<std::size_t>(sustain)].epoch;
  }
  return std::nullopt;
}

inline GrokMetrics grokking_metrics(const std::vector<EvalRecord>& recs, double tau = 0.95,
                                    int sustain = 3) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in (0, 1]");
  if (sustain < 1) throw std::invalid_argument("sustain must be >= 1");
  GrokMetrics g;
  g.t_fit = first_sustained(recs, sustain, [&](const EvalRecord& r) { return r.train_acc >= tau; });
  g.t_gen = first_sustained(recs, sustain, [&](const EvalRecord& r) { return r.val_acc >= tau; });
  if (g.t_fit && g.t_gen) g.delay = *g.t_gen - *g.t_fit;
  return g;
}

inline GrokMetrics grokking_metrics(const TrainLog& log, double tau = 0.95, int sustain = 3) {
  return grokking_metrics(log.records, tau, sustain);
}

inline constexpr const char* kMetricsHeader =
    "epoch,train_loss,train_acc,val_acc,sigma_max_E,sigma_max_W,lambda_max_E,lambda_max_W,"
    "rank_EW,wall_ms";

inline void write_metrics_row(std::ostream& os, const EvalRecord& r) {
  os << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.train_acc) << ','
     << format_double(r.val_acc) << ',';
  if (r.diag) {
    const auto& d = *r.diag;
    os << detail::field(d.sigma_max_E) << ',' << detail::field(d.sigma_max_W) << ','
       << detail::field(d.lambda_max_E) << ',' << detail::field(d.lambda_max_W) << ','
       << detail::field(d.rank_EW);
  } else {
    os << ",,,,";
  }
  os << ',';
  if (r.wall_ms) os << format_double(*r.wall_ms);
  os << '\n';
}

inline nlohmann::json config_json(const RunConfig& c) {
  nlohmann::json j;
  j["op"] = std::string(op_name(c.op));
  j["p"] = c.p;
  j["split"] = std::string(strategy_name(c.split.strategy));
  j["test_frac"] = c.split.test_frac;
  j["train_frac"] = c.split.train_frac_total;
  j["skew_exponent"] = c.split.skew_exponent;
  j["batch_strategy"] = std::string(batch_strategy_name(c.effective_batch_strategy()));
  j["batch"] = c.batch_size;
  j["gamma"] = c.gamma;
  j["bound_window"] = c.bound_window;
  j["embed"] = c.embed;
  j["encoding"] = c.encoding == InputEncoding::Scaled ? "scaled" : "raw";
  j["embed_dim"] = c.embed_dim;
  j["hidden"] = c.dims().hidden;
  j["embed_scale"] = c.embed_scale;
  j["opt"] = std::string(opt_name(c.opt.kind));
  j["lr"] = c.opt.lr;
  j["wd"] = c.opt.weight_decay;
  j["beta1"] = c.opt.beta1;
  j["beta2"] = c.opt.beta2;
  j["adam_eps"] = c.opt.eps;
  j["decay"] = c.opt.coupled_decay ? "coupled" : "decoupled";
  j["strict_sparse"] = c.opt.strict_sparse;
  j["ratio"] = c.opt.ratio;
  j["ratio_mode"] = c.opt.ratio_mode == RatioMode::Fixed ? "fixed" : "adaptive";
  j["recompute_every"] = c.opt.recompute_every;
  j["c_min"] = c.opt.c_min;
  j["c_max"] = c.opt.c_max;
  j["epochs"] = c.epochs;
  j["eval_every"] = c.eval_every;
  j["diag_every"] = c.diag_every;
  j["power_iters"] = c.diag.power_iters;
  j["power_tol"] = c.diag.power_tol;
  j["seed"] = c.seed;
  j["early_stop"] = c.early_stop;
  j["tau"] = c.tau;
  j["sustain"] = c.sustain;
  return j;
}

namespace detail {

inline nlohmann::json opt_int(const std::optional<int>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class F>
void write_file(const std::filesystem::path& path, F&& body) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  body(os);
  os.flush();
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline void save_checkpoint(const std::filesystem::path& dir, const std::string& stem,
                            const MlpParams& params, const OptState& st, OptKind kind,
                            std::vector<std::string>& files) {
  write_file(dir / (stem + ".params"), [&](std::ostream& os) { save_params(os, params); });
  write_file(dir / (stem + ".opt"), [&](std::ostream& os) { save_opt_state(os, st, kind); });
  files.push_back(stem + ".params");
  files.push_back(stem + ".opt");
}

}  // namespace detail

inline void write_summary(std::ostream& os, const RunConfig& cfg, const TrainLog& log) {
  nlohmann::json j;
  j["config"] = config_json(cfg);
  j["mode"] = cfg.embed ? "embedding" : "no_embedding";
  j["train_size"] = log.train_size;
  j["test_size"] = log.test_size;
  j["epochs_run"] = log.epochs_run;
  j["stopped_early"] = log.stopped_early;
  j["aborted"] = log.aborted;
  if (log.aborted) j["error"] = log.error;
  j["last_good_epoch"] = log.last_good_epoch;
  j["grokking"] = {{"t_fit", detail::opt_int(log.grok.t_fit)},
                   {"t_gen", detail::opt_int(log.grok.t_gen)},
                   {"delay", detail::opt_int(log.grok.delay)},
                   {"generalized", log.grok.t_gen.has_value()},
                   {"tau", cfg.tau},
                   {"sustain", cfg.sustain}};
  if (const auto* r = log.last()) {
    j["final"] = {{"epoch", r->epoch},
                  {"train_loss", r->train_loss},
                  {"train_acc", r->train_acc},
                  {"val_acc", r->val_acc}};
  }
  auto files = log.files;
  files.push_back("summary.json");
  j["files"] = files;
  os << j.dump(2) << '\n';
}

/// Runs one experiment. A non-finite loss or update stops the run with
/// `aborted` set; everything logged up to that point is still written.
inline TrainLog train(const RunConfig& cfg_in) {
  RunConfig cfg = cfg_in;
  cfg.validate();
  cfg.split.seed = cfg.seed;
  const ModTask task = cfg.task();
  const Split sp = split(enumerate_examples(task), cfg.split);
  const MlpDims dims = cfg.dims();

  TrainLog log;
  log.train_size = sp.train.size();
  log.test_size = sp.test.size();

  MlpParams params = init_params(dims, cfg.seed, InitOptions{cfg.embed_scale});
  OptState st = make_opt_state(params, cfg.opt);
  BatchPlan plan;
  plan.strategy = cfg.effective_batch_strategy();
  plan.batch_size = cfg.batch_size;
  plan.seed = cfg.seed;
  plan.gamma = cfg.gamma;
  plan.skew_exponent = cfg.split.skew_exponent;
  plan.skew_seed = cfg.seed;
  GradientBoundTracker tracker(dims.vocab, cfg.bound_window);
  const auto probe = make_probe_batch(sp.test, cfg.seed);
  DiagOptions dopt = cfg.diag;
  dopt.seed = cfg.seed;

  const bool writing = !cfg.out_dir.empty();
  std::ofstream metrics, diag_csv, tokens;
  const int fft_len = (task.p() + 1) / 2;
  if (writing) {
    std::filesystem::create_directories(cfg.out_dir);
    auto open = [&](std::ofstream& f, const char* name) {
      f.open(cfg.out_dir / name, std::ios::binary);
      if (!f) throw std::runtime_error("cannot open " + (cfg.out_dir / name).string());
      log.files.emplace_back(name);
    };
    open(metrics, "metrics.csv");
    metrics << kMetricsHeader << '\n';
    if (cfg.diag_every > 0) {
      open(diag_csv, "diagnostics.csv");
      write_diag_header(diag_csv, dims.embed ? fft_len : 0);
    }
    if (cfg.token_log) {
      open(tokens, "tokens.csv");
      tokens << "epoch,token,batch_count,pstar\n";
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<long long> epoch_counts(static_cast<std::size_t>(dims.vocab), 0);
  std::vector<double> pstar(static_cast<std::size_t>(dims.vocab),
                            1.0 / static_cast<double>(dims.vocab));

  auto evaluate_epoch = [&](int epoch) {
    EvalRecord r;
    r.epoch = epoch;
    const auto tr = evaluate(params, sp.train);
    r.train_loss = tr.loss;
    r.train_acc = tr.accuracy;
    r.val_acc = evaluate(params, sp.test).accuracy;
    if (!std::isfinite(r.train_loss)) throw NonFiniteError("non-finite training loss");
    if (cfg.diag_every > 0 && epoch % cfg.diag_every == 0) {
      r.diag = compute_diag_report(params, probe, epoch, dopt);
      if (writing) write_diag_row(diag_csv, *r.diag, dims.embed ? fft_len : 0);
    }
    if (cfg.record_wall_time) {
      r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    }
    if (writing) {
      write_metrics_row(metrics, r);
      metrics.flush();
      if (cfg.token_log && epoch > 0) {
        for (std::size_t t = 0; t < epoch_counts.size(); ++t) {
          tokens << epoch << ',' << t << ',' << epoch_counts[t] << ',' << format_double(pstar[t])
                 << '\n';
        }
      }
    }
    log.records.push_back(std::move(r));
  };
  auto is_eval_epoch = [&](int e) {
    return e == 0 || e == cfg.epochs || e % cfg.eval_every == 0 ||
           (cfg.diag_every > 0 && e % cfg.diag_every == 0);
  };

  try {
    evaluate_epoch(0);
    log.last_good_epoch = 0;
    const int grace = static_cast<int>(std::ceil(0.1 * cfg.epochs));
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      if (plan.strategy == BatchStrategy::FrequencyAware) {
        plan.bounds = tracker.bounds();
        pstar = solve_entropy_probs(plan.bounds, plan.gamma);
      }
      std::fill(epoch_counts.begin(), epoch_counts.end(), 0);
      for (const auto& batch : make_batches(sp.train, plan, static_cast<std::uint64_t>(epoch))) {
        for (const auto& ex : batch) {
          for (int t : ex.tokens) ++epoch_counts[static_cast<std::size_t>(t)];
        }
        auto [loss, g] = loss_and_grad(params, batch);
        if (!std::isfinite(loss)) throw NonFiniteError("non-finite batch loss");
        if (plan.strategy == BatchStrategy::FrequencyAware) tracker.record(g);
        opt_step(params, g, cfg.opt, st);
      }
      log.epochs_run = epoch;
      const bool stop = [&] {
        if (!cfg.early_stop) return false;
        const auto g = grokking_metrics(log.records, cfg.tau, cfg.sustain);
        return g.t_gen && epoch >= *g.t_gen + grace;
      }();
      if (is_eval_epoch(epoch) || stop) evaluate_epoch(epoch);
      log.last_good_epoch = epoch;
      if (writing && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 &&
          epoch != cfg.epochs) {
        detail::save_checkpoint(cfg.out_dir, "epoch_" + std::to_string(epoch), params, st,
                                cfg.opt.kind, log.files);
      }
      if (stop) {
        log.stopped_early = epoch < cfg.epochs;
        break;
      }
    }
  } catch (const NonFiniteError& e) {
    log.aborted = true;
    log.error = e.what();
  }

  log.grok = grokking_metrics(log.records, cfg.tau, cfg.sustain);
  if (writing) {
    metrics.flush();
    if (!log.aborted) detail::save_checkpoint(cfg.out_dir, "final", params, st, cfg.opt.kind, log.files);
    detail::write_file(cfg.out_dir / "summary.json",
                       [&](std::ostream& os) { write_summary(os, cfg, log); });
  }
  return log;
}

// ---------------------------------------------------------------------------
// Sweeps

inline const std::vector<std::string>& sweep_axes() {
  static const std::vector<std::string> axes = {
      "ratio", "batch", "lr", "wd", "strategy", "batch_strategy", "op", "p", "embed_scale",
      "gamma", "train_frac", "skew_exponent", "epochs", "embed_dim"};
  return axes;
}

inline void apply_axis(RunConfig& c, const std::string& axis, const std::string& v) {
  if (axis == "ratio") c.opt.ratio = parse_double(v);
  else if (axis == "batch") c.batch_size = static_cast<int>(parse_int(v));
  else if (axis == "lr") c.opt.lr = parse_double(v);
  else if (axis == "wd") c.opt.weight_decay = parse_double(v);
  else if (axis == "strategy") c.split.strategy = parse_split_strategy(v);
  else if (axis == "batch_strategy") c.batch_strategy = parse_batch_strategy(v);
  else if (axis == "op") c.op = parse_op(v);
  else if (axis == "p") c.p = static_cast<int>(parse_int(v));
  else if (axis == "embed_scale") c.embed_scale = parse_double(v);
  else if (axis == "gamma") c.gamma = parse_double(v);
  else if (axis == "train_frac") c.split.train_frac_total = parse_double(v);
  else if (axis == "skew_exponent") c.split.skew_exponent = parse_double(v);
  else if (axis == "epochs") c.epochs = static_cast<int>(parse_int(v));
  else if (axis == "embed_dim") c.embed_dim = static_cast<int>(parse_int(v));
  else throw std::invalid_argument("unknown sweep axis '" + axis + "'");
}

struct SweepRun {
  std::string value;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  GrokMetrics grok;
  double train_acc = std::numeric_limits<double>::quiet_NaN();
  double val_acc = std::numeric_limits<double>::quiet_NaN();
  int epochs_run = 0;
};

struct SweepStat {
  double median = 0.0, min = 0.0, max = 0.0;  // +inf marks "never reached"
};

/// Median, min and max where missing values count as +inf.
inline SweepStat sweep_stat(std::vector<double> xs) {
  SweepStat s;
  if (xs.empty()) return s;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  s.median = n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
  s.min = xs.front();
  s.max = xs.back();
  return s;
}

struct SweepAggregate {
  std::string value;
  int runs = 0, ok = 0, generalized = 0;
  SweepStat t_fit, t_gen, delay, train_acc, val_acc;
};

struct SweepResult {
  std::string axis;
  std::vector<SweepRun> runs;  // value-major, then seed
  std::vector<SweepAggregate> aggregates;
};

inline SweepAggregate aggregate(const std::string& value, const std::vector<SweepRun>& runs) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  SweepAggregate a;
  a.value = value;
  std::vector<double> fit, gen, delay, tr, va;
  for (const auto& r : runs) {
    if (r.value != value) continue;
    ++a.runs;
    if (!r.ok) {
      fit.push_back(inf);
      gen.push_back(inf);
      delay.push_back(inf);
      continue;
    }
    ++a.ok;
    if (r.grok.t_gen) ++a.generalized;
    fit.push_back(r.grok.t_fit ? *r.grok.t_fit : inf);
    gen.push_back(r.grok.t_gen ? *r.grok.t_gen : inf);
    delay.push_back(r.grok.delay ? *r.grok.delay : inf);
    tr.push_back(r.train_acc);
    va.push_back(r.val_acc);
  }
  a.t_fit = sweep_stat(fit);
  a.t_gen = sweep_stat(gen);
  a.delay = sweep_stat(delay);
  a.train_acc = sweep_stat(tr);
  a.val_acc = sweep_stat(va);
  return a;
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& s) {
  auto num = [](double v) { return std::isfinite(v) ? format_double(v) : std::string(); };
  auto opt = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string(); };
  os << "kind," << s.axis
     << ",seed,status,t_fit,t_gen,delay,train_acc,val_acc,runs,generalized,"
        "t_fit_min,t_fit_max,t_gen_min,t_gen_max,val_acc_min,val_acc_max,error\n";
  for (const auto& r : s.runs) {
    os << "run," << r.value << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ','
       << opt(r.grok.t_fit) << ',' << opt(r.grok.t_gen) << ',' << opt(r.grok.delay) << ','
       << num(r.train_acc) << ',' << num(r.val_acc) << ",,,,,,,,,";
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << err << '\n';
  }
  for (const auto& a : s.aggregates) {
    os << "median," << a.value << ",,," << num(a.t_fit.median) << ',' << num(a.t_gen.median) << ','
       << num(a.delay.median) << ',' << num(a.train_acc.median) << ',' << num(a.val_acc.median)
       << ',' << a.runs << ',' << a.generalized << ',' << num(a.t_fit.min) << ','
       << num(a.t_fit.max) << ',' << num(a.t_gen.min) << ',' << num(a.t_gen.max) << ','
       << num(a.val_acc.min) << ',' << num(a.val_acc.max) << ",\n";
  }
}

/// Runs every (value, seed) pair, `jobs` at a time. Failed runs are recorded
/// and do not stop the sweep. With an output directory each run writes to
/// <out>/<axis>_<value>/seed<seed>/ and the table goes to <out>/sweep.csv.
inline SweepResult sweep(const RunConfig& base, const std::string& axis,
                         const std::vector<std::string>& values,
                         const std::vector<std::uint64_t>& seeds, int jobs = 1) {
  if (values.empty()) throw std::invalid_argument("sweep needs at least one value");
  if (seeds.empty()) throw std::invalid_argument("sweep needs at least one seed");
  if (std::find(sweep_axes().begin(), sweep_axes().end(), axis) == sweep_axes().end()) {
    throw std::invalid_argument("unknown sweep axis '" + axis + "'");
  }
  for (const auto& v : values) {
    RunConfig probe = base;
    apply_axis(probe, axis, v);
  }
  SweepResult res;
  res.axis = axis;
  for (const auto& v : values) {
    for (auto s : seeds) {
      SweepRun r;
      r.value = v;
      r.seed = s;
      res.runs.push_back(std::move(r));
    }
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < res.runs.size(); i = next++) {
      SweepRun& r = res.runs[i];
      try {
        RunConfig c = base;
        apply_axis(c, axis, r.value);
        c.seed = r.seed;
        if (!base.out_dir.empty()) {
          c.out_dir = base.out_dir / (axis + "_" + r.value) / ("seed" + std::to_string(r.seed));
        }
        const TrainLog log = train(c);
        r.ok = !log.aborted;
        r.error = log.error;
        r.grok = log.grok;
        r.epochs_run = log.epochs_run;
        if (const auto* last = log.last()) {
          r.train_acc = last->train_acc;
          r.val_acc = last->val_acc;
        }
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(res.runs.size())));
  std::vector<std::thread> pool;
  for (int k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& v : values) res.aggregates.push_back(aggregate(v, res.runs));
  if (!base.out_dir.empty()) {
    std::filesystem::create_directories(base.out_dir);
    detail::write_file(base.out_dir / "sweep.csv", [&](std::ostream& os) { write_sweep_csv(os, res); });
  }
  return res;
}

}  // namespace groklab
