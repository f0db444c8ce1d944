// groklab: data generation, training, sweeps and checkpoint diagnostics.
//
// Exit codes: 0 ok, 1 usage error, 2 runtime failure.

#include "groklab/diag.hpp"
#include "groklab/trainer.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace groklab;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string default_out() {
  const char* env = std::getenv("GROKLAB_OUT");
  return env && *env ? env : "runs";
}

// Flag values that need translation into RunConfig.
struct RunFlags {
  RunConfig cfg;
  std::string op = "mul", strategy = "random", batch_strategy = "auto", opt = "adam";
  std::string decay = "coupled", ratio_mode = "fixed", encoding = "scaled";
  bool no_embed = false, no_token_log = false;
  std::string out = default_out();
  bool force = false;
};

void add_task_flags(CLI::App* sc, std::string& op, int& p) {
  sc->add_option("--op", op, "Operation")->check(CLI::IsMember({"add", "mul", "div", "sumsq"}));
  sc->add_option("--p", p, "Prime modulus");
}

void add_split_flags(CLI::App* sc, SplitSpec& s, std::string& strategy) {
  sc->add_option("--strategy", strategy, "Train split strategy")
      ->check(CLI::IsMember({"random", "uniform", "skewed"}));
  sc->add_option("--test-frac", s.test_frac, "Fraction of all examples held out for test");
  sc->add_option("--train-frac", s.train_frac_total, "Fraction of all examples used for training");
  sc->add_option("--skew-exponent", s.skew_exponent, "Power-law exponent of the skewed split");
}

void add_run_flags(CLI::App* sc, RunFlags& f) {
  auto& c = f.cfg;
  add_task_flags(sc, f.op, c.p);
  add_split_flags(sc, c.split, f.strategy);
  sc->add_option("--batch-strategy", f.batch_strategy, "Batch strategy (auto follows --strategy)")
      ->check(CLI::IsMember({"auto", "random", "uniform", "skewed", "freq_aware"}));
  sc->add_option("--batch", c.batch_size, "Batch size")->check(CLI::PositiveNumber);
  sc->add_option("--gamma", c.gamma, "Entropy weight of the frequency-aware sampler");
  sc->add_option("--bound-window", c.bound_window, "Steps per token in the gradient-bound window");
  sc->add_option("--embed-dim", c.embed_dim, "Embedding dimension d")->check(CLI::PositiveNumber);
  sc->add_option("--hidden", c.hidden, "Hidden width (-1 = 4d)");
  sc->add_flag("--no-embed", f.no_embed, "Feed token values directly instead of embeddings");
  sc->add_option("--encoding", f.encoding, "Input encoding without embeddings")
      ->check(CLI::IsMember({"scaled", "raw"}));
  sc->add_option("--embed-scale", c.embed_scale, "Multiplier on the initial embedding entries");
  sc->add_option("--opt", f.opt, "Optimizer")->check(CLI::IsMember({"sgd", "adam", "adam_lr"}));
  sc->add_option("--lr", c.opt.lr, "Learning rate");
  sc->add_option("--wd", c.opt.weight_decay, "Weight decay");
  sc->add_option("--beta1", c.opt.beta1, "Adam beta1");
  sc->add_option("--beta2", c.opt.beta2, "Adam beta2");
  sc->add_option("--adam-eps", c.opt.eps, "Adam epsilon");
  sc->add_option("--decay", f.decay, "Adam weight decay form")
      ->check(CLI::IsMember({"coupled", "decoupled"}));
  sc->add_flag("--strict-sparse", c.opt.strict_sparse, "Skip untouched embedding rows entirely");
  sc->add_option("--ratio", c.opt.ratio, "Adam-LR embedding learning-rate ratio c");
  sc->add_option("--ratio-mode", f.ratio_mode, "Adam-LR ratio mode")
      ->check(CLI::IsMember({"fixed", "adaptive"}));
  sc->add_option("--recompute-every", c.opt.recompute_every, "Adaptive ratio recompute period");
  sc->add_option("--c-min", c.opt.c_min, "Adaptive ratio lower clamp");
  sc->add_option("--c-max", c.opt.c_max, "Adaptive ratio upper clamp");
  sc->add_option("--epochs", c.epochs, "Training epochs");
  sc->add_option("--eval-every", c.eval_every, "Epochs between evaluations");
  sc->add_option("--diag-every", c.diag_every, "Epochs between diagnostics (0 = off)");
  sc->add_option("--power-iters", c.diag.power_iters, "Power-method iteration cap");
  sc->add_option("--power-tol", c.diag.power_tol, "Power-method tolerance");
  sc->add_option("--seed", c.seed, "Run seed");
  sc->add_option("--checkpoint-every", c.checkpoint_every, "Epochs between checkpoints (0 = final only)");
  sc->add_flag("--wall-time", c.record_wall_time, "Record wall_ms in the metrics CSV");
  sc->add_flag("--no-token-log", f.no_token_log, "Do not write tokens.csv");
  sc->add_flag("--early-stop", c.early_stop, "Stop 10% of the budget after t_gen");
  sc->add_option("--tau", c.tau, "Accuracy threshold for t_fit and t_gen");
  sc->add_option("--sustain", c.sustain, "Consecutive evaluations required above tau");
  sc->add_option("--out", f.out, "Output root")->envname("GROKLAB_OUT");
  sc->add_flag("--force", f.force, "Overwrite an existing run directory");
}

RunConfig resolve(RunFlags& f) {
  RunConfig c = f.cfg;
  c.op = parse_op(f.op);
  c.split.strategy = parse_split_strategy(f.strategy);
  if (f.batch_strategy != "auto") c.batch_strategy = parse_batch_strategy(f.batch_strategy);
  c.embed = !f.no_embed;
  c.encoding = f.encoding == "raw" ? InputEncoding::Raw : InputEncoding::Scaled;
  c.opt.kind = parse_opt(f.opt);
  c.opt.coupled_decay = f.decay == "coupled";
  c.opt.ratio_mode = f.ratio_mode == "adaptive" ? RatioMode::Adaptive : RatioMode::Fixed;
  c.token_log = !f.no_token_log;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

// Content-named output directory; refuses to reuse a non-empty one without --force.
fs::path claim_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw UsageError(dir.string() + " already exists (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  return dir;
}

template <class F>
void write_to(const fs::path& path, F&& body) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  body(os);
  if (!os.flush()) throw std::runtime_error("write failed: " + path.string());
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Fills options not given on the command line from a `key = value` file whose
// keys are the long flag names without dashes.
void apply_config(CLI::App* sc, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file " + path);
  std::string line;
  for (int lineno = 1; std::getline(is, line); ++lineno) {
    const auto hash = line.find('#');
    const std::string text = trim(std::string_view(line).substr(0, hash));
    if (text.empty()) continue;
    const auto where = path + ":" + std::to_string(lineno);
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw UsageError(where + ": expected key = value");
    const std::string key = trim(std::string_view(text).substr(0, eq));
    std::string value = trim(std::string_view(text).substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    CLI::Option* opt = key == "config" || key == "help" || key == "help-all"
                           ? nullptr
                           : sc->get_option_no_throw("--" + key);
    if (!opt) throw UsageError(where + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    try {
      opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError(where + ": " + key + ": " + e.what());
    }
  }
}

MlpParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  return load_params(is, path);
}

void write_run_plots(const fs::path& dir, const TrainLog& log) {
  svg::Series tr{"train", {}, {}, "#1f77b4"}, va{"val", {}, {}, "#d62728"};
  svg::Series tl{"train loss", {}, {}, "#1f77b4"};
  for (const auto& r : log.records) {
    tr.x.push_back(r.epoch);
    tr.y.push_back(r.train_acc);
    va.x.push_back(r.epoch);
    va.y.push_back(r.val_acc);
    tl.x.push_back(r.epoch);
    tl.y.push_back(r.train_loss);
  }
  write_to(dir / "accuracy.svg", [&](std::ostream& os) {
    svg::line_plot(os, "Accuracy", {tr, va}, true, "epoch", "accuracy", 0.0, 1.0);
  });
  write_to(dir / "loss.svg",
           [&](std::ostream& os) { svg::line_plot(os, "Training loss", {tl}, true, "epoch", "loss"); });
}

// ---------------------------------------------------------------------------

struct DataFlags {
  std::string op = "mul", strategy = "random";
  int p = 97;
  SplitSpec split;
  std::uint64_t seed = 1;
  int batch = 512;
  std::string out = default_out();
  bool force = false;
};

ModTask make_task(const std::string& op, int p) {
  try {
    return ModTask(parse_op(op), p);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

int cmd_data(DataFlags& f) {
  const ModTask task = make_task(f.op, f.p);
  SplitSpec spec = f.split;
  spec.strategy = parse_split_strategy(f.strategy);
  spec.seed = f.seed;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (f.batch < 1) throw UsageError("--batch must be >= 1");
  const auto all = enumerate_examples(task);
  const Split s = split(all, spec);
  const fs::path dir = claim_dir(fs::path(f.out) / ("data_" + f.op + "_p" + std::to_string(f.p) +
                                                    "_" + f.strategy + "_seed" + std::to_string(f.seed)),
                                 f.force);
  write_to(dir / "dataset.txt", [&](std::ostream& os) { write_dataset(os, task, all); });
  write_to(dir / "train.txt", [&](std::ostream& os) { write_dataset(os, task, s.train); });
  write_to(dir / "test.txt", [&](std::ostream& os) { write_dataset(os, task, s.test); });
  auto index_file = [&](const char* name, const std::vector<std::size_t>& idx) {
    write_to(dir / name, [&](std::ostream& os) {
      for (auto i : idx) os << i << '\n';
    });
  };
  index_file("train_index.txt", s.train_index);
  index_file("test_index.txt", s.test_index);
  write_to(dir / "tokens.csv", [&](std::ostream& os) { write_token_histogram(os, s, f.batch); });
  std::cout << dir.string() << ": train " << s.train.size() << ", test " << s.test.size() << '\n';
  return 0;
}

int cmd_train(RunFlags& f) {
  RunConfig c = resolve(f);
  c.out_dir = claim_dir(fs::path(f.out) / (std::string(op_name(c.op)) + "_p" + std::to_string(c.p) +
                                           "_" + std::string(opt_name(c.opt.kind)) + "_seed" +
                                           std::to_string(c.seed)),
                        f.force);
  const TrainLog log = train(c);
  write_run_plots(c.out_dir, log);
  auto show = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string("-"); };
  if (const auto* r = log.last()) {
    std::cout << c.out_dir.string() << ": epoch " << r->epoch << " train_acc " << r->train_acc
              << " val_acc " << r->val_acc << " t_fit " << show(log.grok.t_fit) << " t_gen "
              << show(log.grok.t_gen) << '\n';
  }
  if (log.aborted) {
    std::cerr << "error: training aborted after epoch " << log.last_good_epoch << ": " << log.error
              << '\n';
    return 2;
  }
  return 0;
}

struct SweepFlags {
  std::string axis;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int jobs = 1;
};

int cmd_sweep(RunFlags& f, SweepFlags& s) {
  RunConfig c = resolve(f);
  for (const auto& v : s.values) {
    RunConfig probe = c;
    try {
      apply_axis(probe, s.axis, v);
      probe.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError("--values " + v + ": " + e.what());
    }
  }
  if (s.jobs < 1) throw UsageError("--jobs must be >= 1");
  c.out_dir = claim_dir(fs::path(f.out) / ("sweep_" + std::string(op_name(c.op)) + "_p" +
                                           std::to_string(c.p) + "_" +
                                           std::string(opt_name(c.opt.kind)) + "_" + s.axis),
                        f.force);
  const SweepResult res = sweep(c, s.axis, s.values, s.seeds, s.jobs);
  std::vector<double> med;
  for (const auto& a : res.aggregates) {
    med.push_back(std::isfinite(a.t_gen.median) ? a.t_gen.median : 0.0);
    std::cout << s.axis << '=' << a.value << ": generalized " << a.generalized << '/' << a.runs
              << ", median t_gen "
              << (std::isfinite(a.t_gen.median) ? format_double(a.t_gen.median) : std::string("-"))
              << '\n';
  }
  write_to(c.out_dir / "t_gen.svg", [&](std::ostream& os) {
    svg::bar_chart(os, "Median t_gen per " + s.axis + " value (0 = never)", med, s.axis + " index",
                   "epoch");
  });
  bool all_ok = true;
  for (const auto& r : res.runs) all_ok = all_ok && r.ok;
  return all_ok ? 0 : 2;
}

struct CkptFlags {
  std::string checkpoint;
  std::string out;  // empty: next to the checkpoint
  fs::path dir() const {
    return out.empty() ? fs::path(checkpoint).parent_path() : fs::path(out);
  }
};

struct DiagFlags {
  std::string op = "mul", strategy = "random";
  SplitSpec split;
  std::uint64_t seed = 1;
  int power_iters = 1000;
  double power_tol = 1e-8;
  double eps_fd = 1e-5;
};

int cmd_diag(const CkptFlags& ck, DiagFlags& f) {
  const MlpParams params = load_checkpoint(ck.checkpoint);
  if (f.power_iters < 1 || !(f.power_tol > 0.0) || !(f.eps_fd > 0.0)) {
    throw UsageError("power-method settings must be positive");
  }
  const ModTask task = make_task(f.op, params.dims.classes);
  if (task.vocab_size() != params.dims.vocab) throw UsageError("checkpoint vocabulary does not match --op");
  SplitSpec spec = f.split;
  spec.strategy = parse_split_strategy(f.strategy);
  spec.seed = f.seed;
  const Split s = split(enumerate_examples(task), spec);
  const auto probe = make_probe_batch(s.test, f.seed);
  const fs::path dir = ck.dir();
  fs::create_directories(dir);
  write_to(dir / "diag.csv", [&](std::ostream& os) {
    os << "block,lambda_max,residual,iterations,converged,sigma_max\n";
    auto row = [&](const char* name, Block b, const Mat& m) {
      const auto e = power_method_max_eig(params, probe, b, f.power_iters, f.power_tol, f.seed,
                                          f.eps_fd);
      const double sm = sigma_max(m);
      os << name << ',' << format_double(e.value) << ',' << format_double(e.residual) << ','
         << e.iterations << ',' << (e.converged ? 1 : 0) << ',' << format_double(sm) << '\n';
      std::cout << name << ": lambda_max " << e.value << " residual " << e.residual
                << (e.converged ? "" : " (not converged)") << " sigma_max " << sm << '\n';
    };
    if (params.dims.embed) row("E", Block::E, params.E);
    row("W1", Block::W1, params.W1);
  });
  return 0;
}

int cmd_fft(const CkptFlags& ck) {
  const MlpParams params = load_checkpoint(ck.checkpoint);
  if (!params.dims.embed) throw UsageError("checkpoint has no embedding matrix");
  const auto spec = fft_spectrum(params.E, params.dims.classes);
  const fs::path dir = ck.dir();
  fs::create_directories(dir);
  write_to(dir / "fft.csv", [&](std::ostream& os) {
    os << "frequency,norm\n";
    for (std::size_t k = 0; k < spec.size(); ++k) os << k << ',' << format_double(spec[k]) << '\n';
  });
  write_to(dir / "fft.svg", [&](std::ostream& os) {
    svg::bar_chart(os, "Embedding DFT norm per frequency", spec, "frequency", "norm");
  });
  std::cout << (dir / "fft.csv").string() << '\n';
  return 0;
}

int cmd_rank(const CkptFlags& ck, double rel_tol) {
  if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw UsageError("--rank-tol must lie in (0, 1)");
  const MlpParams params = load_checkpoint(ck.checkpoint);
  const fs::path dir = ck.dir();
  fs::create_directories(dir);
  write_to(dir / "rank.csv", [&](std::ostream& os) {
    os << "matrix,rows,cols,rank,sigma_max\n";
    auto row = [&](const std::string& name, const Mat& m) {
      const int r = effective_rank(m, rel_tol);
      os << name << ',' << m.rows() << ',' << m.cols() << ',' << r << ','
         << format_double(sigma_max(m)) << '\n';
      std::cout << name << ": rank " << r << '\n';
    };
    if (params.dims.embed) row("E", params.E);
    row("W1", params.W1);
    if (params.dims.embed) {
      const auto d = params.dims.embed_dim;
      const auto h = params.dims.hidden;
      Mat all(params.E.rows(), 4 * h);
      for (int j = 0; j < 4; ++j) {
        const Mat prod = params.E * params.W1.block(0, j * d, h, d).transpose();
        row("EW_" + std::to_string(j + 1), prod);
        all.block(0, j * h, all.rows(), h) = prod;
      }
      row("EW", all);
    }
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grokking experiments on modular arithmetic", "groklab"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  std::string config_path;
  auto with_config = [&config_path](CLI::App* sc) {
    sc->add_option("--config", config_path,
                   "File of flag values (key = value, # comments); command-line flags win");
  };

  DataFlags df;
  auto* data = app.add_subcommand("data", "Write a dataset, its split and a token histogram");
  with_config(data);
  add_task_flags(data, df.op, df.p);
  add_split_flags(data, df.split, df.strategy);
  data->add_option("--seed", df.seed, "Split seed");
  data->add_option("--batch", df.batch, "Batch size for the inclusion probabilities");
  data->add_option("--out", df.out, "Output root")->envname("GROKLAB_OUT");
  data->add_flag("--force", df.force, "Overwrite an existing output directory");

  RunFlags tf;
  auto* trn = app.add_subcommand("train", "Train one model and write metrics, summary and plots");
  with_config(trn);
  add_run_flags(trn, tf);

  RunFlags sf;
  SweepFlags sw;
  auto* swp = app.add_subcommand("sweep", "Train over a grid of one parameter and several seeds");
  with_config(swp);
  add_run_flags(swp, sf);
  swp->add_option("--axis", sw.axis, "Parameter to vary")
      ->required()
      ->check(CLI::IsMember(sweep_axes()));
  swp->add_option("--values", sw.values, "Comma-separated values")
      ->required()
      ->delimiter(',')
      ->default_str("");
  swp->add_option("--seeds", sw.seeds, "Comma-separated seeds")->delimiter(',')->default_str("1,2,3");
  swp->add_option("--jobs", sw.jobs, "Concurrent runs");

  CkptFlags dck;
  DiagFlags dgf;
  auto* dg = app.add_subcommand("diag", "Hessian eigenvalues and singular values of a checkpoint");
  with_config(dg);
  dg->add_option("--checkpoint", dck.checkpoint, "Parameter checkpoint")->required();
  dg->add_option("--out", dck.out, "Output directory (default: the checkpoint's)");
  dg->add_option("--op", dgf.op, "Operation the checkpoint was trained on")
      ->check(CLI::IsMember({"add", "mul", "div", "sumsq"}));
  add_split_flags(dg, dgf.split, dgf.strategy);
  dg->add_option("--seed", dgf.seed, "Run seed (selects the split and probe batch)");
  dg->add_option("--power-iters", dgf.power_iters, "Power-method iteration cap");
  dg->add_option("--power-tol", dgf.power_tol, "Power-method tolerance");
  dg->add_option("--eps-fd", dgf.eps_fd, "Relative finite-difference step");

  CkptFlags fck;
  auto* ff = app.add_subcommand("fft", "DFT spectrum of a checkpoint's operand embeddings");
  with_config(ff);
  ff->add_option("--checkpoint", fck.checkpoint, "Parameter checkpoint")->required();
  ff->add_option("--out", fck.out, "Output directory (default: the checkpoint's)");

  CkptFlags rck;
  double rank_tol = 1e-3;
  auto* rk = app.add_subcommand("rank", "Effective ranks of E, W1 and the E W products");
  with_config(rk);
  rk->add_option("--checkpoint", rck.checkpoint, "Parameter checkpoint")->required();
  rk->add_option("--out", rck.out, "Output directory (default: the checkpoint's)");
  rk->add_option("--rank-tol", rank_tol, "Relative singular-value cutoff");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    for (auto* sc : app.get_subcommands()) {
      if (!config_path.empty()) apply_config(sc, config_path);
    }
    if (data->parsed()) return cmd_data(df);
    if (trn->parsed()) return cmd_train(tf);
    if (swp->parsed()) return cmd_sweep(sf, sw);
    if (dg->parsed()) return cmd_diag(dck, dgf);
    if (ff->parsed()) return cmd_fft(fck);
    if (rk->parsed()) return cmd_rank(rck, rank_tol);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
