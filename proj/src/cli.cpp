#include "rawicl/cli.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rawicl/metrics.hpp"
#include "rawicl/predictors.hpp"
#include "rawicl/probe.hpp"
#include "rawicl/raw.hpp"
#include "rawicl/serialize.hpp"
#include "rawicl/verify.hpp"

namespace rawicl {
namespace {

using nlohmann::json;

/// Anything wrong with the user's settings; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t workers = 0;
  double tolerance = 1e-3;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
  CLI::Option* tolerance_opt = nullptr;
};

void add_common(CLI::App& cmd, CommonFlags& f, bool tolerance) {
  cmd.add_option("--config", f.config, "JSON config file; flags given on the command line take precedence");
  f.seed_opt = cmd.add_option("--seed", f.seed, "base random seed (default 0)");
  cmd.add_option("--out", f.out, "output file");
  f.workers_opt = cmd.add_option("--workers", f.workers, "worker threads (default: all cores)");
  if (tolerance) f.tolerance_opt = cmd.add_option("--tolerance", f.tolerance, "maximum relative error (default 1e-3)");
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json j = read_json_file(path);
  if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
  return j;
}

template <class T>
T take(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field \"") + key + "\" has the wrong type");
  }
}

void set_if(json& j, const char* key, const CLI::Option* opt, const auto& value) {
  if (opt && opt->count() > 0) j[key] = value;
}

/// Writes to --out, or stdout when none was given.
class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) : path_(path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw std::runtime_error("cannot write " + path);
    }
    stream_ = path.empty() ? &fallback : &file_;
  }
  std::ostream& stream() { return *stream_; }
  /// Effective settings go to <out>.meta.json, or to `err` as one line.
  void metadata(const json& settings, std::ostream& err) const {
    if (path_.empty()) {
      err << "settings: " << settings.dump() << '\n';
    } else {
      write_json_file(path_ + ".meta.json", settings);
    }
  }

 private:
  std::string path_;
  std::ofstream file_;
  std::ostream* stream_ = nullptr;
};

// ---- compile --------------------------------------------------------------

struct CompileFlags {
  std::string program;
  std::size_t max_positions = 0;
  std::size_t hidden = 0;
  CLI::Option* hidden_opt = nullptr;
};

int cmd_compile(const CommonFlags& f, const CompileFlags& c, std::ostream& out, std::ostream& err) {
  RawProgram program;
  json spec;
  try {
    const std::string source = c.program.empty() ? f.config : c.program;
    if (source.empty()) throw ConfigError("compile needs a program file");
    if (f.out.empty()) throw ConfigError("compile needs --out");
    spec = load_config(source);
    if (c.hidden_opt && c.hidden_opt->count() > 0) spec["hidden"] = c.hidden;
    program = program_from_spec(spec);
  } catch (const CompileError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  const std::size_t positions = c.max_positions ? c.max_positions : 2 * program.examples + 1;
  const Layout layout = plan_layout(program, positions);
  const TransformerParams params = compile(program, positions);

  json doc = to_json(params);
  doc["program"] = to_json(program);
  doc["settings"] = {{"spec", spec}, {"max_positions", positions}};
  write_json_file(f.out, doc);

  out << "layers: " << params.layers.size() << '\n'
      << "hidden: " << layout.hidden << " (data " << layout.data_rows << ", position 3, patterns "
      << 3 * layout.pattern_rows.size() << ", scratch " << layout.scratch.size() << ", ballast 2)\n"
      << "max_positions: " << positions << '\n';
  (void)err;
  return kExitOk;
}

// ---- verify ---------------------------------------------------------------

struct VerifyFlags {
  std::string program;
  std::size_t d = 0, examples = 0, trials = 0;
  double alpha = 0.0, lambda = 0.0, range = 0.0;
  std::string params;
  CLI::Option *program_opt, *d_opt, *examples_opt, *trials_opt, *alpha_opt, *lambda_opt, *range_opt, *params_opt;
};

int cmd_verify(const CommonFlags& f, const VerifyFlags& v, std::ostream& out, std::ostream& err) {
  VerifySpec spec;
  json settings;
  std::optional<TransformerParams> params;
  RawProgram program;
  try {
    json cfg = load_config(f.config);
    set_if(cfg, "program", v.program_opt, v.program);
    set_if(cfg, "d", v.d_opt, v.d);
    set_if(cfg, "n_examples", v.examples_opt, v.examples);
    set_if(cfg, "trials", v.trials_opt, v.trials);
    set_if(cfg, "alpha", v.alpha_opt, v.alpha);
    set_if(cfg, "lambda", v.lambda_opt, v.lambda);
    set_if(cfg, "range", v.range_opt, v.range);
    set_if(cfg, "params", v.params_opt, v.params);
    set_if(cfg, "seed", f.seed_opt, f.seed);
    set_if(cfg, "tolerance", f.tolerance_opt, f.tolerance);

    spec.program = take<std::string>(cfg, "program", "sgd_step");
    spec.d = take<std::size_t>(cfg, "d", 2);
    spec.examples = take<std::size_t>(cfg, "n_examples", 1);
    spec.alpha = take(cfg, "alpha", 0.25);
    spec.lambda = take(cfg, "lambda", spec.program == "sherman_morrison" ? 1.0 : 0.0);
    spec.w0 = take<Vector>(cfg, "w0", {});
    spec.trials = take<std::size_t>(cfg, "trials", 1000);
    spec.range = take(cfg, "range", 0.1);
    spec.seed = take<std::uint64_t>(cfg, "seed", 0);
    spec.workers = f.workers;
    if (spec.program != "sgd_step" && spec.program != "sgd_multi_step" && spec.program != "sherman_morrison")
      throw ConfigError("unknown program \"" + spec.program + "\"");
    if (spec.d == 0) throw ConfigError("d must be positive");
    if (!spec.w0.empty() && spec.w0.size() != spec.d) throw ConfigError("w0 must have d entries");
    if (spec.program != "sgd_multi_step") spec.examples = 1;
    const double tolerance = take(cfg, "tolerance", 1e-3);
    const std::string params_path = take<std::string>(cfg, "params", "");

    json program_spec = {{"program", spec.program}, {"d", spec.d},        {"alpha", spec.alpha},
                         {"lambda", spec.lambda},   {"n_examples", spec.examples}};
    if (!spec.w0.empty()) program_spec["w0"] = spec.w0;
    if (cfg.contains("constants")) program_spec["constants"] = cfg["constants"];
    if (cfg.contains("hidden")) program_spec["hidden"] = cfg["hidden"];
    program = program_from_spec(program_spec);
    if (!params_path.empty()) params = params_from_json(read_json_file(params_path));

    settings = program_spec;
    settings["trials"] = spec.trials;
    settings["range"] = spec.range;
    settings["seed"] = spec.seed;
    settings["tolerance"] = tolerance;
    if (!params_path.empty()) settings["params"] = params_path;
  } catch (const CompileError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  const CompiledProgram compiled = params ? CompiledProgram(program, *params)
                                          : CompiledProgram(program, 2 * program.examples + 1);
  const VerifyReport report = verify_program(compiled, spec);
  const double tolerance = settings["tolerance"].get<double>();
  const bool pass = report.passed(tolerance);

  std::ostringstream line;
  line << std::setprecision(6) << "program=" << spec.program << " d=" << spec.d << " examples=" << spec.examples
       << " trials=" << report.trials << " max_rel_err=" << report.max_relative_error
       << " mean_rel_err=" << report.mean_relative_error << " worst_trial=" << report.worst_trial
       << " tolerance=" << tolerance << " result=" << (pass ? "PASS" : "FAIL") << '\n';
  out << line.str();
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';
  if (!f.out.empty()) {
    json doc = {{"settings", settings},
                {"max_relative_error", report.max_relative_error},
                {"mean_relative_error", report.mean_relative_error},
                {"worst_trial", report.worst_trial},
                {"passed", pass}};
    write_json_file(f.out, doc);
  } else {
    err << "settings: " << settings.dump() << '\n';
  }
  return pass ? kExitOk : kExitRuntime;
}

// ---- metrics --------------------------------------------------------------

std::vector<double> default_lambda_grid() {
  std::vector<double> g;
  for (int k = -16; k <= 16; ++k) g.push_back(std::exp2(k / 4.0));
  return g;
}

std::string grid_context(double s2, double t2) {
  std::ostringstream o;
  o << std::setprecision(6) << "sigma2=" << s2 << " tau2=" << t2;
  return o.str();
}

int cmd_metrics(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  TaskDistribution dist;
  MonteCarlo mc;
  std::size_t pool_size = 0;
  json cfg;
  std::map<std::string, PredictorPtr> named;
  try {
    cfg = load_config(f.config);
    set_if(cfg, "seed", f.seed_opt, f.seed);
    dist.d = take<std::size_t>(cfg, "d", 8);
    dist.sigma2 = take(cfg, "sigma2", 0.0);
    dist.tau2 = take(cfg, "tau2", 1.0);
    dist.x_scale = take(cfg, "x_scale", 1.0);
    mc.tasks = take<std::size_t>(cfg, "tasks", 2048);
    mc.queries = take<std::size_t>(cfg, "queries", 8);
    mc.seed = take<std::uint64_t>(cfg, "seed", 0);
    mc.workers = f.workers;
    pool_size = take<std::size_t>(cfg, "pool_size", 4 * dist.d);
    if (dist.d == 0 || mc.tasks == 0 || mc.queries == 0) throw ConfigError("d, tasks and queries must be positive");
    if (cfg.contains("predictors")) {
      if (!cfg["predictors"].is_object()) throw ConfigError("\"predictors\" must map ids to predictor specs");
      for (const auto& [id, spec] : cfg["predictors"].items()) named[id] = make_predictor(spec, dist.sigma2, dist.tau2);
    }
    // Fill in defaults so the echoed settings are complete.
    cfg["d"] = dist.d;
    cfg["sigma2"] = dist.sigma2;
    cfg["tau2"] = dist.tau2;
    cfg["x_scale"] = dist.x_scale;
    cfg["tasks"] = mc.tasks;
    cfg["queries"] = mc.queries;
    cfg["seed"] = mc.seed;
    cfg["pool_size"] = pool_size;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  auto resolve = [&](const json& ref, const TaskDistribution& dd) -> PredictorPtr {
    if (ref.is_string() && named.count(ref.get<std::string>())) return named.at(ref.get<std::string>());
    try {
      return make_predictor(ref, dd.sigma2, dd.tau2);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  };

  // Resolve every sweep before running anything so config errors surface early.
  struct Sweep {
    std::string metric;
    PredictorPtr a1, a2;
    std::vector<std::size_t> n_context;
    bool normalize = true;
  };
  std::vector<Sweep> sweeps;
  try {
    for (const auto& s : take<json>(cfg, "sweeps", json::array())) {
      Sweep w;
      w.metric = take<std::string>(s, "metric", "");
      if (w.metric != "spd" && w.metric != "ilwd" && w.metric != "mspd" && w.metric != "r2" &&
          w.metric != "bayes_risk")
        throw ConfigError("unknown metric \"" + w.metric + "\"");
      if (!s.contains("a1")) throw ConfigError("sweep needs \"a1\"");
      w.a1 = resolve(s.at("a1"), dist);
      const bool pair = w.metric == "spd" || w.metric == "ilwd" || w.metric == "mspd";
      if (pair) {
        if (!s.contains("a2")) throw ConfigError(w.metric + " sweep needs \"a2\"");
        w.a2 = resolve(s.at("a2"), dist);
      }
      std::vector<std::size_t> all;
      for (std::size_t n = 1; n <= 2 * dist.d; ++n) all.push_back(n);
      w.n_context = take<std::vector<std::size_t>>(s, "n_context", all);
      w.normalize = take(s, "normalize", true);
      if (w.metric == "mspd" && dist.d < 2)
        throw ConfigError("mspd needs d >= 2");
      sweeps.push_back(std::move(w));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  Output output(f.out, out);
  std::ostream& csv = output.stream();
  write_csv_header(csv);

  for (const Sweep& w : sweeps) {
    if (w.metric == "mspd") {
      write_csv_row(csv, mspd(*w.a1, *w.a2, dist, mc));
    } else if (w.metric == "bayes_risk") {
      write_csv_row(csv, bayes_risk(*w.a1, dist, mc));
    } else {
      for (std::size_t n : w.n_context) {
        if (w.metric == "spd") write_csv_row(csv, spd(*w.a1, *w.a2, dist, n, mc, w.normalize));
        if (w.metric == "ilwd") write_csv_row(csv, ilwd(*w.a1, *w.a2, dist, n, mc, pool_size, w.normalize));
        if (w.metric == "r2") write_csv_row(csv, r_squared_linearity(*w.a1, dist, n, mc, pool_size));
      }
    }
  }

  if (cfg.contains("bayes_grid")) {
    std::vector<std::pair<double, double>> pairs;
    std::vector<double> lambdas;
    try {
      const json& g = cfg["bayes_grid"];
      for (const auto& p : take<json>(g, "pairs", json::array())) pairs.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      lambdas = take<std::vector<double>>(g, "lambdas", default_lambda_grid());
      if (dist.d < 2) throw ConfigError("bayes_grid needs d >= 2");
      for (const auto& [s2, t2] : pairs)
        if (!(s2 > 0.0 && t2 > 0.0)) throw ConfigError("bayes_grid pairs need sigma2 > 0 and tau2 > 0");
      cfg["bayes_grid"]["lambdas"] = lambdas;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(std::string("bayes_grid: ") + e.what());
    }
    for (const auto& [s2, t2] : pairs) {
      TaskDistribution dd = dist;
      dd.sigma2 = s2;
      dd.tau2 = t2;
      const std::string context = grid_context(s2, t2);
      const PredictorPtr bayes = make_predictor("bayes", s2, t2);
      double best_mspd = std::numeric_limits<double>::infinity(), best_risk = best_mspd;
      double arg_mspd = 0.0, arg_risk = 0.0;
      for (double lambda : lambdas) {
        const PredictorPtr ridge = make_predictor(json{{"name", "ridge"}, {"lambda", lambda}});
        MetricReport m = mspd(*ridge, *bayes, dd, mc);
        m.context = context;
        write_csv_row(csv, m);
        MetricReport r = bayes_risk(*ridge, dd, mc);
        r.context = context;
        write_csv_row(csv, r);
        if (m.value < best_mspd) best_mspd = m.value, arg_mspd = lambda;
        if (r.value < best_risk) best_risk = r.value, arg_risk = lambda;
      }
      for (const auto& [metric, arg] : {std::pair{"argmin_mspd", arg_mspd}, std::pair{"argmin_bayes_risk", arg_risk}}) {
        MetricReport a;
        a.metric = metric;
        a.a1 = "ridge";
        a.a2 = "bayes";
        a.context = context;
        a.value = arg;
        a.raw = s2 / t2;  // the lambda the argmin should land on
        a.samples = lambdas.size();
        a.seed = mc.seed;
        write_csv_row(csv, a);
      }
    }
  }

  if (cfg.contains("dumps")) {
    for (const auto& d : cfg["dumps"]) {
      PredictorPtr p;
      std::string path;
      std::vector<std::size_t> ns;
      try {
        p = resolve(d.at("predictor"), dist);
        path = d.at("path").get<std::string>();
        ns = take<std::vector<std::size_t>>(d, "n_context", {dist.d});
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError(std::string("dumps: ") + e.what());
      }
      write_prediction_dump(path, {dist.d, dist.sigma2, dist.tau2, mc.seed}, collect_predictions(*p, dist, ns, mc));
    }
  }

  csv.flush();
  output.metadata(cfg, err);
  return kExitOk;
}

// ---- probe ----------------------------------------------------------------

int cmd_probe(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  json cfg;
  RawProgram program;
  ProbeStudy study;
  TaskDistribution dist;
  bool control = true;
  std::string trace_dump;
  std::uint64_t seed = 0;
  try {
    cfg = load_config(f.config);
    set_if(cfg, "seed", f.seed_opt, f.seed);
    seed = take<std::uint64_t>(cfg, "seed", 0);
    json pspec = take<json>(cfg, "program", json{{"program", "sgd_step"}, {"d", 2}});
    program = program_from_spec(pspec);
    const std::size_t d = program.token_dim - 1;
    dist.d = d;
    dist.sigma2 = take(cfg, "sigma2", 0.0);
    dist.tau2 = take(cfg, "tau2", 1.0);
    dist.x_scale = take(cfg, "x_scale", 0.03);

    study.train = take<std::size_t>(cfg, "train", 10000);
    study.validation = take<std::size_t>(cfg, "validation", 2000);
    study.alpha = take(pspec, "alpha", 0.25);
    study.lambda = take(pspec, "lambda", 0.0);
    study.w0 = take<Vector>(pspec, "w0", {});
    study.workers = f.workers;
    study.prefixes = take<std::vector<std::size_t>>(cfg, "prefixes", {program.examples});
    for (const auto& t : take<std::vector<std::string>>(cfg, "targets", {"moments", "w_ols", "w_sgd"}))
      study.targets.push_back(parse_probe_target(t));

    ProbeConfig& pc = study.config;
    pc.head = parse_probe_head(take<std::string>(cfg, "head", "linear"));
    pc.learning_rate = take(cfg, "learning_rate", pc.learning_rate);
    pc.batch = take(cfg, "batch", pc.batch);
    pc.steps = take(cfg, "steps", pc.steps);
    pc.eval_every = take(cfg, "eval_every", pc.eval_every);
    pc.cosine_decay = take(cfg, "cosine_decay", pc.cosine_decay);
    pc.weight_decay = take(cfg, "weight_decay", pc.weight_decay);
    pc.projection = take(cfg, "projection", pc.projection);
    pc.mlp_width = take(cfg, "mlp_width", pc.mlp_width);
    pc.seed = seed;
    control = take(cfg, "control", true);
    trace_dump = take<std::string>(cfg, "trace_dump", "");
    if (study.train == 0 || study.validation == 0) throw ConfigError("train and validation must be positive");
    for (std::size_t n : study.prefixes)
      if (n == 0 || n > program.examples) throw ConfigError("prefixes must lie in 1..n_examples");

    cfg["program"] = pspec;
    cfg["seed"] = seed;
    cfg["sigma2"] = dist.sigma2;
    cfg["tau2"] = dist.tau2;
    cfg["x_scale"] = dist.x_scale;
    cfg["train"] = study.train;
    cfg["validation"] = study.validation;
    cfg["prefixes"] = study.prefixes;
    std::vector<std::string> targets;
    for (ProbeTarget t : study.targets) targets.push_back(to_string(t));
    cfg["targets"] = targets;
    cfg["head"] = to_string(pc.head);
    cfg["learning_rate"] = pc.learning_rate;
    cfg["batch"] = pc.batch;
    cfg["steps"] = pc.steps;
    cfg["eval_every"] = pc.eval_every;
    cfg["cosine_decay"] = pc.cosine_decay;
    cfg["weight_decay"] = pc.weight_decay;
    cfg["projection"] = pc.projection;
    cfg["mlp_width"] = pc.mlp_width;
    cfg["control"] = control;
    cfg["program_hash"] = program_hash(program);
  } catch (const CompileError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  const CompiledProgram compiled(program, 2 * program.examples + 1);
  const std::size_t depth = compiled.params().layers.size();
  std::vector<std::size_t> all_layers;
  for (std::size_t l = 0; l <= depth; ++l) all_layers.push_back(l);
  try {
    study.layers = take<std::vector<std::size_t>>(cfg, "layers", all_layers);
    for (std::size_t l : study.layers)
      if (l > depth) throw ConfigError("layer " + std::to_string(l) + " out of range (depth " + std::to_string(depth) + ")");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  cfg["layers"] = study.layers;

  const std::size_t total = study.train + study.validation;
  const TraceSet traces = generate_traces(compiled, dist, program.examples, total, seed, f.workers);
  if (!trace_dump.empty()) write_trace_dump(trace_dump, traces, program, seed);

  Output output(f.out, out);
  std::ostream& csv = output.stream();
  write_probe_csv_header(csv);
  for (const auto& row : probe_report(traces, study)) write_probe_csv_row(csv, row);

  if (control) {
    // Same layers and targets on the control model, which never has to infer w.
    const TraceSet ctraces = make_control_traces(dist.d, total, dist, seed + 1, f.workers);
    ProbeStudy cs = study;
    cs.prefixes = {1};
    const std::size_t cdepth = ctraces.traces.front().states.size() - 1;
    cs.layers.clear();
    for (std::size_t l : study.layers)
      if (l <= cdepth) cs.layers.push_back(l);
    for (auto row : probe_report(ctraces, cs)) {
      row.model = "control";
      write_probe_csv_row(csv, row);
    }
  }
  csv.flush();
  output.metadata(cfg, err);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"rawicl: compile RAW programs into transformers, verify them, and run metric and probe studies"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  CommonFlags cf_compile, cf_verify, cf_metrics, cf_probe;

  CompileFlags cflags;
  auto* compile_cmd = app.add_subcommand("compile", "compile a program JSON into a transformer parameter JSON");
  compile_cmd->add_option("program", cflags.program, "program file (a full program or {\"program\":kind,\"d\":..})");
  compile_cmd->add_option("--max-positions", cflags.max_positions, "sequence length budget (default 2*examples+1)");
  cflags.hidden_opt = compile_cmd->add_option("--hidden", cflags.hidden, "hidden size (default: smallest that fits)");
  add_common(*compile_cmd, cf_compile, false);

  VerifyFlags vflags;
  auto* verify_cmd = app.add_subcommand("verify", "run a compiled program on random tasks against its closed form");
  vflags.program_opt = verify_cmd->add_option("--program", vflags.program, "sgd_step | sgd_multi_step | sherman_morrison");
  vflags.d_opt = verify_cmd->add_option("--d", vflags.d, "input dimension (default 2)");
  vflags.examples_opt = verify_cmd->add_option("--n-examples", vflags.examples, "examples for sgd_multi_step");
  vflags.trials_opt = verify_cmd->add_option("--trials", vflags.trials, "random tasks (default 1000)");
  vflags.alpha_opt = verify_cmd->add_option("--alpha", vflags.alpha, "SGD step size (default 0.25)");
  vflags.lambda_opt = verify_cmd->add_option("--lambda", vflags.lambda, "L2 penalty (default 0, or 1 for sherman_morrison)");
  vflags.range_opt = verify_cmd->add_option("--range", vflags.range, "entries uniform in [-range, range] (default 0.1)");
  vflags.params_opt = verify_cmd->add_option("--params", vflags.params, "check this parameter file instead of recompiling");
  add_common(*verify_cmd, cf_verify, true);

  auto* metrics_cmd = app.add_subcommand("metrics", "SPD / ILWD / MSPD / R^2 / Bayes-risk sweeps to CSV");
  add_common(*metrics_cmd, cf_metrics, false);

  auto* probe_cmd = app.add_subcommand("probe", "train attention probes on hidden states, report CSV");
  add_common(*probe_cmd, cf_probe, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    if (*compile_cmd) return cmd_compile(cf_compile, cflags, out, err);
    if (*verify_cmd) return cmd_verify(cf_verify, vflags, out, err);
    if (*metrics_cmd) return cmd_metrics(cf_metrics, out, err);
    if (*probe_cmd) return cmd_probe(cf_probe, out, err);
  } catch (const CompileError& e) {
    err << "compile error: " << e.what() << '\n';
    return kExitCompile;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace rawicl
