// ahce: generate, ingest, train, explain, evaluate, bench-binning, reproduce.
//
// Every verb writes manifest.json next to its outputs. Passing that file back
// with --config reruns the command with the same settings; values from the
// config override flags given on the command line. AHCE_OUTPUT_ROOT, when set,
// prefixes relative --out directories.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ahce/binning.hpp"
#include "ahce/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ahce;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path output_dir(const std::string& out) {
  fs::path p(out);
  if (const char* root = std::getenv("AHCE_OUTPUT_ROOT"); root && *root && p.is_relative()) p = fs::path(root) / p;
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) fail(Errc::io, "cannot create output directory '" + p.string() + "': " + ec.message());
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(Errc::io, "cannot write '" + p.string() + "'");
  return os;
}

void write_text(const fs::path& p, const std::string& text) { open_out(p) << text; }

template <class F>
void with_file(const fs::path& p, F&& write) {
  auto os = open_out(p);
  write(os);
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) fail(Errc::usage, std::string("bad ") + what + " list '" + s + "'");
    out.push_back(v);
  }
  if (out.empty()) fail(Errc::usage, std::string("empty ") + what + " list");
  return out;
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) fail(Errc::usage, "empty file list");
  return out;
}

ScmSpec load_scm_arg(const std::string& s) { return s == "builtin" ? builtin_synthetic() : load_scm_file(s); }

/// A graph file, an SCM file (its graph) or "builtin".
CausalGraph load_graph_arg(const std::string& s) {
  if (s == "builtin") return builtin_synthetic().graph();
  if (fs::path(s).extension() == ".scm") return load_scm_file(s).graph();
  return load_graph_file(s);
}

HessianMode hessian_arg(const std::string& s, std::size_t inputs) {
  return s == "auto" ? default_hessian_mode(inputs) : parse_hessian_mode(s);
}

AnteHocNet load_checkpoint(const std::string& path, const CausalGraph& g) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, "cannot open '" + path + "'");
  return read_checkpoint(in, g);
}

// ---------------------------------------------------------------------------
// Manifests

/// Every option of a verb with its effective value. Flags become booleans.
json options_of(const CLI::App* sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (opt->get_expected_min() == 0) {
      j[name] = opt->count() > 0 && opt->as<bool>();
    } else {
      j[name] = opt->count() > 0 ? opt->results().back() : opt->get_default_str();
    }
  }
  return j;
}

void write_manifest(const fs::path& dir, const CLI::App* sub, json extra = json::object()) {
  json m;
  m["verb"] = sub->get_name();
  m["options"] = options_of(sub);
  if (!extra.empty()) m["results"] = std::move(extra);
  write_json(dir / "manifest.json", m);
}

/// The value following --config, if any.
std::string find_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return {};
}

/// Command line followed by the config's options, so the config wins.
std::vector<std::string> expand_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  const std::string path = find_config(argc, argv);
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) fail(Errc::io, "cannot open config '" + path + "'");
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::exception& e) {
    fail(Errc::parse, "config '" + path + "': " + e.what());
  }
  if (!cfg.is_object() || !cfg.contains("options") || !cfg["options"].is_object()) {
    fail(Errc::parse, "config '" + path + "' has no options object");
  }
  if (cfg.contains("verb") && (args.empty() || cfg["verb"] != args.front())) {
    fail(Errc::usage, "config '" + path + "' is for the verb '" + cfg["verb"].get<std::string>() + "'");
  }
  for (const auto& [key, value] : cfg["options"].items()) {
    if (value.is_boolean()) {
      args.push_back("--" + key + "=" + (value.get<bool>() ? "true" : "false"));
    } else if (value.is_string()) {
      args.push_back("--" + key + "=" + value.get<std::string>());
    } else if (value.is_number()) {
      args.push_back("--" + key + "=" + value.dump());
    } else {
      fail(Errc::parse, "config option '" + key + "' must be a string, number or boolean");
    }
  }
  return args;
}

// ---------------------------------------------------------------------------
// Shared option groups

struct TrainArgs {
  std::size_t epochs = 20;
  std::size_t batch_size = 1;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double lambda = 1.0;
  std::string hidden = "32,32";
  std::string activation = "tanh";
  std::string output = "identity";
  std::string lateral = "linear";
  std::size_t lateral_width = 8;
  std::string derive = "propagate";

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs, "Training epochs, each a phase-1 then a phase-2 pass")->check(CLI::PositiveNumber);
    app->add_option("--batch-size", batch_size, "Rows per Adam step")->check(CLI::PositiveNumber);
    app->add_option("--lr", learning_rate, "Adam learning rate");
    app->add_option("--weight-decay", weight_decay, "Decoupled weight decay");
    app->add_option("--lambda", lambda, "Weight of the layer-0 regularizer");
    app->add_option("--hidden", hidden, "Hidden layer widths, comma separated");
    app->add_option("--activation", activation, "Hidden activation")->check(CLI::IsMember({"tanh", "relu"}));
    app->add_option("--output", output, "Output activation; logistic trains with cross-entropy")
        ->check(CLI::IsMember({"identity", "logistic"}));
    app->add_option("--lateral", lateral, "Layer-0 function family")->check(CLI::IsMember({"linear", "mlp"}));
    app->add_option("--lateral-width", lateral_width, "Hidden width of mlp layer-0 functions");
    app->add_option("--derive", derive, "Layer-0 inputs: propagate derived values or read observed ones")
        ->check(CLI::IsMember({"propagate", "observed"}));
  }

  ModelOptions model(std::uint64_t seed, bool with_layer0) const {
    ModelOptions mo;
    mo.hidden = parse_list<std::size_t>(hidden, "hidden width");
    mo.hidden_activation = parse_activation(activation);
    mo.output_activation = parse_activation(output);
    mo.with_layer0 = with_layer0;
    mo.lateral = parse_lateral_kind(lateral);
    mo.lateral_width = lateral_width;
    mo.lambda = lambda;
    mo.derive = parse_derive_mode(derive);
    mo.seed = seed;
    return mo;
  }

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = batch_size;
    tc.learning_rate = learning_rate;
    tc.weight_decay = weight_decay;
    tc.seed = seed;
    tc.loss = output == "logistic" ? Loss::cross_entropy : Loss::squared_error;
    tc.validate();
    return tc;
  }
};

struct DataArgs {
  std::string data;
  std::string graph = "builtin";
  double train_fraction = 0.8;
  std::uint64_t split_seed = 7;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Raw dataset CSV, one column per graph variable")->required();
    app->add_option("--graph", graph, "Graph file, SCM file, or 'builtin'");
    app->add_option("--train-fraction", train_fraction, "Share of rows used for training");
    app->add_option("--split-seed", split_seed, "Seed of the train/test split");
  }

  PreparedData load() const { return prepare_data(load_graph_arg(graph), read_csv_file(data), train_fraction, split_seed); }
};

void write_losses(const fs::path& p, const std::vector<LossRecord>& log) {
  auto os = open_out(p);
  os << "epoch,phase,loss,erm,regularizer\n";
  for (const auto& r : log) os << r.epoch << ',' << r.phase << ',' << num(r.loss) << ',' << num(r.erm) << ',' << num(r.regularizer) << '\n';
}

std::vector<EffectCurve> flatten(const std::vector<EffectCurves>& curves) {
  std::vector<EffectCurve> out;
  for (auto kind : {EffectKind::ace, EffectKind::adce, EffectKind::aice}) {
    for (const auto& c : curves) out.push_back(c.get(kind));
  }
  return out;
}

std::vector<FeatureGrid> store_grids(const std::vector<FeatureSettings>& settings) {
  std::vector<FeatureGrid> g;
  for (const auto& f : settings) g.push_back({f.position, f.baseline, f.grid});
  return g;
}

json bench_json(const BinningBenchmark& b) {
  return {{"queries", b.queries},
          {"anchors", b.anchors},
          {"exact_seconds", b.exact_seconds},
          {"binned_seconds", b.binned_seconds},
          {"speedup", b.speedup()},
          {"mean_abs_ace_drift", b.mean_abs_ace_drift},
          {"max_abs_ace_drift", b.max_abs_ace_drift}};
}

// ---------------------------------------------------------------------------
// Verbs

struct GenerateArgs {
  std::string scm = "builtin";
  std::size_t n = 1000;
  std::uint64_t seed = 7;
  std::size_t grid_points = 1000;
  std::size_t n_mc = 100000;
  std::uint64_t truth_seed = 11;
  unsigned threads = 1;
  std::string out = "generated";
};

void cmd_generate(const GenerateArgs& a, const CLI::App* sub) {
  const auto scm = load_scm_arg(a.scm);
  const auto dir = output_dir(a.out);
  auto raw = sample(scm, a.n, a.seed);
  auto p = prepare_data(scm.graph(), raw, 1.0, a.seed);
  auto settings = feature_settings(p, a.grid_points);
  auto truth = normalized_truth(scm, p, settings, a.n_mc, a.truth_seed, a.threads);
  write_csv_file((dir / "data.csv").string(), p.raw);
  write_text(dir / "model.scm", scm.serialize());
  write_text(dir / "graph.txt", scm.graph().serialize());
  with_file(dir / "scaler.csv", [&](std::ostream& os) { write_scaler(os, p.scaler); });
  write_curves_file((dir / "truth.csv").string(), flatten(truth.curves));
  {
    auto os = open_out(dir / "truth_stderr.csv");
    os << "feature,intervention_value,ace_stderr,adce_stderr,aice_stderr\n";
    const double yr = p.scaler.range(p.graph.target());
    for (std::size_t k = 0; k < settings.size(); ++k) {
      const auto& gt = truth.raw[k];
      for (std::size_t i = 0; i < settings[k].grid.size(); ++i) {
        os << settings[k].feature << ',' << num(settings[k].grid[i]) << ',' << num(gt.ace_stderr[i] / yr) << ','
           << num(gt.adce_stderr[i] / yr) << ',' << num(gt.aice_stderr[i] / yr) << '\n';
      }
    }
  }
  write_manifest(dir, sub, {{"data_fingerprint", to_hex(p.raw.fingerprint())}, {"graph_fingerprint", to_hex(p.graph.fingerprint())}});
  std::cout << "wrote " << a.n << " rows and truth curves for " << settings.size() << " features to " << dir.string() << '\n';
}

struct IngestArgs {
  std::string csv;
  std::string graph;
  std::size_t grid_points = 1000;
  std::string out = "ingested";
};

void cmd_ingest(const IngestArgs& a, const CLI::App* sub) {
  const auto g = load_graph_arg(a.graph);
  auto p = prepare_data(g, read_csv_file(a.csv), 1.0, 0);
  const auto dir = output_dir(a.out);
  write_csv_file((dir / "data.csv").string(), p.raw);
  with_file(dir / "scaler.csv", [&](std::ostream& os) { write_scaler(os, p.scaler); });
  auto settings = feature_settings(p, a.grid_points);
  auto os = open_out(dir / "features.csv");
  os << "feature,binary,baseline,grid_lo,grid_hi,grid_points\n";
  for (const auto& f : settings) {
    os << f.feature << ',' << (f.binary ? 1 : 0) << ',' << num(f.baseline) << ',' << num(f.grid.front()) << ',' << num(f.grid.back())
       << ',' << f.grid.size() << '\n';
  }
  write_manifest(dir, sub, {{"rows", p.raw.rows()}, {"data_fingerprint", to_hex(p.raw.fingerprint())}});
  std::cout << "validated " << p.raw.rows() << " rows x " << p.raw.cols() << " columns into " << dir.string() << '\n';
}

struct TrainVerbArgs {
  DataArgs data;
  TrainArgs train;
  std::uint64_t seed = 1;
  bool no_layer0 = false;
  std::string out = "model";
};

void cmd_train(const TrainVerbArgs& a, const CLI::App* sub) {
  const auto p = a.data.load();
  const auto dir = output_dir(a.out);
  auto model = AnteHocNet::create(p.graph, a.train.model(a.seed, !a.no_layer0));
  const auto cfg = a.train.config(a.seed);
  const auto d = split_inputs(p.graph, p.train);
  Trainer trainer(model, cfg);
  std::vector<LossRecord> log;
  try {
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      for (int phase : {1, 2}) {
        phase == 1 ? trainer.phase1_epoch(d, e) : trainer.phase2_epoch(d, e);
        log.push_back(evaluate_phase_loss(model, d, phase, cfg.loss));
        log.back().epoch = e;
      }
    }
  } catch (const Error&) {
    write_losses(dir / "losses.csv", log);
    std::cerr << "training diverged; trajectory so far in " << (dir / "losses.csv").string() << '\n';
    throw;
  }
  write_losses(dir / "losses.csv", log);
  with_file(dir / "checkpoint.txt", [&](std::ostream& os) { write_checkpoint(os, model); });
  const double test_rmse = p.test.rows() ? prediction_rmse(model, split_inputs(p.graph, p.test)) : 0.0;
  write_manifest(dir, sub,
                 {{"final_loss", log.back().loss}, {"test_rmse", test_rmse}, {"model_fingerprint", to_hex(model.fingerprint())}});
  std::printf("trained %zu epochs, final loss %.6g, held-out rmse %.6g\n", cfg.epochs, log.back().loss, test_rmse);
}

struct ExplainArgs {
  DataArgs data;
  std::string checkpoint;
  std::size_t grid_points = 1000;
  std::string hessian = "auto";
  bool binned = false;
  double max_distance = 10.0;
  std::size_t point = 0;
  std::size_t queries = 1000;
  std::uint64_t bench_seed = 1;
  std::string out = "explained";
};

void cmd_explain(const ExplainArgs& a, const CLI::App* sub) {
  const auto p = a.data.load();
  const auto m = load_checkpoint(a.checkpoint, p.graph);
  const auto hessian = hessian_arg(a.hessian, m.input_size());
  const auto settings = feature_settings(p, a.grid_points);
  const auto dir = output_dir(a.out);

  auto t0 = Clock::now();
  const auto exact = learned_curves(m, p.train, settings, hessian);
  const double exact_seconds = seconds_since(t0);
  write_curves_file((dir / "curves.csv").string(), flatten(exact));
  if (!a.binned) {
    write_manifest(dir, sub);
    std::printf("wrote curves for %zu features in %.3f s\n", settings.size(), exact_seconds);
    return;
  }

  const RowMatrix train = split_inputs(p.graph, p.train).inputs;
  const RowMatrix test = split_inputs(p.graph, p.test.rows() ? p.test : p.train).inputs;
  if (a.point >= static_cast<std::size_t>(test.rows())) fail(Errc::usage, "--point is past the last held-out row");
  t0 = Clock::now();
  const auto store = BinStore::build(m, train, store_grids(settings), a.max_distance);
  const double build_seconds = seconds_since(t0);
  std::ofstream bin = open_out(dir / "store.bin");
  store.write(bin);
  bin.close();

  const Vector point = test.row(static_cast<Eigen::Index>(a.point)).transpose();
  std::vector<EffectCurves> binned;
  double binned_seconds = 0.0;
  for (const auto& f : settings) {
    auto r = effect_curves_binned(store, m, point, f.position, f.grid, f.baseline, hessian);
    binned_seconds += r.seconds;
    binned.push_back(std::move(r.curves));
  }
  write_curves_file((dir / "curves_binned.csv").string(), flatten(binned));
  auto bench = benchmark_binning(m, train, store, test, a.queries, a.bench_seed, hessian);
  bench.build_seconds = build_seconds;
  json timing = {{"exact_curves_seconds", exact_seconds},
                 {"binned_curves_seconds", binned_seconds},
                 {"store_build_seconds", build_seconds},
                 {"benchmark", bench_json(bench)}};
  write_json(dir / "timing.json", timing);
  write_manifest(dir, sub, {{"anchors", store.anchor_count()}, {"model_fingerprint", to_hex(m.fingerprint())}});
  std::printf("curves: exact %.3f s, binned %.4f s; %zu-query benchmark: exact %.3f s, binned %.4f s (%.1fx), %zu anchors\n",
              exact_seconds, binned_seconds, bench.queries, bench.exact_seconds, bench.binned_seconds, bench.speedup(),
              bench.anchors);
}

struct EvaluateArgs {
  std::string learned;
  std::string truth;
  std::string kinds = "ACE,ADCE,AICE";
  std::string out = "evaluation";
};

ScoreReport evaluate_file(const std::string& learned_path, const std::vector<EffectCurve>& truth, const std::vector<EffectKind>& kinds) {
  std::map<std::pair<std::string, int>, const EffectCurve*> index;
  for (const auto& c : truth) index[{c.feature, static_cast<int>(c.kind)}] = &c;
  std::vector<CurvePair> pairs;
  for (const auto& c : read_curves_file(learned_path)) {
    if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end()) continue;
    auto it = index.find({c.feature, static_cast<int>(c.kind)});
    if (it == index.end()) {
      fail(Errc::validation, "'" + learned_path + "': no reference curve for " + c.feature + "/" + to_string(c.kind));
    }
    pairs.push_back(align(c, *it->second));
  }
  return score_report(pairs);
}

void cmd_evaluate(const EvaluateArgs& a, const CLI::App* sub) {
  std::vector<EffectKind> kinds;
  for (const auto& k : split_names(a.kinds)) kinds.push_back(parse_effect_kind(k));
  const auto truth = read_curves_file(a.truth);
  const auto files = split_names(a.learned);
  const auto dir = output_dir(a.out);
  std::vector<ScoreReport> reports;
  for (std::size_t i = 0; i < files.size(); ++i) {
    reports.push_back(evaluate_file(files[i], truth, kinds));
    const std::string name = files.size() == 1 ? "report.csv" : "report_" + std::to_string(i + 1) + ".csv";
    with_file(dir / name, [&](std::ostream& os) { reports.back().write(os); });
  }
  auto os = open_out(dir / "summary.csv");
  os << "kind,runs,rmse_mean,rmse_std,frechet_mean,frechet_std\n";
  for (auto k : kinds) {
    std::vector<double> r, f;
    for (const auto& rep : reports) {
      if (std::isnan(rep.average_rmse(k))) continue;
      r.push_back(rep.average_rmse(k));
      f.push_back(rep.average_frechet(k));
    }
    if (r.empty()) continue;
    auto rm = mean_std(r), fm = mean_std(f);
    os << to_string(k) << ',' << r.size() << ',' << num(rm.mean) << ',' << num(rm.stddev) << ',' << num(fm.mean) << ','
       << num(fm.stddev) << '\n';
    std::printf("%-4s rmse %.4f +- %.4f  frechet %.4f +- %.4f  (%zu runs)\n", to_string(k), rm.mean, rm.stddev, fm.mean, fm.stddev,
                r.size());
  }
  write_manifest(dir, sub);
}

struct BenchArgs {
  DataArgs data;
  std::string checkpoint;
  std::size_t grid_points = 1000;
  std::string hessian = "auto";
  double max_distance = 10.0;
  std::size_t queries = 1000;
  std::uint64_t seed = 1;
  std::string out = "bench";
};

void cmd_bench(const BenchArgs& a, const CLI::App* sub) {
  const auto p = a.data.load();
  const auto m = load_checkpoint(a.checkpoint, p.graph);
  const auto hessian = hessian_arg(a.hessian, m.input_size());
  const auto settings = feature_settings(p, a.grid_points);
  const RowMatrix train = split_inputs(p.graph, p.train).inputs;
  const RowMatrix test = split_inputs(p.graph, p.test.rows() ? p.test : p.train).inputs;
  auto t0 = Clock::now();
  const auto store = BinStore::build(m, train, store_grids(settings), a.max_distance);
  auto bench = benchmark_binning(m, train, store, test, a.queries, a.seed, hessian);
  bench.build_seconds = seconds_since(t0);
  const auto dir = output_dir(a.out);
  json j = bench_json(bench);
  j["build_seconds"] = bench.build_seconds;
  write_json(dir / "bench.json", j);
  write_manifest(dir, sub);
  std::printf("%zu queries, %zu anchors: exact %.3f s, binned %.4f s, speedup %.1fx, mean |ACE drift| %.3g\n", bench.queries,
              bench.anchors, bench.exact_seconds, bench.binned_seconds, bench.speedup(), bench.mean_abs_ace_drift);
}

struct ReproduceArgs {
  GenerateArgs gen;
  TrainArgs train;
  std::string seeds = "1,2,3";
  std::string hessian = "auto";
  double train_fraction = 0.8;
};

/// Table-style rows: per feature mean+-std over seeds, then the average.
void write_table(std::ostream& os, const std::vector<SeedRun>& runs, EffectKind kind) {
  os << "feature,rmse_mean,rmse_std,frechet_mean,frechet_std\n";
  auto line = [&](const std::string& name, const std::vector<double>& r, const std::vector<double>& f) {
    auto rm = mean_std(r), fm = mean_std(f);
    os << name << ',' << num(rm.mean) << ',' << num(rm.stddev) << ',' << num(fm.mean) << ',' << num(fm.stddev) << '\n';
  };
  std::vector<std::string> features;
  for (const auto& row : runs.front().report.rows) {
    if (row.kind == kind) features.push_back(row.feature);
  }
  for (const auto& name : features) {
    std::vector<double> r, f;
    for (const auto& run : runs) {
      for (const auto& row : run.report.rows) {
        if (row.kind == kind && row.feature == name) {
          r.push_back(row.rmse);
          f.push_back(row.frechet);
        }
      }
    }
    line(name, r, f);
  }
  std::vector<double> r, f;
  for (const auto& run : runs) {
    r.push_back(run.report.average_rmse(kind));
    f.push_back(run.report.average_frechet(kind));
  }
  line("Average", r, f);
}

void cmd_reproduce(const ReproduceArgs& a, const CLI::App* sub) {
  const auto t0 = Clock::now();
  const auto scm = load_scm_arg(a.gen.scm);
  const auto dir = output_dir(a.gen.out);
  ExperimentConfig cfg;
  cfg.n = a.gen.n;
  cfg.data_seed = a.gen.seed;
  cfg.train_fraction = a.train_fraction;
  cfg.grid_points = a.gen.grid_points;
  cfg.n_mc = a.gen.n_mc;
  cfg.truth_seed = a.gen.truth_seed;
  cfg.threads = a.gen.threads;
  cfg.train = a.train.config(0);
  cfg.model = a.train.model(0, true);

  auto p = prepare_data(scm.graph(), sample(scm, cfg.n, cfg.data_seed), cfg.train_fraction, cfg.data_seed);
  cfg.hessian = hessian_arg(a.hessian, p.graph.inputs().size());
  auto settings = feature_settings(p, cfg.grid_points);
  auto truth = normalized_truth(scm, p, settings, cfg.n_mc, cfg.truth_seed, cfg.threads);
  write_csv_file((dir / "data.csv").string(), p.raw);
  write_curves_file((dir / "truth.csv").string(), flatten(truth.curves));

  std::vector<SeedRun> with, without;
  for (auto seed : parse_list<std::uint64_t>(a.seeds, "seed")) {
    for (bool l0 : {true, false}) {
      auto run = run_seed(p, settings, truth.curves, cfg, seed, l0);
      const std::string tag = std::string(l0 ? "with" : "without") + "_layer0_seed" + std::to_string(seed);
      write_curves_file((dir / ("curves_" + tag + ".csv")).string(), flatten(run.learned));
      write_losses(dir / ("losses_" + tag + ".csv"), run.log);
      std::printf("seed %llu %s layer 0: ACE rmse %.4f frechet %.4f, held-out rmse %.4f\n", static_cast<unsigned long long>(seed),
                  l0 ? "with" : "without", run.report.average_rmse(EffectKind::ace), run.report.average_frechet(EffectKind::ace),
                  run.test_rmse);
      (l0 ? with : without).push_back(std::move(run));
    }
  }
  with_file(dir / "synthetic_ace.csv", [&](std::ostream& os) { write_table(os, with, EffectKind::ace); });
  {
    auto os = open_out(dir / "ablation.csv");
    os << "model,ace_rmse_mean,ace_rmse_std\n";
    for (const auto* runs : {&with, &without}) {
      std::vector<double> r;
      for (const auto& run : *runs) r.push_back(run.report.average_rmse(EffectKind::ace));
      auto ms = mean_std(r);
      os << (runs == &with ? "with_layer0" : "without_layer0") << ',' << num(ms.mean) << ',' << num(ms.stddev) << '\n';
    }
  }
  write_manifest(dir, sub);
  std::printf("done in %.1f s; tables in %s\n", seconds_since(t0), dir.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ante-hoc causal explanations: data, training, effect curves and scoring", "ahce"};
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  std::string config;
  auto add_common = [&](CLI::App* sub) { sub->add_option("--config", config, "manifest.json whose options override these flags"); };

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Sample an SCM and compute reference effect curves");
  g->add_option("--scm", gen.scm, "SCM file or 'builtin'");
  g->add_option("--n", gen.n, "Rows to sample")->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed, "Sampling seed");
  g->add_option("--grid-points", gen.grid_points, "Intervention grid size per feature")->check(CLI::PositiveNumber);
  g->add_option("--n-mc", gen.n_mc, "Monte Carlo samples per grid point")->check(CLI::PositiveNumber);
  g->add_option("--truth-seed", gen.truth_seed, "Monte Carlo seed");
  g->add_option("--threads", gen.threads, "Worker threads for the reference curves")->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out, "Output directory");
  add_common(g);

  IngestArgs ing;
  auto* i = app.add_subcommand("ingest", "Validate a CSV against a graph and record normalization");
  i->add_option("--csv", ing.csv, "Raw CSV")->required();
  i->add_option("--graph", ing.graph, "Graph file, SCM file, or 'builtin'")->required();
  i->add_option("--grid-points", ing.grid_points, "Grid size for continuous features")->check(CLI::PositiveNumber);
  i->add_option("--out", ing.out, "Output directory");
  add_common(i);

  TrainVerbArgs tr;
  auto* t = app.add_subcommand("train", "Train a model with or without layer 0");
  tr.data.add(t);
  tr.train.add(t);
  t->add_option("--seed", tr.seed, "Initialization and row-order seed");
  t->add_flag("--no-layer0", tr.no_layer0, "Train the plain network without lateral functions");
  t->add_option("--out", tr.out, "Output directory");
  add_common(t);

  ExplainArgs ex;
  auto* e = app.add_subcommand("explain", "Effect curves of every feature");
  ex.data.add(e);
  e->add_option("--checkpoint", ex.checkpoint, "checkpoint.txt from train")->required();
  e->add_option("--grid-points", ex.grid_points, "Intervention grid size")->check(CLI::PositiveNumber);
  e->add_option("--hessian", ex.hessian, "auto, exact or gauss-newton")->check(CLI::IsMember({"auto", "exact", "gauss-newton"}));
  e->add_flag("--binned", ex.binned, "Also answer from a precomputed bin store and time both paths");
  e->add_option("--max-distance", ex.max_distance, "Cluster radius in unit-scaled input space");
  e->add_option("--point", ex.point, "Held-out row used as the binned query point");
  e->add_option("--queries", ex.queries, "Benchmark queries")->check(CLI::PositiveNumber);
  e->add_option("--bench-seed", ex.bench_seed, "Benchmark query seed");
  e->add_option("--out", ex.out, "Output directory");
  add_common(e);

  EvaluateArgs ev;
  auto* v = app.add_subcommand("evaluate", "Score learned curves against reference curves");
  v->add_option("--learned", ev.learned, "Learned curve CSVs, comma separated, one per seed")->required();
  v->add_option("--truth", ev.truth, "Reference curve CSV")->required();
  v->add_option("--kinds", ev.kinds, "Effect kinds to score, comma separated");
  v->add_option("--out", ev.out, "Output directory");
  add_common(v);

  BenchArgs be;
  auto* b = app.add_subcommand("bench-binning", "Time exact against binned effect queries");
  be.data.add(b);
  b->add_option("--checkpoint", be.checkpoint, "checkpoint.txt from train")->required();
  b->add_option("--grid-points", be.grid_points, "Offline grid size")->check(CLI::PositiveNumber);
  b->add_option("--hessian", be.hessian, "auto, exact or gauss-newton")->check(CLI::IsMember({"auto", "exact", "gauss-newton"}));
  b->add_option("--max-distance", be.max_distance, "Cluster radius in unit-scaled input space");
  b->add_option("--queries", be.queries, "Number of queries")->check(CLI::PositiveNumber);
  b->add_option("--seed", be.seed, "Query seed");
  b->add_option("--out", be.out, "Output directory");
  add_common(b);

  ReproduceArgs re;
  re.gen.out = "reproduction";
  auto* r = app.add_subcommand("reproduce", "Synthetic experiment and layer-0 ablation over a seed sweep");
  r->add_option("--scm", re.gen.scm, "SCM file or 'builtin'");
  r->add_option("--n", re.gen.n, "Rows to sample")->check(CLI::PositiveNumber);
  r->add_option("--data-seed", re.gen.seed, "Sampling and split seed");
  r->add_option("--train-fraction", re.train_fraction, "Share of rows used for training");
  r->add_option("--grid-points", re.gen.grid_points, "Intervention grid size")->check(CLI::PositiveNumber);
  r->add_option("--n-mc", re.gen.n_mc, "Monte Carlo samples per grid point")->check(CLI::PositiveNumber);
  r->add_option("--truth-seed", re.gen.truth_seed, "Monte Carlo seed");
  r->add_option("--threads", re.gen.threads, "Worker threads for the reference curves")->check(CLI::PositiveNumber);
  r->add_option("--seeds", re.seeds, "Training seeds, comma separated");
  r->add_option("--hessian", re.hessian, "auto, exact or gauss-newton")->check(CLI::IsMember({"auto", "exact", "gauss-newton"}));
  re.train.add(r);
  r->add_option("--out", re.gen.out, "Output directory");
  add_common(r);

  try {
    auto args = expand_args(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
    if (g->parsed()) cmd_generate(gen, g);
    if (i->parsed()) cmd_ingest(ing, i);
    if (t->parsed()) cmd_train(tr, t);
    if (e->parsed()) cmd_explain(ex, e);
    if (v->parsed()) cmd_evaluate(ev, v);
    if (b->parsed()) cmd_bench(be, b);
    if (r->parsed()) cmd_reproduce(re, r);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::CallForAllHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& pe) {
    app.exit(pe);
    return 1;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return err.exit_code();
  } catch (const std::exception& ex_) {
    std::cerr << "error: " << ex_.what() << '\n';
    return 2;
  }
  return 0;
}
