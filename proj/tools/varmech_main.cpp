// Command-line front end: train / sweep / activity / oracle / gradcheck.
// Every run writes a self-describing bundle (CSV artifacts, checkpoints and a
// manifest with content hashes) into the chosen output directory.

#include "varmech/analysis.hpp"
#include "varmech/io.hpp"
#include "varmech/oracles.hpp"
#include "varmech/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace varmech;
namespace fs = std::filesystem;

namespace {

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

prob::ProblemConfig load_config_or_default(const std::string& path, const std::string& kind) {
  if (!path.empty()) return io::load_problem_config(path);
  return io::default_problem_config(prob::problem_kind_from_string(kind));
}

uint64_t config_hash(const prob::ProblemConfig& cfg) {
  const std::string dump = io::problem_config_to_json(cfg).dump();
  return io::fnv1a64(dump.data(), dump.size());
}

std::vector<double> parse_grid(const std::string& spec_str, prob::ProblemKind kind,
                               const std::string& feature) {
  if (spec_str.empty()) return analysis::default_sweep_grid(kind, feature);
  double lo, hi, step;
  if (std::sscanf(spec_str.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3 || step <= 0.0 ||
      hi < lo)
    throw io::ConfigError("grid must be lo:hi:step with step > 0");
  std::vector<double> g;
  for (double v = lo; v <= hi + 1e-12 * step; v += step) g.push_back(v);
  return g;
}

std::string detect_sweep_feature(const train::TrainedModel& model) {
  // the swept axis is the feature that varies across training samples, or
  // the family prefix for single-sample models
  const auto& ss = model.samples;
  auto varies = [&](auto getter) {
    for (size_t i = 1; i < ss.size(); ++i)
      if (getter(ss[i]) != getter(ss[0])) return true;
    return false;
  };
  if (model.kind == prob::ProblemKind::brachistochrone) return "h";
  if (model.kind == prob::ProblemKind::catenary) {
    if (varies([](const prob::SampleFeatures& f) { return f.l; })) return "l";
    if (varies([](const prob::SampleFeatures& f) { return f.h; })) return "h";
    return ss[0].label.front() == 'l' ? "l" : "h";
  }
  if (varies([](const prob::SampleFeatures& f) { return f.b; })) return "b";
  if (varies([](const prob::SampleFeatures& f) { return f.theta; })) return "theta";
  if (varies([](const prob::SampleFeatures& f) { return f.p; })) return "p";
  switch (ss[0].label.front()) {
  case 'b': return "b";
  case 't': return "theta";
  default: return "p";
  }
}

void write_la_bundle(const train::TrainedModel& model, const analysis::LearningActivityTable& t,
                     io::ReportBundle& bundle, int top_k) {
  const auto& names = model.params.nets[0].scaling.names;
  const auto dep = prob::sample_dependent_features(model.kind);
  io::write_la_csv(t, names, dep, bundle.path("la.csv").string());
  bundle.add("la.csv");

  auto ranking = analysis::rank_paths(t, top_k, names, dep);
  nlohmann::json j;
  j["top_k"] = top_k;
  j["sample_dependent_fraction"] = ranking.sample_dependent_fraction;
  nlohmann::json paths = nlohmann::json::array();
  for (const auto& p : ranking.paths)
    paths.push_back({{"i0", p.i0},
                     {"i1", p.i1},
                     {"i2", p.i2},
                     {"i3", p.i3},
                     {"la", p.la},
                     {"origin", p.origin_feature},
                     {"sample_dependent", p.sample_dependent}});
  j["paths"] = paths;
  std::ofstream f(bundle.path("la_topk.json"));
  f << j.dump(1);
  bundle.add("la_topk.json");
}

nlohmann::json la_to_json(const analysis::LearningActivityTable& t) {
  return {{"n0", t.n0},       {"n1", t.n1},         {"n2", t.n2},        {"n3", t.n3},
          {"sums", t.sums},   {"epochs", t.epochs}, {"points", t.points}};
}

analysis::LearningActivityTable la_from_json(const nlohmann::json& j) {
  analysis::LearningActivityTable t;
  t.n0 = j.at("n0").get<int>();
  t.n1 = j.at("n1").get<int>();
  t.n2 = j.at("n2").get<int>();
  t.n3 = j.at("n3").get<int>();
  t.sums = j.at("sums").get<std::vector<double>>();
  t.epochs = j.at("epochs").get<long>();
  t.points = j.at("points").get<int>();
  return t;
}

struct TrainArgs {
  std::string problem_path, kind_name = "brachistochrone", family, out = "out";
  uint64_t seed = 0;
  int max_loops = 0;
  int epochs_per_sample = 0;
  double alpha = 0.0;
  double stop_tol = -1.0;
  bool pooled = false, reset_opt = false;
};

int cmd_train(const TrainArgs& a, const std::string& cmdline) {
  prob::ProblemConfig cfg = load_config_or_default(a.problem_path, a.kind_name);
  auto samples = prob::make_sample_set(cfg.kind, a.family);
  cfg.disc.seed = a.seed;

  train::Schedule sched = io::default_schedule(cfg.kind, a.seed);
  if (a.max_loops > 0) sched.max_loops = a.max_loops;
  if (a.epochs_per_sample > 0) sched.epochs_per_sample = a.epochs_per_sample;
  if (a.alpha > 0.0) sched.alpha = a.alpha;
  if (a.stop_tol >= 0.0) sched.stop_tol = a.stop_tol;
  sched.pooled = a.pooled;
  sched.reset_opt_on_switch = a.reset_opt;

  prob::ModelParams init = prob::default_model(cfg.kind, a.seed);

  const bool record_la = cfg.kind != prob::ProblemKind::plate && !a.pooled;
  analysis::LaAccumulator la;
  train::TrainedModel model =
      train::train_switchable(cfg, init, samples, sched, record_la ? &la : nullptr);
  model.family = a.family;

  fs::create_directories(a.out);
  io::ReportBundle bundle{a.out, {}};
  io::write_trace_csv(model.trace, bundle.path("trace.csv").string());
  bundle.add("trace.csv");
  io::write_trace_svg(model.trace, bundle.path("trace.svg").string());
  bundle.add("trace.svg");

  nlohmann::json run = train::run_to_json(model);
  if (record_la && la.table().epochs > 0) run["la"] = la_to_json(la.table());
  {
    std::ofstream f(bundle.path("run.json"));
    f << run.dump();
  }
  bundle.add("run.json");
  for (size_t i = 0; i < model.params.nets.size(); ++i) {
    const std::string name = model.params.nets.size() == 1
                                 ? "checkpoint.json"
                                 : std::string("checkpoint_") + "uvw"[i] + ".json";
    net::save_checkpoint(model.params.nets[i], bundle.path(name).string());
    bundle.add(name);
  }
  if (record_la && la.table().epochs > 0) write_la_bundle(model, la.table(), bundle, 10);
  io::write_manifest(bundle, cmdline, config_hash(cfg), a.seed);

  std::printf("trained %s: %d loops, %ld epochs, stable onset %s\n", a.family.c_str(),
              model.loops_done, model.total_epochs,
              model.stable_onset ? std::to_string(*model.stable_onset).c_str() : "none");
  return model.stable_onset ? io::exit_ok : io::exit_not_stable;
}

int cmd_sweep(const std::string& problem_path, const std::string& kind_name,
              const std::string& checkpoint, const std::string& out,
              const std::string& feature_in, const std::string& grid_spec, int oracle_n,
              const std::string& cache_dir, const std::string& cmdline) {
  train::TrainedModel model = train::load_run(checkpoint);
  prob::ProblemConfig cfg = load_config_or_default(
      problem_path, kind_name.empty() ? prob::to_string(model.kind) : kind_name);
  const std::string feature = feature_in.empty() ? detect_sweep_feature(model) : feature_in;
  auto grid = parse_grid(grid_spec, cfg.kind, feature);

  analysis::GeneralizationReport rep =
      cfg.kind == prob::ProblemKind::plate
          ? analysis::generalization_sweep_plate(model, cfg, feature, grid, oracle_n, cache_dir)
          : analysis::generalization_sweep(model, cfg, feature, grid);

  fs::create_directories(out);
  io::ReportBundle bundle{out, {}};
  io::write_sweep_csv(rep, bundle.path("sweep.csv").string());
  bundle.add("sweep.csv");
  io::write_sweep_summary(rep, bundle.path("summary.json").string());
  bundle.add("summary.json");
  io::write_sweep_svg(rep, bundle.path("sweep.svg").string());
  bundle.add("sweep.svg");
  io::write_manifest(bundle, cmdline, config_hash(cfg), model.schedule.seed);

  std::printf("sweep %s over %s: %zu points, intervals:", model.family.c_str(), feature.c_str(),
              rep.points.size());
  for (const auto& iv : rep.intervals) std::printf(" [%g, %g]", iv.lo, iv.hi);
  std::printf("\n");
  return io::exit_ok;
}

int cmd_activity(const std::string& checkpoint, const std::string& out, int top_k,
                 const std::string& cmdline) {
  std::ifstream f(checkpoint);
  if (!f) throw train::CorruptCheckpoint("cannot open checkpoint: " + checkpoint);
  nlohmann::json j = nlohmann::json::parse(f);
  train::TrainedModel model = train::run_from_json(j);
  if (model.kind == prob::ProblemKind::plate || !j.contains("la"))
    throw diff::UnsupportedDepth(
        "learning activity is recorded only for 2-hidden-layer curve networks");
  analysis::LearningActivityTable table = la_from_json(j.at("la"));

  fs::create_directories(out);
  io::ReportBundle bundle{out, {}};
  write_la_bundle(model, table, bundle, top_k);
  io::write_manifest(bundle, cmdline, 0, model.schedule.seed);

  const auto dep = prob::sample_dependent_features(model.kind);
  auto ranking = analysis::rank_paths(table, top_k, model.params.nets[0].scaling.names, dep);
  std::printf("learning activity %s: %zu paths, top-%d sample-dependent fraction %.3f\n",
              model.family.c_str(), table.size(), top_k, ranking.sample_dependent_fraction);
  return io::exit_ok;
}

int cmd_oracle(const std::string& problem_path, const std::string& kind_name, double h, double l,
               double p, double b, double theta, int points, int grid_n,
               const std::string& cache_dir, const std::string& out,
               const std::string& cmdline) {
  prob::ProblemConfig cfg = load_config_or_default(problem_path, kind_name);
  fs::create_directories(out);
  io::ReportBundle bundle{out, {}};
  nlohmann::json meta;
  meta["problem"] = prob::to_string(cfg.kind);

  if (cfg.kind == prob::ProblemKind::plate) {
    prob::SampleFeatures s;
    s.p = p;
    s.b = b;
    s.theta = theta;
    oracle::PlateSolveOptions opt;
    opt.n = grid_n;
    auto ref = cache_dir.empty() ? oracle::solve_plate_reference(s, cfg.material, opt)
                                 : oracle::solve_plate_cached(s, cfg.material, opt, cache_dir);
    std::ofstream fc(bundle.path("fields.csv"));
    fc << "xi,eta,u,v,w\n";
    for (int i = 0; i < ref.n; ++i)
      for (int jj = 0; jj < ref.n; ++jj)
        fc << io::format_double(ref.xi[i]) << ',' << io::format_double(ref.eta[jj]) << ','
           << io::format_double(ref.at(ref.u, i, jj)) << ','
           << io::format_double(ref.at(ref.v, i, jj)) << ','
           << io::format_double(ref.at(ref.w, i, jj)) << '\n';
    fc.close();
    bundle.add("fields.csv");
    meta["center_w"] = ref.center_w();
    meta["energy"] = ref.energy;
    meta["iterations"] = ref.iterations;
    meta["grad_norm"] = ref.grad_norm;
    meta["grad_norm_initial"] = ref.grad_norm0;
  } else {
    prob::SampleFeatures s;
    s.h = h;
    s.l = l;
    auto xg = prob::uniform_grid(0.0, cfg.geometry.span, points);
    auto y = oracle::oracle_curve(cfg.kind, s, xg, cfg.geometry);
    std::ofstream fc(bundle.path("curve.csv"));
    fc << "x,y\n";
    for (size_t i = 0; i < xg.size(); ++i)
      fc << io::format_double(xg[i]) << ',' << io::format_double(y[i]) << '\n';
    fc.close();
    bundle.add("curve.csv");
    if (cfg.kind == prob::ProblemKind::brachistochrone) {
      auto sol = oracle::solve_cycloid(cfg.geometry.span, h, cfg.geometry.g);
      meta["radius"] = sol.radius;
      meta["phi_b"] = sol.phi_b;
      meta["travel_time"] = sol.travel_time;
    } else {
      auto sol = oracle::solve_catenary(cfg.geometry.span, h, l);
      meta["a"] = sol.a;
      meta["x0"] = sol.x0;
      meta["c"] = sol.c;
      meta["max_residual"] = sol.max_residual();
    }
  }
  {
    std::ofstream fm(bundle.path("oracle.json"));
    fm << meta.dump(1);
  }
  bundle.add("oracle.json");
  io::write_manifest(bundle, cmdline, config_hash(cfg), 0);
  std::printf("oracle written to %s\n", out.c_str());
  return io::exit_ok;
}

int cmd_gradcheck(uint64_t seed) {
  double worst_overall = 0.0;
  Rng rng(seed);
  auto directional = [&](prob::LossFunction& loss, std::span<const double> flat, int reps,
                         double step) {
    std::vector<double> grad(flat.size());
    loss.value_and_grad(flat, grad);
    double worst = 0.0;
    std::vector<double> dir(flat.size()), qp(flat.begin(), flat.end()),
        qm(flat.begin(), flat.end());
    for (int rep = 0; rep < reps; ++rep) {
      for (auto& d : dir) d = rng.uniform(-1.0, 1.0);
      double gd = 0.0;
      for (size_t i = 0; i < flat.size(); ++i) gd += grad[i] * dir[i];
      for (size_t i = 0; i < flat.size(); ++i) {
        qp[i] = flat[i] + step * dir[i];
        qm[i] = flat[i] - step * dir[i];
      }
      const double fd = (loss.value(qp) - loss.value(qm)) / (2.0 * step);
      worst = std::max(worst, std::abs(gd - fd) / std::max({std::abs(gd), std::abs(fd), 1e-12}));
    }
    return worst;
  };

  for (auto kind : {prob::ProblemKind::brachistochrone, prob::ProblemKind::catenary}) {
    prob::ProblemConfig cfg = io::default_problem_config(kind);
    auto samples = prob::make_sample_set(kind, "h50");
    train::Schedule sched = io::default_schedule(kind, seed);
    sched.max_loops = 3; // brief descent clears the speed-guard kinks
    auto model = train::train_switchable(cfg, prob::default_model(kind, seed), samples, sched);
    auto loss = prob::make_loss(cfg, model.params, samples[0]);
    const double worst = directional(*loss, prob::flatten_model(model.params), 100, 1e-7);
    std::printf("%-15s worst relative error %.3g\n", prob::to_string(kind).c_str(), worst);
    worst_overall = std::max(worst_overall, worst);
  }
  {
    prob::ProblemConfig cfg = io::default_problem_config(prob::ProblemKind::plate);
    auto samples = prob::make_sample_set(prob::ProblemKind::plate, "p5");
    auto model = prob::default_model(prob::ProblemKind::plate, seed);
    prob::DiscretizationSpec disc = cfg.disc;
    disc.qp = 128;
    disc.seed = seed;
    prob::PlateLoss loss(model, cfg.material, samples[0], disc, true);
    const double worst = directional(loss, prob::flatten_model(model), 100, 1e-6);
    std::printf("%-15s worst relative error %.3g\n", "plate", worst);
    worst_overall = std::max(worst_overall, worst);
  }
  std::printf("gradcheck %s (worst %.3g)\n", worst_overall < 1e-4 ? "PASS" : "FAIL",
              worst_overall);
  return worst_overall < 1e-4 ? io::exit_ok : 1;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"sample-switchable training of variational mechanics networks"};
  app.set_help_flag("--help", "print help");
  app.require_subcommand(1);
  const std::string cmdline = join_args(argc, argv);

  TrainArgs targs;
  std::string problem_path, kind_name, checkpoint, feature, grid_spec, out = "out";
  std::string cache_dir = oracle::default_cache_dir();
  uint64_t seed = 0;
  int top_k = 10, points = 101, grid_n = 41;
  double h = 60.0, l = 140.0, p = 1e-5, b = 30.0, theta = 0.0;

  auto* t = app.add_subcommand("train", "train one model family member");
  t->add_option("--problem", targs.problem_path, "problem definition file (json)");
  t->add_option("--kind", targs.kind_name, "problem kind when no file is given");
  t->add_option("--family", targs.family, "model label, e.g. h(30-50-70)")->required();
  t->add_option("--seed", targs.seed);
  t->add_option("--out", targs.out);
  t->add_option("--max-loops", targs.max_loops);
  t->add_option("--epochs-per-sample", targs.epochs_per_sample);
  t->add_option("--alpha", targs.alpha);
  t->add_option("--stop-tol", targs.stop_tol);
  t->add_flag("--pooled", targs.pooled, "mean-of-samples baseline instead of switching");
  t->add_flag("--reset-opt-on-switch", targs.reset_opt);

  auto* s = app.add_subcommand("sweep", "generalization sweep of a trained model");
  s->add_option("--problem", problem_path);
  s->add_option("--kind", kind_name);
  s->add_option("--checkpoint", checkpoint)->required();
  s->add_option("--out", out);
  s->add_option("--feature", feature, "swept feature (default: the family axis)");
  s->add_option("--grid", grid_spec, "lo:hi:step (default: the per-feature grid)");
  s->add_option("--oracle-n", grid_n, "plate reference grid nodes per side");
  s->add_option("--cache", cache_dir, "plate oracle cache directory");

  auto* a = app.add_subcommand("activity", "learning-activity table of a trained model");
  a->add_option("--checkpoint", checkpoint)->required();
  a->add_option("--out", out);
  a->add_option("--top-k", top_k);

  auto* o = app.add_subcommand("oracle", "ground-truth solutions");
  o->add_option("--problem", problem_path);
  o->add_option("--kind", kind_name);
  o->add_option("--h", h);
  o->add_option("--l", l);
  o->add_option("--p", p);
  o->add_option("--b", b);
  o->add_option("--theta", theta);
  o->add_option("--points", points);
  o->add_option("--grid-n", grid_n);
  o->add_option("--cache", cache_dir);
  o->add_option("--out", out);

  auto* g = app.add_subcommand("gradcheck", "finite-difference check of all loss gradients");
  g->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : io::exit_config_error;
  }

  try {
    if (t->parsed()) return cmd_train(targs, cmdline);
    if (s->parsed())
      return cmd_sweep(problem_path, kind_name, checkpoint, out, feature, grid_spec, grid_n,
                       cache_dir, cmdline);
    if (a->parsed()) return cmd_activity(checkpoint, out, top_k, cmdline);
    if (o->parsed())
      return cmd_oracle(problem_path, kind_name.empty() ? "brachistochrone" : kind_name, h, l, p,
                        b, theta, points, grid_n, cache_dir, out, cmdline);
    if (g->parsed()) return cmd_gradcheck(seed);
  } catch (const prob::InfeasibleSample& e) {
    std::fprintf(stderr, "infeasible sample: %s\n", e.what());
    return io::exit_infeasible;
  } catch (const oracle::InfeasibleChain& e) {
    std::fprintf(stderr, "infeasible sample: %s\n", e.what());
    return io::exit_infeasible;
  } catch (const oracle::NoRoot& e) {
    std::fprintf(stderr, "infeasible sample: %s\n", e.what());
    return io::exit_infeasible;
  } catch (const train::DivergenceDetected& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return io::exit_divergence;
  } catch (const train::NonFiniteLoss& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return io::exit_divergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return io::exit_config_error;
  }
  return io::exit_ok;
}
