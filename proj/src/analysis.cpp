#include "varmech/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace varmech::analysis {

double r_squared(std::span<const double> pred, std::span<const double> exact) {
  if (pred.size() != exact.size() || pred.size() < 2)
    throw std::invalid_argument("r_squared needs two equally sized series");
  double mean = 0.0;
  for (double e : exact) mean += e;
  mean /= exact.size();
  double ss_res = 0.0, ss_tot = 0.0;
  for (size_t i = 0; i < exact.size(); ++i) {
    ss_res += (pred[i] - exact[i]) * (pred[i] - exact[i]);
    ss_tot += (exact[i] - mean) * (exact[i] - mean);
  }
  if (ss_tot == 0.0) throw ConstantReference("reference series has zero variance");
  return 1.0 - ss_res / ss_tot;
}

std::vector<Interval> generalization_range(std::span<const GeneralizationPoint> points,
                                           double threshold) {
  std::vector<Interval> out;
  size_t i = 0;
  while (i < points.size()) {
    if (points[i].feasible && points[i].r2 >= threshold) {
      size_t j = i;
      while (j + 1 < points.size() && points[j + 1].feasible && points[j + 1].r2 >= threshold)
        ++j;
      out.push_back({points[i].feature, points[j].feature});
      i = j + 1;
    } else {
      ++i;
    }
  }
  return out;
}

double total_width(std::span<const Interval> intervals) {
  double w = 0.0;
  for (const auto& iv : intervals) w += iv.width();
  return w;
}

std::vector<Interval> interval_union(const std::vector<std::vector<Interval>>& sets) {
  std::vector<Interval> all;
  for (const auto& s : sets) all.insert(all.end(), s.begin(), s.end());
  std::sort(all.begin(), all.end(), [](const Interval& a, const Interval& b) {
    return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi);
  });
  std::vector<Interval> merged;
  for (const auto& iv : all) {
    if (!merged.empty() && iv.lo <= merged.back().hi)
      merged.back().hi = std::max(merged.back().hi, iv.hi);
    else
      merged.push_back(iv);
  }
  return merged;
}

std::optional<Interval> interval_containing(std::span<const Interval> intervals,
                                            std::span<const double> values) {
  for (const auto& iv : intervals) {
    bool all = true;
    for (double v : values) all = all && iv.contains(v);
    if (all) return iv;
  }
  return std::nullopt;
}

std::vector<double> default_sweep_grid(prob::ProblemKind kind, const std::string& feature) {
  using prob::ProblemKind;
  std::vector<double> g;
  if (kind == ProblemKind::brachistochrone && feature == "h") {
    for (int h = 5; h <= 120; ++h) g.push_back(h);
  } else if (kind == ProblemKind::catenary && feature == "h") {
    for (int h = 0; h <= 90; ++h) g.push_back(h);
  } else if (kind == ProblemKind::catenary && feature == "l") {
    for (int l = 100; l <= 200; ++l) g.push_back(l);
  } else if (kind == ProblemKind::plate && feature == "p") {
    for (int i = 0; i < 50; ++i) g.push_back(1e-6 * std::pow(100.0, i / 49.0));
  } else if (kind == ProblemKind::plate && feature == "b") {
    for (int b = 10; b <= 100; b += 2) g.push_back(b);
  } else if (kind == ProblemKind::plate && feature == "theta") {
    for (int i = 0; i <= 64; ++i) g.push_back(std::numbers::pi * i / 64.0);
  } else {
    throw std::invalid_argument("no sweep grid for feature " + feature);
  }
  return g;
}

std::vector<double> predict_curve(const prob::ModelParams& model, prob::ProblemKind kind,
                                  const prob::SampleFeatures& sample,
                                  std::span<const double> x_grid) {
  std::vector<double> y(x_grid.size());
  std::vector<double> in;
  for (size_t i = 0; i < x_grid.size(); ++i) {
    in = {x_grid[i], sample.h};
    if (kind == prob::ProblemKind::catenary) in.push_back(sample.l);
    y[i] = net::forward(model.nets[0], in)[0];
  }
  return y;
}

uint64_t param_checksum(const prob::ModelParams& model) {
  const std::vector<double> flat = prob::flatten_model(model);
  uint64_t h = 14695981039346656037ull;
  for (double d : flat) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &d, sizeof(double));
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 1099511628211ull;
    }
  }
  return h;
}

namespace {

prob::SampleFeatures with_feature(const train::TrainedModel& model, const std::string& feature,
                                  double value) {
  // co-features inherited from the first training sample
  prob::SampleFeatures s = model.samples.front();
  if (feature == "h")
    s.h = value;
  else if (feature == "l")
    s.l = value;
  else if (feature == "p")
    s.p = value;
  else if (feature == "b")
    s.b = value;
  else if (feature == "theta")
    s.theta = value;
  else
    throw std::invalid_argument("unknown sweep feature " + feature);
  s.label = feature + std::to_string(value);
  return s;
}

double training_value(const prob::SampleFeatures& s, const std::string& feature) {
  if (feature == "h") return s.h;
  if (feature == "l") return s.l;
  if (feature == "p") return s.p;
  if (feature == "b") return s.b;
  return s.theta;
}

} // namespace

GeneralizationReport generalization_sweep(const train::TrainedModel& model,
                                          const prob::ProblemConfig& cfg,
                                          const std::string& feature,
                                          std::span<const double> grid, int curve_points) {
  const uint64_t checksum_before = param_checksum(model.params);

  GeneralizationReport rep;
  rep.feature_name = feature;
  for (const auto& s : model.samples) rep.training_values.push_back(training_value(s, feature));

  const std::vector<double> xg = prob::uniform_grid(0.0, cfg.geometry.span, curve_points);
  for (double v : grid) {
    GeneralizationPoint pt;
    pt.feature = v;
    prob::SampleFeatures s = with_feature(model, feature, v);
    try {
      const std::vector<double> exact = oracle::oracle_curve(cfg.kind, s, xg, cfg.geometry);
      const std::vector<double> pred = predict_curve(model.params, cfg.kind, s, xg);
      pt.r2 = r_squared(pred, exact);
    } catch (const oracle::OracleError&) {
      pt.feasible = false; // infeasible grid points are marked, not fatal
    } catch (const prob::InfeasibleSample&) {
      pt.feasible = false;
    }
    rep.points.push_back(pt);
  }
  rep.intervals = generalization_range(rep.points, rep.threshold);

  if (param_checksum(model.params) != checksum_before)
    throw std::logic_error("generalization sweep mutated model parameters");
  return rep;
}

PlateFieldScores plate_model_scores(const prob::ModelParams& model,
                                    const prob::SampleFeatures& sample,
                                    const oracle::PlateReference& ref) {
  const int n = ref.n;
  std::vector<double> pu, pv, pw, ou, ov, ow;
  pu.reserve(static_cast<size_t>(n) * n);
  const net::BoundaryEnvelope env{sample.b, sample.theta};
  std::vector<double> in(5);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double x, y;
      net::rotate_frame_inverse(ref.xi[i], ref.eta[j], sample.theta, x, y);
      in = {x, y, sample.p, sample.b, sample.theta};
      net::FieldTriple raw{net::forward(model.nets[0], in)[0], net::forward(model.nets[1], in)[0],
                           net::forward(model.nets[2], in)[0]};
      const net::FieldTriple c = net::apply_envelope(raw, x, y, env);
      pu.push_back(c.u);
      pv.push_back(c.v);
      pw.push_back(c.w);
      // reference fields rotated to the global frame
      double ug, vg, wg;
      ref.fields_global(x, y, ug, vg, wg);
      ou.push_back(ug);
      ov.push_back(vg);
      ow.push_back(wg);
    }
  }
  PlateFieldScores sc;
  sc.r2_u = r_squared(pu, ou);
  sc.r2_v = r_squared(pv, ov);
  sc.r2_w = r_squared(pw, ow);
  return sc;
}

GeneralizationReport generalization_sweep_plate(const train::TrainedModel& model,
                                                const prob::ProblemConfig& cfg,
                                                const std::string& feature,
                                                std::span<const double> grid, int oracle_n,
                                                const std::string& cache_dir) {
  const uint64_t checksum_before = param_checksum(model.params);

  GeneralizationReport rep;
  rep.feature_name = feature;
  for (const auto& s : model.samples) rep.training_values.push_back(training_value(s, feature));

  for (double v : grid) {
    GeneralizationPoint pt;
    pt.feature = v;
    prob::SampleFeatures s = with_feature(model, feature, v);
    try {
      oracle::PlateSolveOptions opt;
      opt.n = oracle_n;
      const oracle::PlateReference ref = oracle::solve_plate_cached(s, cfg.material, opt,
                                                                    cache_dir);
      pt.r2 = plate_model_scores(model.params, s, ref).min();
    } catch (const oracle::OracleError&) {
      pt.feasible = false;
    }
    rep.points.push_back(pt);
  }
  rep.intervals = generalization_range(rep.points, rep.threshold);

  if (param_checksum(model.params) != checksum_before)
    throw std::logic_error("generalization sweep mutated model parameters");
  return rep;
}

// ---- learning activity -----------------------------------------------------------

std::vector<double> LearningActivityTable::finalize() const {
  std::vector<double> la(sums.size());
  const double inv = epochs > 0 ? 1.0 / static_cast<double>(epochs) : 0.0;
  for (size_t i = 0; i < sums.size(); ++i) la[i] = sums[i] * inv;
  return la;
}

void accumulate_learning_activity(LearningActivityTable& table, const prob::CurveLossGraph& g) {
  if (g.points.empty() || g.points.front().z1.empty() || g.layer_sizes.size() != 4)
    throw diff::UnsupportedDepth("learning activity needs a 2-hidden-layer curve net");

  const int n0 = static_cast<int>(g.points.front().z0.size());
  const int n1 = static_cast<int>(g.points.front().z1.size());
  const int n2 = static_cast<int>(g.points.front().z2.size());
  const int n3 = static_cast<int>(g.points.front().z3.size());
  if (table.sums.empty()) {
    table.n0 = n0;
    table.n1 = n1;
    table.n2 = n2;
    table.n3 = n3;
    table.points = static_cast<int>(g.points.size());
    table.sums.assign(static_cast<size_t>(n0) * n1 * n2 * n3, 0.0);
  }

  // weight leaf spans in the canonical flat layout
  const int s0 = g.layer_sizes[0], s1 = g.layer_sizes[1], s2 = g.layer_sizes[2];
  const auto& pl = g.param_leaves;
  diff::TwoHiddenPointLayout lay;
  lay.w1 = std::span<const diff::Var>(pl.data(), static_cast<size_t>(s1) * s0);
  lay.w2 = std::span<const diff::Var>(pl.data() + s1 * s0 + s1, static_cast<size_t>(s2) * s1);
  lay.w3 = std::span<const diff::Var>(pl.data() + s1 * s0 + s1 + s2 * s1 + s2,
                                      static_cast<size_t>(g.layer_sizes[3]) * s2);
  lay.tanh_hidden = g.activation == net::Activation::tanh;

  for (const auto& pt : g.points) {
    lay.z0 = pt.z0;
    lay.z1 = pt.z1;
    lay.z2 = pt.z2;
    lay.z3 = pt.z3;
    const diff::PathPartials pp = diff::path_partials(g.tape, lay);
    for (int i0 = 0; i0 < n0; ++i0)
      for (int i1 = 0; i1 < n1; ++i1)
        for (int i2 = 0; i2 < n2; ++i2)
          for (int i3 = 0; i3 < n3; ++i3)
            table.sums[table.index(i0, i1, i2, i3)] +=
                std::abs(pp.path_product(i0, i1, i2, i3));
  }
  ++table.epochs;
}

void LaAccumulator::on_epoch(int sample_index, long epoch, prob::LossFunction& loss) {
  (void)sample_index;
  (void)epoch;
  auto* curve = dynamic_cast<prob::CurveLoss*>(&loss);
  if (!curve) throw diff::UnsupportedDepth("learning activity needs a 2-hidden-layer curve net");
  accumulate_learning_activity(table_, curve->graph());
}

PathRanking rank_paths(const LearningActivityTable& table, int k,
                       std::span<const std::string> input_feature_names,
                       std::span<const std::string> sample_dependent_names) {
  const std::vector<double> la = table.finalize();
  std::vector<RankedPath> all;
  all.reserve(la.size());
  for (int i0 = 0; i0 < table.n0; ++i0)
    for (int i1 = 0; i1 < table.n1; ++i1)
      for (int i2 = 0; i2 < table.n2; ++i2)
        for (int i3 = 0; i3 < table.n3; ++i3) {
          RankedPath p;
          p.i0 = i0;
          p.i1 = i1;
          p.i2 = i2;
          p.i3 = i3;
          p.la = la[table.index(i0, i1, i2, i3)];
          p.origin_feature = i0 < static_cast<int>(input_feature_names.size())
                                 ? input_feature_names[i0]
                                 : std::to_string(i0);
          p.sample_dependent = std::find(sample_dependent_names.begin(),
                                         sample_dependent_names.end(),
                                         p.origin_feature) != sample_dependent_names.end();
          all.push_back(std::move(p));
        }
  std::stable_sort(all.begin(), all.end(),
                   [](const RankedPath& a, const RankedPath& b) { return a.la > b.la; });
  if (k < static_cast<int>(all.size())) all.resize(k);

  PathRanking r;
  long dep = 0;
  for (const auto& p : all) dep += p.sample_dependent ? 1 : 0;
  r.sample_dependent_fraction = all.empty() ? 0.0 : static_cast<double>(dep) / all.size();
  r.paths = std::move(all);
  return r;
}

train::TrainedModel baseline_pooled_training(const prob::ProblemConfig& cfg,
                                             const prob::ModelParams& init,
                                             const std::vector<prob::SampleFeatures>& samples,
                                             train::Schedule sched) {
  sched.pooled = true;
  return train::train_switchable(cfg, init, samples, sched);
}

} // namespace varmech::analysis
