#include "varmech/problems.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>

namespace varmech::prob {

std::string to_string(ProblemKind k) {
  switch (k) {
  case ProblemKind::brachistochrone: return "brachistochrone";
  case ProblemKind::catenary: return "catenary";
  case ProblemKind::plate: return "plate";
  }
  return "?";
}

ProblemKind problem_kind_from_string(const std::string& s) {
  if (s == "brachistochrone") return ProblemKind::brachistochrone;
  if (s == "catenary") return ProblemKind::catenary;
  if (s == "plate") return ProblemKind::plate;
  throw ProblemError("unknown problem kind: " + s);
}

// ---- families ----------------------------------------------------------------

namespace {

struct FamilySpec {
  std::string prefix;
  std::vector<double> values;
  std::vector<std::string> value_labels;
};

FamilySpec parse_family(const std::string& family) {
  FamilySpec spec;
  size_t i = 0;
  while (i < family.size() && std::isalpha(static_cast<unsigned char>(family[i]))) ++i;
  if (i == 0) throw UnknownFamily("family label must start with a feature prefix: " + family);
  spec.prefix = family.substr(0, i);

  auto parse_value = [&](const std::string& tok) {
    if (tok.empty()) throw UnknownFamily("empty value in family label: " + family);
    double v{};
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
      throw UnknownFamily("bad value '" + tok + "' in family label: " + family);
    spec.values.push_back(v);
    spec.value_labels.push_back(tok);
  };

  std::string rest = family.substr(i);
  if (!rest.empty() && rest.front() == '(') {
    if (rest.back() != ')') throw UnknownFamily("unterminated family label: " + family);
    std::string body = rest.substr(1, rest.size() - 2);
    size_t pos = 0;
    while (true) {
      size_t dash = body.find('-', pos);
      parse_value(body.substr(pos, dash == std::string::npos ? dash : dash - pos));
      if (dash == std::string::npos) break;
      pos = dash + 1;
    }
  } else {
    parse_value(rest);
  }
  if (spec.values.empty()) throw UnknownFamily("no values in family label: " + family);
  return spec;
}

double chord_length(double span, double h) { return std::sqrt(span * span + h * h); }

} // namespace

std::vector<SampleFeatures> make_sample_set(ProblemKind kind, const std::string& family) {
  const FamilySpec spec = parse_family(family);
  const ProblemGeometry geom;
  std::vector<SampleFeatures> out;

  for (size_t k = 0; k < spec.values.size(); ++k) {
    const double v = spec.values[k];
    SampleFeatures s;
    switch (kind) {
    case ProblemKind::brachistochrone:
      if (spec.prefix != "h")
        throw UnknownFamily("brachistochrone families use prefix 'h': " + family);
      if (v <= 0.0) throw InfeasibleSample("brachistochrone requires h > 0");
      s.h = v;
      break;
    case ProblemKind::catenary:
      if (spec.prefix == "h") {
        s.h = v;
        s.l = 140.0;
      } else if (spec.prefix == "l") {
        s.h = 50.0;
        s.l = v;
      } else {
        throw UnknownFamily("catenary families use prefix 'h' or 'l': " + family);
      }
      if (s.l < chord_length(geom.span, s.h))
        throw InfeasibleSample("catenary requires l >= chord length");
      break;
    case ProblemKind::plate:
      if (spec.prefix == "p") {
        s.p = v * 1e-5;
        s.b = 30.0;
        s.theta = 0.0;
      } else if (spec.prefix == "b") {
        s.p = 1e-5;
        s.b = v * 10.0;
        s.theta = 0.0;
      } else if (spec.prefix == "theta") {
        s.p = 1e-5;
        s.b = 30.0;
        s.theta = v * 0.1 * std::numbers::pi;
      } else {
        throw UnknownFamily("plate families use prefix 'p', 'b' or 'theta': " + family);
      }
      if (s.b <= 0.0) throw InfeasibleSample("plate requires b > 0");
      break;
    }
    s.label = spec.prefix + spec.value_labels[k];
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> sample_dependent_features(ProblemKind kind) {
  switch (kind) {
  case ProblemKind::brachistochrone: return {"h"};
  case ProblemKind::catenary: return {"h", "l"};
  case ProblemKind::plate: return {"p", "b", "theta"};
  }
  return {};
}

net::FeatureScaling default_scaling(ProblemKind kind) {
  net::FeatureScaling s;
  const double span = ProblemGeometry{}.span;
  switch (kind) {
  case ProblemKind::brachistochrone:
    s.names = {"x", "h"};
    s.lo = {0.0, 0.0};
    s.hi = {span, 120.0};
    break;
  case ProblemKind::catenary:
    s.names = {"x", "h", "l"};
    s.lo = {0.0, 0.0, 95.0};
    s.hi = {span, 120.0, 200.0};
    break;
  case ProblemKind::plate:
    s.names = {"x", "y", "p", "b", "theta"};
    s.lo = {-75.0, -75.0, 0.0, 10.0, 0.0};
    s.hi = {75.0, 75.0, 1e-4, 100.0, std::numbers::pi};
    break;
  }
  return s;
}

size_t ModelParams::param_count() const {
  size_t n = 0;
  for (const auto& p : nets) n += p.param_count();
  return n;
}

ModelParams default_model(ProblemKind kind, uint64_t seed) {
  ModelParams m;
  const net::FeatureScaling scaling = default_scaling(kind);
  if (kind == ProblemKind::plate) {
    // one independent net per displacement field; deflection and in-plane
    // fields live on very different physical scales
    const double scales[3] = {1e-3, 1e-3, 0.2};
    for (int f = 0; f < 3; ++f) {
      net::MlpParams p = net::init_mlp({5, 15, 15, 15, 15, 15, 1}, Rng(seed).split(f + 1).state);
      p.scaling = scaling;
      p.output_scale = scales[f];
      m.nets.push_back(std::move(p));
    }
  } else {
    const int n_in = kind == ProblemKind::brachistochrone ? 2 : 3;
    net::MlpParams p = net::init_mlp({n_in, 5, 5, 1}, seed);
    p.scaling = scaling;
    p.output_scale = 60.0;
    m.nets.push_back(std::move(p));
  }
  return m;
}

std::vector<double> flatten_model(const ModelParams& m) {
  std::vector<double> flat;
  flat.reserve(m.param_count());
  for (const auto& p : m.nets) {
    auto f = net::flatten(p);
    flat.insert(flat.end(), f.begin(), f.end());
  }
  return flat;
}

void unflatten_model(std::span<const double> flat, ModelParams& m) {
  size_t off = 0;
  for (auto& p : m.nets) {
    const size_t n = p.param_count();
    net::unflatten(flat.subspan(off, n), p);
    off += n;
  }
}

// ---- plain discrete functionals -----------------------------------------------

double polyline_length(std::span<const double> x, std::span<const double> y) {
  double len = 0.0;
  for (size_t i = 0; i + 1 < x.size(); ++i)
    len += std::hypot(x[i + 1] - x[i], y[i + 1] - y[i]);
  return len;
}

double polyline_travel_time(std::span<const double> x, std::span<const double> y, double g,
                            double v_floor, double sqrt_eps) {
  double t = 0.0;
  for (size_t i = 0; i + 1 < x.size(); ++i) {
    const double dx = x[i + 1] - x[i], dy = y[i + 1] - y[i];
    const double ds = std::sqrt(std::max(dx * dx + dy * dy, sqrt_eps));
    const double vi = std::sqrt(std::max(-2.0 * g * y[i], sqrt_eps));
    const double vj = std::sqrt(std::max(-2.0 * g * y[i + 1], sqrt_eps));
    const double vbar = std::max(0.5 * (vi + vj), v_floor);
    t += ds / vbar;
  }
  return t;
}

double polyline_potential(std::span<const double> x, std::span<const double> y, double rho_g) {
  double u = 0.0;
  for (size_t i = 0; i + 1 < x.size(); ++i) {
    const double dx = x[i + 1] - x[i], dy = y[i + 1] - y[i];
    const double ds = std::hypot(dx, dy);
    u += 0.5 * (y[i] + y[i + 1]) * ds * rho_g;
  }
  return u;
}

std::vector<double> uniform_grid(double lo, double hi, int n) {
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
  return g;
}

// ---- curve loss graphs ---------------------------------------------------------

CurveLossParts brachistochrone_loss_from_outputs(diff::Tape& tape, std::span<const diff::Var> y,
                                                 std::span<const double> x, double h,
                                                 const ProblemGeometry& geom,
                                                 const PenaltyWeights& w) {
  using namespace diff;
  const size_t n = y.size();
  const double sqrt_eps = 1e-9;

  // speeds from energy conservation, guarded against transient ascent
  std::vector<Var> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = sqrt_guard(y[i] * (-2.0 * geom.g), sqrt_eps);

  Var t_total = tape.constant(0.0);
  for (size_t i = 0; i + 1 < n; ++i) {
    const double dx = x[i + 1] - x[i];
    Var dy = y[i + 1] - y[i];
    Var ds = sqrt_guard(square(dy) + dx * dx, sqrt_eps);
    Var vbar = max_const((v[i] + v[i + 1]) * 0.5, 1e-4);
    t_total = t_total + ds / vbar;
  }

  Var bc = square(y[0]) + square(y[n - 1] + h);
  Var descent = tape.constant(0.0);
  for (size_t i = 0; i < n; ++i) descent = descent + square(relu(y[i]));

  Var loss = t_total + bc * w.lambda_bc + descent * w.lambda_desc;
  return {loss, t_total};
}

CurveLossParts catenary_loss_from_outputs(diff::Tape& tape, std::span<const diff::Var> y,
                                          std::span<const double> x, double h, double l,
                                          const ProblemGeometry& geom, const PenaltyWeights& w) {
  using namespace diff;
  const size_t n = y.size();
  const double sqrt_eps = 1e-9;

  Var potential = tape.constant(0.0);
  Var length = tape.constant(0.0);
  for (size_t i = 0; i + 1 < n; ++i) {
    const double dx = x[i + 1] - x[i];
    Var dy = y[i + 1] - y[i];
    Var ds = sqrt_guard(square(dy) + dx * dx, sqrt_eps);
    potential = potential + (y[i] + y[i + 1]) * 0.5 * ds * geom.rho_g;
    length = length + ds;
  }

  Var bc = square(y[0]) + square(y[n - 1] + h);
  Var loss = potential + bc * w.lambda_bc + square(length - l) * w.lambda_len;
  return {loss, potential};
}

CurveLossGraph build_curve_loss(ProblemKind kind, const net::MlpParams& mlp,
                                const SampleFeatures& sample, const DiscretizationSpec& disc,
                                const ProblemGeometry& geom, const PenaltyWeights& weights) {
  if (kind == ProblemKind::plate) throw ProblemError("build_curve_loss: not a curve problem");
  if (disc.qp < 3) throw DegenerateQuadrature("curve discretization needs at least 3 points");
  if (kind == ProblemKind::brachistochrone && sample.h <= 0.0)
    throw InfeasibleSample("brachistochrone requires h > 0");
  if (kind == ProblemKind::catenary && sample.l < chord_length(geom.span, sample.h))
    throw InfeasibleSample("catenary requires l >= chord length");

  CurveLossGraph g;
  g.sample = sample;
  g.activation = mlp.activation;
  g.layer_sizes = mlp.layer_sizes;
  g.x_nodes = uniform_grid(0.0, geom.span, disc.qp);
  g.param_leaves = net::make_param_leaves(g.tape, mlp);

  std::vector<diff::Var> outputs;
  for (int j = 0; j < disc.qp; ++j) {
    std::vector<double> feats = {g.x_nodes[j], sample.h};
    if (kind == ProblemKind::catenary) feats.push_back(sample.l);
    std::vector<diff::Var> z0(feats.size());
    for (size_t i = 0; i < feats.size(); ++i)
      z0[i] = g.tape.constant(mlp.scaling.to_unit(i, feats[i]));

    net::MlpTapeNodes nodes = net::build_forward(g.tape, mlp, g.param_leaves, z0);
    CurvePointNodes pt;
    pt.z0 = nodes.z0;
    if (nodes.hidden.size() == 2) {
      pt.z1 = nodes.hidden[0];
      pt.z2 = nodes.hidden[1];
    }
    pt.z3 = nodes.raw_out;
    pt.y = nodes.out[0];
    outputs.push_back(pt.y);
    g.points.push_back(std::move(pt));
  }

  CurveLossParts parts =
      kind == ProblemKind::brachistochrone
          ? brachistochrone_loss_from_outputs(g.tape, outputs, g.x_nodes, sample.h, geom, weights)
          : catenary_loss_from_outputs(g.tape, outputs, g.x_nodes, sample.h, sample.l, geom,
                                       weights);
  g.loss_root = parts.loss;
  g.functional_root = parts.functional;
  return g;
}

// ---- CurveLoss -------------------------------------------------------------------

CurveLoss::CurveLoss(ProblemKind kind, const net::MlpParams& mlp, const SampleFeatures& sample,
                     const DiscretizationSpec& disc, const ProblemGeometry& geom,
                     const PenaltyWeights& weights)
    : graph_(build_curve_loss(kind, mlp, sample, disc, geom, weights)) {
  label_ = sample.label;
}

double CurveLoss::value_and_grad(std::span<const double> params, std::span<double> grad) {
  ++evals_;
  net::assign_param_leaves(graph_.tape, graph_.param_leaves, params);
  graph_.tape.forward();
  graph_.tape.backward(graph_.loss_root);
  for (size_t k = 0; k < graph_.param_leaves.size(); ++k)
    grad[k] = graph_.tape.adj[graph_.param_leaves[k].id];
  return graph_.tape.value(graph_.loss_root);
}

double CurveLoss::value(std::span<const double> params) {
  ++evals_;
  net::assign_param_leaves(graph_.tape, graph_.param_leaves, params);
  graph_.tape.forward();
  return graph_.tape.value(graph_.loss_root);
}

std::unique_ptr<LossFunction> make_loss(const ProblemConfig& cfg, const ModelParams& model,
                                        const SampleFeatures& sample) {
  if (cfg.kind == ProblemKind::plate)
    return std::make_unique<PlateLoss>(model, cfg.material, sample, cfg.disc);
  return std::make_unique<CurveLoss>(cfg.kind, model.nets.at(0), sample, cfg.disc, cfg.geometry,
                                     cfg.weights);
}

} // namespace varmech::prob
