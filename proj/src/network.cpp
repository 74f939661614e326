#include "varmech/network.hpp"


#include <array>
#include <cmath>
#include <fstream>

namespace varmech::net {

size_t MlpParams::param_count() const {
  size_t n = 0;
  for (int l = 0; l < layer_count(); ++l)
    n += static_cast<size_t>(layer_sizes[l]) * layer_sizes[l + 1] + layer_sizes[l + 1];
  return n;
}

MlpParams init_mlp(std::vector<int> layer_sizes, uint64_t seed) {
  if (layer_sizes.size() < 2) throw InvalidShape("need at least input and output layer");
  for (int s : layer_sizes)
    if (s <= 0) throw InvalidShape("layer size must be positive");

  MlpParams p;
  p.layer_sizes = std::move(layer_sizes);
  p.seed = seed;
  Rng rng(seed);
  for (int l = 0; l < p.layer_count(); ++l) {
    const int fan_in = p.layer_sizes[l];
    const int fan_out = p.layer_sizes[l + 1];
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(static_cast<size_t>(fan_in) * fan_out);
    for (double& x : w) x = rng.uniform(-1.0, 1.0) * s;
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(fan_out, 0.0);
  }
  return p;
}

std::vector<double> flatten(const MlpParams& p) {
  std::vector<double> flat;
  flat.reserve(p.param_count());
  for (int l = 0; l < p.layer_count(); ++l) {
    flat.insert(flat.end(), p.weights[l].begin(), p.weights[l].end());
    flat.insert(flat.end(), p.biases[l].begin(), p.biases[l].end());
  }
  return flat;
}

void unflatten(std::span<const double> flat, MlpParams& p) {
  if (flat.size() != p.param_count()) throw InvalidShape("flat parameter size mismatch");
  size_t k = 0;
  for (int l = 0; l < p.layer_count(); ++l) {
    for (double& w : p.weights[l]) w = flat[k++];
    for (double& b : p.biases[l]) b = flat[k++];
  }
}

std::vector<double> forward(const MlpParams& p, std::span<const double> inputs) {
  if (static_cast<int>(inputs.size()) != p.input_dim())
    throw DimensionMismatch("input dimension does not match layer_sizes[0]");

  std::vector<double> z(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) z[i] = p.scaling.to_unit(i, inputs[i]);

  std::vector<double> next;
  for (int l = 0; l < p.layer_count(); ++l) {
    const int in_dim = p.layer_sizes[l];
    const int out_dim = p.layer_sizes[l + 1];
    next.assign(out_dim, 0.0);
    const double* w = p.weights[l].data();
    for (int o = 0; o < out_dim; ++o) {
      double acc = p.biases[l][o];
      for (int i = 0; i < in_dim; ++i) acc += w[static_cast<size_t>(o) * in_dim + i] * z[i];
      next[o] = acc;
    }
    const bool last = l + 1 == p.layer_count();
    if (!last && p.activation == Activation::tanh)
      for (double& x : next) x = std::tanh(x);
    z = next;
  }
  for (double& x : z) x *= p.output_scale;
  return z;
}

std::vector<diff::Var> make_param_leaves(diff::Tape& tape, const MlpParams& p) {
  std::vector<diff::Var> leaves;
  leaves.reserve(p.param_count());
  for (int l = 0; l < p.layer_count(); ++l) {
    for (double w : p.weights[l]) leaves.push_back(tape.leaf(w));
    for (double b : p.biases[l]) leaves.push_back(tape.leaf(b));
  }
  return leaves;
}

void assign_param_leaves(diff::Tape& tape, std::span<const diff::Var> leaves,
                         std::span<const double> flat) {
  for (size_t k = 0; k < leaves.size(); ++k) tape.set(leaves[k], flat[k]);
}

MlpTapeNodes build_forward(diff::Tape& tape, const MlpParams& p,
                           std::span<const diff::Var> param_leaves,
                           std::span<const diff::Var> scaled_inputs) {
  if (static_cast<int>(scaled_inputs.size()) != p.input_dim())
    throw DimensionMismatch("input node count does not match layer_sizes[0]");

  MlpTapeNodes nodes;
  nodes.z0.assign(scaled_inputs.begin(), scaled_inputs.end());

  std::vector<diff::Var> z = nodes.z0;
  size_t k = 0;
  for (int l = 0; l < p.layer_count(); ++l) {
    const int in_dim = p.layer_sizes[l];
    const int out_dim = p.layer_sizes[l + 1];
    const size_t wbase = k;
    const size_t bbase = k + static_cast<size_t>(in_dim) * out_dim;
    std::vector<diff::Var> next(out_dim);
    for (int o = 0; o < out_dim; ++o) {
      auto w_row = param_leaves.subspan(wbase + static_cast<size_t>(o) * in_dim, in_dim);
      next[o] = dot(tape, w_row, z, param_leaves[bbase + o]);
    }
    k = bbase + out_dim;
    const bool last = l + 1 == p.layer_count();
    if (!last && p.activation == Activation::tanh)
      for (auto& x : next) x = tanh(x);
    if (!last) nodes.hidden.push_back(next);
    z = std::move(next);
  }
  nodes.raw_out = z;
  nodes.out.reserve(z.size());
  for (auto& x : z) nodes.out.push_back(x * p.output_scale);
  return nodes;
}

namespace {

inline std::array<diff::Var*, 3> jet_slots(diff::Jet1& j) { return {&j.v, &j.dx, &j.dy}; }
inline std::array<diff::Var*, 6> jet_slots(diff::Jet2& j) {
  return {&j.v, &j.dx, &j.dy, &j.dxx, &j.dxy, &j.dyy};
}

} // namespace

template <class Jet>
std::vector<Jet> build_forward_jet(diff::Tape& tape, const MlpParams& p,
                                   std::span<const diff::Var> param_leaves,
                                   std::span<const Jet> input_jets) {
  if (static_cast<int>(input_jets.size()) != p.input_dim())
    throw DimensionMismatch("input jet count does not match layer_sizes[0]");

  std::vector<Jet> z(input_jets.begin(), input_jets.end());
  std::vector<diff::Var> ws, cs;
  size_t k = 0;
  for (int l = 0; l < p.layer_count(); ++l) {
    const int in_dim = p.layer_sizes[l];
    const int out_dim = p.layer_sizes[l + 1];
    const size_t wbase = k;
    const size_t bbase = k + static_cast<size_t>(in_dim) * out_dim;
    std::vector<Jet> next(out_dim);
    for (int o = 0; o < out_dim; ++o) {
      // one fused inner product per derivative channel, absent channels skipped
      auto w_row = param_leaves.subspan(wbase + static_cast<size_t>(o) * in_dim, in_dim);
      auto slots_out = jet_slots(next[o]);
      for (size_t c = 0; c < slots_out.size(); ++c) {
        ws.clear();
        cs.clear();
        for (int i = 0; i < in_dim; ++i) {
          diff::Var ch = *jet_slots(z[i])[c];
          if (ch.valid()) {
            ws.push_back(w_row[i]);
            cs.push_back(ch);
          }
        }
        diff::Var bias = c == 0 ? param_leaves[bbase + o] : diff::Var{};
        if (ws.empty())
          *slots_out[c] = bias; // invalid Var when no bias: structurally zero
        else
          *slots_out[c] = dot(tape, ws, cs, bias);
      }
    }
    k = bbase + out_dim;
    const bool last = l + 1 == p.layer_count();
    if (!last && p.activation == Activation::tanh)
      for (auto& x : next) x = jtanh(x);
    z = std::move(next);
  }
  for (auto& x : z) x = jscale(x, p.output_scale);
  return z;
}

template std::vector<diff::Jet1> build_forward_jet<diff::Jet1>(diff::Tape&, const MlpParams&,
                                                               std::span<const diff::Var>,
                                                               std::span<const diff::Jet1>);
template std::vector<diff::Jet2> build_forward_jet<diff::Jet2>(diff::Tape&, const MlpParams&,
                                                               std::span<const diff::Var>,
                                                               std::span<const diff::Jet2>);

double envelope_value(double xi, double eta, double side_b) {
  const double hb = 0.5 * side_b;
  const double q = hb * hb;
  return (xi * xi - q) * (eta * eta - q) / (q * q);
}

FieldTriple apply_envelope(const FieldTriple& raw, double x, double y,
                           const BoundaryEnvelope& env) {
  double xi, eta;
  rotate_frame(x, y, env.theta, xi, eta);
  const double hb = 0.5 * env.side_b;
  const double tol = 1e-9 * env.side_b;
  if (std::abs(xi) > hb + tol || std::abs(eta) > hb + tol)
    throw OutsidePlate("point lies outside the plate region");
  xi = std::clamp(xi, -hb, hb);
  eta = std::clamp(eta, -hb, hb);
  const double B = envelope_value(xi, eta, env.side_b);
  return {raw.u * B, raw.v * B, raw.w * B * B};
}

diff::Jet2 build_envelope_jet(diff::Tape& tape, const diff::Jet2& x, const diff::Jet2& y,
                              diff::Var side_b, diff::Var theta) {
  using namespace diff;
  Var c = cos(theta), s = sin(theta);
  // xi = x c + y s, eta = -x s + y c; theta and b are spatially constant
  Jet2 xi = jadd(jscale(x, c), jscale(y, s));
  Jet2 eta = jsub(jscale(y, c), jscale(x, s));
  Var q = square(side_b * 0.5);   // (b/2)^2
  Var inv_q2 = 1.0 / square(q);   // normalization 1/(b/2)^4
  Jet2 fx = jsub(jsquare(xi), jconst2(q));
  Jet2 fy = jsub(jsquare(eta), jconst2(q));
  (void)tape;
  return jscale(jmul(fx, fy), inv_q2);
}

nlohmann::json to_json(const MlpParams& p) {
  nlohmann::json j;
  j["layer_sizes"] = p.layer_sizes;
  j["seed"] = p.seed;
  j["activation"] = p.activation == Activation::tanh ? "tanh" : "identity";
  j["output_scale"] = p.output_scale;
  j["scaling"] = {{"features", p.scaling.names}, {"lo", p.scaling.lo}, {"hi", p.scaling.hi}};
  j["weights"] = p.weights;
  j["biases"] = p.biases;
  return j;
}

MlpParams mlp_from_json(const nlohmann::json& j) {
  MlpParams p;
  p.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  p.seed = j.at("seed").get<uint64_t>();
  p.activation = j.at("activation").get<std::string>() == "identity" ? Activation::identity
                                                                     : Activation::tanh;
  p.output_scale = j.at("output_scale").get<double>();
  const auto& s = j.at("scaling");
  p.scaling.names = s.at("features").get<std::vector<std::string>>();
  p.scaling.lo = s.at("lo").get<std::vector<double>>();
  p.scaling.hi = s.at("hi").get<std::vector<double>>();
  p.weights = j.at("weights").get<std::vector<std::vector<double>>>();
  p.biases = j.at("biases").get<std::vector<std::vector<double>>>();
  if (p.weights.size() + 1 != p.layer_sizes.size())
    throw InvalidShape("checkpoint layer count mismatch");
  for (size_t l = 0; l + 1 < p.layer_sizes.size(); ++l) {
    const size_t want = static_cast<size_t>(p.layer_sizes[l]) * p.layer_sizes[l + 1];
    if (p.weights[l].size() != want || p.biases[l].size() != static_cast<size_t>(p.layer_sizes[l + 1]))
      throw InvalidShape("checkpoint weight shape mismatch");
  }
  return p;
}

void save_checkpoint(const MlpParams& p, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw NetworkError("cannot open checkpoint for writing: " + path);
  f << to_json(p).dump(1);
}

MlpParams load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw NetworkError("cannot open checkpoint: " + path);
  nlohmann::json j = nlohmann::json::parse(f);
  return mlp_from_json(j);
}

} // namespace varmech::net
