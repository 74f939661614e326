#pragma once

#include "varmech/jet.hpp"
#include "varmech/rng.hpp"
#include "varmech/tape.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace varmech::net {

struct NetworkError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidShape : NetworkError {
  using NetworkError::NetworkError;
};
struct DimensionMismatch : NetworkError {
  using NetworkError::NetworkError;
};
struct OutsidePlate : NetworkError {
  using NetworkError::NetworkError;
};

enum class Activation { tanh, identity };

// Affine map of each input feature onto [-1, 1]; tanh saturates for raw
// magnitudes in the tens, so all problem inputs pass through this.
struct FeatureScaling {
  std::vector<std::string> names;
  std::vector<double> lo, hi;

  double to_unit(size_t i, double x) const {
    return (2.0 * x - (hi[i] + lo[i])) / (hi[i] - lo[i]);
  }
  double from_unit(size_t i, double s) const {
    return 0.5 * (s * (hi[i] - lo[i]) + hi[i] + lo[i]);
  }
  size_t dim() const { return names.size(); }
};

struct MlpParams {
  std::vector<int> layer_sizes;             // input, hidden..., output
  std::vector<std::vector<double>> weights; // per layer, row-major out x in
  std::vector<std::vector<double>> biases;  // per layer
  Activation activation = Activation::tanh; // hidden layers; output is identity
  uint64_t seed = 0;
  double output_scale = 1.0; // physical output = raw output * output_scale
  FeatureScaling scaling;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int layer_count() const { return static_cast<int>(layer_sizes.size()) - 1; }
  size_t param_count() const;
};

// weights drawn uniform in (-1,1)/sqrt(fan_in), biases zero; deterministic per seed
MlpParams init_mlp(std::vector<int> layer_sizes, uint64_t seed);

// canonical flat layout: per layer, weights row-major then biases
std::vector<double> flatten(const MlpParams& p);
void unflatten(std::span<const double> flat, MlpParams& p);

// plain evaluation (no tape); inputs are raw feature values, scaled internally
std::vector<double> forward(const MlpParams& p, std::span<const double> inputs);

// ---- tape builders ---------------------------------------------------------

// Node handles recorded while building one forward pass; layer k activation
// nodes are needed for per-path partial extraction.
struct MlpTapeNodes {
  std::vector<diff::Var> z0;                     // scaled input-layer nodes
  std::vector<std::vector<diff::Var>> hidden;    // activations per hidden layer
  std::vector<diff::Var> raw_out;                // identity output layer, pre-scale
  std::vector<diff::Var> out;                    // raw_out * output_scale
};

// Creates one leaf per parameter, in canonical flat order.
std::vector<diff::Var> make_param_leaves(diff::Tape& tape, const MlpParams& p);
void assign_param_leaves(diff::Tape& tape, std::span<const diff::Var> leaves,
                         std::span<const double> flat);

// Forward pass on the tape for one input point. `scaled_inputs` are nodes
// already mapped to [-1,1] (constants or expressions of feature leaves).
MlpTapeNodes build_forward(diff::Tape& tape, const MlpParams& p,
                           std::span<const diff::Var> param_leaves,
                           std::span<const diff::Var> scaled_inputs);

// Forward pass with exact spatial-derivative propagation. The input jets
// carry d/dx, d/dy (and second derivatives for Jet2) of the scaled inputs.
template <class Jet>
std::vector<Jet> build_forward_jet(diff::Tape& tape, const MlpParams& p,
                                   std::span<const diff::Var> param_leaves,
                                   std::span<const Jet> input_jets);

// ---- clamped-plate boundary envelope ----------------------------------------

// B(xi, eta) = (xi^2 - (b/2)^2)(eta^2 - (b/2)^2) / (b/2)^4, zero on the plate
// boundary and 1 at the center. In-plane fields are multiplied by B, the
// deflection by B^2 so that its boundary normal derivative also vanishes.
struct BoundaryEnvelope {
  double side_b;  // mm
  double theta;   // rad
};

// plate-frame coordinates of a global point
inline void rotate_frame(double x, double y, double theta, double& xi, double& eta) {
  const double c = std::cos(theta), s = std::sin(theta);
  xi = x * c + y * s;
  eta = -x * s + y * c;
}
inline void rotate_frame_inverse(double xi, double eta, double theta, double& x, double& y) {
  const double c = std::cos(theta), s = std::sin(theta);
  x = xi * c - eta * s;
  y = xi * s + eta * c;
}

double envelope_value(double xi, double eta, double side_b);

// plain path: raw fields -> constrained fields at a global point
struct FieldTriple {
  double u, v, w;
};
FieldTriple apply_envelope(const FieldTriple& raw, double x, double y,
                           const BoundaryEnvelope& env);

// tape path: envelope jets built from coordinate jets and feature leaves
// (side and orientation enter as nodes so one record serves every sample)
diff::Jet2 build_envelope_jet(diff::Tape& tape, const diff::Jet2& x, const diff::Jet2& y,
                              diff::Var side_b, diff::Var theta);

// ---- checkpoint io ----------------------------------------------------------

nlohmann::json to_json(const MlpParams& p);
MlpParams mlp_from_json(const nlohmann::json& j);

void save_checkpoint(const MlpParams& p, const std::string& path);
MlpParams load_checkpoint(const std::string& path);

} // namespace varmech::net
