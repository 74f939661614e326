#pragma once

#include "varmech/network.hpp"
#include "varmech/tape.hpp"

#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace varmech::prob {

struct ProblemError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InfeasibleSample : ProblemError {
  using ProblemError::ProblemError;
};
struct UnknownFamily : ProblemError {
  using ProblemError::ProblemError;
};
struct DegenerateQuadrature : ProblemError {
  using ProblemError::ProblemError;
};
struct SingleSampleTrace : ProblemError {
  using ProblemError::ProblemError;
};

enum class ProblemKind { brachistochrone, catenary, plate };

std::string to_string(ProblemKind k);
ProblemKind problem_kind_from_string(const std::string& s);

struct ProblemGeometry {
  double span = 30.0 * std::numbers::pi; // horizontal distance between endpoints
  double g = 1.0;                        // gravitational acceleration (brachistochrone)
  double rho_g = 1.0;                    // weight per unit length (catenary)
};

struct MaterialSpec {
  double e_mod_mpa = 7.0e4; // Young's modulus
  double mu = 0.3;          // Poisson ratio
  double t_mm = 0.05;       // plate thickness
};

// Sample-dependent feature values for one training/evaluation sample.
struct SampleFeatures {
  double h = 0.0;     // height difference (curves)
  double l = 0.0;     // chain length (catenary)
  double p = 0.0;     // pressure, MPa (plate)
  double b = 0.0;     // side length, mm (plate)
  double theta = 0.0; // orientation, rad (plate)
  std::string label;
};

struct DiscretizationSpec {
  enum class Layout { uniform_1d, random_uniform_2d };
  int qp = 11;
  Layout layout = Layout::uniform_1d;
  uint64_t seed = 0;
  bool resample_per_loop = false; // plate: redraw quadrature at each basic loop
};

struct PenaltyWeights {
  double lambda_bc = 100.0;
  double lambda_len = 100.0;
  double lambda_desc = 10.0;
};

struct ProblemConfig {
  ProblemKind kind = ProblemKind::brachistochrone;
  ProblemGeometry geometry;
  MaterialSpec material;
  DiscretizationSpec disc;
  PenaltyWeights weights;
};

// The exact feature tuples used in training, from the model-label grammar
// (h30, h(30-50-70), l150, p(3-5-7), theta5, ...). Fixed co-features:
// catenary h-family has l = 140, l-family has h = 50; plate p-family has
// b = 30 and theta = 0, b-family p = 1e-5 and theta = 0, theta-family
// p = 1e-5 and b = 30.
std::vector<SampleFeatures> make_sample_set(ProblemKind kind, const std::string& family);

// sample-dependent input feature names per problem (h; h,l; p,b,theta)
std::vector<std::string> sample_dependent_features(ProblemKind kind);

net::FeatureScaling default_scaling(ProblemKind kind);

// fresh networks per the per-problem architecture: curves [n_in,5,5,1],
// plate three [5,15,15,15,15,15,1] nets with independent parameters
struct ModelParams {
  std::vector<net::MlpParams> nets;
  size_t param_count() const;
};
ModelParams default_model(ProblemKind kind, uint64_t seed);
std::vector<double> flatten_model(const ModelParams& m);
void unflatten_model(std::span<const double> flat, ModelParams& m);

// (xi, eta) = (x cos t + y sin t, -x sin t + y cos t)
inline void rotate_frame(double x, double y, double theta, double& xi, double& eta) {
  net::rotate_frame(x, y, theta, xi, eta);
}

// ---- discrete curve functionals (plain mirrors of the tape formulas) -------

double polyline_length(std::span<const double> x, std::span<const double> y);
// sum of segment length / trapezoid-averaged speed, speed = sqrt(max(-2gy, eps))
double polyline_travel_time(std::span<const double> x, std::span<const double> y, double g,
                            double v_floor = 1e-4, double sqrt_eps = 1e-9);
double polyline_potential(std::span<const double> x, std::span<const double> y, double rho_g);

std::vector<double> uniform_grid(double lo, double hi, int n);

// ---- loss graphs ------------------------------------------------------------

// Tape nodes of one interpolating point, kept for learning-activity
// extraction on the 2-hidden-layer curve networks.
struct CurvePointNodes {
  std::vector<diff::Var> z0; // scaled input-layer nodes
  std::vector<diff::Var> z1, z2;
  std::vector<diff::Var> z3; // raw output (identity layer, pre output-scale)
  diff::Var y;               // physical output
};

struct CurveLossGraph {
  diff::Tape tape;
  std::vector<diff::Var> param_leaves;
  diff::Var loss_root;
  diff::Var functional_root; // travel time / potential term alone
  std::vector<CurvePointNodes> points;
  std::vector<double> x_nodes;
  SampleFeatures sample;
  net::Activation activation = net::Activation::tanh;
  std::vector<int> layer_sizes;
};

// losses assembled from already-built output nodes; the production builders
// below wire network outputs in, tests may pass tabulated leaves instead
struct CurveLossParts {
  diff::Var loss, functional;
};
CurveLossParts brachistochrone_loss_from_outputs(diff::Tape& tape, std::span<const diff::Var> y,
                                                 std::span<const double> x, double h,
                                                 const ProblemGeometry& geom,
                                                 const PenaltyWeights& w);
CurveLossParts catenary_loss_from_outputs(diff::Tape& tape, std::span<const diff::Var> y,
                                          std::span<const double> x, double h, double l,
                                          const ProblemGeometry& geom, const PenaltyWeights& w);

CurveLossGraph build_curve_loss(ProblemKind kind, const net::MlpParams& net,
                                const SampleFeatures& sample, const DiscretizationSpec& disc,
                                const ProblemGeometry& geom, const PenaltyWeights& weights);

// ---- plate ------------------------------------------------------------------

// One-point energy-density kernel: three networks evaluated with exact
// first/second spatial derivative propagation, clamped envelope applied,
// von Karman membrane + bending density minus w*p. The same record is
// replayed for every quadrature point and sample.
struct PlateKernel {
  diff::Tape tape;
  std::vector<diff::Var> param_leaves; // u net, then v net, then w net
  diff::Var x_leaf, y_leaf;            // global coordinates
  diff::Var p_leaf, b_leaf, theta_leaf;
  diff::Var integrand_root;
  diff::Jet1 uc, vc; // constrained in-plane fields
  diff::Jet2 wc;     // constrained deflection
};

PlateKernel build_plate_kernel(const ModelParams& model, const MaterialSpec& mat);

// membrane + bending energy density from constrained field jets (global frame)
diff::Var plate_energy_density(diff::Tape& tape, const diff::Jet1& u, const diff::Jet1& v,
                               const diff::Jet2& w, const MaterialSpec& mat);

struct PlateQuadrature {
  std::vector<double> x, y; // global coordinates
  uint64_t seed = 0;
};
// uniform random points over the rotated plate square
PlateQuadrature sample_plate_points(const SampleFeatures& s, int qp, uint64_t seed);

// order-independent compensated sum (sorts magnitudes first)
double stable_sum(std::vector<double> values);

// fixed-chunk parallel loop; result order independent of thread count
int worker_thread_count();

// ---- trainable loss interface ------------------------------------------------

class LossFunction {
public:
  virtual ~LossFunction() = default;
  virtual size_t param_count() const = 0;
  virtual double value_and_grad(std::span<const double> params, std::span<double> grad) = 0;
  virtual double value(std::span<const double> params) = 0;
  virtual void on_window_start(int loop) { (void)loop; }

  const std::string& label() const { return label_; }
  long eval_count() const { return evals_; }

protected:
  std::string label_;
  long evals_ = 0;
};

class CurveLoss : public LossFunction {
public:
  CurveLoss(ProblemKind kind, const net::MlpParams& net, const SampleFeatures& sample,
            const DiscretizationSpec& disc, const ProblemGeometry& geom,
            const PenaltyWeights& weights);

  size_t param_count() const override { return graph_.param_leaves.size(); }
  double value_and_grad(std::span<const double> params, std::span<double> grad) override;
  double value(std::span<const double> params) override;

  // state of the most recent value_and_grad, for learning-activity extraction
  const CurveLossGraph& graph() const { return graph_; }
  double functional_value() const { return graph_.tape.value(graph_.functional_root); }

private:
  CurveLossGraph graph_;
};

class PlateLoss : public LossFunction {
public:
  // qp below 100 is refused unless allow_small_qp (derivative checks only)
  PlateLoss(const ModelParams& model, const MaterialSpec& mat, const SampleFeatures& sample,
            const DiscretizationSpec& disc, bool allow_small_qp = false);

  size_t param_count() const override { return kernel_.param_leaves.size(); }
  double value_and_grad(std::span<const double> params, std::span<double> grad) override;
  double value(std::span<const double> params) override;
  void on_window_start(int loop) override;

  const PlateQuadrature& quadrature() const { return quad_; }
  void set_quadrature(PlateQuadrature q) { quad_ = std::move(q); }

private:
  double evaluate_impl(std::span<const double> params, std::span<double> grad, bool want_grad);

  PlateKernel kernel_;
  SampleFeatures sample_;
  DiscretizationSpec disc_;
  PlateQuadrature quad_;
};

std::unique_ptr<LossFunction> make_loss(const ProblemConfig& cfg, const ModelParams& model,
                                        const SampleFeatures& sample);

} // namespace varmech::prob
