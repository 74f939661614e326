#pragma once

#include "varmech/problems.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace varmech::oracle {

struct OracleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoRoot : OracleError {
  using OracleError::OracleError;
};
struct InfeasibleChain : OracleError {
  using OracleError::OracleError;
};
struct NonConvergence : OracleError {
  using OracleError::OracleError;
};

// ---- brachistochrone: the cycloid ------------------------------------------

// x(phi) = R (phi - sin phi), y(phi) = -R (1 - cos phi), endpoint at phi_b
struct CycloidSolution {
  double radius = 0.0;
  double phi_b = 0.0;
  double travel_time = 0.0; // phi_b * sqrt(R / g)
  double span = 0.0, h = 0.0, g = 1.0;

  double y_at(double x) const; // inverts x(phi) by bisection
};

CycloidSolution solve_cycloid(double span, double h, double g = 1.0);

// ---- catenary: the cosh curve ------------------------------------------------

// y(x) = a cosh((x - x0) / a) + c
struct CatenarySolution {
  double a = 0.0, x0 = 0.0, c = 0.0;
  double span = 0.0, h = 0.0, l = 0.0;

  double y_at(double x) const { return a * std::cosh((x - x0) / a) + c; }
  double arc_length() const; // closed-form a (sinh((span-x0)/a) + sinh(x0/a))
  // residuals checked to 1e-10 by the solver: y(0), y(span)+h, length-l
  double max_residual() const;
};

CatenarySolution solve_catenary(double span, double h, double l);

// dense oracle evaluation on a given x grid (curve problems)
std::vector<double> oracle_curve(prob::ProblemKind kind, const prob::SampleFeatures& s,
                                 std::span<const double> x_grid,
                                 const prob::ProblemGeometry& geom = {});

// ---- plate reference solution -------------------------------------------------

// Finite-difference minimization of the same energy functional on a regular
// N x N plate-frame grid, clamped edges (w and its normal slope pinned via
// mirror ghosts). Solved in the plate frame and rotated to the global frame.
struct PlateReference {
  int n = 0;            // grid nodes per side
  double b = 0.0;       // side length
  double theta = 0.0;   // orientation used for the global-frame fields
  std::vector<double> xi, eta; // 1d node coordinates (plate frame)
  // row-major n x n fields, plate frame
  std::vector<double> u, v, w;
  double energy = 0.0;
  int iterations = 0;
  double grad_norm = 0.0, grad_norm0 = 0.0;

  double at(const std::vector<double>& f, int i, int j) const { return f[i * n + j]; }
  double center_w() const { return w[(n / 2) * n + (n / 2)]; }
  // global-frame displacements at a global point (bilinear interpolation)
  prob::SampleFeatures sample;
  void fields_global(double x, double y, double& ug, double& vg, double& wg) const;
};

struct PlateSolveOptions {
  int n = 41;
  int max_iterations = 400000;
  double grad_tol_rel = 1e-8;
  const PlateReference* warm_start = nullptr; // same n required
};

PlateReference solve_plate_reference(const prob::SampleFeatures& s, const prob::MaterialSpec& mat,
                                     const PlateSolveOptions& opt = {});

// discrete energy and gradient of the FD functional (exposed for tests)
double plate_fd_energy(const prob::SampleFeatures& s, const prob::MaterialSpec& mat, int n,
                       std::span<const double> u, std::span<const double> v,
                       std::span<const double> w, std::span<double> gu, std::span<double> gv,
                       std::span<double> gw);

// Linear clamped Kirchhoff plate via the 13-point biharmonic stencil and
// conjugate gradients; returns w_center * D / (p b^4). Independent of the
// energy-minimization path.
double kirchhoff_center_coefficient(double b, double p, const prob::MaterialSpec& mat, int n);

// ---- oracle cache --------------------------------------------------------------

// Plate solves are cached on disk keyed by (sample, material, grid size);
// cache hits are bit-identical to fresh solves.
std::string default_cache_dir();
PlateReference solve_plate_cached(const prob::SampleFeatures& s, const prob::MaterialSpec& mat,
                                  const PlateSolveOptions& opt, const std::string& cache_dir);

} // namespace varmech::oracle
