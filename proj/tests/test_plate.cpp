#include "varmech/oracles.hpp"
#include "varmech/problems.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace varmech;

namespace {

// closed-form energy density of w = c B^2, u = v = 0, theta = 0: the bending
// terms plus the quartic stretching term that survives zero in-plane fields
struct ClosedFormField {
  double b, c, mu, cb, cm;
  double density(double x, double y) const {
    const double q = 0.25 * b * b, q2 = q * q;
    const double fx = x * x - q, fy = y * y - q;
    const double bv = fx * fy / q2;
    const double bx = 2 * x * fy / q2, by = 2 * y * fx / q2;
    const double bxx = 2 * fy / q2, byy = 2 * fx / q2, bxy = 4 * x * y / q2;
    const double wx = c * 2 * bv * bx, wy = c * 2 * bv * by;
    const double wxx = c * (2 * bx * bx + 2 * bv * bxx);
    const double wyy = c * (2 * by * by + 2 * bv * byy);
    const double wxy = c * (2 * bx * by + 2 * bv * bxy);
    const double lap = wxx + wyy;
    const double grad2 = wx * wx + wy * wy;
    return cb * (lap * lap + 2 * (1 - mu) * (wxy * wxy - wxx * wyy)) +
           cm * 0.25 * grad2 * grad2;
  }
};

// evaluate the production integrand kernel on a tabulated deflection field
// (w net replaced by c B^2 through jets built from the same envelope)
struct KernelProbe {
  diff::Tape tape;
  diff::Var x_leaf, y_leaf, p_leaf;
  diff::Var root;
  diff::Jet2 wc;

  KernelProbe(double b, double c, const prob::MaterialSpec& mat) {
    using namespace diff;
    x_leaf = tape.leaf(0.0);
    y_leaf = tape.leaf(0.0);
    p_leaf = tape.leaf(0.0);
    Var bvar = tape.leaf(b);
    Var tvar = tape.leaf(0.0);
    Jet2 xj{x_leaf, tape.constant(1.0), Var{}, Var{}, Var{}, Var{}};
    Jet2 yj{y_leaf, Var{}, tape.constant(1.0), Var{}, Var{}, Var{}};
    Jet2 B = net::build_envelope_jet(tape, xj, yj, bvar, tvar);
    wc = jscale(jsquare(B), c);
    Jet1 zero{tape.constant(0.0), tape.constant(0.0), tape.constant(0.0)};
    root = prob::plate_energy_density(tape, zero, zero, wc, mat) - wc.v * p_leaf;
  }
  double at(double x, double y, double p = 0.0) {
    tape.set(x_leaf, x);
    tape.set(y_leaf, y);
    tape.set(p_leaf, p);
    tape.forward();
    return tape.value(root);
  }
};

} // namespace

TEST_CASE("plate energy density of a closed-form deflection matches hand derivatives") {
  prob::MaterialSpec mat;
  const double b = 30.0, c = 0.01;
  ClosedFormField fld{b, c, mat.mu,
                      mat.e_mod_mpa * std::pow(mat.t_mm, 3) / (24 * (1 - mat.mu * mat.mu)),
                      mat.e_mod_mpa * mat.t_mm / (2 * (1 - mat.mu * mat.mu))};
  KernelProbe probe(b, c, mat);
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-14.9, 14.9), y = rng.uniform(-14.9, 14.9);
    const double a = fld.density(x, y), k = probe.at(x, y);
    CHECK(std::abs(a - k) <= 1e-10 * std::max(std::abs(a), 1e-12));
  }
}

TEST_CASE("monte carlo bending quadrature agrees with a dense grid within 4 sigma") {
  prob::MaterialSpec mat;
  const double b = 30.0, c = 0.01;
  ClosedFormField fld{b, c, mat.mu,
                      mat.e_mod_mpa * std::pow(mat.t_mm, 3) / (24 * (1 - mat.mu * mat.mu)),
                      mat.e_mod_mpa * mat.t_mm / (2 * (1 - mat.mu * mat.mu))};
  const int n = 601;
  double dense = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      dense += fld.density(-0.5 * b + b * (i + 0.5) / n, -0.5 * b + b * (j + 0.5) / n);
  dense *= b * b / (double(n) * n);

  const int qp = 20000;
  Rng rng(0);
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < qp; ++i) {
    const double g = fld.density(rng.uniform(-0.5 * b, 0.5 * b), rng.uniform(-0.5 * b, 0.5 * b));
    sum += g;
    sum2 += g * g;
  }
  const double mean = sum / qp;
  const double se = std::sqrt((sum2 / qp - mean * mean) / qp);
  CHECK(std::abs(mean * b * b - dense) < 4.0 * se * b * b);
}

TEST_CASE("monte carlo standard error scales like one over sqrt(Qp)") {
  prob::MaterialSpec mat;
  ClosedFormField fld{30.0, 0.01, mat.mu,
                      mat.e_mod_mpa * std::pow(mat.t_mm, 3) / (24 * (1 - mat.mu * mat.mu)),
                      mat.e_mod_mpa * mat.t_mm / (2 * (1 - mat.mu * mat.mu))};
  auto se_at = [&](int qp) {
    std::vector<double> est;
    for (uint64_t seed = 0; seed < 30; ++seed) {
      Rng rng(seed * 77 + 5);
      double s = 0.0;
      for (int i = 0; i < qp; ++i)
        s += fld.density(rng.uniform(-15, 15), rng.uniform(-15, 15));
      est.push_back(s / qp);
    }
    double m = 0.0;
    for (double e : est) m += e;
    m /= est.size();
    double v = 0.0;
    for (double e : est) v += (e - m) * (e - m);
    return std::sqrt(v / est.size());
  };
  const double ratio = se_at(500) / se_at(8000);
  CHECK(ratio == doctest::Approx(4.0).epsilon(0.45)); // sqrt(16) with sampling noise
}

TEST_CASE("zero fields give exactly zero plate loss") {
  prob::ModelParams model = prob::default_model(prob::ProblemKind::plate, 0);
  for (auto& n : model.nets) {
    for (auto& w : n.weights) std::fill(w.begin(), w.end(), 0.0);
    for (auto& b : n.biases) std::fill(b.begin(), b.end(), 0.0);
  }
  prob::SampleFeatures s = prob::make_sample_set(prob::ProblemKind::plate, "p3")[0];
  prob::DiscretizationSpec disc;
  disc.qp = 200;
  disc.seed = 3;
  prob::PlateLoss loss(model, prob::MaterialSpec{}, s, disc);
  CHECK(loss.value(prob::flatten_model(model)) == 0.0);
}

TEST_CASE("doubling the load doubles the work term at fixed fields") {
  prob::MaterialSpec mat;
  KernelProbe probe(30.0, 0.02, mat);
  const double x = 3.7, y = -5.1;
  const double e0 = probe.at(x, y, 0.0);
  const double e1 = probe.at(x, y, 1e-5);
  const double e2 = probe.at(x, y, 2e-5);
  CHECK(e0 - e2 == doctest::Approx(2.0 * (e0 - e1)).epsilon(1e-12)); // W linear in p
}

TEST_CASE("plate loss value is invariant under quadrature relabeling") {
  prob::ModelParams model = prob::default_model(prob::ProblemKind::plate, 7);
  prob::SampleFeatures s = prob::make_sample_set(prob::ProblemKind::plate, "p5")[0];
  prob::DiscretizationSpec disc;
  disc.qp = 256;
  disc.seed = 9;
  prob::PlateLoss loss(model, prob::MaterialSpec{}, s, disc);
  auto flat = prob::flatten_model(model);
  const double a = loss.value(flat);

  // reversed point order must produce the identical double
  prob::PlateQuadrature q = loss.quadrature();
  std::reverse(q.x.begin(), q.x.end());
  std::reverse(q.y.begin(), q.y.end());
  prob::PlateLoss loss2(model, prob::MaterialSpec{}, s, disc);
  loss2.set_quadrature(q);
  CHECK(loss2.value(flat) == a);
}

TEST_CASE("plate loss rejects degenerate quadrature") {
  prob::ModelParams model = prob::default_model(prob::ProblemKind::plate, 0);
  prob::SampleFeatures s = prob::make_sample_set(prob::ProblemKind::plate, "p3")[0];
  prob::DiscretizationSpec disc;
  disc.qp = 10;
  CHECK_THROWS_AS(prob::PlateLoss(model, prob::MaterialSpec{}, s, disc),
                  prob::DegenerateQuadrature);
}

TEST_CASE("plate loss gradient matches directional finite differences") {
  prob::ModelParams model = prob::default_model(prob::ProblemKind::plate, 0);
  prob::SampleFeatures s = prob::make_sample_set(prob::ProblemKind::plate, "p5")[0];
  prob::DiscretizationSpec disc;
  disc.qp = 64;
  disc.seed = 2;
  prob::PlateLoss loss(model, prob::MaterialSpec{}, s, disc, true);
  auto flat = prob::flatten_model(model);
  std::vector<double> grad(flat.size());
  loss.value_and_grad(flat, grad);

  Rng rng(23);
  auto f = [&](std::span<const double> q) { return loss.value(q); };
  double worst = 0.0;
  for (int rep = 0; rep < 25; ++rep) {
    std::vector<double> dir(flat.size());
    for (auto& d : dir) d = rng.uniform(-1.0, 1.0);
    double gd = 0.0;
    for (size_t i = 0; i < dir.size(); ++i) gd += grad[i] * dir[i];
    const double fd = testsupport::directional_fd(f, flat, dir, 1e-6);
    worst = std::max(worst, std::abs(gd - fd) / std::max({std::abs(gd), std::abs(fd), 1e-12}));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("fd oracle energy gradient matches finite differences") {
  const int n = 15;
  prob::SampleFeatures s;
  s.p = 2e-5;
  s.b = 24.0;
  prob::MaterialSpec mat;
  Rng rng(31);
  const size_t m = static_cast<size_t>(n) * n;
  std::vector<double> u(m, 0.0), v(m, 0.0), w(m, 0.0);
  for (int i = 1; i < n - 1; ++i)
    for (int j = 1; j < n - 1; ++j) {
      u[i * n + j] = 1e-4 * rng.uniform(-1, 1);
      v[i * n + j] = 1e-4 * rng.uniform(-1, 1);
      w[i * n + j] = 0.02 * rng.uniform(-1, 1);
    }
  std::vector<double> gu(m), gv(m), gw(m);
  oracle::plate_fd_energy(s, mat, n, u, v, w, gu, gv, gw);

  auto energy_only = [&](const std::vector<double>& uu, const std::vector<double>& vv,
                         const std::vector<double>& ww) {
    std::vector<double> e1, e2, e3;
    return oracle::plate_fd_energy(s, mat, n, uu, vv, ww, e1, e2, e3);
  };
  double worst = 0.0;
  for (int rep = 0; rep < 60; ++rep) {
    const int fld = rng.next_u64() % 3;
    const int i = 1 + static_cast<int>(rng.next_u64() % (n - 2));
    const int j = 1 + static_cast<int>(rng.next_u64() % (n - 2));
    auto& target = fld == 0 ? u : fld == 1 ? v : w;
    auto& gref = fld == 0 ? gu : fld == 1 ? gv : gw;
    const double step = fld == 2 ? 1e-6 : 1e-8;
    const double x0 = target[i * n + j];
    target[i * n + j] = x0 + step;
    const double fp = energy_only(u, v, w);
    target[i * n + j] = x0 - step;
    const double fm = energy_only(u, v, w);
    target[i * n + j] = x0;
    const double num = (fp - fm) / (2 * step);
    const double ana = gref[i * n + j];
    worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-12}));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("plate reference with zero load is the zero field") {
  prob::SampleFeatures s;
  s.p = 0.0;
  s.b = 30.0;
  auto ref = oracle::solve_plate_reference(s, prob::MaterialSpec{}, {21, 1000, 1e-8, nullptr});
  CHECK(ref.energy == 0.0);
  for (double w : ref.w) CHECK(w == 0.0);
}

TEST_CASE("plate reference symmetry and energy sign at theta 0") {
  prob::SampleFeatures s;
  s.p = 1e-5;
  s.b = 30.0;
  auto ref = oracle::solve_plate_reference(s, prob::MaterialSpec{}, {21, 30000, 1e-8, nullptr});
  CHECK(ref.energy < 0.0); // below the unloaded state
  const int n = ref.n;
  const double tol = 1e-8 * std::abs(ref.center_w());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      CHECK(std::abs(ref.at(ref.w, i, j) - ref.at(ref.w, n - 1 - i, j)) < tol);
      CHECK(std::abs(ref.at(ref.w, i, j) - ref.at(ref.w, i, n - 1 - j)) < tol);
      // u odd in xi, even in eta; v the mirror image
      CHECK(std::abs(ref.at(ref.u, i, j) + ref.at(ref.u, n - 1 - i, j)) < tol);
      CHECK(std::abs(ref.at(ref.u, i, j) - ref.at(ref.u, i, n - 1 - j)) < tol);
      CHECK(std::abs(ref.at(ref.v, i, j) + ref.at(ref.v, i, n - 1 - j)) < tol);
      CHECK(std::abs(ref.at(ref.v, i, j) - ref.at(ref.v, n - 1 - i, j)) < tol);
    }
}

TEST_CASE("rotated reference equals the rotated plate-frame solution") {
  prob::SampleFeatures s;
  s.p = 1e-5;
  s.b = 24.0;
  s.theta = std::numbers::pi / 4.0;
  prob::SampleFeatures s0 = s;
  s0.theta = 0.0;
  auto r45 = oracle::solve_plate_reference(s, prob::MaterialSpec{}, {21, 30000, 1e-8, nullptr});
  auto r0 = oracle::solve_plate_reference(s0, prob::MaterialSpec{}, {21, 30000, 1e-8, nullptr});

  Rng rng(3);
  const double ct = std::cos(s.theta), st = std::sin(s.theta);
  for (int rep = 0; rep < 200; ++rep) {
    const double xi = rng.uniform(-11, 11), eta = rng.uniform(-11, 11);
    double ug0, vg0, wg0; // theta = 0: global = plate frame
    r0.fields_global(xi, eta, ug0, vg0, wg0);
    double x, y; // the same material point in the rotated configuration
    net::rotate_frame_inverse(xi, eta, s.theta, x, y);
    double ug, vg, wg;
    r45.fields_global(x, y, ug, vg, wg);
    CHECK(ug == doctest::Approx(ct * ug0 - st * vg0).epsilon(1e-9));
    CHECK(vg == doctest::Approx(st * ug0 + ct * vg0).epsilon(1e-9));
    CHECK(wg == doctest::Approx(wg0).epsilon(1e-9));
  }
}

TEST_CASE("small-load reference is linear in the load") {
  prob::SampleFeatures sa, sb;
  sa.p = 1e-7;
  sa.b = 30.0;
  sb.p = 2e-7;
  sb.b = 30.0;
  auto ra = oracle::solve_plate_reference(sa, prob::MaterialSpec{}, {21, 30000, 1e-8, nullptr});
  auto rb = oracle::solve_plate_reference(sb, prob::MaterialSpec{}, {21, 30000, 1e-8, nullptr});
  CHECK(rb.center_w() / ra.center_w() == doctest::Approx(2.0).epsilon(0.01));
}

TEST_CASE("kirchhoff coefficient approaches the classical clamped value") {
  prob::MaterialSpec mat;
  const double c41 = oracle::kirchhoff_center_coefficient(30.0, 1e-5, mat, 41);
  CHECK(c41 == doctest::Approx(1.26e-3).epsilon(0.05));
}
