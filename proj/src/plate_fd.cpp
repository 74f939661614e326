#include "varmech/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>

namespace varmech::oracle {

namespace {

// mirror reflection across the clamped edge; boundary values stay zero
inline int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i > n - 1) return 2 * (n - 1) - i;
  return i;
}

struct FdWorkspace {
  int n;
  double d;             // spacing
  double cm, cb, mu, p; // prefactors and load
  bool membrane_on = true;

  const double* u;
  const double* v;
  const double* w;
  double* gu;
  double* gv;
  double* gw;

  double wv(int i, int j) const { return w[reflect(i, n) * n + reflect(j, n)]; }

  void add_g(double* g, int i, int j, double val) const {
    i = reflect(i, n);
    j = reflect(j, n);
    if (i == 0 || i == n - 1 || j == 0 || j == n - 1) return; // clamped
    g[i * n + j] += val;
  }
};

double fd_energy_impl(FdWorkspace& ws) {
  const int n = ws.n;
  const double d = ws.d;
  const double inv2d = 1.0 / (2.0 * d);
  const double invd2 = 1.0 / (d * d);
  const double inv4d2 = 1.0 / (4.0 * d * d);
  const double cell = d * d;
  const bool grad = ws.gw != nullptr;
  double energy = 0.0;

  // membrane + load at interior nodes
  if (ws.membrane_on) {
    for (int i = 1; i < n - 1; ++i) {
      for (int j = 1; j < n - 1; ++j) {
        auto f = [&](const double* a, int ii, int jj) { return a[ii * n + jj]; };
        const double ux = (f(ws.u, i + 1, j) - f(ws.u, i - 1, j)) * inv2d;
        const double uy = (f(ws.u, i, j + 1) - f(ws.u, i, j - 1)) * inv2d;
        const double vx = (f(ws.v, i + 1, j) - f(ws.v, i - 1, j)) * inv2d;
        const double vy = (f(ws.v, i, j + 1) - f(ws.v, i, j - 1)) * inv2d;
        const double wx = (f(ws.w, i + 1, j) - f(ws.w, i - 1, j)) * inv2d;
        const double wy = (f(ws.w, i, j + 1) - f(ws.w, i, j - 1)) * inv2d;

        const double wx2 = wx * wx, wy2 = wy * wy;
        const double mu = ws.mu;
        const double gm =
            ux * ux + ux * wx2 + vy * vy + vy * wy2 + 0.25 * (wx2 + wy2) * (wx2 + wy2) +
            2.0 * mu * (ux * vy + 0.5 * vy * wx2 + 0.5 * ux * wy2) +
            0.5 * (1.0 - mu) *
                (uy * uy + 2.0 * uy * vx + vx * vx + 2.0 * uy * wx * wy + 2.0 * vx * wx * wy);

        energy += cell * (ws.cm * gm - ws.p * ws.w[i * n + j]);

        if (grad) {
          const double c = cell * ws.cm;
          const double d_ux = c * (2.0 * ux + wx2 + 2.0 * mu * (vy + 0.5 * wy2));
          const double d_vy = c * (2.0 * vy + wy2 + 2.0 * mu * (ux + 0.5 * wx2));
          const double d_uy = c * (1.0 - mu) * (uy + vx + wx * wy);
          const double d_vx = c * (1.0 - mu) * (vx + uy + wx * wy);
          const double d_wx =
              c * (2.0 * ux * wx + (wx2 + wy2) * wx + 2.0 * mu * vy * wx +
                   (1.0 - mu) * (uy + vx) * wy);
          const double d_wy =
              c * (2.0 * vy * wy + (wx2 + wy2) * wy + 2.0 * mu * ux * wy +
                   (1.0 - mu) * (uy + vx) * wx);

          ws.add_g(ws.gu, i + 1, j, d_ux * inv2d);
          ws.add_g(ws.gu, i - 1, j, -d_ux * inv2d);
          ws.add_g(ws.gu, i, j + 1, d_uy * inv2d);
          ws.add_g(ws.gu, i, j - 1, -d_uy * inv2d);
          ws.add_g(ws.gv, i + 1, j, d_vx * inv2d);
          ws.add_g(ws.gv, i - 1, j, -d_vx * inv2d);
          ws.add_g(ws.gv, i, j + 1, d_vy * inv2d);
          ws.add_g(ws.gv, i, j - 1, -d_vy * inv2d);
          ws.add_g(ws.gw, i + 1, j, d_wx * inv2d);
          ws.add_g(ws.gw, i - 1, j, -d_wx * inv2d);
          ws.add_g(ws.gw, i, j + 1, d_wy * inv2d);
          ws.add_g(ws.gw, i, j - 1, -d_wy * inv2d);
          ws.add_g(ws.gw, i, j, -cell * ws.p);
        }
      }
    }
  } else {
    for (int i = 1; i < n - 1; ++i)
      for (int j = 1; j < n - 1; ++j) {
        energy -= cell * ws.p * ws.w[i * n + j];
        if (grad) ws.add_g(ws.gw, i, j, -cell * ws.p);
      }
  }

  // bending at every node, trapezoid weights, mirror ghosts carry the
  // clamped-slope condition into the curvature at the edges
  for (int i = 0; i < n; ++i) {
    const double twi = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    for (int j = 0; j < n; ++j) {
      const double tw = twi * ((j == 0 || j == n - 1) ? 0.5 : 1.0);
      const double w0 = ws.wv(i, j);
      const double wxx = (ws.wv(i + 1, j) - 2.0 * w0 + ws.wv(i - 1, j)) * invd2;
      const double wyy = (ws.wv(i, j + 1) - 2.0 * w0 + ws.wv(i, j - 1)) * invd2;
      const double wxy =
          (ws.wv(i + 1, j + 1) - ws.wv(i + 1, j - 1) - ws.wv(i - 1, j + 1) + ws.wv(i - 1, j - 1)) *
          inv4d2;

      const double lap = wxx + wyy;
      const double gb = lap * lap + 2.0 * (1.0 - ws.mu) * (wxy * wxy - wxx * wyy);
      energy += cell * tw * ws.cb * gb;

      if (grad) {
        const double c = cell * tw * ws.cb;
        const double d_wxx = c * (2.0 * lap - 2.0 * (1.0 - ws.mu) * wyy);
        const double d_wyy = c * (2.0 * lap - 2.0 * (1.0 - ws.mu) * wxx);
        const double d_wxy = c * 4.0 * (1.0 - ws.mu) * wxy;

        ws.add_g(ws.gw, i + 1, j, d_wxx * invd2);
        ws.add_g(ws.gw, i - 1, j, d_wxx * invd2);
        ws.add_g(ws.gw, i, j, -2.0 * (d_wxx + d_wyy) * invd2);
        ws.add_g(ws.gw, i, j + 1, d_wyy * invd2);
        ws.add_g(ws.gw, i, j - 1, d_wyy * invd2);
        ws.add_g(ws.gw, i + 1, j + 1, d_wxy * inv4d2);
        ws.add_g(ws.gw, i + 1, j - 1, -d_wxy * inv4d2);
        ws.add_g(ws.gw, i - 1, j + 1, -d_wxy * inv4d2);
        ws.add_g(ws.gw, i - 1, j - 1, d_wxy * inv4d2);
      }
    }
  }
  return energy;
}

} // namespace

double plate_fd_energy(const prob::SampleFeatures& s, const prob::MaterialSpec& mat, int n,
                       std::span<const double> u, std::span<const double> v,
                       std::span<const double> w, std::span<double> gu, std::span<double> gv,
                       std::span<double> gw) {
  FdWorkspace ws;
  ws.n = n;
  ws.d = s.b / (n - 1);
  ws.mu = mat.mu;
  ws.cm = mat.e_mod_mpa * mat.t_mm / (2.0 * (1.0 - mat.mu * mat.mu));
  ws.cb = mat.e_mod_mpa * std::pow(mat.t_mm, 3) / (24.0 * (1.0 - mat.mu * mat.mu));
  ws.p = s.p;
  ws.u = u.data();
  ws.v = v.data();
  ws.w = w.data();
  ws.gu = gu.empty() ? nullptr : gu.data();
  ws.gv = gv.empty() ? nullptr : gv.data();
  ws.gw = gw.empty() ? nullptr : gw.data();
  if (ws.gw) {
    std::fill(gu.begin(), gu.end(), 0.0);
    std::fill(gv.begin(), gv.end(), 0.0);
    std::fill(gw.begin(), gw.end(), 0.0);
  }
  return fd_energy_impl(ws);
}

namespace {

// packed unknowns: scaled interior u, v, then interior w
struct Packing {
  int n;
  double su; // in-plane variable scale balancing membrane vs bending stiffness
  int m() const { return (n - 2) * (n - 2); }
  int dim() const { return 3 * m(); }

  void unpack(std::span<const double> q, std::vector<double>& u, std::vector<double>& v,
              std::vector<double>& w) const {
    u.assign(static_cast<size_t>(n) * n, 0.0);
    v.assign(static_cast<size_t>(n) * n, 0.0);
    w.assign(static_cast<size_t>(n) * n, 0.0);
    int k = 0;
    for (int i = 1; i < n - 1; ++i)
      for (int j = 1; j < n - 1; ++j) u[i * n + j] = su * q[k++];
    for (int i = 1; i < n - 1; ++i)
      for (int j = 1; j < n - 1; ++j) v[i * n + j] = su * q[k++];
    for (int i = 1; i < n - 1; ++i)
      for (int j = 1; j < n - 1; ++j) w[i * n + j] = q[k++];
  }
  void pack_grad(std::span<const double> gu, std::span<const double> gv,
                 std::span<const double> gw, std::vector<double>& g) const {
    g.resize(dim());
    int k = 0;
    for (int i = 1; i < n - 1; ++i)
      for (int j = 1; j < n - 1; ++j) g[k++] = su * gu[i * n + j];
    for (int i = 1; i < n - 1; ++i)
      for (int j = 1; j < n - 1; ++j) g[k++] = su * gv[i * n + j];
    for (int i = 1; i < n - 1; ++i)
      for (int j = 1; j < n - 1; ++j) g[k++] = gw[i * n + j];
  }
};

double inf_norm(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}
double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

} // namespace

PlateReference solve_plate_reference(const prob::SampleFeatures& s, const prob::MaterialSpec& mat,
                                     const PlateSolveOptions& opt) {
  const int n = opt.n;
  if (n < 5 || n % 2 == 0) throw OracleError("plate grid must be odd and at least 5");

  PlateReference ref;
  ref.n = n;
  ref.b = s.b;
  ref.theta = s.theta;
  ref.sample = s;
  ref.xi = prob::uniform_grid(-0.5 * s.b, 0.5 * s.b, n);
  ref.eta = ref.xi;

  const double d = s.b / (n - 1);
  const double cm = mat.e_mod_mpa * mat.t_mm / (2.0 * (1.0 - mat.mu * mat.mu));
  const double cb = mat.e_mod_mpa * std::pow(mat.t_mm, 3) / (24.0 * (1.0 - mat.mu * mat.mu));

  Packing pk;
  pk.n = n;
  // analytic diagonal curvature estimates of the discrete energy
  const double diag_u = cm * (3.0 - mat.mu) / 2.0;
  const double diag_w = cb * 40.0 / (d * d);
  pk.su = std::sqrt(diag_w / diag_u);

  // reference gradient scale: at the zero field only the load term remains
  const double g0 = s.p * d * d;
  ref.grad_norm0 = g0;
  if (s.p == 0.0) {
    ref.u.assign(static_cast<size_t>(n) * n, 0.0);
    ref.v = ref.u;
    ref.w = ref.u;
    ref.energy = 0.0;
    return ref;
  }
  const double gtol = opt.grad_tol_rel * g0;

  std::vector<double> u, v, w, gu(static_cast<size_t>(n) * n), gv(gu.size()), gw(gu.size());
  auto eval = [&](std::span<const double> q, std::vector<double>& g) {
    pk.unpack(q, u, v, w);
    const double e = plate_fd_energy(s, mat, n, u, v, w, gu, gv, gw);
    pk.pack_grad(gu, gv, gw, g);
    return e;
  };

  std::vector<double> q(pk.dim(), 0.0);
  if (opt.warm_start && opt.warm_start->n == n) {
    const auto& ws = *opt.warm_start;
    int k = 0;
    for (int i = 1; i < n - 1; ++i)
      for (int j = 1; j < n - 1; ++j) q[k++] = ws.u[i * n + j] / pk.su;
    for (int i = 1; i < n - 1; ++i)
      for (int j = 1; j < n - 1; ++j) q[k++] = ws.v[i * n + j] / pk.su;
    for (int i = 1; i < n - 1; ++i)
      for (int j = 1; j < n - 1; ++j) q[k++] = ws.w[i * n + j];
  } else {
    // linear Kirchhoff warm start: conjugate gradients on the bending-only
    // quadratic, which is the small-deflection limit of the functional
    const int m = pk.m();
    std::vector<double> wq(m, 0.0), r(m), pdir(m), ap(m);
    std::vector<double> wf(static_cast<size_t>(n) * n, 0.0), zero(wf.size(), 0.0);
    std::vector<double> gw2(wf.size()), gz(wf.size()), gz2(wf.size());
    auto bending_apply = [&](std::span<const double> x, std::vector<double>& out) {
      FdWorkspace ws2{};
      int k = 0;
      for (int i = 1; i < n - 1; ++i)
        for (int j = 1; j < n - 1; ++j) wf[i * n + j] = x[k++];
      ws2.n = n;
      ws2.d = d;
      ws2.mu = mat.mu;
      ws2.cm = cm;
      ws2.cb = cb;
      ws2.p = 0.0;
      ws2.membrane_on = false;
      std::fill(gw2.begin(), gw2.end(), 0.0);
      ws2.u = zero.data();
      ws2.v = zero.data();
      ws2.w = wf.data();
      ws2.gu = gz.data();
      ws2.gv = gz2.data();
      ws2.gw = gw2.data();
      fd_energy_impl(ws2);
      out.resize(m);
      k = 0;
      for (int i = 1; i < n - 1; ++i)
        for (int j = 1; j < n - 1; ++j) out[k++] = gw2[i * n + j];
    };
    // rhs: load term d^2 p at each interior node
    for (int k = 0; k < m; ++k) r[k] = d * d * s.p;
    pdir = r;
    double rr = dot(r, r);
    const double rr0 = rr;
    const int cg_cap = std::min(20000, 5 * m);
    for (int cg = 0; cg < cg_cap && rr > 1e-22 * rr0; ++cg) {
      bending_apply(pdir, ap);
      const double alpha = rr / dot(pdir, ap);
      for (int k = 0; k < m; ++k) wq[k] += alpha * pdir[k];
      for (int k = 0; k < m; ++k) r[k] -= alpha * ap[k];
      const double rr_new = dot(r, r);
      for (int k = 0; k < m; ++k) pdir[k] = r[k] + (rr_new / rr) * pdir[k];
      rr = rr_new;
    }
    std::copy(wq.begin(), wq.end(), q.begin() + 2 * m);
  }

  // L-BFGS with Armijo backtracking
  const int mem = 20;
  const bool debug = std::getenv("VARMECH_PLATE_DEBUG") != nullptr;
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  std::vector<double> g, g_new, dir, q_new;
  double f = eval(q, g);

  int it = 0;
  double stall_ref = 1e300;
  for (; it < opt.max_iterations; ++it) {
    const double gn = inf_norm(g);
    ref.grad_norm = gn;
    if (debug && it % 1000 == 0)
      std::fprintf(stderr, "[plate n=%d] it=%d f=%.12g gnorm=%.3g tol=%.3g\n", n, it, f, gn,
                   gtol);
    if (gn <= gtol) break;
    if (it % 500 == 0) {
      if (gn > 0.9 * stall_ref) break; // barely moving; hand over to the polish phase
      stall_ref = gn;
    }

    // two-loop recursion
    dir = g;
    std::vector<double> alpha_hist(s_hist.size());
    for (int k = static_cast<int>(s_hist.size()) - 1; k >= 0; --k) {
      alpha_hist[k] = rho_hist[k] * dot(s_hist[k], dir);
      for (size_t z = 0; z < dir.size(); ++z) dir[z] -= alpha_hist[k] * y_hist[k][z];
    }
    if (!s_hist.empty()) {
      const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
      for (double& z : dir) z *= gamma;
    } else {
      for (double& z : dir) z *= 1.0 / std::max(gn, 1e-30);
    }
    for (size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * dot(y_hist[k], dir);
      for (size_t z = 0; z < dir.size(); ++z) dir[z] += (alpha_hist[k] - beta) * s_hist[k][z];
    }
    for (double& z : dir) z = -z;

    double slope = dot(g, dir);
    if (slope >= 0.0) { // bad curvature pair; restart from steepest descent
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = g;
      for (double& z : dir) z = -z / std::max(gn, 1e-30);
      slope = dot(g, dir);
    }

    // Backtracking on the energy, falling back to gradient-norm decrease once
    // energy differences drop below the resolution of f itself (the gradient
    // is assembled directly and keeps full relative precision there).
    double step = 1.0;
    double f_new = 0.0;
    bool ok = false;
    q_new.resize(q.size());
    const double f_resolution = 8.0 * std::abs(f) * 2.2e-16;
    for (int ls = 0; ls < 60; ++ls) {
      for (size_t z = 0; z < q.size(); ++z) q_new[z] = q[z] + step * dir[z];
      f_new = eval(q_new, g_new);
      const bool armijo = f_new <= f + 1e-4 * step * slope;
      const bool flat_progress = std::abs(f_new - f) <= f_resolution &&
                                 inf_norm(g_new) < 0.999 * gn;
      if (armijo || flat_progress) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok) break; // energy differences exhausted; polish on the gradient below

    std::vector<double> sk(q.size()), yk(q.size());
    for (size_t z = 0; z < q.size(); ++z) {
      sk[z] = q_new[z] - q[z];
      yk[z] = g_new[z] - g[z];
    }
    const double sy = dot(sk, yk);
    if (sy > 1e-30) {
      s_hist.push_back(std::move(sk));
      y_hist.push_back(std::move(yk));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > mem) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    q.swap(q_new);
    g.swap(g_new);
    f = f_new;
  }
  ref.iterations = it;

  // Newton-CG polish: near the minimum the energy differences fall below
  // double resolution, but the assembled gradient keeps full relative
  // precision, so Newton steps with finite-difference Hessian-vector
  // products still contract it.
  if (ref.grad_norm > gtol) {
    std::vector<double> gp(q.size()), gm(q.size()), r(q.size()), pcg(q.size()), hp(q.size()),
        dlt(q.size()), q_try(q.size());
    f = eval(q, g);
    const double q_scale = std::max(1e-6, inf_norm(q));
    for (int outer = 0; outer < 300 && inf_norm(g) > gtol; ++outer) {
      auto hess_vec = [&](std::span<const double> vdir, std::vector<double>& out) {
        const double vn = inf_norm(vdir);
        const double h = 1e-7 * q_scale / std::max(vn, 1e-30);
        for (size_t z = 0; z < q.size(); ++z) q_try[z] = q[z] + h * vdir[z];
        eval(q_try, gp);
        for (size_t z = 0; z < q.size(); ++z) q_try[z] = q[z] - h * vdir[z];
        eval(q_try, gm);
        for (size_t z = 0; z < q.size(); ++z) out[z] = (gp[z] - gm[z]) / (2.0 * h);
      };
      // CG on H d = -g
      std::fill(dlt.begin(), dlt.end(), 0.0);
      r = g;
      for (double& z : r) z = -z;
      pcg = r;
      double rr = dot(r, r);
      const double rr_target = 1e-6 * rr;
      for (int inner = 0; inner < 1200 && rr > rr_target; ++inner) {
        hess_vec(pcg, hp);
        const double php = dot(pcg, hp);
        if (php <= 0.0) break;
        const double alpha = rr / php;
        for (size_t z = 0; z < q.size(); ++z) dlt[z] += alpha * pcg[z];
        for (size_t z = 0; z < q.size(); ++z) r[z] -= alpha * hp[z];
        const double rr_new = dot(r, r);
        for (size_t z = 0; z < q.size(); ++z) pcg[z] = r[z] + (rr_new / rr) * pcg[z];
        rr = rr_new;
      }
      // step safeguarded on the gradient norm
      const double g0n = inf_norm(g);
      double step = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 30; ++ls) {
        for (size_t z = 0; z < q.size(); ++z) q_try[z] = q[z] + step * dlt[z];
        eval(q_try, gp);
        if (inf_norm(gp) < g0n) {
          q.swap(q_try);
          g = gp;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (debug)
        std::fprintf(stderr, "[plate n=%d] polish %d gnorm=%.3g tol=%.3g\n", n, outer,
                     inf_norm(g), gtol);
      if (!accepted) break;
      ++ref.iterations;
    }
    ref.grad_norm = inf_norm(g);
    f = eval(q, g);
  }

  if (ref.grad_norm > gtol) {
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "plate reference did not converge: %d iterations, grad max-norm %.3g"
                  " (target %.3g)",
                  it, ref.grad_norm, gtol);
    throw NonConvergence(msg);
  }

  pk.unpack(q, u, v, w);
  ref.u = u;
  ref.v = v;
  ref.w = w;
  ref.energy = f;
  return ref;
}

void PlateReference::fields_global(double x, double y, double& ug, double& vg, double& wg) const {
  double xi_q, eta_q;
  net::rotate_frame(x, y, theta, xi_q, eta_q);
  const double hb = 0.5 * b;
  if (std::abs(xi_q) >= hb || std::abs(eta_q) >= hb) {
    ug = vg = wg = 0.0;
    return;
  }
  const double d = b / (n - 1);
  const double fx = (xi_q + hb) / d, fy = (eta_q + hb) / d;
  const int i = std::min(static_cast<int>(fx), n - 2);
  const int j = std::min(static_cast<int>(fy), n - 2);
  const double tx = fx - i, ty = fy - j;
  auto lerp2 = [&](const std::vector<double>& f) {
    const double a00 = f[i * n + j], a10 = f[(i + 1) * n + j];
    const double a01 = f[i * n + j + 1], a11 = f[(i + 1) * n + j + 1];
    return (1 - tx) * ((1 - ty) * a00 + ty * a01) + tx * ((1 - ty) * a10 + ty * a11);
  };
  const double up = lerp2(u), vp = lerp2(v), wp = lerp2(w);
  const double ct = std::cos(theta), st = std::sin(theta);
  ug = up * ct - vp * st;
  vg = up * st + vp * ct;
  wg = wp;
}

double kirchhoff_center_coefficient(double b, double p, const prob::MaterialSpec& mat, int n) {
  const double d = b / (n - 1);
  const double bigD = mat.e_mod_mpa * std::pow(mat.t_mm, 3) / (12.0 * (1.0 - mat.mu * mat.mu));
  const int m = (n - 2) * (n - 2);

  auto at = [&](std::span<const double> x, int i, int j) -> double {
    i = reflect(i, n);
    j = reflect(j, n);
    if (i == 0 || i == n - 1 || j == 0 || j == n - 1) return 0.0;
    return x[(i - 1) * (n - 2) + (j - 1)];
  };
  // 13-point clamped biharmonic apply, mirror ghosts beyond the edges
  auto apply = [&](std::span<const double> x, std::vector<double>& out) {
    out.resize(m);
    const double invd4 = 1.0 / (d * d * d * d);
    for (int i = 1; i < n - 1; ++i)
      for (int j = 1; j < n - 1; ++j) {
        const double v = 20.0 * at(x, i, j) -
                         8.0 * (at(x, i + 1, j) + at(x, i - 1, j) + at(x, i, j + 1) +
                                at(x, i, j - 1)) +
                         2.0 * (at(x, i + 1, j + 1) + at(x, i + 1, j - 1) + at(x, i - 1, j + 1) +
                                at(x, i - 1, j - 1)) +
                         (at(x, i + 2, j) + at(x, i - 2, j) + at(x, i, j + 2) + at(x, i, j - 2));
        out[(i - 1) * (n - 2) + (j - 1)] = bigD * v * invd4;
      }
  };

  std::vector<double> w(m, 0.0), r(m, p), pdir(m, p), ap;
  double rr = dot(r, r);
  const double rr0 = rr;
  const int cap = std::min(40000, 10 * m);
  for (int it = 0; it < cap && rr > 1e-22 * rr0; ++it) {
    apply(pdir, ap);
    const double alpha = rr / dot(pdir, ap);
    for (int k = 0; k < m; ++k) w[k] += alpha * pdir[k];
    for (int k = 0; k < m; ++k) r[k] -= alpha * ap[k];
    const double rr_new = dot(r, r);
    for (int k = 0; k < m; ++k) pdir[k] = r[k] + (rr_new / rr) * pdir[k];
    rr = rr_new;
  }
  const int c = (n - 1) / 2;
  const double w_center = w[(c - 1) * (n - 2) + (c - 1)];
  return w_center * bigD / (p * b * b * b * b);
}

} // namespace varmech::oracle
