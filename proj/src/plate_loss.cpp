#include "varmech/problems.hpp"
#include "varmech/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace varmech::prob {

double stable_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double sum = 0.0, comp = 0.0;
  for (double x : values) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }
  return sum + comp;
}

int worker_thread_count() {
  if (const char* env = std::getenv("VARMECH_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return std::min(n, 16);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp(hw, 1u, 8u));
}

diff::Var plate_energy_density(diff::Tape& tape, const diff::Jet1& u, const diff::Jet1& v,
                               const diff::Jet2& w, const MaterialSpec& mat) {
  using namespace diff;
  const double mu = mat.mu;
  const double cm = mat.e_mod_mpa * mat.t_mm / (2.0 * (1.0 - mu * mu));
  const double cb = mat.e_mod_mpa * mat.t_mm * mat.t_mm * mat.t_mm / (24.0 * (1.0 - mu * mu));
  (void)tape;

  Var ux = u.dx, uy = u.dy, vx = v.dx, vy = v.dy;
  Var wx = w.dx, wy = w.dy;

  Var wx2 = square(wx);
  Var wy2 = square(wy);
  Var wxwy = wx * wy;

  Var membrane = square(ux) + ux * wx2 + square(vy) + vy * wy2 + square(wx2 + wy2) * 0.25 +
                 (ux * vy + (vy * wx2) * 0.5 + (ux * wy2) * 0.5) * (2.0 * mu) +
                 (square(uy) + (uy * vx) * 2.0 + square(vx) + (uy * wxwy) * 2.0 +
                  (vx * wxwy) * 2.0) *
                     (0.5 * (1.0 - mu));

  Var lap = w.dxx + w.dyy;
  Var bending = square(lap) + (square(w.dxy) - w.dxx * w.dyy) * (2.0 * (1.0 - mu));

  return membrane * cm + bending * cb;
}

PlateKernel build_plate_kernel(const ModelParams& model, const MaterialSpec& mat) {
  using namespace diff;
  if (model.nets.size() != 3) throw ProblemError("plate model needs u, v, w networks");
  const net::MlpParams& nu = model.nets[0];
  const net::MlpParams& nv = model.nets[1];
  const net::MlpParams& nw = model.nets[2];
  if (nu.input_dim() != 5) throw ProblemError("plate networks take (x, y, p, b, theta)");

  PlateKernel k;
  Tape& tape = k.tape;
  for (const auto* n : {&nu, &nv, &nw}) {
    auto leaves = net::make_param_leaves(tape, *n);
    k.param_leaves.insert(k.param_leaves.end(), leaves.begin(), leaves.end());
  }
  k.x_leaf = tape.leaf(0.0);
  k.y_leaf = tape.leaf(0.0);
  k.p_leaf = tape.leaf(0.0);
  k.b_leaf = tape.leaf(30.0);
  k.theta_leaf = tape.leaf(0.0);

  // scaled network inputs; spatial derivative seeds are the scale slopes
  const net::FeatureScaling& sc = nu.scaling;
  auto unit = [&](int i, Var raw) {
    const double r = 2.0 / (sc.hi[i] - sc.lo[i]);
    return raw * r + (-(sc.hi[i] + sc.lo[i]) / (sc.hi[i] - sc.lo[i]));
  };
  Var xs = unit(0, k.x_leaf), ys = unit(1, k.y_leaf);
  Var ps = unit(2, k.p_leaf), bs = unit(3, k.b_leaf), ts = unit(4, k.theta_leaf);
  Var dxs = tape.constant(2.0 / (sc.hi[0] - sc.lo[0]));
  Var dys = tape.constant(2.0 / (sc.hi[1] - sc.lo[1]));

  std::vector<Jet2> in2 = {
      Jet2{xs, dxs, Var{}, Var{}, Var{}, Var{}}, Jet2{ys, Var{}, dys, Var{}, Var{}, Var{}},
      jconst2(ps), jconst2(bs), jconst2(ts)};
  std::vector<Jet1> in1;
  for (const auto& j : in2) in1.push_back(Jet1{j.v, j.dx, j.dy});

  size_t off = 0;
  auto leaves_of = [&](const net::MlpParams& n) {
    std::span<const Var> s(k.param_leaves.data() + off, n.param_count());
    off += n.param_count();
    return s;
  };
  std::vector<Jet1> u_out = net::build_forward_jet<Jet1>(tape, nu, leaves_of(nu), in1);
  std::vector<Jet1> v_out = net::build_forward_jet<Jet1>(tape, nv, leaves_of(nv), in1);
  std::vector<Jet2> w_out = net::build_forward_jet<Jet2>(tape, nw, leaves_of(nw), in2);

  // clamp envelope in the plate frame, fields and derivatives in global frame
  Jet2 xj{k.x_leaf, tape.constant(1.0), Var{}, Var{}, Var{}, Var{}};
  Jet2 yj{k.y_leaf, Var{}, tape.constant(1.0), Var{}, Var{}, Var{}};
  Jet2 B = net::build_envelope_jet(tape, xj, yj, k.b_leaf, k.theta_leaf);
  Jet1 B1{B.v, B.dx, B.dy};

  k.uc = jmul(u_out[0], B1);
  k.vc = jmul(v_out[0], B1);
  k.wc = jmul(w_out[0], jsquare(B));

  k.integrand_root = plate_energy_density(tape, k.uc, k.vc, k.wc, mat) - k.wc.v * k.p_leaf;
  return k;
}

PlateQuadrature sample_plate_points(const SampleFeatures& s, int qp, uint64_t seed) {
  PlateQuadrature q;
  q.seed = seed;
  q.x.resize(qp);
  q.y.resize(qp);
  Rng rng(seed);
  const double hb = 0.5 * s.b;
  for (int i = 0; i < qp; ++i) {
    const double xi = rng.uniform(-hb, hb);
    const double eta = rng.uniform(-hb, hb);
    net::rotate_frame_inverse(xi, eta, s.theta, q.x[i], q.y[i]);
  }
  return q;
}

PlateLoss::PlateLoss(const ModelParams& model, const MaterialSpec& mat,
                     const SampleFeatures& sample, const DiscretizationSpec& disc,
                     bool allow_small_qp)
    : kernel_(build_plate_kernel(model, mat)), sample_(sample), disc_(disc) {
  if (disc.qp < 100 && !allow_small_qp)
    throw DegenerateQuadrature("plate quadrature needs at least 100 points");
  if (disc.qp < 1) throw DegenerateQuadrature("plate quadrature needs at least 1 point");
  label_ = sample.label;
  quad_ = sample_plate_points(sample_, disc_.qp, disc_.seed);
}

void PlateLoss::on_window_start(int loop) {
  if (disc_.resample_per_loop)
    quad_ = sample_plate_points(sample_, disc_.qp, Rng(disc_.seed).split(loop).state);
}

double PlateLoss::evaluate_impl(std::span<const double> params, std::span<double> grad,
                                bool want_grad) {
  const int qp = static_cast<int>(quad_.x.size());
  const size_t np = kernel_.param_leaves.size();
  const double cell = sample_.b * sample_.b / qp;

  constexpr int kChunk = 64;
  const int n_chunks = (qp + kChunk - 1) / kChunk;
  std::vector<double> point_vals(qp);
  std::vector<std::vector<double>> chunk_grads;
  if (want_grad) chunk_grads.assign(n_chunks, std::vector<double>());

  std::atomic<int> next{0};
  auto work = [&]() {
    diff::Replay rp;
    rp.bind(kernel_.tape);
    for (size_t k = 0; k < np; ++k) rp.val[kernel_.param_leaves[k].id] = params[k];
    rp.set(kernel_.p_leaf, sample_.p);
    rp.set(kernel_.b_leaf, sample_.b);
    rp.set(kernel_.theta_leaf, sample_.theta);

    for (int c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1)) {
      const int lo = c * kChunk, hi = std::min(qp, lo + kChunk);
      double* cg = nullptr;
      if (want_grad) {
        chunk_grads[c].assign(np, 0.0);
        cg = chunk_grads[c].data();
      }
      for (int j = lo; j < hi; ++j) {
        rp.set(kernel_.x_leaf, quad_.x[j]);
        rp.set(kernel_.y_leaf, quad_.y[j]);
        diff::replay_forward(kernel_.tape, rp);
        point_vals[j] = rp.value(kernel_.integrand_root);
        if (want_grad) {
          // rezeroing sweep leaves only leaf adjoints set; collect and clear
          diff::replay_backward_rezero(kernel_.tape, rp, kernel_.integrand_root);
          for (size_t k = 0; k < np; ++k) {
            const int32_t id = kernel_.param_leaves[k].id;
            cg[k] += rp.adj[id];
            rp.adj[id] = 0.0;
          }
          rp.adj[kernel_.x_leaf.id] = 0.0;
          rp.adj[kernel_.y_leaf.id] = 0.0;
          rp.adj[kernel_.p_leaf.id] = 0.0;
          rp.adj[kernel_.b_leaf.id] = 0.0;
          rp.adj[kernel_.theta_leaf.id] = 0.0;
        }
      }
    }
  };

  const int n_threads = std::min(worker_thread_count(), n_chunks);
  if (n_threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  if (want_grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int c = 0; c < n_chunks; ++c)
      for (size_t k = 0; k < np; ++k) grad[k] += chunk_grads[c][k];
    for (size_t k = 0; k < np; ++k) grad[k] *= cell;
  }
  return cell * stable_sum(std::move(point_vals));
}

double PlateLoss::value_and_grad(std::span<const double> params, std::span<double> grad) {
  ++evals_;
  return evaluate_impl(params, grad, true);
}

double PlateLoss::value(std::span<const double> params) {
  ++evals_;
  return evaluate_impl(params, {}, false);
}

} // namespace varmech::prob
