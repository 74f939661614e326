#include "varmech/tape.hpp"

#include <algorithm>

namespace varmech::diff {

namespace {

inline double forward_one(Op o, double a, double b, double c, double x) {
  switch (o) {
  case Op::add: return a + b;
  case Op::sub: return a - b;
  case Op::mul: return a * b;
  case Op::div: return a / b;
  case Op::fma: return a * b + c;
  case Op::neg: return -a;
  case Op::square: return a * a;
  case Op::tanh_fn: return std::tanh(a);
  case Op::sin_fn: return std::sin(a);
  case Op::cos_fn: return std::cos(a);
  case Op::sqrt_guard: return std::sqrt(a > x ? a : x);
  case Op::relu: return a > 0.0 ? a : 0.0;
  case Op::max_const: return a > x ? a : x;
  case Op::pow_int: return std::pow(a, static_cast<int>(x));
  case Op::scale: return a * x;
  case Op::add_const: return a + x;
  default: return a;
  }
}

template <class State>
void forward_impl(const Tape& t, State& val) {
  const int32_t n = t.size();
  const int32_t* extra = t.extra.data();
  uint64_t bad = 0;
  for (int32_t i = 0; i < n; ++i) {
    const Op o = t.op[i];
    if (o == Op::leaf || o == Op::constant) continue;
    const int32_t ia = t.arg_a[i], ib = t.arg_b[i], ic = t.arg_c[i];
    double v;
    if (o == Op::dot) {
      double acc = ic >= 0 ? val[ic] : 0.0;
      const int32_t* p = extra + ia;
      for (int32_t k = 0; k < ib; ++k) acc += val[p[2 * k]] * val[p[2 * k + 1]];
      v = acc;
    } else {
      const double a = val[ia];
      const double b = ib >= 0 ? val[ib] : 0.0;
      const double c = ic >= 0 ? val[ic] : 0.0;
      v = forward_one(o, a, b, c, t.aux[i]);
    }
    val[i] = v;
    bad |= !std::isfinite(v);
  }
  if (bad) throw NonFiniteIntermediate("non-finite intermediate value in forward pass");
}

template <bool Rezero, class VState, class AState>
void backward_sweep(const Tape& t, const VState& val, AState& adj, int32_t root, double seed) {
  adj[root] = seed;
  const int32_t* extra = t.extra.data();
  for (int32_t i = root; i >= 0; --i) {
    const double g = adj[i];
    if (g == 0.0) continue;
    const Op o = t.op[i];
    if constexpr (Rezero) {
      if (o != Op::leaf) adj[i] = 0.0;
    }
    const int32_t ia = t.arg_a[i], ib = t.arg_b[i], ic = t.arg_c[i];
    switch (o) {
    case Op::leaf:
    case Op::constant: break;
    case Op::dot: {
      const int32_t* p = extra + ia;
      for (int32_t k = 0; k < ib; ++k) {
        adj[p[2 * k]] += g * val[p[2 * k + 1]];
        adj[p[2 * k + 1]] += g * val[p[2 * k]];
      }
      if (ic >= 0) adj[ic] += g;
      break;
    }
    case Op::add:
      adj[ia] += g;
      adj[ib] += g;
      break;
    case Op::sub:
      adj[ia] += g;
      adj[ib] -= g;
      break;
    case Op::mul:
      adj[ia] += g * val[ib];
      adj[ib] += g * val[ia];
      break;
    case Op::div: {
      const double inv = 1.0 / val[ib];
      adj[ia] += g * inv;
      adj[ib] -= g * val[i] * inv;
      break;
    }
    case Op::fma:
      adj[ia] += g * val[ib];
      adj[ib] += g * val[ia];
      adj[ic] += g;
      break;
    case Op::neg: adj[ia] -= g; break;
    case Op::square: adj[ia] += g * 2.0 * val[ia]; break;
    case Op::tanh_fn: adj[ia] += g * (1.0 - val[i] * val[i]); break;
    case Op::sin_fn: adj[ia] += g * std::cos(val[ia]); break;
    case Op::cos_fn: adj[ia] -= g * std::sin(val[ia]); break;
    case Op::sqrt_guard:
      // flat below the guard floor, 1/(2 sqrt a) above it
      if (val[ia] >= t.aux[i]) adj[ia] += g * 0.5 / val[i];
      break;
    case Op::relu:
      if (val[ia] > 0.0) adj[ia] += g;
      break;
    case Op::max_const:
      if (val[ia] > t.aux[i]) adj[ia] += g;
      break;
    case Op::pow_int: {
      const int k = static_cast<int>(t.aux[i]);
      adj[ia] += g * k * std::pow(val[ia], k - 1);
      break;
    }
    case Op::scale: adj[ia] += g * t.aux[i]; break;
    case Op::add_const: adj[ia] += g; break;
    }
  }
}

template <class VState, class AState>
void backward_impl(const Tape& t, const VState& val, AState& adj, int32_t root, double seed) {
  std::fill(adj.begin(), adj.end(), 0.0);
  backward_sweep<false>(t, val, adj, root, seed);
}

} // namespace

void Tape::forward() {
  for (int32_t i : leaves)
    if (!assigned[i]) throw UnassignedInput("leaf " + std::to_string(i) + " has no value");
  forward_impl(*this, val);
}

void Tape::backward(Var root) {
  if (!root.valid() || root.id >= size())
    throw RootNotScalar("backward root is not a node of this record");
  backward_impl(*this, val, adj, root.id, 1.0);
}

std::vector<double> Tape::gradient(Var root, std::span<const Var> wrt) {
  forward();
  backward(root);
  std::vector<double> g(wrt.size());
  for (size_t k = 0; k < wrt.size(); ++k) g[k] = adj[wrt[k].id];
  return g;
}

double Tape::gradcheck(Var root, std::span<const Var> wrt, double step) {
  std::vector<double> analytic = gradient(root, wrt);
  double worst = 0.0;
  for (size_t k = 0; k < wrt.size(); ++k) {
    const double x0 = val[wrt[k].id];
    const double h = step * std::max(1.0, std::abs(x0));
    set(wrt[k], x0 + h);
    forward();
    const double fp = val[root.id];
    set(wrt[k], x0 - h);
    forward();
    const double fm = val[root.id];
    set(wrt[k], x0);
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-12});
    worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
  }
  forward(); // restore cached values
  return worst;
}

void replay_forward(const Tape& t, Replay& r) { forward_impl(t, r.val); }

void replay_backward(const Tape& t, Replay& r, Var root, double seed) {
  backward_impl(t, r.val, r.adj, root.id, seed);
}

void replay_backward_rezero(const Tape& t, Replay& r, Var root, double seed) {
  backward_sweep<true>(t, r.val, r.adj, root.id, seed);
}

} // namespace varmech::diff
