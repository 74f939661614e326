#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace varmech::diff {

// Primitive operations of a computation record. Every node is scalar-valued;
// the record is stored in topological order by construction (operands always
// precede their consumers).
enum class Op : uint8_t {
  leaf,       // externally assigned input or parameter
  constant,   // fixed value (aux)
  add,        // a + b
  sub,        // a - b
  mul,        // a * b
  div,        // a / b
  fma,        // a * b + c
  neg,        // -a
  square,     // a^2
  tanh_fn,    // tanh(a)
  sin_fn,     // sin(a)
  cos_fn,     // cos(a)
  sqrt_guard, // sqrt(max(a, aux)); derivative 0 below the guard floor
  relu,       // max(a, 0); derivative 0 at a <= 0
  max_const,  // max(a, aux); derivative 0 at a <= aux
  pow_int,    // a^k, k = int(aux)
  scale,      // a * aux
  add_const,  // a + aux
  dot,        // sum_k x_k * y_k (+ bias); pairs live in the extra index table
};

struct TapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnassignedInput : TapeError {
  using TapeError::TapeError;
};
struct NonFiniteIntermediate : TapeError {
  using TapeError::TapeError;
};
struct RootNotScalar : TapeError {
  using TapeError::TapeError;
};

class Tape;

// Lightweight handle to a node; arithmetic on Var appends nodes to the tape.
struct Var {
  Tape* tape = nullptr;
  int32_t id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Structure-of-arrays computation record. Holds both the program (ops and
// operand indices) and one execution state (values + adjoints). Additional
// execution states for the same program live in Replay buffers so several
// threads can evaluate one record concurrently.
class Tape {
public:
  std::vector<Op> op;
  std::vector<int32_t> arg_a, arg_b, arg_c;
  std::vector<double> aux;
  std::vector<double> val, adj;
  std::vector<uint8_t> assigned; // leaves only; evaluate() refuses unset leaves
  std::vector<int32_t> leaves;
  std::vector<int32_t> extra; // operand pair table for dot nodes

  int32_t size() const { return static_cast<int32_t>(op.size()); }

  Var leaf() {
    int32_t i = push(Op::leaf, -1, -1, -1, 0.0);
    assigned[i] = 0;
    leaves.push_back(i);
    return Var{this, i};
  }
  Var leaf(double v) {
    Var x = leaf();
    set(x, v);
    return x;
  }
  Var constant(double c) {
    int32_t i = push(Op::constant, -1, -1, -1, c);
    val[i] = c;
    return Var{this, i};
  }

  void set(Var x, double v) {
    val[x.id] = v;
    assigned[x.id] = 1;
  }
  double value(Var x) const { return val[x.id]; }
  double adjoint(Var x) const { return adj[x.id]; }

  Var emit(Op o, int32_t a, int32_t b = -1, int32_t c = -1, double x = 0.0) {
    return Var{this, push(o, a, b, c, x)};
  }

  // Forward pass over the whole record. Throws UnassignedInput if a leaf was
  // never set, NonFiniteIntermediate if any node evaluates to NaN/Inf.
  void forward();

  // Reverse pass seeding d(root)/d(root) = 1. Requires a prior forward().
  void backward(Var root);

  // forward + return root value (the spec's `evaluate`)
  double evaluate(Var root) {
    forward();
    return val[root.id];
  }

  // evaluate + backward + gather d(root)/d(wrt_i)
  std::vector<double> gradient(Var root, std::span<const Var> wrt);

  // Worst relative error of the reverse-mode gradient against central
  // differences over every given leaf, step h_i = step * max(1, |x_i|).
  double gradcheck(Var root, std::span<const Var> wrt, double step = 1e-6);

private:
  int32_t push(Op o, int32_t a, int32_t b, int32_t c, double x) {
    op.push_back(o);
    arg_a.push_back(a);
    arg_b.push_back(b);
    arg_c.push_back(c);
    aux.push_back(x);
    val.push_back(0.0);
    adj.push_back(0.0);
    assigned.push_back(1);
    return static_cast<int32_t>(op.size()) - 1;
  }
};

// Per-thread execution state for replaying one tape with different leaf
// values. The program itself stays shared and read-only.
struct Replay {
  std::vector<double> val, adj;

  void bind(const Tape& t) {
    val.assign(t.val.begin(), t.val.end());
    adj.assign(t.op.size(), 0.0);
  }
  void set(Var x, double v) { val[x.id] = v; }
  double value(Var x) const { return val[x.id]; }
  double adjoint(Var x) const { return adj[x.id]; }
};

void replay_forward(const Tape& t, Replay& r);
void replay_backward(const Tape& t, Replay& r, Var root, double seed = 1.0);
// Backward variant that re-zeroes op-node adjoints as it sweeps, leaving only
// leaf adjoints set; the caller must clear those after reading them. Requires
// all adjoints zero on entry (the state it restores for the next call).
void replay_backward_rezero(const Tape& t, Replay& r, Var root, double seed = 1.0);

// ---- Var arithmetic -------------------------------------------------------

inline Var operator+(Var a, Var b) { return a.tape->emit(Op::add, a.id, b.id); }
inline Var operator-(Var a, Var b) { return a.tape->emit(Op::sub, a.id, b.id); }
inline Var operator*(Var a, Var b) { return a.tape->emit(Op::mul, a.id, b.id); }
inline Var operator/(Var a, Var b) { return a.tape->emit(Op::div, a.id, b.id); }
inline Var operator-(Var a) { return a.tape->emit(Op::neg, a.id); }

inline Var operator*(Var a, double k) { return a.tape->emit(Op::scale, a.id, -1, -1, k); }
inline Var operator*(double k, Var a) { return a * k; }
inline Var operator+(Var a, double k) { return a.tape->emit(Op::add_const, a.id, -1, -1, k); }
inline Var operator+(double k, Var a) { return a + k; }
inline Var operator-(Var a, double k) { return a + (-k); }
inline Var operator-(double k, Var a) { return (-a) + k; }
inline Var operator/(Var a, double k) { return a * (1.0 / k); }
inline Var operator/(double k, Var a) { return a.tape->constant(k) / a; }

inline Var fmadd(Var a, Var b, Var c) { return a.tape->emit(Op::fma, a.id, b.id, c.id); }
inline Var square(Var a) { return a.tape->emit(Op::square, a.id); }
inline Var tanh(Var a) { return a.tape->emit(Op::tanh_fn, a.id); }
inline Var sin(Var a) { return a.tape->emit(Op::sin_fn, a.id); }
inline Var cos(Var a) { return a.tape->emit(Op::cos_fn, a.id); }
inline Var sqrt_guard(Var a, double floor_eps = 1e-9) {
  return a.tape->emit(Op::sqrt_guard, a.id, -1, -1, floor_eps);
}
inline Var relu(Var a) { return a.tape->emit(Op::relu, a.id); }
inline Var max_const(Var a, double k) { return a.tape->emit(Op::max_const, a.id, -1, -1, k); }
inline Var pow_int(Var a, int k) {
  return a.tape->emit(Op::pow_int, a.id, -1, -1, static_cast<double>(k));
}

// fused inner product: sum over x_k y_k plus an optional bias node
inline Var dot(Tape& t, std::span<const Var> x, std::span<const Var> y, Var bias = Var{}) {
  const int32_t off = static_cast<int32_t>(t.extra.size());
  for (size_t k = 0; k < x.size(); ++k) {
    t.extra.push_back(x[k].id);
    t.extra.push_back(y[k].id);
  }
  return t.emit(Op::dot, off, static_cast<int32_t>(x.size()), bias.valid() ? bias.id : -1);
}

} // namespace varmech::diff
