#pragma once

#include "varmech/tape.hpp"

#include <span>

namespace varmech::diff {

// Jets carry a value node together with nodes for its derivatives with
// respect to two spatial coordinates. Derivatives are propagated exactly,
// node by node, so reverse mode through a jet-built expression yields exact
// parameter gradients of expressions that contain spatial derivatives.
//
// An invalid Var marks a derivative channel that is structurally zero; the
// combinators below skip such channels instead of emitting zero constants.

inline Var nadd(Var a, Var b) {
  if (!a.valid()) return b;
  if (!b.valid()) return a;
  return a + b;
}
inline Var nsub(Var a, Var b) {
  if (!b.valid()) return a;
  if (!a.valid()) return -b;
  return a - b;
}
inline Var nmul(Var a, Var b) {
  if (!a.valid() || !b.valid()) return Var{};
  return a * b;
}
inline Var nscale(Var a, double k) {
  if (!a.valid()) return Var{};
  return a * k;
}
inline Var nfma(Var a, Var b, Var c) { // a*b + c with null propagation
  Var ab = nmul(a, b);
  return nadd(ab, c);
}

// value + first derivatives (d/dx, d/dy)
struct Jet1 {
  Var v, dx, dy;
};

// value + first and second derivatives (d/dx, d/dy, d2/dx2, d2/dxdy, d2/dy2)
struct Jet2 {
  Var v, dx, dy, dxx, dxy, dyy;
};

inline Jet1 jconst1(Var v) { return Jet1{v, Var{}, Var{}}; }
inline Jet2 jconst2(Var v) { return Jet2{v, Var{}, Var{}, Var{}, Var{}, Var{}}; }

inline Jet1 jadd(const Jet1& a, const Jet1& b) {
  return {nadd(a.v, b.v), nadd(a.dx, b.dx), nadd(a.dy, b.dy)};
}
inline Jet2 jadd(const Jet2& a, const Jet2& b) {
  return {nadd(a.v, b.v),   nadd(a.dx, b.dx),   nadd(a.dy, b.dy),
          nadd(a.dxx, b.dxx), nadd(a.dxy, b.dxy), nadd(a.dyy, b.dyy)};
}
inline Jet1 jsub(const Jet1& a, const Jet1& b) {
  return {nsub(a.v, b.v), nsub(a.dx, b.dx), nsub(a.dy, b.dy)};
}
inline Jet2 jsub(const Jet2& a, const Jet2& b) {
  return {nsub(a.v, b.v),   nsub(a.dx, b.dx),   nsub(a.dy, b.dy),
          nsub(a.dxx, b.dxx), nsub(a.dxy, b.dxy), nsub(a.dyy, b.dyy)};
}

// product rule
inline Jet1 jmul(const Jet1& a, const Jet1& b) {
  Jet1 r;
  r.v = a.v * b.v;
  r.dx = nadd(nmul(a.dx, b.v), nmul(a.v, b.dx));
  r.dy = nadd(nmul(a.dy, b.v), nmul(a.v, b.dy));
  return r;
}
inline Jet2 jmul(const Jet2& a, const Jet2& b) {
  Jet2 r;
  r.v = a.v * b.v;
  r.dx = nadd(nmul(a.dx, b.v), nmul(a.v, b.dx));
  r.dy = nadd(nmul(a.dy, b.v), nmul(a.v, b.dy));
  r.dxx = nadd(nadd(nmul(a.dxx, b.v), nscale(nmul(a.dx, b.dx), 2.0)), nmul(a.v, b.dxx));
  r.dxy = nadd(nadd(nmul(a.dxy, b.v), nmul(a.dx, b.dy)),
               nadd(nmul(a.dy, b.dx), nmul(a.v, b.dxy)));
  r.dyy = nadd(nadd(nmul(a.dyy, b.v), nscale(nmul(a.dy, b.dy), 2.0)), nmul(a.v, b.dyy));
  return r;
}

// multiply by a spatially-constant scalar node (parameter or feature)
inline Jet1 jscale(const Jet1& a, Var s) {
  return {a.v * s, nmul(a.dx, s), nmul(a.dy, s)};
}
inline Jet2 jscale(const Jet2& a, Var s) {
  return {a.v * s, nmul(a.dx, s), nmul(a.dy, s), nmul(a.dxx, s), nmul(a.dxy, s), nmul(a.dyy, s)};
}
inline Jet1 jscale(const Jet1& a, double k) {
  return {a.v * k, nscale(a.dx, k), nscale(a.dy, k)};
}
inline Jet2 jscale(const Jet2& a, double k) {
  return {a.v * k, nscale(a.dx, k), nscale(a.dy, k),
          nscale(a.dxx, k), nscale(a.dxy, k), nscale(a.dyy, k)};
}

inline Jet1 jsquare(const Jet1& a) { return jmul(a, a); }
inline Jet2 jsquare(const Jet2& a) { return jmul(a, a); }

// chain rule through tanh; second derivative uses tanh'' = -2 tanh tanh'
inline Jet1 jtanh(const Jet1& a) {
  Jet1 r;
  r.v = tanh(a.v);
  Var sp = 1.0 - square(r.v);
  r.dx = nmul(a.dx, sp);
  r.dy = nmul(a.dy, sp);
  return r;
}
inline Jet2 jtanh(const Jet2& a) {
  Jet2 r;
  r.v = tanh(a.v);
  Var sp = 1.0 - square(r.v);
  Var spp = (-2.0) * (r.v * sp);
  r.dx = nmul(a.dx, sp);
  r.dy = nmul(a.dy, sp);
  r.dxx = nfma(nmul(a.dx, a.dx), spp, nmul(a.dxx, sp));
  r.dxy = nfma(nmul(a.dx, a.dy), spp, nmul(a.dxy, sp));
  r.dyy = nfma(nmul(a.dy, a.dy), spp, nmul(a.dyy, sp));
  return r;
}

// identity activation (used by test networks)
inline Jet1 jidentity(const Jet1& a) { return a; }
inline Jet2 jidentity(const Jet2& a) { return a; }

} // namespace varmech::diff
