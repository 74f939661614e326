#include "varmech/path_partials.hpp"

namespace varmech::diff {

double PathPartials::total_input_gradient(int i0) const {
  double total = 0.0;
  for (int i3 = 0; i3 < n3; ++i3)
    for (int i2 = 0; i2 < n2; ++i2)
      for (int i1 = 0; i1 < n1; ++i1) total += path_product(i0, i1, i2, i3);
  return total;
}

PathPartials path_partials(const Tape& tape, const TwoHiddenPointLayout& lay) {
  if (lay.z1.empty() || lay.z2.empty())
    throw UnsupportedDepth("path partials require exactly two hidden layers");

  PathPartials pp;
  pp.n0 = static_cast<int>(lay.z0.size());
  pp.n1 = static_cast<int>(lay.z1.size());
  pp.n2 = static_cast<int>(lay.z2.size());
  pp.n3 = static_cast<int>(lay.z3.size());

  pp.dl_dz3.resize(pp.n3);
  for (int i3 = 0; i3 < pp.n3; ++i3) pp.dl_dz3[i3] = tape.adj[lay.z3[i3].id];

  // tanh activations cache sigma' = 1 - z^2 in their own value
  auto sigma_prime = [&](Var act) {
    if (!lay.tanh_hidden) return 1.0;
    const double z = tape.val[act.id];
    return 1.0 - z * z;
  };

  pp.s32.resize(static_cast<size_t>(pp.n3) * pp.n2);
  for (int i3 = 0; i3 < pp.n3; ++i3)
    for (int i2 = 0; i2 < pp.n2; ++i2)
      pp.s32[i3 * pp.n2 + i2] = tape.val[lay.w3[i3 * pp.n2 + i2].id];

  pp.s21.resize(static_cast<size_t>(pp.n2) * pp.n1);
  for (int i2 = 0; i2 < pp.n2; ++i2) {
    const double sp = sigma_prime(lay.z2[i2]);
    for (int i1 = 0; i1 < pp.n1; ++i1)
      pp.s21[i2 * pp.n1 + i1] = sp * tape.val[lay.w2[i2 * pp.n1 + i1].id];
  }

  pp.s10.resize(static_cast<size_t>(pp.n1) * pp.n0);
  for (int i1 = 0; i1 < pp.n1; ++i1) {
    const double sp = sigma_prime(lay.z1[i1]);
    for (int i0 = 0; i0 < pp.n0; ++i0)
      pp.s10[i1 * pp.n0 + i0] = sp * tape.val[lay.w1[i1 * pp.n0 + i0].id];
  }
  return pp;
}

} // namespace varmech::diff
