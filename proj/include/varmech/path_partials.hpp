#pragma once

#include "varmech/tape.hpp"

#include <span>
#include <vector>

namespace varmech::diff {

struct UnsupportedDepth : TapeError {
  using TapeError::TapeError;
};

// Node/weight handles of one interpolating point of a 2-hidden-layer network,
// everything needed to factor d(loss)/d(input) into per-segment partials.
struct TwoHiddenPointLayout {
  std::span<const Var> z0; // input-layer nodes
  std::span<const Var> z1; // first hidden activations
  std::span<const Var> z2; // second hidden activations
  std::span<const Var> z3; // output nodes (identity layer)
  std::span<const Var> w1; // weight leaves, row-major out x in
  std::span<const Var> w2;
  std::span<const Var> w3;
  bool tanh_hidden = true;
};

// Per-segment partial derivatives after a backward pass:
//   dl_dz3[i3]         = d loss / d z3
//   s32[i3, i2]        = d z3 / d z2 (output weight alone, identity layer)
//   s21[i2, i1]        = sigma'(pre2) * w2
//   s10[i1, i0]        = sigma'(pre1) * w1
// The product over one index path is that path's chain-rule contribution;
// summing products over (i1, i2) recovers d loss / d z0 exactly.
struct PathPartials {
  int n0 = 0, n1 = 0, n2 = 0, n3 = 0;
  std::vector<double> dl_dz3;
  std::vector<double> s32, s21, s10; // row-major

  double path_product(int i0, int i1, int i2, int i3) const {
    return dl_dz3[i3] * s32[i3 * n2 + i2] * s21[i2 * n1 + i1] * s10[i1 * n0 + i0];
  }
  // sum of signed products over all (i1, i2, i3) for one input neuron
  double total_input_gradient(int i0) const;
};

// Reads values/adjoints cached on the tape by the most recent forward and
// backward passes. Throws UnsupportedDepth unless both hidden layers exist.
PathPartials path_partials(const Tape& tape, const TwoHiddenPointLayout& layout);

} // namespace varmech::diff
