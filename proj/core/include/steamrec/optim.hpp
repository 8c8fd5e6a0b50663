#pragma once

#include <vector>

#include "steamrec/matrix.hpp"

namespace steamrec {

// Adam moment buffers plus hyperparameters, aligned index-for-index with the
// parameter list handed to adam_step.
struct OptimizerState {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

// Element-wise clamp of every gradient entry into [lo, hi].
void clip_gradients(std::vector<Matrix>& grads, double lo, double hi);

// One Adam update with bias correction. Moment buffers are created lazily on
// the first call; afterwards the shapes must keep matching.
void adam_step(std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
               OptimizerState& state);

}  // namespace steamrec
