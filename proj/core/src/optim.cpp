#include "steamrec/optim.hpp"

#include <cmath>
#include <string>

namespace steamrec {

void clip_gradients(std::vector<Matrix>& grads, double lo, double hi) {
  if (lo > hi) {
    throw ConfigError("clip_gradients: lower bound " + std::to_string(lo) +
                      " exceeds upper bound " + std::to_string(hi));
  }
  for (Matrix& g : grads) {
    for (double& x : g.data) {
      if (x < lo) x = lo;
      else if (x > hi) x = hi;
    }
  }
}

void adam_step(std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
               OptimizerState& state) {
  if (params.size() != grads.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " parameters vs " +
                        std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const Matrix* p : params) {
      state.m.emplace_back(p->rows, p->cols);
      state.v.emplace_back(p->rows, p->cols);
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                        " tensors, got " + std::to_string(params.size()));
  }
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = grads[i];
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    if (!p.same_shape(g) || !p.same_shape(m)) {
      throw ShapeError("adam_step: tensor " + std::to_string(i) + " shape " + p.shape_str() +
                       " does not match gradient " + g.shape_str() + " or state " +
                       m.shape_str());
    }
    for (size_t j = 0; j < p.data.size(); ++j) {
      const double gj = g.data[j];
      m.data[j] = b1 * m.data[j] + (1.0 - b1) * gj;
      v.data[j] = b2 * v.data[j] + (1.0 - b2) * gj * gj;
      const double mhat = m.data[j] / bc1;
      const double vhat = v.data[j] / bc2;
      p.data[j] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace steamrec
