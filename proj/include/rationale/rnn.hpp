#pragma once

#include <Eigen/Dense>

#include "rationale/model.hpp"

// Gated Elman recurrence shared by the generator and the predictor encoder.
//
// A sequence of L steps carries C parallel columns. Step t sees the input
// x_t scaled by gates(c, t) in column c, so with u_t = w_in x_t:
//
//   a_t = u_t gates(:, t)^T + w_rec s_{t-1} + bias 1^T,   s_t = tanh(a_t)
//
// `projected` holds u_t as column t (h x L). `states` holds s_t for all
// columns at block [t*C, (t+1)*C) (h x L*C), in natural time order even when
// the recurrence runs in reverse.
namespace rationale::model::rnn {

void forward(const RnnDirection& p,
             const Eigen::MatrixXd& projected,
             const Eigen::MatrixXd& gates,
             bool reverse,
             Eigen::MatrixXd& states);

struct Backward {
  Eigen::MatrixXd d_projected;  // h x L
  Eigen::MatrixXd d_gates;      // C x L
};

// Back-propagates d_states (same layout as states). Adds recurrent-weight
// and bias gradients into `grads` when non-null; w_in gradients are left to
// the caller, which owns the input matrix.
void backward(const RnnDirection& p,
              const Eigen::MatrixXd& projected,
              const Eigen::MatrixXd& gates,
              const Eigen::MatrixXd& states,
              const Eigen::MatrixXd& d_states,
              bool reverse,
              RnnDirection* grads,
              bool want_gates,
              Backward& out);

}  // namespace rationale::model::rnn
