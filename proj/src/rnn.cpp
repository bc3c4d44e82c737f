#include "rationale/rnn.hpp"

namespace rationale::model::rnn {

void forward(const RnnDirection& p,
             const Eigen::MatrixXd& projected,
             const Eigen::MatrixXd& gates,
             bool reverse,
             Eigen::MatrixXd& states) {
  const Eigen::Index h = p.w_rec.rows();
  const Eigen::Index L = projected.cols();
  const Eigen::Index C = gates.rows();
  states.resize(h, L * C);
  Eigen::MatrixXd pre(h, C);
  for (Eigen::Index step = 0; step < L; ++step) {
    const Eigen::Index t = reverse ? L - 1 - step : step;
    pre.noalias() = projected.col(t) * gates.col(t).transpose();
    pre.colwise() += p.bias;
    if (step > 0) {
      const Eigen::Index prev = reverse ? t + 1 : t - 1;
      pre.noalias() += p.w_rec * states.middleCols(prev * C, C);
    }
    states.middleCols(t * C, C) = pre.array().tanh().matrix();
  }
}

void backward(const RnnDirection& p,
              const Eigen::MatrixXd& projected,
              const Eigen::MatrixXd& gates,
              const Eigen::MatrixXd& states,
              const Eigen::MatrixXd& d_states,
              bool reverse,
              RnnDirection* grads,
              bool want_gates,
              Backward& out) {
  const Eigen::Index h = p.w_rec.rows();
  const Eigen::Index L = projected.cols();
  const Eigen::Index C = gates.rows();
  out.d_projected.resize(h, L);
  if (want_gates) out.d_gates.resize(C, L);

  Eigen::MatrixXd carry = Eigen::MatrixXd::Zero(h, C);
  Eigen::MatrixXd d_pre(h, C);
  for (Eigen::Index step = L - 1; step >= 0; --step) {
    const Eigen::Index t = reverse ? L - 1 - step : step;
    const auto s = states.middleCols(t * C, C);
    d_pre = ((d_states.middleCols(t * C, C) + carry).array() * (1.0 - s.array().square())).matrix();
    if (grads) grads->bias += d_pre.rowwise().sum();
    if (step > 0) {
      const Eigen::Index prev = reverse ? t + 1 : t - 1;
      const auto s_prev = states.middleCols(prev * C, C);
      if (grads) grads->w_rec.noalias() += d_pre * s_prev.transpose();
      carry.noalias() = p.w_rec.transpose() * d_pre;
    }
    out.d_projected.col(t).noalias() = d_pre * gates.col(t);
    if (want_gates) out.d_gates.col(t).noalias() = d_pre.transpose() * projected.col(t);
  }
}

}  // namespace rationale::model::rnn
