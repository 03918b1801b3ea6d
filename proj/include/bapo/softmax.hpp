#ifndef BAPO_SOFTMAX_HPP
#define BAPO_SOFTMAX_HPP

#include <Eigen/Dense>

namespace bapo {

// Row-wise categorical kernels. Each row of a logit block is one position's
// distribution over the vocabulary.

/// Element-wise std::exp. Eigen's packet exp clamps very negative inputs to a
/// tiny positive value instead of 0, which breaks 0 log 0 = 0 at extreme logits.
template <typename Derived>
auto exact_exp(const Eigen::ArrayBase<Derived>& x) {
  return x.unaryExpr([](typename Derived::Scalar v) { return std::exp(v); });
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
log_softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(logits.rows(),
                                                                            logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar m = logits.row(r).maxCoeff();
    // Shift first: m + log Σ would round the log term away when |m| is huge.
    const auto shifted = (logits.row(r).array() - m).eval();
    out.row(r) = shifted - std::log(exact_exp(shifted).sum());
  }
  return out;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  return exact_exp(log_softmax_rows(logits).array()).matrix();
}

/// Σ_rows KL(p_row ‖ q_row) given log-probability blocks.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_rows(const Eigen::MatrixBase<DerivedP>& log_p,
                                  const Eigen::MatrixBase<DerivedQ>& log_q) {
  const auto p = exact_exp(log_p.array());
  return (p > 0).select(p * (log_p.array() - log_q.array()), 0).sum();
}

/// Σ_rows H(p_row) given a log-probability block.
template <typename Derived>
typename Derived::Scalar entropy_rows(const Eigen::MatrixBase<Derived>& log_p) {
  const auto p = exact_exp(log_p.array());
  return -(p > 0).select(p * log_p.array(), 0).sum();
}

}  // namespace bapo

#endif  // BAPO_SOFTMAX_HPP
