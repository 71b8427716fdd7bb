#include "dse/nn.hpp"

#include "dse/errors.hpp"

namespace dse {

void Adam::step(const std::vector<Eigen::MatrixXd*>& params, const std::vector<Eigen::MatrixXd*>& grads) {
  if (params.size() != grads.size()) throw ShapeError("Adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
      v_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw ShapeError("Adam: parameter set changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Eigen::MatrixXd& p = *params[i];
    Eigen::MatrixXd g = *grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw ShapeError("Adam: gradient shape mismatch");
    if (opts_.weight_decay != 0.0) g += opts_.weight_decay * p;
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseProduct(g);
    p.array() -= opts_.learning_rate * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.epsilon);
  }
}

Eigen::RowVectorXd softmax(const Eigen::RowVectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::RowVectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

}  // namespace dse
