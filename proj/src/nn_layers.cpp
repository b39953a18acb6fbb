#include "pdssl/nn_layers.hpp"

#include "pdssl/core_types.hpp"

#include <cmath>

namespace pdssl::nn {

void fan_in_uniform(Matrix& m, Eigen::Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  // Column-major fill order is part of the seeded-init contract.
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
}

Linear::Linear(Eigen::Index in, Eigen::Index out, bool with_bias)
    : weight(in, out), bias(1, with_bias ? out : 0), has_bias(with_bias) {}

Matrix Linear::forward(const Matrix& x) const {
  Matrix y = x * weight.value;
  if (has_bias) y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy, bool need_input_grad) {
  weight.grad.noalias() += x.transpose() * dy;
  if (has_bias) bias.grad += dy.colwise().sum();
  if (!need_input_grad) return {};
  return dy * weight.value.transpose();
}

void Linear::init(std::mt19937_64& rng, Eigen::Index fan_in) {
  fan_in_uniform(weight.value, fan_in, rng);
  if (has_bias) fan_in_uniform(bias.value, fan_in, rng);
}

void Linear::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".weight", weight);
  if (has_bias) f(prefix + ".bias", bias);
}

BatchNorm::BatchNorm(Eigen::Index channels)
    : gamma(1, channels),
      beta(1, channels),
      running_mean(Matrix::Zero(1, channels)),
      running_var(Matrix::Ones(1, channels)) {
  gamma.value.setOnes();
}

Matrix BatchNorm::forward(const Matrix& x, Mode mode, Cache* cache) const {
  const Eigen::Index n = x.rows();
  RowVector mean, var, inv_std;
  if (mode == Mode::train) {
    if (n < 1) throw Error("batch norm: empty batch");
    mean = x.colwise().mean();
    var = (x.rowwise() - mean).array().square().colwise().mean().matrix();
    inv_std = (var.array() + eps).rsqrt().matrix();
  } else {
    mean = running_mean.row(0);
    inv_std = (running_var.row(0).array() + eps).rsqrt().matrix();
  }
  Matrix xhat = ((x.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
  Matrix y = ((xhat.array().rowwise() * gamma.value.row(0).array()).rowwise() + beta.value.row(0).array()).matrix();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(var);
    cache->rows = n;
  }
  return y;
}

void BatchNorm::update_running(const Cache& cache) {
  if (cache.batch_var.size() == 0) return;
  const double n = static_cast<double>(cache.rows);
  const double unbias = cache.rows > 1 ? n / (n - 1.0) : 1.0;
  running_mean = (1.0 - momentum) * running_mean + momentum * cache.batch_mean;
  running_var = (1.0 - momentum) * running_var + (momentum * unbias) * cache.batch_var;
}

Matrix BatchNorm::backward(const Matrix& dy, const Cache& cache) {
  const double n = static_cast<double>(dy.rows());
  gamma.grad += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  beta.grad += dy.colwise().sum();
  const Eigen::ArrayXXd dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  const Eigen::ArrayXXd sum_dxhat = dxhat.colwise().sum();
  const Eigen::ArrayXXd sum_dxhat_xhat = (dxhat * cache.xhat.array()).colwise().sum();
  Eigen::ArrayXXd dx = n * dxhat;
  dx.rowwise() -= sum_dxhat.row(0);
  dx -= cache.xhat.array().rowwise() * sum_dxhat_xhat.row(0);
  dx.rowwise() *= (cache.inv_std.array() / n);
  return dx.matrix();
}

void BatchNorm::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".gamma", gamma);
  f(prefix + ".beta", beta);
}

void BatchNorm::visit_buffers(const std::string& prefix, const BufferVisitor& f) {
  f(prefix + ".running_mean", running_mean);
  f(prefix + ".running_var", running_var);
}

void relu_inplace(Matrix& x) { x = x.cwiseMax(0.0); }

void relu_backward_inplace(Matrix& dy, const Matrix& y) {
  dy = (y.array() > 0.0).select(dy, 0.0);
}

Matrix max_pool_groups(const Matrix& x, Eigen::Index group, IndexMatrix* argmax) {
  const Eigen::Index groups = x.rows() / group;
  Matrix out(groups, x.cols());
  if (argmax) argmax->resize(groups, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    for (Eigen::Index g = 0; g < groups; ++g) {
      Eigen::Index best = g * group;
      double value = x(best, c);
      for (Eigen::Index r = best + 1; r < (g + 1) * group; ++r)
        if (x(r, c) > value) value = x(r, c), best = r;
      out(g, c) = value;
      if (argmax) (*argmax)(g, c) = best;
    }
  return out;
}

Matrix max_pool_backward(const Matrix& dy, const IndexMatrix& argmax, Eigen::Index rows) {
  Matrix dx = Matrix::Zero(rows, dy.cols());
  for (Eigen::Index c = 0; c < dy.cols(); ++c)
    for (Eigen::Index g = 0; g < dy.rows(); ++g) dx(argmax(g, c), c) += dy(g, c);
  return dx;
}

void Adam::step(const std::vector<Param*>& params, double lr) {
  if (m_.empty()) {
    for (const Param* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw Error("adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * p.grad;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
  }
}

}  // namespace pdssl::nn
