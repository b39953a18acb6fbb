// Minimal reverse-mode layer toolkit. Activations are row-major in meaning:
// one sample (or point) per matrix row, one channel per column. Every
// forward() that may be differentiated fills a cache; backward() accumulates
// parameter gradients into Param::grad and returns the input gradient.

#ifndef PDSSL_NN_LAYERS_HPP
#define PDSSL_NN_LAYERS_HPP

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace pdssl::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using IndexMatrix = Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic>;

enum class Mode { train, eval };

struct Param {
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(Eigen::Index rows, Eigen::Index cols) : value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParamVisitor = std::function<void(const std::string&, Param&)>;
using BufferVisitor = std::function<void(const std::string&, Matrix&)>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) fill.
void fan_in_uniform(Matrix& m, Eigen::Index fan_in, std::mt19937_64& rng);

/// y = x W (+ b). W is (in x out), b is (1 x out).
struct Linear {
  Param weight;
  Param bias;
  bool has_bias = true;

  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, bool with_bias);

  Eigen::Index in_features() const { return weight.value.rows(); }
  Eigen::Index out_features() const { return weight.value.cols(); }

  Matrix forward(const Matrix& x) const;
  /// Accumulates dW, db; returns dx when need_input_grad.
  Matrix backward(const Matrix& x, const Matrix& dy, bool need_input_grad);
  void init(std::mt19937_64& rng, Eigen::Index fan_in);
  void visit(const std::string& prefix, const ParamVisitor& f);
};

/// Batch normalization over rows with learned per-column affine transform.
/// Train mode normalizes with batch statistics (kept in the cache so the
/// caller can fold them into the running averages); eval mode uses the
/// running averages only.
struct BatchNorm {
  Param gamma;
  Param beta;
  Matrix running_mean;
  Matrix running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  struct Cache {
    Matrix xhat;
    RowVector inv_std;
    RowVector batch_mean;
    RowVector batch_var;  // biased
    Eigen::Index rows = 0;
  };

  BatchNorm() = default;
  explicit BatchNorm(Eigen::Index channels);

  Matrix forward(const Matrix& x, Mode mode, Cache* cache) const;
  Matrix backward(const Matrix& dy, const Cache& cache);
  /// Folds a train-mode batch's statistics into the running averages.
  void update_running(const Cache& cache);
  void visit(const std::string& prefix, const ParamVisitor& f);
  void visit_buffers(const std::string& prefix, const BufferVisitor& f);
};

void relu_inplace(Matrix& x);
/// dy masked by (y > 0), where y is the ReLU output.
void relu_backward_inplace(Matrix& dy, const Matrix& y);

/// Column-wise max over consecutive groups of `group` rows.
Matrix max_pool_groups(const Matrix& x, Eigen::Index group, IndexMatrix* argmax);
Matrix max_pool_backward(const Matrix& dy, const IndexMatrix& argmax, Eigen::Index rows);

/// Adam with bias correction; state slots follow the order of `params`.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Param*>& params, double lr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace pdssl::nn

#endif  // PDSSL_NN_LAYERS_HPP
