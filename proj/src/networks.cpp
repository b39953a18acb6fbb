#include "pdssl/networks.hpp"

#include <cmath>

namespace pdssl {

using nn::Matrix;
using nn::Mode;

const char* to_string(Backbone b) { return b == Backbone::edgeconv ? "edgeconv" : "pointwise-maxpool"; }

Backbone backbone_from_string(const std::string& s) {
  if (s == "pointwise-maxpool" || s == "pointnet") return Backbone::pointwise_maxpool;
  if (s == "edgeconv" || s == "dgcnn") return Backbone::edgeconv;
  throw Error("unknown backbone '" + s + "'");
}

const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::content_encoder: return "content_encoder";
    case ParamGroup::pose_encoder: return "pose_encoder";
    case ParamGroup::completion_decoder: return "completion_decoder";
    case ParamGroup::partial_decoder: return "partial_decoder";
    case ParamGroup::pose_regressor: return "pose_regressor";
  }
  return "?";
}

namespace {

void check_finite(const Matrix& m) {
  if (!m.allFinite()) throw Error("numeric overflow");
}

// Per-edge pre-activation for EdgeConv: row (r*k + t) holds
// W_top^T x_r + W_bot^T (x_j - x_r), j = t-th neighbor of r.
Matrix edge_preactivation(const Matrix& x, const Matrix& weight, const std::vector<Eigen::Index>& nb,
                          Eigen::Index k) {
  const Eigen::Index d = x.cols();
  const Matrix v = x * weight.bottomRows(d);
  const Matrix base = x * weight.topRows(d) - v;
  const Eigen::Index rows = x.rows();
  Matrix e(rows * k, weight.cols());
  for (Eigen::Index c = 0; c < e.cols(); ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index t = 0; t < k; ++t) e(r * k + t, c) = base(r, c) + v(nb[static_cast<std::size_t>(r * k + t)], c);
  return e;
}

// Backward of edge_preactivation: accumulates the weight gradient and
// returns dx when requested.
Matrix edge_preactivation_backward(const Matrix& x, nn::Param& weight, const std::vector<Eigen::Index>& nb,
                                   Eigen::Index k, const Matrix& de, bool need_input_grad) {
  const Eigen::Index d = x.cols();
  const Eigen::Index rows = x.rows();
  Matrix du = Matrix::Zero(rows, de.cols());
  Matrix dv = Matrix::Zero(rows, de.cols());
  for (Eigen::Index c = 0; c < de.cols(); ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index t = 0; t < k; ++t) {
        const double g = de(r * k + t, c);
        du(r, c) += g;
        dv(r, c) -= g;
        dv(nb[static_cast<std::size_t>(r * k + t)], c) += g;
      }
  weight.grad.topRows(d).noalias() += x.transpose() * du;
  weight.grad.bottomRows(d).noalias() += x.transpose() * dv;
  if (!need_input_grad) return {};
  return du * weight.value.topRows(d).transpose() + dv * weight.value.bottomRows(d).transpose();
}

}  // namespace

// --- PointEncoder ---------------------------------------------------------

PointEncoder::PointEncoder(const ModelDims& dims)
    : backbone_(dims.backbone), feature_dim_(dims.feature_dim), k_(dims.knn_k) {
  const auto h1 = static_cast<Eigen::Index>(dims.encoder_hidden1);
  const auto h2 = static_cast<Eigen::Index>(dims.encoder_hidden2);
  const auto d = static_cast<Eigen::Index>(dims.feature_dim);
  if (backbone_ == Backbone::pointwise_maxpool) {
    l1_ = nn::Linear(3, h1, false);
    l2_ = nn::Linear(h1, h2, false);
    l3_ = nn::Linear(h2, d, false);
  } else {
    l1_ = nn::Linear(6, h1, false);
    l2_ = nn::Linear(2 * h1, h2, false);
    l3_ = nn::Linear(h1 + h2, d, false);
  }
  bn1_ = nn::BatchNorm(h1);
  bn2_ = nn::BatchNorm(h2);
  bn3_ = nn::BatchNorm(d);
}

Matrix PointEncoder::forward(const Matrix& points, Eigen::Index cloud_size, Mode mode, Tape* tape) const {
  if (points.cols() != 3 || cloud_size <= 0 || points.rows() % cloud_size != 0)
    throw Error("encoder: input must be (G*M x 3)");
  Tape local;
  Tape& t = tape ? *tape : local;
  t.cloud_size = cloud_size;
  if (tape) t.input = points;

  Matrix h3;
  if (backbone_ == Backbone::pointwise_maxpool) {
    t.h1 = bn1_.forward(l1_.forward(points), mode, &t.bn1);
    nn::relu_inplace(t.h1);
    t.h2 = bn2_.forward(l2_.forward(t.h1), mode, &t.bn2);
    nn::relu_inplace(t.h2);
    h3 = bn3_.forward(l3_.forward(t.h2), mode, &t.bn3);
  } else {
    const auto k = static_cast<Eigen::Index>(k_);
    if (cloud_size <= k) throw Error("encoder: edgeconv needs more points than neighbors");
    const Eigen::Index clouds = points.rows() / cloud_size;
    t.neighbors.assign(static_cast<std::size_t>(points.rows() * k), 0);
    std::vector<Vec3> cloud(static_cast<std::size_t>(cloud_size));
    for (Eigen::Index g = 0; g < clouds; ++g) {
      for (Eigen::Index i = 0; i < cloud_size; ++i) cloud[static_cast<std::size_t>(i)] = points.row(g * cloud_size + i).transpose();
      const KnnGraph graph = knn_graph(std::span<const Vec3>(cloud), k_);
      for (std::size_t e = 0; e < graph.neighbors.size(); ++e)
        t.neighbors[static_cast<std::size_t>(g * cloud_size * k) + e] = g * cloud_size + static_cast<Eigen::Index>(graph.neighbors[e]);
    }
    t.edge1 = bn1_.forward(edge_preactivation(points, l1_.weight.value, t.neighbors, k), mode, &t.bn1);
    nn::relu_inplace(t.edge1);
    t.h1 = nn::max_pool_groups(t.edge1, k, &t.edge_argmax1);
    t.edge2 = bn2_.forward(edge_preactivation(t.h1, l2_.weight.value, t.neighbors, k), mode, &t.bn2);
    nn::relu_inplace(t.edge2);
    t.h2 = nn::max_pool_groups(t.edge2, k, &t.edge_argmax2);
    t.concat.resize(points.rows(), t.h1.cols() + t.h2.cols());
    t.concat << t.h1, t.h2;
    h3 = bn3_.forward(l3_.forward(t.concat), mode, &t.bn3);
  }
  check_finite(h3);
  return nn::max_pool_groups(h3, cloud_size, &t.argmax);
}

void PointEncoder::backward(const Tape& t, const Matrix& d_features) {
  const Eigen::Index rows = t.input.rows();
  const Matrix dh3 = nn::max_pool_backward(d_features, t.argmax, rows);
  const Matrix dz3 = bn3_.backward(dh3, t.bn3);
  if (backbone_ == Backbone::pointwise_maxpool) {
    Matrix dh2 = l3_.backward(t.h2, dz3, true);
    nn::relu_backward_inplace(dh2, t.h2);
    Matrix dh1 = l2_.backward(t.h1, bn2_.backward(dh2, t.bn2), true);
    nn::relu_backward_inplace(dh1, t.h1);
    l1_.backward(t.input, bn1_.backward(dh1, t.bn1), false);
    return;
  }
  const auto k = static_cast<Eigen::Index>(k_);
  const Matrix dconcat = l3_.backward(t.concat, dz3, true);
  Matrix dh1 = dconcat.leftCols(t.h1.cols());
  Matrix dedge2 = nn::max_pool_backward(dconcat.rightCols(t.h2.cols()), t.edge_argmax2, t.edge2.rows());
  nn::relu_backward_inplace(dedge2, t.edge2);
  dh1 += edge_preactivation_backward(t.h1, l2_.weight, t.neighbors, k, bn2_.backward(dedge2, t.bn2), true);
  Matrix dedge1 = nn::max_pool_backward(dh1, t.edge_argmax1, t.edge1.rows());
  nn::relu_backward_inplace(dedge1, t.edge1);
  edge_preactivation_backward(t.input, l1_.weight, t.neighbors, k, bn1_.backward(dedge1, t.bn1), false);
}

void PointEncoder::update_running_stats(const Tape& t) {
  bn1_.update_running(t.bn1);
  bn2_.update_running(t.bn2);
  bn3_.update_running(t.bn3);
}

void PointEncoder::init(std::mt19937_64& rng) {
  l1_.init(rng, l1_.in_features());
  l2_.init(rng, l2_.in_features());
  l3_.init(rng, l3_.in_features());
}

void PointEncoder::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  l1_.visit(prefix + ".layer1", f);
  bn1_.visit(prefix + ".norm1", f);
  l2_.visit(prefix + ".layer2", f);
  bn2_.visit(prefix + ".norm2", f);
  l3_.visit(prefix + ".layer3", f);
  bn3_.visit(prefix + ".norm3", f);
}

void PointEncoder::visit_buffers(const std::string& prefix, const nn::BufferVisitor& f) {
  bn1_.visit_buffers(prefix + ".norm1", f);
  bn2_.visit_buffers(prefix + ".norm2", f);
  bn3_.visit_buffers(prefix + ".norm3", f);
}

// --- MorphingDecoder ------------------------------------------------------

Matrix unit_square_lattice(std::size_t n) {
  if (n == 0) throw Error("lattice: empty");
  std::size_t rows = 1;
  for (std::size_t r = 1; r * r <= n; ++r)
    if (n % r == 0) rows = r;
  const std::size_t cols = n / rows;
  Matrix grid(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const auto row = static_cast<Eigen::Index>(i * cols + j);
      grid(row, 0) = (static_cast<double>(i) + 0.5) / static_cast<double>(rows);
      grid(row, 1) = (static_cast<double>(j) + 0.5) / static_cast<double>(cols);
    }
  return grid;
}

MorphingDecoder::MorphingDecoder(std::size_t patches, std::size_t input_dim, std::size_t output_points,
                                 std::size_t hidden1, std::size_t hidden2)
    : input_dim_(input_dim), output_points_(output_points) {
  if (patches == 0 || output_points % patches != 0)
    throw Error("decoder: patch count " + std::to_string(patches) + " does not divide " +
                std::to_string(output_points) + " output points");
  grid_ = unit_square_lattice(output_points / patches);
  const auto h1 = static_cast<Eigen::Index>(hidden1);
  const auto h2 = static_cast<Eigen::Index>(hidden2);
  patches_.resize(patches);
  for (auto& p : patches_) {
    p.grid_in = nn::Linear(2, h1, false);
    p.feature_in = nn::Linear(static_cast<Eigen::Index>(input_dim), h1, false);
    p.bn1 = nn::BatchNorm(h1);
    p.hidden = nn::Linear(h1, h2, false);
    p.bn2 = nn::BatchNorm(h2);
    p.out = nn::Linear(h2, 3, true);
  }
}

Matrix MorphingDecoder::forward(const Matrix& features, Mode mode, Tape* tape) const {
  if (features.cols() != static_cast<Eigen::Index>(input_dim_))
    throw Error("decoder: expected feature length " + std::to_string(input_dim_) + ", got " +
                std::to_string(features.cols()));
  const Eigen::Index clouds = features.rows();
  const Eigen::Index per = grid_.rows();
  const auto n_out = static_cast<Eigen::Index>(output_points_);
  Matrix out(clouds * n_out, 3);
  if (tape) {
    tape->features = features;
    tape->patches.assign(patches_.size(), {});
  }

  for (std::size_t k = 0; k < patches_.size(); ++k) {
    const Patch& p = patches_[k];
    PatchTape local;
    PatchTape& pt = tape ? tape->patches[k] : local;
    // The first layer sees [grid point, feature]; its affine map splits into
    // a per-grid-point part and a per-cloud part.
    const Matrix grid_part = p.grid_in.forward(grid_);
    const Matrix feature_part = p.feature_in.forward(features);
    Matrix z1(clouds * per, grid_part.cols());
    for (Eigen::Index g = 0; g < clouds; ++g)
      z1.middleRows(g * per, per) = grid_part.rowwise() + feature_part.row(g);
    pt.h1 = p.bn1.forward(z1, mode, &pt.bn1);
    nn::relu_inplace(pt.h1);
    pt.h2 = p.bn2.forward(p.hidden.forward(pt.h1), mode, &pt.bn2);
    nn::relu_inplace(pt.h2);
    pt.y = p.out.forward(pt.h2).array().tanh().matrix();
    for (Eigen::Index g = 0; g < clouds; ++g)
      out.middleRows(g * n_out + static_cast<Eigen::Index>(k) * per, per) = pt.y.middleRows(g * per, per);
  }
  check_finite(out);
  return out;
}

Matrix MorphingDecoder::backward(const Tape& tape, const Matrix& d_points) {
  const Eigen::Index clouds = tape.features.rows();
  const Eigen::Index per = grid_.rows();
  const auto n_out = static_cast<Eigen::Index>(output_points_);
  Matrix d_features = Matrix::Zero(clouds, static_cast<Eigen::Index>(input_dim_));

  for (std::size_t k = 0; k < patches_.size(); ++k) {
    Patch& p = patches_[k];
    const PatchTape& pt = tape.patches[k];
    Matrix dy(clouds * per, 3);
    for (Eigen::Index g = 0; g < clouds; ++g)
      dy.middleRows(g * per, per) = d_points.middleRows(g * n_out + static_cast<Eigen::Index>(k) * per, per);
    const Matrix dt = (dy.array() * (1.0 - pt.y.array().square())).matrix();
    Matrix dh2 = p.out.backward(pt.h2, dt, true);
    nn::relu_backward_inplace(dh2, pt.h2);
    Matrix dh1 = p.hidden.backward(pt.h1, p.bn2.backward(dh2, pt.bn2), true);
    nn::relu_backward_inplace(dh1, pt.h1);
    const Matrix dz1 = p.bn1.backward(dh1, pt.bn1);

    Matrix d_grid_part = Matrix::Zero(per, dz1.cols());
    Matrix d_feature_part(clouds, dz1.cols());
    for (Eigen::Index g = 0; g < clouds; ++g) {
      d_grid_part += dz1.middleRows(g * per, per);
      d_feature_part.row(g) = dz1.middleRows(g * per, per).colwise().sum();
    }
    p.grid_in.backward(grid_, d_grid_part, false);
    d_features += p.feature_in.backward(tape.features, d_feature_part, true);
  }
  return d_features;
}

void MorphingDecoder::update_running_stats(const Tape& tape) {
  for (std::size_t k = 0; k < patches_.size(); ++k) {
    patches_[k].bn1.update_running(tape.patches[k].bn1);
    patches_[k].bn2.update_running(tape.patches[k].bn2);
  }
}

void MorphingDecoder::init(std::mt19937_64& rng) {
  const Eigen::Index fan_in = 2 + static_cast<Eigen::Index>(input_dim_);
  for (auto& p : patches_) {
    p.grid_in.init(rng, fan_in);
    p.feature_in.init(rng, fan_in);
    p.hidden.init(rng, p.hidden.in_features());
    p.out.init(rng, p.out.in_features());
  }
}

void MorphingDecoder::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  for (std::size_t k = 0; k < patches_.size(); ++k) {
    const std::string pre = prefix + ".patch" + std::to_string(k);
    patches_[k].grid_in.visit(pre + ".grid_in", f);
    patches_[k].feature_in.visit(pre + ".feature_in", f);
    patches_[k].bn1.visit(pre + ".norm1", f);
    patches_[k].hidden.visit(pre + ".hidden", f);
    patches_[k].bn2.visit(pre + ".norm2", f);
    patches_[k].out.visit(pre + ".out", f);
  }
}

void MorphingDecoder::visit_buffers(const std::string& prefix, const nn::BufferVisitor& f) {
  for (std::size_t k = 0; k < patches_.size(); ++k) {
    const std::string pre = prefix + ".patch" + std::to_string(k);
    patches_[k].bn1.visit_buffers(pre + ".norm1", f);
    patches_[k].bn2.visit_buffers(pre + ".norm2", f);
  }
}

// --- PoseRegressor --------------------------------------------------------

PoseRegressor::PoseRegressor(std::size_t input_dim, std::size_t hidden1, std::size_t hidden2)
    : l1_(static_cast<Eigen::Index>(input_dim), static_cast<Eigen::Index>(hidden1), false),
      l2_(static_cast<Eigen::Index>(hidden1), static_cast<Eigen::Index>(hidden2), false),
      l3_(static_cast<Eigen::Index>(hidden2), 3, true),
      bn1_(static_cast<Eigen::Index>(hidden1)),
      bn2_(static_cast<Eigen::Index>(hidden2)) {}

Matrix PoseRegressor::forward(const Matrix& features, Mode mode, Tape* tape) const {
  if (features.cols() != l1_.in_features()) throw Error("pose regressor: feature length mismatch");
  Tape local;
  Tape& t = tape ? *tape : local;
  if (tape) t.input = features;
  t.h1 = bn1_.forward(l1_.forward(features), mode, &t.bn1);
  nn::relu_inplace(t.h1);
  t.h2 = bn2_.forward(l2_.forward(t.h1), mode, &t.bn2);
  nn::relu_inplace(t.h2);
  Matrix out = l3_.forward(t.h2);
  check_finite(out);
  return out;
}

Matrix PoseRegressor::backward(const Tape& t, const Matrix& d_out) {
  Matrix dh2 = l3_.backward(t.h2, d_out, true);
  nn::relu_backward_inplace(dh2, t.h2);
  Matrix dh1 = l2_.backward(t.h1, bn2_.backward(dh2, t.bn2), true);
  nn::relu_backward_inplace(dh1, t.h1);
  return l1_.backward(t.input, bn1_.backward(dh1, t.bn1), true);
}

void PoseRegressor::update_running_stats(const Tape& t) {
  bn1_.update_running(t.bn1);
  bn2_.update_running(t.bn2);
}

void PoseRegressor::init(std::mt19937_64& rng) {
  l1_.init(rng, l1_.in_features());
  l2_.init(rng, l2_.in_features());
  l3_.init(rng, l3_.in_features());
}

void PoseRegressor::visit(const std::string& prefix, const nn::ParamVisitor& f) {
  l1_.visit(prefix + ".layer1", f);
  bn1_.visit(prefix + ".norm1", f);
  l2_.visit(prefix + ".layer2", f);
  bn2_.visit(prefix + ".norm2", f);
  l3_.visit(prefix + ".layer3", f);
}

void PoseRegressor::visit_buffers(const std::string& prefix, const nn::BufferVisitor& f) {
  bn1_.visit_buffers(prefix + ".norm1", f);
  bn2_.visit_buffers(prefix + ".norm2", f);
}

// --- ModelParams ----------------------------------------------------------

void ModelParams::visit_group(ParamGroup g, const nn::ParamVisitor& f) {
  const std::string prefix = to_string(g);
  switch (g) {
    case ParamGroup::content_encoder: content_encoder.visit(prefix, f); break;
    case ParamGroup::pose_encoder: pose_encoder.visit(prefix, f); break;
    case ParamGroup::completion_decoder: completion_decoder.visit(prefix, f); break;
    case ParamGroup::partial_decoder: partial_decoder.visit(prefix, f); break;
    case ParamGroup::pose_regressor: pose_regressor.visit(prefix, f); break;
  }
}

void ModelParams::visit(const nn::ParamVisitor& f) {
  for (std::size_t g = 0; g < kParamGroupCount; ++g) visit_group(static_cast<ParamGroup>(g), f);
}

void ModelParams::visit_buffers(const nn::BufferVisitor& f) {
  content_encoder.visit_buffers(to_string(ParamGroup::content_encoder), f);
  pose_encoder.visit_buffers(to_string(ParamGroup::pose_encoder), f);
  completion_decoder.visit_buffers(to_string(ParamGroup::completion_decoder), f);
  partial_decoder.visit_buffers(to_string(ParamGroup::partial_decoder), f);
  pose_regressor.visit_buffers(to_string(ParamGroup::pose_regressor), f);
}

std::vector<nn::Param*> ModelParams::group_params(ParamGroup g) {
  std::vector<nn::Param*> out;
  visit_group(g, [&](const std::string&, nn::Param& p) { out.push_back(&p); });
  return out;
}

void ModelParams::zero_grad() {
  visit([](const std::string&, nn::Param& p) { p.zero_grad(); });
}

ModelParams init_params(std::uint64_t seed, const ModelDims& dims) {
  if (dims.feature_dim == 0) throw Error("init_params: feature_dim must be positive");
  ModelParams m;
  m.dims = dims;
  m.content_encoder = PointEncoder(dims);
  m.pose_encoder = PointEncoder(dims);
  m.completion_decoder = MorphingDecoder(dims.completion_patches, dims.feature_dim, dims.complete_points,
                                         dims.decoder_hidden1, dims.decoder_hidden2);
  m.partial_decoder = MorphingDecoder(dims.partial_patches, 2 * dims.feature_dim, dims.scan_points,
                                      dims.decoder_hidden1, dims.decoder_hidden2);
  m.pose_regressor = PoseRegressor(dims.feature_dim, dims.regressor_hidden1, dims.regressor_hidden2);

  // Each group draws from its own stream so group shapes do not shift others.
  for (std::size_t g = 0; g < kParamGroupCount; ++g) {
    std::mt19937_64 rng(mix_seed(seed, g));
    switch (static_cast<ParamGroup>(g)) {
      case ParamGroup::content_encoder: m.content_encoder.init(rng); break;
      case ParamGroup::pose_encoder: m.pose_encoder.init(rng); break;
      case ParamGroup::completion_decoder: m.completion_decoder.init(rng); break;
      case ParamGroup::partial_decoder: m.partial_decoder.init(rng); break;
      case ParamGroup::pose_regressor: m.pose_regressor.init(rng); break;
    }
  }
  return m;
}

// --- single-cloud helpers -------------------------------------------------

Matrix stack_clouds(const std::vector<const PointCloud*>& clouds) {
  if (clouds.empty()) throw Error("stack_clouds: no clouds");
  const std::size_t m = clouds.front()->size();
  Matrix out(static_cast<Eigen::Index>(clouds.size() * m), 3);
  for (std::size_t g = 0; g < clouds.size(); ++g) {
    if (clouds[g]->size() != m) throw Error("stack_clouds: clouds differ in size");
    for (std::size_t i = 0; i < m; ++i) out.row(static_cast<Eigen::Index>(g * m + i)) = (*clouds[g])[i].transpose();
  }
  return out;
}

std::vector<PointCloud> unstack_clouds(const Matrix& rows, std::size_t cloud_size) {
  const std::size_t g = static_cast<std::size_t>(rows.rows()) / cloud_size;
  std::vector<PointCloud> out;
  out.reserve(g);
  for (std::size_t k = 0; k < g; ++k)
    out.push_back(from_matrix(rows.middleRows(static_cast<Eigen::Index>(k * cloud_size), static_cast<Eigen::Index>(cloud_size))));
  return out;
}

FeatureVector encode(const PointCloud& cloud, const PointEncoder& encoder, FeatureRole role) {
  const Matrix f = encoder.forward(to_matrix(cloud), static_cast<Eigen::Index>(cloud.size()), Mode::eval, nullptr);
  return FeatureVector{f.row(0).transpose(), role};
}

Vec3 regress_pose(const FeatureVector& pose, const PoseRegressor& regressor) {
  if (pose.role != FeatureRole::pose) throw Error("regress_pose: feature role must be pose");
  const Matrix out = regressor.forward(pose.values.transpose(), Mode::eval, nullptr);
  return out.row(0).transpose();
}

PointCloud decode_morphing(const Eigen::VectorXd& feature, const MorphingDecoder& decoder) {
  return from_matrix(decoder.forward(feature.transpose(), Mode::eval, nullptr));
}

}  // namespace pdssl
