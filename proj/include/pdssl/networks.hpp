// Toy-scale networks: content/pose encoders (pointwise-maxpool or EdgeConv
// backbone), morphing decoders built from per-patch MLPs over a fixed 2D
// lattice, and the three-layer pose regressor.
//
// Batched layout: a batch of G clouds with M points each is a (G*M x 3)
// matrix, cloud g occupying rows [g*M, (g+1)*M). Features are (G x D).

#ifndef PDSSL_NETWORKS_HPP
#define PDSSL_NETWORKS_HPP

#include "pdssl/core_types.hpp"
#include "pdssl/geometry_kernels.hpp"
#include "pdssl/nn_layers.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pdssl {

enum class Backbone { pointwise_maxpool, edgeconv };

const char* to_string(Backbone b);
Backbone backbone_from_string(const std::string& s);

struct ModelDims {
  Backbone backbone = Backbone::pointwise_maxpool;
  std::size_t feature_dim = 256;
  std::size_t encoder_hidden1 = 64;
  std::size_t encoder_hidden2 = 128;
  std::size_t knn_k = 16;
  std::size_t decoder_hidden1 = 256;
  std::size_t decoder_hidden2 = 128;
  std::size_t regressor_hidden1 = 128;
  std::size_t regressor_hidden2 = 64;
  std::size_t completion_patches = 16;
  std::size_t partial_patches = 1;
  std::size_t complete_points = 1024;  // N, completion decoder output
  std::size_t scan_points = 1024;      // M, partial scans and partial decoder output

  bool operator==(const ModelDims&) const = default;
};

class PointEncoder {
 public:
  struct Tape {
    nn::Matrix input;
    Eigen::Index cloud_size = 0;
    // pointwise-maxpool
    nn::Matrix h1, h2;
    // edgeconv
    std::vector<Eigen::Index> neighbors;  // global row index, (rows x k)
    nn::Matrix edge1, edge2, concat;
    nn::IndexMatrix edge_argmax1, edge_argmax2;
    nn::BatchNorm::Cache bn1, bn2, bn3;
    nn::IndexMatrix argmax;
  };

  PointEncoder() = default;
  PointEncoder(const ModelDims& dims);

  Backbone backbone() const { return backbone_; }
  std::size_t feature_dim() const { return feature_dim_; }

  /// (G*M x 3) points -> (G x D) features.
  nn::Matrix forward(const nn::Matrix& points, Eigen::Index cloud_size, nn::Mode mode, Tape* tape) const;
  void backward(const Tape& tape, const nn::Matrix& d_features);
  void update_running_stats(const Tape& tape);

  void init(std::mt19937_64& rng);
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
  void visit_buffers(const std::string& prefix, const nn::BufferVisitor& f);

 private:
  Backbone backbone_ = Backbone::pointwise_maxpool;
  std::size_t feature_dim_ = 0;
  std::size_t k_ = 16;
  nn::Linear l1_, l2_, l3_;
  nn::BatchNorm bn1_, bn2_, bn3_;
};

class MorphingDecoder {
 public:
  struct PatchTape {
    nn::Matrix h1, h2, y;
    nn::BatchNorm::Cache bn1, bn2;
  };
  struct Tape {
    nn::Matrix features;
    std::vector<PatchTape> patches;
  };

  MorphingDecoder() = default;
  MorphingDecoder(std::size_t patches, std::size_t input_dim, std::size_t output_points, std::size_t hidden1,
                  std::size_t hidden2);

  std::size_t patches() const { return patches_.size(); }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_points() const { return output_points_; }
  std::size_t points_per_patch() const { return output_points_ / patches_.size(); }
  const nn::Matrix& grid() const { return grid_; }

  /// (G x D_in) features -> (G*N_out x 3) points in [-1, 1].
  nn::Matrix forward(const nn::Matrix& features, nn::Mode mode, Tape* tape) const;
  /// Returns d(features).
  nn::Matrix backward(const Tape& tape, const nn::Matrix& d_points);
  void update_running_stats(const Tape& tape);

  void init(std::mt19937_64& rng);
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
  void visit_buffers(const std::string& prefix, const nn::BufferVisitor& f);

 private:
  struct Patch {
    nn::Linear grid_in, feature_in, hidden, out;
    nn::BatchNorm bn1, bn2;
  };

  std::size_t input_dim_ = 0;
  std::size_t output_points_ = 0;
  nn::Matrix grid_;
  std::vector<Patch> patches_;
};

/// Fixed r x c lattice of cell centers on [0,1]^2 with r*c = n, r the largest
/// divisor of n not above sqrt(n).
nn::Matrix unit_square_lattice(std::size_t n);

class PoseRegressor {
 public:
  struct Tape {
    nn::Matrix input, h1, h2;
    nn::BatchNorm::Cache bn1, bn2;
  };

  PoseRegressor() = default;
  PoseRegressor(std::size_t input_dim, std::size_t hidden1, std::size_t hidden2);

  /// (G x D) pose features -> (G x 3) camera positions.
  nn::Matrix forward(const nn::Matrix& features, nn::Mode mode, Tape* tape) const;
  nn::Matrix backward(const Tape& tape, const nn::Matrix& d_out);
  void update_running_stats(const Tape& tape);

  void init(std::mt19937_64& rng);
  void visit(const std::string& prefix, const nn::ParamVisitor& f);
  void visit_buffers(const std::string& prefix, const nn::BufferVisitor& f);

 private:
  nn::Linear l1_, l2_, l3_;
  nn::BatchNorm bn1_, bn2_;
};

enum class ParamGroup { content_encoder, pose_encoder, completion_decoder, partial_decoder, pose_regressor };
inline constexpr std::size_t kParamGroupCount = 5;
const char* to_string(ParamGroup g);

/// All trainable weights. Content and pose encoders share the architecture
/// but never storage.
struct ModelParams {
  ModelDims dims;
  PointEncoder content_encoder;
  PointEncoder pose_encoder;
  MorphingDecoder completion_decoder;
  MorphingDecoder partial_decoder;
  PoseRegressor pose_regressor;

  void visit(const nn::ParamVisitor& f);
  void visit_group(ParamGroup g, const nn::ParamVisitor& f);
  void visit_buffers(const nn::BufferVisitor& f);
  std::vector<nn::Param*> group_params(ParamGroup g);
  void zero_grad();
};

/// Fan-in scaled uniform init of all five groups; deterministic per seed.
ModelParams init_params(std::uint64_t seed, const ModelDims& dims);

/// Single-cloud conveniences in deterministic evaluation mode.
FeatureVector encode(const PointCloud& cloud, const PointEncoder& encoder, FeatureRole role);
Vec3 regress_pose(const FeatureVector& pose, const PoseRegressor& regressor);
PointCloud decode_morphing(const Eigen::VectorXd& feature, const MorphingDecoder& decoder);

/// Stacks clouds of equal size into the batched (G*M x 3) layout.
nn::Matrix stack_clouds(const std::vector<const PointCloud*>& clouds);
/// Splits (G*N x 3) rows back into G clouds.
std::vector<PointCloud> unstack_clouds(const nn::Matrix& rows, std::size_t cloud_size);

}  // namespace pdssl

#endif  // PDSSL_NETWORKS_HPP
