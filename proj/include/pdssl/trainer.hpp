// Three-branch pretext objective and its training loop.
//
//   completion  L_c  = EMD(complete, D_complete(c)) + lambda_ex * expansion
//   pose        L_po = MSE(v, R(p))
//   partial     L_pa = EMD(S_i, D_partial(c_j ++ p_i)) + EMD(S_j, D_partial(c_i ++ p_j))
//   total            = lambda_c L_c + lambda_pa L_pa + lambda_po L_po
//
// Each sampled pair contributes two views; completion and pose losses are
// averaged over both views, the partial loss is the two-term sum.

#ifndef PDSSL_TRAINER_HPP
#define PDSSL_TRAINER_HPP

#include "pdssl/checkpoint.hpp"
#include "pdssl/dataset_io.hpp"
#include "pdssl/geometry_kernels.hpp"
#include "pdssl/networks.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace pdssl {

enum class Variant { full, comp_only, pr_only, jl };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);

enum class PoseLossKind { mse, l2 };

/// Which branches a variant trains.
struct BranchMask {
  bool completion = true;
  bool partial = true;
  bool pose = true;
  /// Pose head reads the content encoder's feature (joint-learning variant).
  bool shared_encoder = false;
};

BranchMask branch_mask(Variant v);

struct TrainConfig {
  double lambda_c = 0.5;
  double lambda_pa = 0.5;
  double lambda_po = 0.01;
  double lambda_ex = 0.1;
  double lambda_edge = 1.5;
  double lr = 1e-3;
  double lr_decay = 0.1;
  std::size_t lr_step_epochs = 20;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::size_t pairs_per_object = 1;
  Variant variant = Variant::full;
  PoseLossKind pose_loss = PoseLossKind::mse;
  std::uint64_t seed = 0;
  ModelDims dims;
  AuctionParams auction;

  /// Throws Error naming the first invalid field.
  void validate() const;
};

double lr_at_epoch(std::size_t epoch, const TrainConfig& config);

/// Training-time view of a corpus: train-split shapes with their complete
/// clouds resampled once to dims.complete_points.
class PretextData {
 public:
  PretextData(const Corpus& corpus, const TrainConfig& config);

  const CorpusIndex& index() const { return index_; }
  const Corpus& corpus() const { return index_.corpus(); }
  const PointCloud& complete(std::size_t shape) const { return complete_[shape]; }
  /// Shapes usable for pairs (>= 2 scans) within the given split.
  const std::vector<std::size_t>& shapes(Split split) const {
    return split == Split::train ? train_shapes_ : test_shapes_;
  }

 private:
  CorpusIndex index_;
  std::vector<PointCloud> complete_;
  std::vector<std::size_t> train_shapes_, test_shapes_;
};

struct TrainingPair {
  std::size_t shape = 0;
  std::string object_id;
  int view_i = 0;
  int view_j = 0;
  const PointCloud* scan_i = nullptr;
  const PointCloud* scan_j = nullptr;
  const PointCloud* complete = nullptr;
  Vec3 position_i = Vec3::Zero();
  Vec3 position_j = Vec3::Zero();
};

/// Two distinct scans of the given shape, drawn uniformly without replacement.
TrainingPair sample_pair_for_shape(const PretextData& data, std::size_t shape, std::mt19937_64& rng);
/// Uniform shape from the split, then sample_pair_for_shape.
TrainingPair sample_training_pair(const PretextData& data, std::mt19937_64& rng, Split split = Split::train);

// --- single-sample losses -------------------------------------------------

double completion_loss(const PointCloud& complete, const FeatureVector& content, const ModelParams& params,
                       const TrainConfig& config);
double pose_loss(const Vec3& v_true, const Vec3& v_pred, PoseLossKind kind = PoseLossKind::mse);
double partial_reconstruction_loss(const TrainingPair& pair, const FeatureVector& c_i, const FeatureVector& c_j,
                                   const FeatureVector& p_i, const FeatureVector& p_j, const ModelParams& params,
                                   const TrainConfig& config);
/// Weighted sum over the branches active under config.variant.
double total_loss(double l_complete, double l_partial, double l_pose, const TrainConfig& config);

// --- batched objective ----------------------------------------------------

/// Matchings and flagged MST edges from one evaluation, reusable to evaluate
/// the objective at nearby parameters with the combinatorial parts fixed.
struct FrozenMatching {
  bool ready = false;
  std::vector<Assignment> completion;
  std::vector<ExpansionTerms> expansion;
  std::vector<Assignment> partial;
};

struct ObjectiveValue {
  std::optional<double> completion;
  std::optional<double> partial;
  std::optional<double> pose;
  double total = 0.0;
};

struct ObjectiveOptions {
  bool backward = true;
  bool update_running_stats = true;
  FrozenMatching* frozen = nullptr;
};

/// Train-mode forward over a batch of pairs; with options.backward the
/// parameter gradients of `total` are accumulated into Param::grad.
ObjectiveValue batch_objective(ModelParams& params, const std::vector<TrainingPair>& batch, const TrainConfig& config,
                               const ObjectiveOptions& options = {});

/// Parameter groups a variant updates.
std::vector<ParamGroup> active_groups(Variant v);

// --- training loop --------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double total = 0.0;
  std::optional<double> completion;
  std::optional<double> partial;
  std::optional<double> pose;
  double lr = 0.0;
};

struct PretrainOptions {
  /// When set, checkpoint_eNNN.bin is written there after every epoch.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct PretrainResult {
  ModelParams params;
  std::vector<EpochMetrics> log;
};

PretrainResult pretrain(const Corpus& corpus, const TrainConfig& config, const PretrainOptions& options = {});

std::string checkpoint_name(std::size_t epoch);

/// CSV: epoch,loss_total,loss_complete,loss_partial,loss_pose,lr (masked
/// branches are empty cells).
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& log);
std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path);

}  // namespace pdssl

#endif  // PDSSL_TRAINER_HPP
