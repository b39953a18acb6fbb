// Frozen-feature evaluation: feature extraction, linear hinge probes,
// silhouette-based disentanglement scores, the cross-pose swap test and
// completion quality.

#ifndef PDSSL_EVALUATION_HPP
#define PDSSL_EVALUATION_HPP

#include "pdssl/trainer.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace pdssl {

struct FeatureMatrix {
  FeatureRole role = FeatureRole::content;
  Eigen::MatrixXd features;  // one row per scan
  std::vector<int> class_labels;
  std::vector<int> viewpoints;
  std::vector<std::string> object_ids;
  std::vector<Split> splits;

  std::size_t rows() const { return static_cast<std::size_t>(features.rows()); }
  /// Rows of one split, metadata carried along.
  FeatureMatrix subset(Split split) const;
};

/// Encodes every scan of the corpus in evaluation mode (running statistics).
FeatureMatrix extract_features(const Corpus& corpus, const PointEncoder& encoder, FeatureRole role);
/// Picks the encoder that matches `role`.
FeatureMatrix extract_features(const Corpus& corpus, const ModelParams& params, FeatureRole role);

enum class ProbeTarget { object_class, viewpoint };
const char* to_string(ProbeTarget t);
ProbeTarget probe_target_from_string(const std::string& s);

/// One-vs-rest linear hinge classifier trained by averaged Pegasos SGD on
/// train-split rows standardized with train-split statistics.
struct ProbeParams {
  double lambda = 1e-4;
  std::size_t epochs = 30;
};

struct ProbeModel {
  std::vector<int> labels;    // class order of the weight columns
  Eigen::MatrixXd weights;    // (D + 1) x classes, last row is the bias
  Eigen::RowVectorXd mean;    // standardization
  Eigen::RowVectorXd scale;

  int predict(const Eigen::RowVectorXd& x) const;
};

struct ProbeReport {
  FeatureRole role = FeatureRole::content;
  ProbeTarget target = ProbeTarget::object_class;
  double accuracy = 0.0;
  std::map<int, double> per_class;
  std::map<int, std::size_t> per_class_count;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

ProbeModel train_probe(const FeatureMatrix& fm, ProbeTarget target, std::uint64_t seed, const ProbeParams& p = {});
ProbeReport linear_probe(const FeatureMatrix& fm, ProbeTarget target, std::uint64_t seed, const ProbeParams& p = {});

/// Mean silhouette coefficient with Euclidean distances. Singleton clusters
/// contribute 0. Throws when fewer than 2 distinct labels are present.
double silhouette_score(const Eigen::MatrixXd& x, const std::vector<int>& labels);

struct DisentanglementReport {
  double content_class = 0.0;
  double content_viewpoint = 0.0;
  double pose_class = 0.0;
  double pose_viewpoint = 0.0;
  /// Mean over objects of the mean squared deviation of a feature from its
  /// object's mean across viewpoints.
  double content_intra_object_variance = 0.0;
  double pose_intra_object_variance = 0.0;
};

DisentanglementReport disentanglement_report(const FeatureMatrix& content, const FeatureMatrix& pose);

/// Fraction of pairs whose swapped reconstruction is closer to the pose
/// donor's scan j than to scan i, for any decoder producing the output.
double swap_success_rate(const std::vector<TrainingPair>& pairs,
                         const std::function<PointCloud(const TrainingPair&)>& decode,
                         const AuctionParams& auction = {});
/// Decodes D_partial(c_i ++ p_j) with the model in evaluation mode.
double cross_pose_swap_test(const std::vector<TrainingPair>& pairs, const ModelParams& params,
                            const AuctionParams& auction = {});

/// `count` pairs drawn from the test split with a seeded generator.
std::vector<TrainingPair> sample_test_pairs(const PretextData& data, std::size_t count, std::uint64_t seed);

/// Mean EMD between completions and the complete clouds of test-split shapes,
/// over at most `views_per_shape` scans per shape (0 = all).
double reconstruction_eval(const PretextData& data,
                           const std::function<PointCloud(const PartialScan&)>& complete_from,
                           std::size_t views_per_shape = 0, const AuctionParams& auction = {});
double reconstruction_eval(const PretextData& data, const ModelParams& params, std::size_t views_per_shape = 0,
                           const AuctionParams& auction = {});

/// Mean |v - v_hat| over test-split scans; the regressor reads the content
/// feature when `shared_encoder` (joint-learning variant).
double pose_regression_error(const Corpus& corpus, const ModelParams& params, bool shared_encoder = false);

/// CSV: role,target,label,accuracy,count with label "all" for the overall row.
void write_probe_reports_csv(const std::filesystem::path& path, const std::vector<ProbeReport>& reports);

}  // namespace pdssl

#endif  // PDSSL_EVALUATION_HPP
