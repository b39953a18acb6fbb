#include "pdssl/evaluation.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <limits>
#include <map>

using namespace pdssl;

namespace {

// Rows of `per_class` train and test samples per class around class centers.
FeatureMatrix synthetic_features(std::size_t classes, std::size_t per_class, std::size_t dim, double spread,
                                 double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  FeatureMatrix fm;
  const std::size_t n = classes * per_class * 2;
  fm.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  Eigen::MatrixXd centers(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = spread * g(rng);
  std::size_t row = 0;
  for (int split = 0; split < 2; ++split)
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t k = 0; k < per_class; ++k, ++row) {
        for (std::size_t d = 0; d < dim; ++d)
          fm.features(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(d)) =
              centers(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(d)) + noise * g(rng);
        fm.class_labels.push_back(static_cast<int>(c));
        fm.viewpoints.push_back(static_cast<int>(k % 26) + 1);
        fm.object_ids.push_back("o" + std::to_string(c) + "_" + std::to_string(k));
        fm.splits.push_back(split == 0 ? Split::train : Split::test);
      }
  return fm;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.dims.feature_dim = 16;
  cfg.dims.encoder_hidden1 = 8;
  cfg.dims.encoder_hidden2 = 12;
  cfg.dims.decoder_hidden1 = 16;
  cfg.dims.decoder_hidden2 = 8;
  cfg.dims.regressor_hidden1 = 8;
  cfg.dims.regressor_hidden2 = 4;
  cfg.dims.completion_patches = 2;
  cfg.dims.complete_points = 32;
  cfg.dims.scan_points = 32;
  return cfg;
}

const Corpus& small_corpus() {
  static const Corpus corpus = [] {
    SynthConfig s;
    s.n_per_class = 5;
    s.dense_points = 256;
    s.points_per_scan = 32;
    s.seed = 2;
    return synthesize_corpus(s);
  }();
  return corpus;
}

}  // namespace

TEST(Probe, SeparableFeaturesReachFullAccuracy) {
  const FeatureMatrix fm = synthetic_features(8, 20, 16, 5.0, 0.1, 1);
  const ProbeReport r = linear_probe(fm, ProbeTarget::object_class, 0);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.n_train, 160u);
  EXPECT_EQ(r.n_test, 160u);
  EXPECT_EQ(r.per_class.size(), 8u);
  for (const auto& [label, acc] : r.per_class) EXPECT_EQ(acc, 1.0) << label;
}

TEST(Probe, ShuffledLabelsNearChance) {
  FeatureMatrix fm = synthetic_features(8, 100, 16, 0.0, 1.0, 2);
  std::mt19937_64 rng(3);
  std::shuffle(fm.class_labels.begin(), fm.class_labels.end(), rng);
  const double acc = linear_probe(fm, ProbeTarget::object_class, 0).accuracy;
  EXPECT_GE(acc, 0.5 / 8.0);
  EXPECT_LE(acc, 2.0 / 8.0);
}

TEST(Probe, NeverReadsTestRows) {
  FeatureMatrix fm = synthetic_features(4, 15, 6, 1.0, 1.0, 4);
  const ProbeModel a = train_probe(fm, ProbeTarget::object_class, 7);
  for (std::size_t i = 0; i < fm.rows(); ++i)
    if (fm.splits[i] == Split::test) fm.features.row(static_cast<Eigen::Index>(i)).setConstant(std::numeric_limits<double>::quiet_NaN());
  const ProbeModel b = train_probe(fm, ProbeTarget::object_class, 7);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.scale, b.scale);
}

TEST(Probe, DeterministicGivenSeed) {
  const FeatureMatrix fm = synthetic_features(4, 15, 6, 1.0, 1.0, 5);
  EXPECT_EQ(train_probe(fm, ProbeTarget::viewpoint, 3).weights, train_probe(fm, ProbeTarget::viewpoint, 3).weights);
  EXPECT_NE(train_probe(fm, ProbeTarget::viewpoint, 3).weights, train_probe(fm, ProbeTarget::viewpoint, 4).weights);
}

TEST(Probe, LabelMissingFromTrainSplit) {
  FeatureMatrix fm = synthetic_features(3, 5, 4, 1.0, 1.0, 6);
  fm.class_labels.back() = 9;
  EXPECT_THROW(linear_probe(fm, ProbeTarget::object_class, 0), Error);
  EXPECT_THROW(probe_target_from_string("pose"), Error);
  EXPECT_EQ(probe_target_from_string("viewpoint"), ProbeTarget::viewpoint);
}

TEST(Silhouette, TightClustersScoreOne) {
  const FeatureMatrix fm = synthetic_features(4, 10, 5, 100.0, 0.0, 7);
  EXPECT_NEAR(silhouette_score(fm.features, fm.class_labels), 1.0, 1e-6);
}

TEST(Silhouette, RandomFeaturesScoreZero) {
  FeatureMatrix fm = synthetic_features(8, 50, 16, 0.0, 1.0, 8);
  EXPECT_NEAR(silhouette_score(fm.features, fm.class_labels), 0.0, 0.1);
}

TEST(Silhouette, MatchesDirectDefinition) {
  const FeatureMatrix fm = synthetic_features(3, 7, 4, 1.0, 1.0, 9);
  const auto& x = fm.features;
  const auto& l = fm.class_labels;
  double total = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::map<int, std::pair<double, int>> sums;
    for (Eigen::Index j = 0; j < x.rows(); ++j)
      if (j != i) {
        auto& s = sums[l[static_cast<std::size_t>(j)]];
        s.first += (x.row(i) - x.row(j)).norm();
        ++s.second;
      }
    const int own = l[static_cast<std::size_t>(i)];
    const double a = sums[own].first / sums[own].second;
    double b = 1e300;
    for (const auto& [lab, s] : sums)
      if (lab != own) b = std::min(b, s.first / s.second);
    total += (b - a) / std::max(a, b);
  }
  EXPECT_NEAR(silhouette_score(x, l), total / static_cast<double>(x.rows()), 1e-9);
  EXPECT_THROW(silhouette_score(x, std::vector<int>(l.size(), 0)), Error);
}

TEST(Disentanglement, RequiresAlignedRoles) {
  FeatureMatrix c = synthetic_features(3, 6, 4, 1.0, 1.0, 10);
  FeatureMatrix p = c;
  p.role = FeatureRole::pose;
  const auto r = disentanglement_report(c, p);
  EXPECT_EQ(r.content_class, r.pose_class);
  EXPECT_GE(r.content_intra_object_variance, 0.0);
  EXPECT_THROW(disentanglement_report(c, c), Error);
  p.object_ids[0] = "other";
  EXPECT_THROW(disentanglement_report(c, p), Error);
}

TEST(ExtractFeatures, RowsMetadataAndDeterminism) {
  const TrainConfig cfg = tiny_config();
  const ModelParams params = init_params(0, cfg.dims);
  const Corpus& corpus = small_corpus();
  const FeatureMatrix a = extract_features(corpus, params, FeatureRole::content);
  const FeatureMatrix b = extract_features(corpus, params, FeatureRole::content);
  ASSERT_EQ(a.rows(), corpus.scans.size());
  EXPECT_EQ(a.features.cols(), 16);
  EXPECT_EQ(a.features, b.features);
  for (std::size_t i = 0; i < a.rows(); i += 17) {
    EXPECT_EQ(a.object_ids[i], corpus.scans[i].object_id);
    EXPECT_EQ(a.viewpoints[i], corpus.scans[i].viewpoint_index);
    const auto& shape = corpus.shapes[i / 26];
    EXPECT_EQ(a.class_labels[i], shape.class_label);
    EXPECT_EQ(a.splits[i], shape.split);
    const Eigen::VectorXd row = a.features.row(static_cast<Eigen::Index>(i)).transpose();
    EXPECT_LT((row - encode(corpus.scans[i].cloud, params.content_encoder, FeatureRole::content).values).cwiseAbs().maxCoeff(),
              1e-12);
  }
  EXPECT_EQ(extract_features(corpus, params, FeatureRole::pose).role, FeatureRole::pose);
  EXPECT_EQ(a.subset(Split::test).rows(), 8u * 26u);
  EXPECT_THROW(extract_features(corpus, PointEncoder{}, FeatureRole::content), Error);
}

TEST(SwapTest, OracleDecoderScoresOne) {
  const PretextData data(small_corpus(), tiny_config());
  const auto pairs = sample_test_pairs(data, 50, 1);
  for (const auto& p : pairs) EXPECT_EQ(data.corpus().shapes[p.shape].split, Split::test);
  EXPECT_EQ(swap_success_rate(pairs, [](const TrainingPair& p) { return *p.scan_j; }), 1.0);
  EXPECT_EQ(swap_success_rate(pairs, [](const TrainingPair& p) { return *p.scan_i; }), 0.0);
}

TEST(SwapTest, UntrainedDecoderNearHalf) {
  const TrainConfig cfg = tiny_config();
  const PretextData data(small_corpus(), cfg);
  const auto pairs = sample_test_pairs(data, 200, 2);
  const ModelParams params = init_params(3, cfg.dims);
  EXPECT_NEAR(cross_pose_swap_test(pairs, params), 0.5, 0.1);
}

TEST(Reconstruction, OracleIsExactAndUntrainedIsPositive) {
  const TrainConfig cfg = tiny_config();
  const PretextData data(small_corpus(), cfg);
  const auto oracle = [&](const PartialScan& s) { return data.complete(data.index().shape_index(s.object_id)); };
  AuctionParams auction;
  auction.eps_final = 1e-6;
  EXPECT_LE(reconstruction_eval(data, oracle, 3, auction), 1e-6);
  EXPECT_GT(reconstruction_eval(data, init_params(0, cfg.dims), 2), 0.0);
}

TEST(PoseError, FiniteAndNonNegative) {
  const TrainConfig cfg = tiny_config();
  const double e = pose_regression_error(small_corpus(), init_params(0, cfg.dims));
  EXPECT_TRUE(std::isfinite(e));
  EXPECT_GE(e, 0.0);
}

TEST(ProbeCsv, OverallAndPerClassRows) {
  const FeatureMatrix fm = synthetic_features(3, 5, 4, 5.0, 0.1, 11);
  const auto dir = test::temp_dir("probe_csv");
  write_probe_reports_csv(dir / "p.csv", {linear_probe(fm, ProbeTarget::object_class, 0)});
  std::ifstream in(dir / "p.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "role,target,label,accuracy,count");
  EXPECT_EQ(first.rfind("content,class,all,", 0), 0u) << first;
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 3);
}
