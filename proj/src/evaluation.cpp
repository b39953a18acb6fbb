#include "pdssl/evaluation.hpp"

#include "pdssl/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

namespace pdssl {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;

FeatureMatrix FeatureMatrix::subset(Split split) const {
  std::vector<Eigen::Index> keep;
  for (std::size_t r = 0; r < rows(); ++r)
    if (splits[r] == split) keep.push_back(static_cast<Eigen::Index>(r));
  FeatureMatrix out;
  out.role = role;
  out.features = features(keep, Eigen::all);
  for (auto r : keep) {
    out.class_labels.push_back(class_labels[r]);
    out.viewpoints.push_back(viewpoints[r]);
    out.object_ids.push_back(object_ids[r]);
    out.splits.push_back(splits[r]);
  }
  return out;
}

FeatureMatrix extract_features(const Corpus& corpus, const PointEncoder& encoder, FeatureRole role) {
  const auto& scans = corpus.scans;
  if (scans.empty()) throw Error("extract_features: corpus has no scans");
  const std::size_t m = scans.front().cloud.size();
  for (const auto& s : scans)
    if (s.cloud.size() != m) throw Error("extract_features: scans differ in point count");
  if (encoder.feature_dim() == 0) throw Error("extract_features: encoder is not initialized");

  const CorpusIndex index(corpus);
  FeatureMatrix fm;
  fm.role = role;
  fm.features.resize(static_cast<Eigen::Index>(scans.size()), static_cast<Eigen::Index>(encoder.feature_dim()));
  for (const auto& s : scans) {
    const auto& shape = corpus.shapes[index.shape_index(s.object_id)];
    fm.class_labels.push_back(shape.class_label);
    fm.viewpoints.push_back(s.viewpoint_index);
    fm.object_ids.push_back(s.object_id);
    fm.splits.push_back(shape.split);
  }

  // Fixed chunking keeps the floating-point reduction order independent of
  // the worker count.
  constexpr std::size_t chunk = 32;
  const std::size_t chunks = (scans.size() + chunk - 1) / chunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t lo = c * chunk, hi = std::min(scans.size(), lo + chunk);
    std::vector<const PointCloud*> clouds;
    for (std::size_t k = lo; k < hi; ++k) clouds.push_back(&scans[k].cloud);
    const nn::Matrix f =
        encoder.forward(stack_clouds(clouds), static_cast<Eigen::Index>(m), nn::Mode::eval, nullptr);
    fm.features.middleRows(static_cast<Eigen::Index>(lo), f.rows()) = f;
  });
  return fm;
}

FeatureMatrix extract_features(const Corpus& corpus, const ModelParams& params, FeatureRole role) {
  return extract_features(corpus, role == FeatureRole::content ? params.content_encoder : params.pose_encoder, role);
}

const char* to_string(ProbeTarget t) { return t == ProbeTarget::object_class ? "class" : "viewpoint"; }

ProbeTarget probe_target_from_string(const std::string& s) {
  if (s == "class") return ProbeTarget::object_class;
  if (s == "viewpoint") return ProbeTarget::viewpoint;
  throw Error("unknown probe target '" + s + "' (expected class or viewpoint)");
}

// --- linear probe ------------------------------------------------------------

int ProbeModel::predict(const RowVectorXd& x) const {
  const RowVectorXd z = (x - mean).cwiseProduct(scale);
  const auto d = z.size();
  Eigen::Index best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < weights.cols(); ++c) {
    const double s = z.dot(weights.col(c).head(d)) + weights(d, c);
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return labels[static_cast<std::size_t>(best)];
}

namespace {

const std::vector<int>& target_labels(const FeatureMatrix& fm, ProbeTarget t) {
  return t == ProbeTarget::object_class ? fm.class_labels : fm.viewpoints;
}

}  // namespace

ProbeModel train_probe(const FeatureMatrix& fm, ProbeTarget target, std::uint64_t seed, const ProbeParams& p) {
  if (!(p.lambda > 0.0) || p.epochs == 0) throw Error("probe: lambda and epochs must be positive");
  const auto& y = target_labels(fm, target);
  std::vector<Eigen::Index> train;
  std::set<int> train_labels, test_labels;
  for (std::size_t r = 0; r < fm.rows(); ++r) {
    if (fm.splits[r] == Split::train) {
      train.push_back(static_cast<Eigen::Index>(r));
      train_labels.insert(y[r]);
    } else {
      test_labels.insert(y[r]);
    }
  }
  if (train.empty()) throw Error("probe: train split is empty");
  for (int l : test_labels)
    if (!train_labels.count(l)) throw Error("probe: label " + std::to_string(l) + " is absent from the train split");
  if (train_labels.size() < 2) throw Error("probe: fewer than 2 labels in the train split");

  const Eigen::Index d = fm.features.cols();
  ProbeModel model;
  model.labels.assign(train_labels.begin(), train_labels.end());
  const MatrixXd xt = fm.features(train, Eigen::all);
  model.mean = xt.colwise().mean();
  const RowVectorXd var = (xt.rowwise() - model.mean).array().square().colwise().mean();
  model.scale = var.unaryExpr([](double v) { return v > 1e-16 ? 1.0 / std::sqrt(v) : 1.0; });
  MatrixXd z(xt.rows(), d + 1);
  z.leftCols(d) = (xt.rowwise() - model.mean).array().rowwise() * model.scale.array();
  z.col(d).setOnes();

  const auto n = static_cast<std::size_t>(z.rows());
  model.weights = MatrixXd::Zero(d + 1, static_cast<Eigen::Index>(model.labels.size()));
  for (std::size_t c = 0; c < model.labels.size(); ++c) {
    std::mt19937_64 rng(mix_seed(seed, c));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(d + 1);
    std::size_t t = 0, averaged = 0;
    for (std::size_t e = 0; e < p.epochs; ++e) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t k : order) {
        ++t;
        const double eta = 1.0 / (p.lambda * static_cast<double>(t));
        const double label = y[static_cast<std::size_t>(train[k])] == model.labels[c] ? 1.0 : -1.0;
        const double margin = label * z.row(static_cast<Eigen::Index>(k)).dot(w);
        w *= 1.0 - eta * p.lambda;
        if (margin < 1.0) w += (eta * label) * z.row(static_cast<Eigen::Index>(k)).transpose();
        // Average the iterates of the second half of training.
        if (2 * e >= p.epochs) {
          avg += w;
          ++averaged;
        }
      }
    }
    model.weights.col(static_cast<Eigen::Index>(c)) = averaged ? (avg / static_cast<double>(averaged)).eval() : w;
  }
  return model;
}

ProbeReport linear_probe(const FeatureMatrix& fm, ProbeTarget target, std::uint64_t seed, const ProbeParams& p) {
  const ProbeModel model = train_probe(fm, target, seed, p);
  const auto& y = target_labels(fm, target);
  ProbeReport rep;
  rep.role = fm.role;
  rep.target = target;
  std::map<int, std::size_t> correct;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < fm.rows(); ++r) {
    if (fm.splits[r] == Split::train) {
      ++rep.n_train;
      continue;
    }
    ++rep.n_test;
    const bool ok = model.predict(fm.features.row(static_cast<Eigen::Index>(r))) == y[r];
    hits += ok;
    ++rep.per_class_count[y[r]];
    correct[y[r]] += ok;
  }
  if (rep.n_test == 0) throw Error("probe: test split is empty");
  rep.accuracy = static_cast<double>(hits) / static_cast<double>(rep.n_test);
  for (const auto& [label, count] : rep.per_class_count)
    rep.per_class[label] = static_cast<double>(correct[label]) / static_cast<double>(count);
  return rep;
}

// --- silhouette --------------------------------------------------------------

double silhouette_score(const MatrixXd& x, const std::vector<int>& labels) {
  const auto n = x.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw Error("silhouette: label count does not match rows");
  std::map<int, Eigen::Index> cluster_of;
  for (int l : labels) cluster_of.emplace(l, 0);
  if (cluster_of.size() < 2) throw Error("silhouette: fewer than 2 groups");
  Eigen::Index next = 0;
  for (auto& [l, idx] : cluster_of) idx = next++;
  const Eigen::Index k = next;
  std::vector<Eigen::Index> cid(static_cast<std::size_t>(n));
  Eigen::VectorXd size = Eigen::VectorXd::Zero(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    cid[i] = cluster_of[labels[i]];
    size(cid[i]) += 1.0;
  }

  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  // Sum of distances from every point to every cluster, computed in row
  // blocks to bound memory.
  MatrixXd dist_sum = MatrixXd::Zero(n, k);
  constexpr Eigen::Index block = 256;
  const std::size_t blocks = static_cast<std::size_t>((n + block - 1) / block);
  parallel_for(blocks, [&](std::size_t bi) {
    const Eigen::Index lo = static_cast<Eigen::Index>(bi) * block, rows = std::min(block, n - lo);
    MatrixXd g = -2.0 * x.middleRows(lo, rows) * x.transpose();
    g.colwise() += sq.segment(lo, rows);
    g.rowwise() += sq.transpose();
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < n; ++j) dist_sum(lo + i, cid[j]) += lo + i == j ? 0.0 : std::sqrt(std::max(0.0, g(i, j)));
  });

  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index own = cid[i];
    if (size(own) < 2.0) continue;
    const double a = dist_sum(i, own) / (size(own) - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < k; ++c)
      if (c != own) b = std::min(b, dist_sum(i, c) / size(c));
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

namespace {

double intra_object_variance(const FeatureMatrix& fm) {
  std::unordered_map<std::string, std::vector<Eigen::Index>> rows;
  for (std::size_t r = 0; r < fm.rows(); ++r) rows[fm.object_ids[r]].push_back(static_cast<Eigen::Index>(r));
  if (rows.empty()) return 0.0;
  std::vector<std::string> ids;
  for (const auto& [id, _] : rows) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  double total = 0.0;
  for (const auto& id : ids) {
    const MatrixXd f = fm.features(rows[id], Eigen::all);
    const RowVectorXd mu = f.colwise().mean();
    total += (f.rowwise() - mu).rowwise().squaredNorm().mean();
  }
  return total / static_cast<double>(ids.size());
}

}  // namespace

DisentanglementReport disentanglement_report(const FeatureMatrix& content, const FeatureMatrix& pose) {
  if (content.role != FeatureRole::content || pose.role != FeatureRole::pose)
    throw Error("disentanglement_report: expects (content, pose) feature matrices");
  if (content.rows() != pose.rows() || content.object_ids != pose.object_ids || content.viewpoints != pose.viewpoints)
    throw Error("disentanglement_report: feature matrices are not aligned row-for-row");
  DisentanglementReport r;
  r.content_class = silhouette_score(content.features, content.class_labels);
  r.content_viewpoint = silhouette_score(content.features, content.viewpoints);
  r.pose_class = silhouette_score(pose.features, pose.class_labels);
  r.pose_viewpoint = silhouette_score(pose.features, pose.viewpoints);
  r.content_intra_object_variance = intra_object_variance(content);
  r.pose_intra_object_variance = intra_object_variance(pose);
  return r;
}

// --- swap test and completion quality ----------------------------------------

double swap_success_rate(const std::vector<TrainingPair>& pairs,
                         const std::function<PointCloud(const TrainingPair&)>& decode, const AuctionParams& auction) {
  if (pairs.empty()) throw Error("swap test: no pairs");
  std::vector<char> ok(pairs.size(), 0);
  parallel_for(pairs.size(), [&](std::size_t k) {
    const PointCloud out = decode(pairs[k]);
    const double to_j = emd_auction(out, *pairs[k].scan_j, auction).cost;
    const double to_i = emd_auction(out, *pairs[k].scan_i, auction).cost;
    ok[k] = to_j < to_i;
  });
  return static_cast<double>(std::count(ok.begin(), ok.end(), 1)) / static_cast<double>(pairs.size());
}

double cross_pose_swap_test(const std::vector<TrainingPair>& pairs, const ModelParams& params,
                            const AuctionParams& auction) {
  return swap_success_rate(
      pairs,
      [&](const TrainingPair& pr) {
        const FeatureVector c_i = encode(*pr.scan_i, params.content_encoder, FeatureRole::content);
        const FeatureVector p_j = encode(*pr.scan_j, params.pose_encoder, FeatureRole::pose);
        Eigen::VectorXd f(c_i.values.size() + p_j.values.size());
        f << c_i.values, p_j.values;
        return decode_morphing(f, params.partial_decoder);
      },
      auction);
}

std::vector<TrainingPair> sample_test_pairs(const PretextData& data, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x5a9));
  std::vector<TrainingPair> pairs;
  pairs.reserve(count);
  for (std::size_t k = 0; k < count; ++k) pairs.push_back(sample_training_pair(data, rng, Split::test));
  return pairs;
}

double reconstruction_eval(const PretextData& data, const std::function<PointCloud(const PartialScan&)>& complete_from,
                           std::size_t views_per_shape, const AuctionParams& auction) {
  struct Job {
    std::size_t shape, scan;
  };
  std::vector<Job> jobs;
  for (std::size_t s : data.index().shapes_in(Split::test)) {
    const auto& scans = data.index().scans_of(s);
    if (scans.empty()) continue;
    const std::size_t take = views_per_shape == 0 ? scans.size() : std::min(views_per_shape, scans.size());
    // Evenly spaced views so a subset still covers all directions.
    for (std::size_t v = 0; v < take; ++v) jobs.push_back({s, scans[v * scans.size() / take]});
  }
  if (jobs.empty()) throw Error("reconstruction_eval: test split has no scans");
  std::vector<double> cost(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t k) {
    const PointCloud out = complete_from(data.corpus().scans[jobs[k].scan]);
    cost[k] = emd_auction(out, data.complete(jobs[k].shape), auction).cost;
  });
  return std::accumulate(cost.begin(), cost.end(), 0.0) / static_cast<double>(cost.size());
}

double reconstruction_eval(const PretextData& data, const ModelParams& params, std::size_t views_per_shape,
                           const AuctionParams& auction) {
  return reconstruction_eval(
      data,
      [&](const PartialScan& scan) {
        const FeatureVector c = encode(scan.cloud, params.content_encoder, FeatureRole::content);
        return decode_morphing(c.values, params.completion_decoder);
      },
      views_per_shape, auction);
}

double pose_regression_error(const Corpus& corpus, const ModelParams& params, bool shared_encoder) {
  const CorpusIndex index(corpus);
  std::vector<std::size_t> test;
  for (std::size_t k = 0; k < corpus.scans.size(); ++k)
    if (corpus.shapes[index.shape_index(corpus.scans[k].object_id)].split == Split::test) test.push_back(k);
  if (test.empty()) throw Error("pose_regression_error: test split has no scans");
  const PointEncoder& enc = shared_encoder ? params.content_encoder : params.pose_encoder;
  std::vector<double> err(test.size());
  parallel_for(test.size(), [&](std::size_t k) {
    const PartialScan& scan = corpus.scans[test[k]];
    FeatureVector f = encode(scan.cloud, enc, FeatureRole::pose);
    const Vec3 v = index.viewpoint(scan.viewpoint_index).position;
    err[k] = (regress_pose(f, params.pose_regressor) - v).norm();
  });
  return std::accumulate(err.begin(), err.end(), 0.0) / static_cast<double>(err.size());
}

void write_probe_reports_csv(const fs::path& path, const std::vector<ProbeReport>& reports) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  char buf[40];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  out << "role,target,label,accuracy,count\n";
  for (const auto& r : reports) {
    const std::string head = std::string(to_string(r.role)) + ',' + to_string(r.target) + ',';
    out << head << "all," << num(r.accuracy) << ',' << r.n_test << '\n';
    for (const auto& [label, acc] : r.per_class)
      out << head << label << ',' << num(acc) << ',' << r.per_class_count.at(label) << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace pdssl
