#include "pdssl/trainer.hpp"

#include "pdssl/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace pdssl {

namespace fs = std::filesystem;
using nn::Matrix;

const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::comp_only: return "comp-only";
    case Variant::pr_only: return "pr-only";
    case Variant::jl: return "jl";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "comp-only" || s == "comp_only") return Variant::comp_only;
  if (s == "pr-only" || s == "pr_only") return Variant::pr_only;
  if (s == "jl") return Variant::jl;
  throw Error("unknown variant '" + s + "' (expected full, comp-only, pr-only or jl)");
}

BranchMask branch_mask(Variant v) {
  switch (v) {
    case Variant::full: return {true, true, true, false};
    case Variant::comp_only: return {true, false, false, false};
    case Variant::pr_only: return {false, false, true, false};
    case Variant::jl: return {true, false, true, true};
  }
  return {};
}

std::vector<ParamGroup> active_groups(Variant v) {
  switch (v) {
    case Variant::full:
      return {ParamGroup::content_encoder, ParamGroup::pose_encoder, ParamGroup::completion_decoder,
              ParamGroup::partial_decoder, ParamGroup::pose_regressor};
    case Variant::comp_only: return {ParamGroup::content_encoder, ParamGroup::completion_decoder};
    case Variant::pr_only: return {ParamGroup::pose_encoder, ParamGroup::pose_regressor};
    case Variant::jl: return {ParamGroup::content_encoder, ParamGroup::completion_decoder, ParamGroup::pose_regressor};
  }
  return {};
}

void TrainConfig::validate() const {
  auto nonneg = [](double x, const char* name) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw Error(std::string("config field '") + name + "' must be >= 0");
  };
  nonneg(lambda_c, "lambda_c");
  nonneg(lambda_pa, "lambda_pa");
  nonneg(lambda_po, "lambda_po");
  nonneg(lambda_ex, "lambda_ex");
  if (!(lambda_edge > 0.0)) throw Error("config field 'lambda_edge' must be > 0");
  if (!(lr > 0.0)) throw Error("config field 'lr' must be > 0");
  if (!(lr_decay > 0.0)) throw Error("config field 'lr_decay' must be > 0");
  if (lr_step_epochs == 0) throw Error("config field 'lr_step_epochs' must be > 0");
  if (batch_size == 0) throw Error("config field 'batch_size' must be > 0");
  if (pairs_per_object == 0) throw Error("config field 'pairs_per_object' must be > 0");
  if (dims.feature_dim == 0) throw Error("config field 'feature_dim' must be > 0");
  if (dims.completion_patches == 0 || dims.complete_points % dims.completion_patches != 0)
    throw Error("config field 'completion_patches' must divide 'complete_points'");
  if (dims.partial_patches == 0 || dims.scan_points % dims.partial_patches != 0)
    throw Error("config field 'partial_patches' must divide 'scan_points'");
  if (dims.backbone == Backbone::edgeconv && dims.scan_points < dims.knn_k + 1)
    throw Error("config field 'scan_points' must exceed 'knn_k' for the edgeconv backbone");
}

double lr_at_epoch(std::size_t epoch, const TrainConfig& config) {
  return config.lr * std::pow(config.lr_decay, static_cast<double>(epoch / config.lr_step_epochs));
}

PretextData::PretextData(const Corpus& corpus, const TrainConfig& config) : index_(corpus) {
  const auto& shapes = corpus.shapes;
  complete_.resize(shapes.size());
  parallel_for(shapes.size(), [&](std::size_t s) {
    complete_[s] = resample(shapes[s].cloud, config.dims.complete_points, mix_seed(config.seed, 0xC0313 + s));
  });
  for (const auto& scan : corpus.scans)
    if (scan.cloud.size() != config.dims.scan_points)
      throw Error("scan " + scan.object_id + " view " + std::to_string(scan.viewpoint_index) + " has " +
                  std::to_string(scan.cloud.size()) + " points, model expects " +
                  std::to_string(config.dims.scan_points));
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    if (index_.scans_of(s).size() < 2) {
      std::cerr << "warning: skipping " << shapes[s].id << " (fewer than 2 scans)\n";
      continue;
    }
    (shapes[s].split == Split::train ? train_shapes_ : test_shapes_).push_back(s);
  }
}

TrainingPair sample_pair_for_shape(const PretextData& data, std::size_t shape, std::mt19937_64& rng) {
  const auto& scans = data.index().scans_of(shape);
  if (scans.size() < 2) throw Error("shape has fewer than 2 scans");
  std::uniform_int_distribution<std::size_t> first(0, scans.size() - 1);
  std::uniform_int_distribution<std::size_t> second(0, scans.size() - 2);
  const std::size_t a = first(rng);
  std::size_t b = second(rng);
  if (b >= a) ++b;

  const Corpus& corpus = data.corpus();
  const PartialScan& si = corpus.scans[scans[a]];
  const PartialScan& sj = corpus.scans[scans[b]];
  TrainingPair pair;
  pair.shape = shape;
  pair.object_id = corpus.shapes[shape].id;
  pair.view_i = si.viewpoint_index;
  pair.view_j = sj.viewpoint_index;
  pair.scan_i = &si.cloud;
  pair.scan_j = &sj.cloud;
  pair.complete = &data.complete(shape);
  pair.position_i = data.index().viewpoint(si.viewpoint_index).position;
  pair.position_j = data.index().viewpoint(sj.viewpoint_index).position;
  return pair;
}

TrainingPair sample_training_pair(const PretextData& data, std::mt19937_64& rng, Split split) {
  const auto& shapes = data.shapes(split);
  if (shapes.empty()) throw Error(std::string("no usable shapes in split ") + to_string(split));
  std::uniform_int_distribution<std::size_t> pick(0, shapes.size() - 1);
  return sample_pair_for_shape(data, shapes[pick(rng)], rng);
}

// --- single-sample losses ----------------------------------------------------

double completion_loss(const PointCloud& complete, const FeatureVector& content, const ModelParams& params,
                       const TrainConfig& config) {
  const auto& dec = params.completion_decoder;
  if (complete.size() != dec.output_points())
    throw Error("completion target has " + std::to_string(complete.size()) + " points, decoder emits " +
                std::to_string(dec.output_points()));
  const PointCloud out = decode_morphing(content.values, dec);
  const double emd = emd_auction(out, complete, config.auction).cost;
  const double ex = expansion_terms(out, dec.patches(), config.lambda_edge).value;
  return emd + config.lambda_ex * ex;
}

double pose_loss(const Vec3& v_true, const Vec3& v_pred, PoseLossKind kind) {
  const Vec3 d = v_true - v_pred;
  return kind == PoseLossKind::mse ? d.squaredNorm() / 3.0 : d.norm();
}

double partial_reconstruction_loss(const TrainingPair& pair, const FeatureVector& c_i, const FeatureVector& c_j,
                                   const FeatureVector& p_i, const FeatureVector& p_j, const ModelParams& params,
                                   const TrainConfig& config) {
  if (c_i.role != FeatureRole::content || c_j.role != FeatureRole::content || p_i.role != FeatureRole::pose ||
      p_j.role != FeatureRole::pose)
    throw Error("partial_reconstruction_loss: feature roles must be (content, content, pose, pose)");
  auto cat = [](const FeatureVector& c, const FeatureVector& p) {
    Eigen::VectorXd f(c.values.size() + p.values.size());
    f << c.values, p.values;
    return f;
  };
  const PointCloud out_i = decode_morphing(cat(c_j, p_i), params.partial_decoder);
  const PointCloud out_j = decode_morphing(cat(c_i, p_j), params.partial_decoder);
  return emd_auction(out_i, *pair.scan_i, config.auction).cost + emd_auction(out_j, *pair.scan_j, config.auction).cost;
}

double total_loss(double l_complete, double l_partial, double l_pose, const TrainConfig& config) {
  const BranchMask m = branch_mask(config.variant);
  double t = 0.0;
  if (m.completion) t += config.lambda_c * l_complete;
  if (m.partial) t += config.lambda_pa * l_partial;
  if (m.pose) t += config.lambda_po * l_pose;
  return t;
}

// --- batched objective -------------------------------------------------------

namespace {

struct MatchResult {
  std::vector<double> emd;
  std::vector<double> expansion;
};

// Per-cloud EMD (plus optional expansion penalty) between decoded rows and
// targets. With d_rows, writes scale * gradient into the matching rows.
MatchResult match_clouds(const Matrix& decoded, std::size_t cloud_size, const std::vector<const PointCloud*>& targets,
                         const TrainConfig& config, std::size_t expansion_patches, double scale, Matrix* d_rows,
                         std::vector<Assignment>& assignments, std::vector<ExpansionTerms>* expansion,
                         bool use_frozen) {
  const std::size_t g = targets.size();
  MatchResult r;
  r.emd.assign(g, 0.0);
  r.expansion.assign(g, 0.0);
  if (!use_frozen) {
    assignments.assign(g, {});
    if (expansion) expansion->assign(g, {});
  }
  if (d_rows) d_rows->setZero(decoded.rows(), 3);

  parallel_for(g, [&](std::size_t s) {
    const auto rows = static_cast<Eigen::Index>(cloud_size);
    const PointCloud out = from_matrix(decoded.middleRows(static_cast<Eigen::Index>(s) * rows, rows));
    const PointCloud& target = *targets[s];
    if (!use_frozen) assignments[s] = emd_auction(out, target, config.auction);
    r.emd[s] = assignment_cost(out, target, assignments[s].mapping);
    std::vector<Vec3> grad;
    if (d_rows) grad = emd_gradient(out, target, assignments[s]);
    if (expansion) {
      if (!use_frozen) (*expansion)[s] = expansion_terms(out, expansion_patches, config.lambda_edge);
      r.expansion[s] = expansion_value(out, (*expansion)[s]);
      if (d_rows) add_expansion_gradient(out, (*expansion)[s], config.lambda_ex, grad);
    }
    if (d_rows)
      for (std::size_t p = 0; p < cloud_size; ++p)
        d_rows->row(static_cast<Eigen::Index>(s * cloud_size + p)) = scale * grad[p].transpose();
  });
  return r;
}

Matrix positions_matrix(const std::vector<TrainingPair>& batch) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  Matrix v(2 * b, 3);
  for (Eigen::Index k = 0; k < b; ++k) {
    v.row(k) = batch[k].position_i.transpose();
    v.row(b + k) = batch[k].position_j.transpose();
  }
  return v;
}

}  // namespace

ObjectiveValue batch_objective(ModelParams& params, const std::vector<TrainingPair>& batch, const TrainConfig& config,
                               const ObjectiveOptions& options) {
  if (batch.empty()) throw Error("empty training batch");
  const BranchMask mask = branch_mask(config.variant);
  const auto b = static_cast<Eigen::Index>(batch.size());
  const auto two_b = 2 * b;
  const auto m_pts = static_cast<Eigen::Index>(config.dims.scan_points);
  const auto d = static_cast<Eigen::Index>(config.dims.feature_dim);
  const bool use_frozen = options.frozen && options.frozen->ready;
  FrozenMatching scratch;
  FrozenMatching& fm = options.frozen ? *options.frozen : scratch;

  // Both views of every pair: rows [0, B) are view i, [B, 2B) view j.
  std::vector<const PointCloud*> views(2 * batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    views[k] = batch[k].scan_i;
    views[batch.size() + k] = batch[k].scan_j;
  }
  const Matrix points = stack_clouds(views);

  const bool need_content = mask.completion || mask.partial || mask.shared_encoder;
  const bool need_pose_encoder = (mask.pose && !mask.shared_encoder) || mask.partial;

  PointEncoder::Tape content_tape, pose_tape;
  Matrix c, p;
  if (need_content) c = params.content_encoder.forward(points, m_pts, nn::Mode::train, &content_tape);
  if (need_pose_encoder) p = params.pose_encoder.forward(points, m_pts, nn::Mode::train, &pose_tape);

  Matrix dc, dp;
  if (options.backward) {
    if (need_content) dc = Matrix::Zero(two_b, d);
    if (need_pose_encoder) dp = Matrix::Zero(two_b, d);
  }

  ObjectiveValue out;

  MorphingDecoder::Tape completion_tape;
  if (mask.completion) {
    const Matrix decoded = params.completion_decoder.forward(c, nn::Mode::train, &completion_tape);
    std::vector<const PointCloud*> targets(2 * batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) targets[k] = targets[batch.size() + k] = batch[k].complete;
    Matrix d_decoded;
    const double scale = config.lambda_c / static_cast<double>(two_b);
    const auto r = match_clouds(decoded, config.dims.complete_points, targets, config,
                                params.completion_decoder.patches(), scale, options.backward ? &d_decoded : nullptr,
                                fm.completion, &fm.expansion, use_frozen);
    double sum = 0.0;
    for (Eigen::Index s = 0; s < two_b; ++s) sum += r.emd[s] + config.lambda_ex * r.expansion[s];
    out.completion = sum / static_cast<double>(two_b);
    if (options.backward) dc += params.completion_decoder.backward(completion_tape, d_decoded);
  }

  PoseRegressor::Tape regressor_tape;
  if (mask.pose) {
    const Matrix& feat = mask.shared_encoder ? c : p;
    const Matrix pred = params.pose_regressor.forward(feat, nn::Mode::train, &regressor_tape);
    const Matrix diff = pred - positions_matrix(batch);
    double sum = 0.0;
    Matrix d_pred(two_b, 3);
    const double scale = config.lambda_po / static_cast<double>(two_b);
    for (Eigen::Index s = 0; s < two_b; ++s) {
      const Vec3 e = diff.row(s).transpose();
      if (config.pose_loss == PoseLossKind::mse) {
        sum += e.squaredNorm() / 3.0;
        d_pred.row(s) = scale * (2.0 / 3.0) * e.transpose();
      } else {
        const double n = e.norm();
        sum += n;
        d_pred.row(s) = n > 1e-12 ? (scale / n * e).transpose() : Eigen::RowVector3d::Zero().eval();
      }
    }
    out.pose = sum / static_cast<double>(two_b);
    if (options.backward) {
      const Matrix d_feat = params.pose_regressor.backward(regressor_tape, d_pred);
      (mask.shared_encoder ? dc : dp) += d_feat;
    }
  }

  MorphingDecoder::Tape partial_tape;
  if (mask.partial) {
    // Row k decodes view i from (c_j, p_i); row B+k decodes view j from (c_i, p_j).
    Matrix z(two_b, 2 * d);
    z.topLeftCorner(b, d) = c.bottomRows(b);
    z.bottomLeftCorner(b, d) = c.topRows(b);
    z.rightCols(d) = p;
    const Matrix decoded = params.partial_decoder.forward(z, nn::Mode::train, &partial_tape);
    Matrix d_decoded;
    const double scale = config.lambda_pa / static_cast<double>(b);
    const auto r = match_clouds(decoded, config.dims.scan_points, views, config, 0, scale,
                                options.backward ? &d_decoded : nullptr, fm.partial, nullptr, use_frozen);
    double sum = 0.0;
    for (double e : r.emd) sum += e;
    out.partial = sum / static_cast<double>(b);
    if (options.backward) {
      const Matrix dz = params.partial_decoder.backward(partial_tape, d_decoded);
      dc.bottomRows(b) += dz.topLeftCorner(b, d);
      dc.topRows(b) += dz.bottomLeftCorner(b, d);
      dp += dz.rightCols(d);
    }
  }

  out.total = total_loss(out.completion.value_or(0.0), out.partial.value_or(0.0), out.pose.value_or(0.0), config);
  if (options.frozen) options.frozen->ready = true;

  if (options.backward) {
    if (need_content) params.content_encoder.backward(content_tape, dc);
    if (need_pose_encoder) params.pose_encoder.backward(pose_tape, dp);
  }
  if (options.update_running_stats) {
    if (need_content) params.content_encoder.update_running_stats(content_tape);
    if (need_pose_encoder) params.pose_encoder.update_running_stats(pose_tape);
    if (mask.completion) params.completion_decoder.update_running_stats(completion_tape);
    if (mask.pose) params.pose_regressor.update_running_stats(regressor_tape);
    if (mask.partial) params.partial_decoder.update_running_stats(partial_tape);
  }
  return out;
}

// --- training loop -----------------------------------------------------------

std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "checkpoint_e%03zu.bin", epoch);
  return buf;
}

namespace {

std::string batch_ids(const std::vector<TrainingPair>& batch) {
  std::string s;
  for (const auto& p : batch) {
    if (!s.empty()) s += ", ";
    s += p.object_id + "[v" + std::to_string(p.view_i) + "/v" + std::to_string(p.view_j) + "]";
  }
  return s;
}

}  // namespace

PretrainResult pretrain(const Corpus& corpus, const TrainConfig& config, const PretrainOptions& options) {
  config.validate();
  const PretextData data(corpus, config);
  const auto& shapes = data.shapes(Split::train);
  if (shapes.empty()) throw Error("no training shapes with at least 2 scans");

  PretrainResult result{init_params(config.seed, config.dims), {}};
  ModelParams& params = result.params;
  std::vector<nn::Param*> trainable;
  for (ParamGroup g : active_groups(config.variant)) {
    auto ps = params.group_params(g);
    trainable.insert(trainable.end(), ps.begin(), ps.end());
  }
  nn::Adam adam;
  std::mt19937_64 rng(mix_seed(config.seed, 0x7a1));
  const BranchMask mask = branch_mask(config.variant);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, config);
    std::vector<std::size_t> order;
    order.reserve(shapes.size() * config.pairs_per_object);
    for (std::size_t r = 0; r < config.pairs_per_object; ++r) order.insert(order.end(), shapes.begin(), shapes.end());
    std::shuffle(order.begin(), order.end(), rng);

    double w_total = 0.0, s_c = 0.0, s_pa = 0.0, s_po = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<TrainingPair> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) batch.push_back(sample_pair_for_shape(data, order[k], rng));

      params.zero_grad();
      ObjectiveValue v;
      try {
        v = batch_objective(params, batch, config);
      } catch (const Error& e) {
        throw Error(std::string(e.what()) + " in epoch " + std::to_string(epoch + 1) + " batch " +
                    std::to_string(batch_no) + " (objects: " + batch_ids(batch) + ")");
      }
      if (!std::isfinite(v.total))
        throw Error("non-finite loss in epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(batch_no) +
                    " (objects: " + batch_ids(batch) + ")");
      adam.step(trainable, lr);

      const double w = static_cast<double>(batch.size());
      w_total += w;
      s_c += w * v.completion.value_or(0.0);
      s_pa += w * v.partial.value_or(0.0);
      s_po += w * v.pose.value_or(0.0);
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = lr;
    if (mask.completion) m.completion = s_c / w_total;
    if (mask.partial) m.partial = s_pa / w_total;
    if (mask.pose) m.pose = s_po / w_total;
    m.total = total_loss(m.completion.value_or(0.0), m.partial.value_or(0.0), m.pose.value_or(0.0), config);
    result.log.push_back(m);

    if (options.checkpoint_dir)
      save_checkpoint(params, {to_string(config.variant), epoch + 1}, *options.checkpoint_dir / checkpoint_name(epoch + 1));
    if (options.on_epoch) options.on_epoch(m);
  }
  return result;
}

// --- metrics CSV -------------------------------------------------------------

namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string(); }

}  // namespace

void write_metrics_csv(const fs::path& path, const std::vector<EpochMetrics>& log) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,loss_total,loss_complete,loss_partial,loss_pose,lr\n";
  for (const auto& m : log)
    out << m.epoch << ',' << fmt(m.total) << ',' << fmt(m.completion) << ',' << fmt(m.partial) << ','
        << fmt(m.pose) << ',' << fmt(m.lr) << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<EpochMetrics> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,loss_total,loss_complete,loss_partial,loss_pose,lr")
    throw Error(path.string() + ": unexpected metrics header");
  std::vector<EpochMetrics> log;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 6) throw Error(path.string() + ": line " + std::to_string(line_no) + ": expected 6 columns");
    try {
      EpochMetrics m;
      m.epoch = std::stoul(cells[0]);
      m.total = std::stod(cells[1]);
      if (!cells[2].empty()) m.completion = std::stod(cells[2]);
      if (!cells[3].empty()) m.partial = std::stod(cells[3]);
      if (!cells[4].empty()) m.pose = std::stod(cells[4]);
      m.lr = std::stod(cells[5]);
      log.push_back(m);
    } catch (const std::logic_error&) {
      throw Error(path.string() + ": line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return log;
}

}  // namespace pdssl
