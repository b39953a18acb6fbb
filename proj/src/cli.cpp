#include "pdssl/cli.hpp"

#include "pdssl/checkpoint.hpp"
#include "pdssl/dataset_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <set>

namespace pdssl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
  const SynthConfig s;
  const TrainConfig t;
  const ModelDims& d = t.dims;
  const ProbeParams p;
  return {
      {"synth.seed", s.seed},
      {"synth.n_per_class", s.n_per_class},
      {"synth.dense_points", s.dense_points},
      {"synth.points_per_scan", s.points_per_scan},
      {"synth.gamma", s.gamma},
      {"synth.hpr_r_factor", s.hpr_r_factor},
      {"model.backbone", to_string(d.backbone)},
      {"model.feature_dim", d.feature_dim},
      {"model.encoder_hidden1", d.encoder_hidden1},
      {"model.encoder_hidden2", d.encoder_hidden2},
      {"model.knn_k", d.knn_k},
      {"model.decoder_hidden1", d.decoder_hidden1},
      {"model.decoder_hidden2", d.decoder_hidden2},
      {"model.regressor_hidden1", d.regressor_hidden1},
      {"model.regressor_hidden2", d.regressor_hidden2},
      {"model.completion_patches", d.completion_patches},
      {"model.partial_patches", d.partial_patches},
      {"model.complete_points", d.complete_points},
      {"model.scan_points", d.scan_points},
      {"train.lambda_c", t.lambda_c},
      {"train.lambda_pa", t.lambda_pa},
      {"train.lambda_po", t.lambda_po},
      {"train.lambda_ex", t.lambda_ex},
      {"train.lambda_edge", t.lambda_edge},
      {"train.lr", t.lr},
      {"train.lr_decay", t.lr_decay},
      {"train.lr_step_epochs", t.lr_step_epochs},
      {"train.batch_size", t.batch_size},
      {"train.epochs", t.epochs},
      {"train.pairs_per_object", t.pairs_per_object},
      {"train.variant", to_string(t.variant)},
      {"train.pose_loss", "mse"},
      {"train.seed", t.seed},
      {"auction.eps_final", t.auction.eps_final},
      {"auction.eps_final_relative", t.auction.eps_final_relative},
      {"auction.eps_scale", t.auction.eps_scale},
      {"auction.max_rounds", t.auction.max_rounds},
      {"eval.seed", std::uint64_t{0}},
      {"eval.probe_lambda", p.lambda},
      {"eval.probe_epochs", p.epochs},
      {"eval.swap_pairs", std::size_t{200}},
      {"eval.recon_views", std::size_t{0}},
      {"io.data", ""},
      {"io.out", ""},
      {"io.checkpoint", ""},
      {"io.run", ""},
  };
}

namespace {

struct UsageError : Error {
  using Error::Error;
};

// Coerces `v` to the JSON type of the default; returns false on mismatch.
bool coerce(const json& def, const json& v, json& out) {
  if (def.is_number_unsigned()) {
    if (v.is_number_unsigned()) return out = v, true;
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return out = v.get<std::uint64_t>(), true;
    if (v.is_number_float()) {
      const double x = v.get<double>();
      if (x >= 0 && x == std::floor(x) && x < 1.8e19) return out = static_cast<std::uint64_t>(x), true;
    }
    return false;
  }
  if (def.is_number()) {
    if (!v.is_number()) return false;
    out = v.get<double>();
    return true;
  }
  if (def.is_string()) {
    if (!v.is_string()) return false;
    out = v;
    return true;
  }
  return false;
}

json parse_flag_value(const std::string& key, const json& def, const std::string& text) {
  json out;
  try {
    std::size_t used = 0;
    if (def.is_number_unsigned()) {
      if (text.empty() || text[0] == '-') throw std::invalid_argument("negative");
      out = std::stoull(text, &used);
    } else if (def.is_number()) {
      out = std::stod(text, &used);
    } else {
      return text;
    }
    if (used != text.size()) throw std::invalid_argument("trailing");
  } catch (const std::logic_error&) {
    throw UsageError("invalid value '" + text + "' for " + key);
  }
  return out;
}

std::string flag_of(const std::string& key) {
  std::string name = key.substr(key.find('.') + 1);
  std::replace(name.begin(), name.end(), '_', '-');
  return "--" + name;
}

}  // namespace

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw Error(path + ": config must be a JSON object of dotted keys");
  const json defaults = default_config();
  json out = json::object();
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw Error(path + ": unknown config key '" + key + "'");
    json v;
    if (!coerce(defaults[key], value, v)) throw Error(path + ": config key '" + key + "' has the wrong type");
    out[key] = v;
  }
  return out;
}

SynthConfig synth_config(const json& r) {
  SynthConfig s;
  s.seed = r.at("synth.seed").get<std::uint64_t>();
  s.n_per_class = r.at("synth.n_per_class").get<std::size_t>();
  s.dense_points = r.at("synth.dense_points").get<std::size_t>();
  s.points_per_scan = r.at("synth.points_per_scan").get<std::size_t>();
  s.gamma = r.at("synth.gamma").get<double>();
  s.hpr_r_factor = r.at("synth.hpr_r_factor").get<double>();
  return s;
}

TrainConfig train_config(const json& r) {
  TrainConfig t;
  ModelDims& d = t.dims;
  d.backbone = backbone_from_string(r.at("model.backbone").get<std::string>());
  d.feature_dim = r.at("model.feature_dim").get<std::size_t>();
  d.encoder_hidden1 = r.at("model.encoder_hidden1").get<std::size_t>();
  d.encoder_hidden2 = r.at("model.encoder_hidden2").get<std::size_t>();
  d.knn_k = r.at("model.knn_k").get<std::size_t>();
  d.decoder_hidden1 = r.at("model.decoder_hidden1").get<std::size_t>();
  d.decoder_hidden2 = r.at("model.decoder_hidden2").get<std::size_t>();
  d.regressor_hidden1 = r.at("model.regressor_hidden1").get<std::size_t>();
  d.regressor_hidden2 = r.at("model.regressor_hidden2").get<std::size_t>();
  d.completion_patches = r.at("model.completion_patches").get<std::size_t>();
  d.partial_patches = r.at("model.partial_patches").get<std::size_t>();
  d.complete_points = r.at("model.complete_points").get<std::size_t>();
  d.scan_points = r.at("model.scan_points").get<std::size_t>();
  t.lambda_c = r.at("train.lambda_c").get<double>();
  t.lambda_pa = r.at("train.lambda_pa").get<double>();
  t.lambda_po = r.at("train.lambda_po").get<double>();
  t.lambda_ex = r.at("train.lambda_ex").get<double>();
  t.lambda_edge = r.at("train.lambda_edge").get<double>();
  t.lr = r.at("train.lr").get<double>();
  t.lr_decay = r.at("train.lr_decay").get<double>();
  t.lr_step_epochs = r.at("train.lr_step_epochs").get<std::size_t>();
  t.batch_size = r.at("train.batch_size").get<std::size_t>();
  t.epochs = r.at("train.epochs").get<std::size_t>();
  t.pairs_per_object = r.at("train.pairs_per_object").get<std::size_t>();
  t.variant = variant_from_string(r.at("train.variant").get<std::string>());
  const auto pose = r.at("train.pose_loss").get<std::string>();
  if (pose == "mse")
    t.pose_loss = PoseLossKind::mse;
  else if (pose == "l2")
    t.pose_loss = PoseLossKind::l2;
  else
    throw Error("train.pose_loss must be mse or l2, got '" + pose + "'");
  t.seed = r.at("train.seed").get<std::uint64_t>();
  t.auction.eps_final = r.at("auction.eps_final").get<double>();
  t.auction.eps_final_relative = r.at("auction.eps_final_relative").get<double>();
  t.auction.eps_scale = r.at("auction.eps_scale").get<double>();
  t.auction.max_rounds = r.at("auction.max_rounds").get<std::size_t>();
  t.validate();
  return t;
}

ProbeParams probe_params(const json& r) {
  ProbeParams p;
  p.lambda = r.at("eval.probe_lambda").get<double>();
  p.epochs = r.at("eval.probe_epochs").get<std::size_t>();
  return p;
}

namespace {

// --- per-command option plumbing ---------------------------------------------

struct Command {
  std::string name;
  std::string description;
  std::vector<std::string> sections;  // key prefixes with flags
  std::vector<std::string> io;        // io.* keys accepted
  std::vector<std::string> required;  // io.* keys that must be set

  CLI::App* app = nullptr;
  std::string config_path = {};
  std::map<std::string, std::string> flags = {};  // key -> raw flag text

  Command(std::string n, std::string d, std::vector<std::string> s, std::vector<std::string> i,
          std::vector<std::string> r)
      : name(std::move(n)), description(std::move(d)), sections(std::move(s)), io(std::move(i)), required(std::move(r)) {}
};

json resolve(const Command& cmd, std::set<std::string>& explicit_keys) {
  json r = default_config();
  if (!cmd.config_path.empty()) {
    for (const auto& [k, v] : read_config_file(cmd.config_path).items()) {
      r[k] = v;
      explicit_keys.insert(k);
    }
  }
  for (const auto& [key, text] : cmd.flags) {
    if (cmd.app->get_option(flag_of(key))->count() == 0) continue;
    r[key] = parse_flag_value(key, r[key], text);
    explicit_keys.insert(key);
  }
  for (const auto& key : cmd.required)
    if (r[key].get<std::string>().empty())
      throw UsageError(cmd.name + ": " + flag_of(key) + " is required (or set \"" + key + "\" in the config)");
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

void write_resolved(const fs::path& dir, const std::string& command, const json& resolved) {
  write_text(dir / (command + ".resolved.json"), resolved.dump(2) + "\n");
}

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string pct(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * x);
  return buf;
}

// Accepts a checkpoint file or a pretrain output directory (latest epoch).
fs::path resolve_checkpoint(const fs::path& p) {
  if (!fs::is_directory(p)) return p;
  for (const fs::path& dir : {p / "checkpoints", p}) {
    if (!fs::is_directory(dir)) continue;
    std::vector<fs::path> found;
    for (const auto& e : fs::directory_iterator(dir))
      if (std::regex_match(e.path().filename().string(), std::regex(R"(checkpoint_e\d+\.bin)"))) found.push_back(e.path());
    if (!found.empty()) return *std::max_element(found.begin(), found.end());
  }
  throw Error("no checkpoint found under " + p.string());
}

std::vector<fs::path> list_checkpoints(const fs::path& run) {
  std::vector<fs::path> found;
  for (const fs::path& dir : {run / "checkpoints", run}) {
    if (!fs::is_directory(dir)) continue;
    for (const auto& e : fs::directory_iterator(dir))
      if (std::regex_match(e.path().filename().string(), std::regex(R"(checkpoint_e\d+\.bin)"))) found.push_back(e.path());
    if (!found.empty()) break;
  }
  std::sort(found.begin(), found.end());
  return found;
}

// --- commands ----------------------------------------------------------------

void cmd_synth(const json& r, std::ostream& out) {
  const fs::path dir = r["io.out"].get<std::string>();
  const SynthConfig cfg = synth_config(r);
  const auto t0 = std::chrono::steady_clock::now();
  const Corpus corpus = synthesize_corpus(cfg);
  save_corpus(dir, corpus);
  write_resolved(dir, "synth", r);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << "synthesized " << corpus.shapes.size() << " shapes, " << corpus.scans.size() << " scans into " << dir.string()
      << " (" << secs << " s)\n";
}

void cmd_pretrain(const json& r_in, const std::set<std::string>& explicit_keys, std::ostream& out) {
  json r = r_in;
  const fs::path data_dir = r["io.data"].get<std::string>();
  const fs::path dir = r["io.out"].get<std::string>();
  const Corpus corpus = load_corpus(data_dir);
  if (!explicit_keys.count("model.scan_points") && !corpus.scans.empty())
    r["model.scan_points"] = corpus.scans.front().cloud.size();
  const TrainConfig cfg = train_config(r);
  write_resolved(dir, "pretrain", r);

  PretrainOptions opt;
  opt.checkpoint_dir = dir / "checkpoints";
  std::vector<EpochMetrics> log;
  auto t0 = std::chrono::steady_clock::now();
  opt.on_epoch = [&](const EpochMetrics& m) {
    log.push_back(m);
    write_metrics_csv(dir / "metrics.csv", log);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << "epoch " << m.epoch << "/" << cfg.epochs << " total=" << m.total;
    if (m.completion) out << " complete=" << *m.completion;
    if (m.partial) out << " partial=" << *m.partial;
    if (m.pose) out << " pose=" << *m.pose;
    out << " lr=" << m.lr << " (" << secs << " s)\n" << std::flush;
  };
  pretrain(corpus, cfg, opt);
  write_metrics_csv(dir / "metrics.csv", log);
}

std::vector<ProbeReport> run_probes(const Corpus& corpus, const ModelParams& params, const json& r) {
  const auto seed = r["eval.seed"].get<std::uint64_t>();
  const ProbeParams pp = probe_params(r);
  std::vector<ProbeReport> reports;
  for (FeatureRole role : {FeatureRole::content, FeatureRole::pose}) {
    const FeatureMatrix fm = extract_features(corpus, params, role);
    for (ProbeTarget t : {ProbeTarget::object_class, ProbeTarget::viewpoint})
      reports.push_back(linear_probe(fm, t, seed, pp));
  }
  return reports;
}

void cmd_probe(const json& r, std::ostream& out) {
  const fs::path dir = r["io.out"].get<std::string>();
  const Corpus corpus = load_corpus(r["io.data"].get<std::string>());
  const fs::path ckpt = resolve_checkpoint(r["io.checkpoint"].get<std::string>());
  const LoadedCheckpoint loaded = load_checkpoint(ckpt);
  const auto reports = run_probes(corpus, loaded.params, r);
  write_probe_reports_csv(dir / "probe_reports.csv", reports);
  std::string text = "checkpoint " + ckpt.string() + " (variant " + loaded.meta.variant + ", epoch " +
                     std::to_string(loaded.meta.epoch) + ")\n";
  for (const auto& rep : reports)
    text += std::string(to_string(rep.role)) + " features, " + to_string(rep.target) + " probe: " +
            pct(rep.accuracy) + " on " + std::to_string(rep.n_test) + " test rows\n";
  write_text(dir / "probe_summary.txt", text);
  write_resolved(dir, "probe", r);
  out << text;
}

void cmd_report(const json& r, std::ostream& out) {
  const fs::path dir = r["io.out"].get<std::string>();
  const Corpus corpus = load_corpus(r["io.data"].get<std::string>());
  const fs::path ckpt = resolve_checkpoint(r["io.checkpoint"].get<std::string>());
  const LoadedCheckpoint loaded = load_checkpoint(ckpt);
  const ModelParams& params = loaded.params;
  const auto seed = r["eval.seed"].get<std::uint64_t>();
  const Variant variant = variant_from_string(loaded.meta.variant);
  const BranchMask mask = branch_mask(variant);

  TrainConfig cfg = train_config(r);
  cfg.dims = params.dims;
  cfg.seed = seed;
  const PretextData data(corpus, cfg);

  std::vector<std::pair<std::string, double>> rows;
  const FeatureMatrix content = extract_features(corpus, params, FeatureRole::content).subset(Split::test);
  const FeatureMatrix pose = extract_features(corpus, params, FeatureRole::pose).subset(Split::test);
  const DisentanglementReport d = disentanglement_report(content, pose);
  rows.emplace_back("silhouette_content_class", d.content_class);
  rows.emplace_back("silhouette_content_viewpoint", d.content_viewpoint);
  rows.emplace_back("silhouette_pose_class", d.pose_class);
  rows.emplace_back("silhouette_pose_viewpoint", d.pose_viewpoint);
  rows.emplace_back("intra_object_variance_content", d.content_intra_object_variance);
  rows.emplace_back("intra_object_variance_pose", d.pose_intra_object_variance);

  if (mask.partial) {
    const auto pairs = sample_test_pairs(data, r["eval.swap_pairs"].get<std::size_t>(), seed);
    rows.emplace_back("swap_success_rate", cross_pose_swap_test(pairs, params, cfg.auction));
  }
  if (mask.completion) {
    const auto views = r["eval.recon_views"].get<std::size_t>();
    rows.emplace_back("reconstruction_emd", reconstruction_eval(data, params, views, cfg.auction));
    rows.emplace_back("reconstruction_emd_untrained",
                      reconstruction_eval(data, init_params(seed, params.dims), views, cfg.auction));
  }
  if (mask.pose) rows.emplace_back("pose_error_mean", pose_regression_error(corpus, params, mask.shared_encoder));

  std::string csv = "metric,value\n";
  std::string text = "checkpoint " + ckpt.string() + " (variant " + loaded.meta.variant + ", epoch " +
                     std::to_string(loaded.meta.epoch) + "), test split\n";
  for (const auto& [k, v] : rows) {
    csv += k + "," + num(v) + "\n";
    char buf[96];
    std::snprintf(buf, sizeof buf, "  %-32s %.6f\n", k.c_str(), v);
    text += buf;
  }
  write_text(dir / "report.csv", csv);
  write_text(dir / "report_summary.txt", text);
  write_resolved(dir, "report", r);
  out << text;
}

void cmd_export_plots(const json& r, std::ostream& out) {
  const fs::path dir = r["io.out"].get<std::string>();
  const fs::path run = r["io.run"].get<std::string>();
  const Corpus corpus = load_corpus(r["io.data"].get<std::string>());
  const auto log = read_metrics_csv(run / "metrics.csv");
  const auto ckpts = list_checkpoints(run);
  if (ckpts.empty()) throw Error("no checkpoints under " + run.string());
  const auto seed = r["eval.seed"].get<std::uint64_t>();
  const ProbeParams pp = probe_params(r);

  std::string csv = "epoch,loss_total,probe_accuracy\n";
  for (const auto& path : ckpts) {
    const LoadedCheckpoint ck = load_checkpoint(path);
    const auto it = std::find_if(log.begin(), log.end(), [&](const EpochMetrics& m) { return m.epoch == ck.meta.epoch; });
    if (it == log.end()) throw Error(path.string() + ": epoch " + std::to_string(ck.meta.epoch) + " missing from metrics.csv");
    const FeatureMatrix fm = extract_features(corpus, ck.params, FeatureRole::content);
    const double acc = linear_probe(fm, ProbeTarget::object_class, seed, pp).accuracy;
    csv += std::to_string(ck.meta.epoch) + "," + num(it->total) + "," + num(acc) + "\n";
    out << "epoch " << ck.meta.epoch << ": loss " << it->total << ", content class probe " << pct(acc) << "\n"
        << std::flush;
  }
  write_text(dir / "loss_vs_accuracy.csv", csv);
  write_resolved(dir, "export-plots", r);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"pdssl: self-supervised point cloud features by pose/content disentanglement", "pdssl"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  std::vector<Command> commands{
      {"synth", "Build the procedural corpus and its partial scans", {"synth."}, {"io.out"}, {"io.out"}},
      {"pretrain",
       "Train one variant on a synthesized corpus",
       {"model.", "train.", "auction."},
       {"io.data", "io.out"},
       {"io.data", "io.out"}},
      {"probe",
       "Linear probes on frozen content and pose features",
       {"eval."},
       {"io.data", "io.checkpoint", "io.out"},
       {"io.data", "io.checkpoint", "io.out"}},
      {"report",
       "Silhouette scores, swap test, reconstruction and pose error",
       {"eval.", "auction."},
       {"io.data", "io.checkpoint", "io.out"},
       {"io.data", "io.checkpoint", "io.out"}},
      {"export-plots",
       "Pair per-epoch pretext loss with content class-probe accuracy",
       {"eval."},
       {"io.data", "io.run", "io.out"},
       {"io.data", "io.run", "io.out"}},
  };

  const json defaults = default_config();
  for (auto& cmd : commands) {
    cmd.app = app.add_subcommand(cmd.name, cmd.description);
    cmd.app->add_option("--config", cmd.config_path, "JSON config with flat dotted keys")->check(CLI::ExistingFile);
    for (const auto& [key, def] : defaults.items()) {
      const bool in_section = std::any_of(cmd.sections.begin(), cmd.sections.end(),
                                          [&](const std::string& s) { return key.rfind(s, 0) == 0; });
      const bool in_io = std::find(cmd.io.begin(), cmd.io.end(), key) != cmd.io.end();
      if (!in_section && !in_io) continue;
      cmd.app->add_option(flag_of(key), cmd.flags[key], key + " (default " + def.dump() + ")");
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (const auto& cmd : commands)
      if (cmd.app->parsed()) sub = cmd.app;
    err << (sub ? sub->help() : app.help());
    return kExitUsage;
  }

  for (auto& cmd : commands) {
    if (!cmd.app->parsed()) continue;
    try {
      std::set<std::string> explicit_keys;
      const json r = resolve(cmd, explicit_keys);
      if (cmd.name == "synth") cmd_synth(r, out);
      else if (cmd.name == "pretrain") cmd_pretrain(r, explicit_keys, out);
      else if (cmd.name == "probe") cmd_probe(r, out);
      else if (cmd.name == "report") cmd_report(r, out);
      else cmd_export_plots(r, out);
      return kExitOk;
    } catch (const UsageError& e) {
      err << "error: " << e.what() << "\n\n" << cmd.app->help();
      return kExitUsage;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitRuntime;
    }
  }
  err << app.help();
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace pdssl::cli
