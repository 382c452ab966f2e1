#pragma once

// Operator surface: one binary, subcommand per pipeline stage. Every command
// is a pure function of (config, seed, input paths) — rerunning with the same
// three reproduces the output bytes — and each output directory receives
// exactly one manifest recording config hash, seed, input and output hashes,
// and wall time. Errors exit nonzero after printing a single line starting
// with "error: " to stderr.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "poseadapt/adapt.hpp"
#include "poseadapt/checkpoint.hpp"
#include "poseadapt/config.hpp"
#include "poseadapt/eval.hpp"
#include "poseadapt/metrics.hpp"
#include "poseadapt/prior.hpp"
#include "poseadapt/report.hpp"
#include "poseadapt/skeleton.hpp"
#include "poseadapt/synth.hpp"
#include "poseadapt/train.hpp"

namespace poseadapt {
namespace cli {

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

struct Args {
  std::string command;
  std::map<std::string, std::string> flags;  // --name value
  std::vector<std::string> positional;
  bool exact_knn = false;

  bool has(const std::string& name) const { return flags.count(name) != 0; }

  const std::string& require(const std::string& name) const {
    auto it = flags.find(name);
    if (it == flags.end()) {
      throw std::invalid_argument(command + ": missing required flag --" + name);
    }
    return it->second;
  }

  std::string get(const std::string& name, const std::string& fallback) const {
    auto it = flags.find(name);
    return it == flags.end() ? fallback : it->second;
  }

  std::optional<std::uint64_t> seed() const {
    if (!has("seed")) return std::nullopt;
    const std::string& s = flags.at("seed");
    std::size_t pos = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(s, &pos);
    } catch (const std::exception&) {
      throw std::invalid_argument("--seed: not a non-negative integer: " + s);
    }
    if (pos != s.size()) throw std::invalid_argument("--seed: not a non-negative integer: " + s);
    return v;
  }

  double corrupt_kappa(double fallback) const {
    if (!has("corrupt")) return fallback;
    const std::string& s = flags.at("corrupt");
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      throw std::invalid_argument("--corrupt: not a number: " + s);
    }
    if (pos != s.size() || !(v > 0.0)) {
      throw std::invalid_argument("--corrupt: kappa must be a positive number, got " + s);
    }
    return v;
  }
};

inline Args parse_args(const std::vector<std::string>& argv) {
  static const std::vector<std::string> kValueFlags = {
      "config", "seed", "out", "which", "corrupt", "data", "images", "model", "prior", "split"};
  Args a;
  if (argv.empty()) throw std::invalid_argument("no command given");
  a.command = argv[0];
  for (std::size_t i = 1; i < argv.size(); ++i) {
    const std::string& tok = argv[i];
    if (tok.rfind("--", 0) == 0) {
      const std::string name = tok.substr(2);
      if (name == "exact-knn") {
        a.exact_knn = true;
        continue;
      }
      bool known = false;
      for (const auto& f : kValueFlags) known = known || (f == name);
      if (!known) throw std::invalid_argument(a.command + ": unknown flag " + tok);
      if (i + 1 >= argv.size()) throw std::invalid_argument(tok + ": missing value");
      if (a.flags.count(name)) throw std::invalid_argument(tok + ": given twice");
      a.flags[name] = argv[++i];
    } else {
      a.positional.push_back(tok);
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

inline RunConfig load_config_arg(const Args& a) {
  if (a.has("config")) return load_config(a.flags.at("config"));
  RunConfig c;  // built-in defaults
  c.validate();
  return c;
}

inline std::string ensure_out_dir(const Args& a) {
  const std::string out = a.require("out");
  std::filesystem::create_directories(out);
  return out;
}

inline std::string join(const std::string& dir, const std::string& leaf) {
  return (std::filesystem::path(dir) / leaf).string();
}

inline nlohmann::json ckpt_meta(const std::string& command, const std::string& config_hash,
                                std::uint64_t seed, const std::string& role) {
  return {{"command", command}, {"config_hash", config_hash}, {"seed", seed}, {"role", role}};
}

// Explicit-path existence check so a missing artifact names itself.
inline void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::is_regular_file(path)) {
    throw std::runtime_error("missing " + what + ": " + path);
  }
}

inline PoseNet load_pose_net(const std::string& path, const RunConfig& cfg) {
  require_file(path, "checkpoint");
  const Checkpoint c = load_checkpoint(path);
  if (!c.meta.contains("model")) {
    throw std::runtime_error("checkpoint " + path + " is not a pose model checkpoint");
  }
  const ModelConfig stored = model_config_from_json(c.meta.at("model"));
  if (stored.image_size != cfg.model.image_size || stored.keypoints != cfg.model.keypoints ||
      stored.heatmap_size != cfg.model.heatmap_size) {
    throw std::runtime_error(
        "checkpoint " + path + " does not match the configured model: checkpoint has image_size=" +
        std::to_string(stored.image_size) + ", keypoints=" + std::to_string(stored.keypoints) +
        ", heatmap_size=" + std::to_string(stored.heatmap_size) + "; config wants image_size=" +
        std::to_string(cfg.model.image_size) + ", keypoints=" + std::to_string(cfg.model.keypoints) +
        ", heatmap_size=" + std::to_string(cfg.model.heatmap_size));
  }
  return PoseNet::from_checkpoint(c);
}

inline PriorModel load_prior_model(const std::string& path) {
  require_file(path, "prior checkpoint");
  const Checkpoint c = load_checkpoint(path);
  if (!c.meta.contains("prior")) {
    throw std::runtime_error("checkpoint " + path + " is not a prior checkpoint");
  }
  PriorModel prior = PriorModel::from_checkpoint(c);
  if (skeleton_to_json(prior.skeleton()) != skeleton_to_json(default_skeleton())) {
    throw std::runtime_error("prior checkpoint " + path + " was trained on a different skeleton");
  }
  return prior;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

inline int cmd_gen_data(const Args& a) {
  RunConfig cfg = load_config_arg(a);
  if (auto s = a.seed()) cfg.data.source.seed = *s;
  const std::string out = ensure_out_dir(a);
  const std::string config_hash = sha256_hex(config_canonical(cfg));
  Stopwatch sw;

  const Skeleton sk = default_skeleton();
  const auto [src, tgt] = make_shifted_pair(cfg.data.source, cfg.data.shift);
  generate_domain(sk, src, join(out, "source"));
  generate_domain(sk, tgt, join(out, "target"));

  std::filesystem::create_directories(join(out, "aux"));
  const std::vector<Pose2D> aux = sample_pose_set(sk, src.pose, src.render.image_size,
                                                  cfg.data.aux_count, cfg.data.aux_seed, "aux_");
  save_poses(join(out, "aux/poses.jsonl"), aux);

  RunManifest m;
  m.command = "gen-data";
  m.config_hash = config_hash;
  m.seed = cfg.data.source.seed;
  m.outputs[join(out, "source")] = hash_path(join(out, "source"));
  m.outputs[join(out, "target")] = hash_path(join(out, "target"));
  m.outputs[join(out, "aux")] = hash_path(join(out, "aux"));
  m.wall_seconds = sw.seconds();
  save_manifest(out, m);

  std::cout << "gen-data: wrote " << src.train_count << "+" << src.test_count << " source, "
            << tgt.train_count << "+" << tgt.test_count << " target, " << aux.size()
            << " aux poses to " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train-source
// ---------------------------------------------------------------------------

inline int cmd_train_source(const Args& a) {
  RunConfig cfg = load_config_arg(a);
  if (auto s = a.seed()) cfg.train.seed = *s;
  const std::string data = a.require("data");
  const std::string out = ensure_out_dir(a);
  const std::string config_hash = sha256_hex(config_canonical(cfg));
  Stopwatch sw;

  const ImageDataset train = load_split(join(data, "source/train"));
  const ImageDataset val = load_split(join(data, "source/test"));
  TrainSourceResult res = train_source(train, val, cfg.train);

  const std::string ckpt_path = join(out, "source_model.ckpt");
  save_checkpoint(ckpt_path,
                  res.model.to_checkpoint(ckpt_meta("train-source", config_hash, cfg.train.seed, "source")));

  CsvTable trace;
  trace.header = {"epoch", "lr", "loss", "val_pck"};
  for (const auto& r : res.epochs) {
    trace.rows.push_back({std::to_string(r.epoch), fmt_double(r.lr), fmt_double(r.loss),
                          fmt_double(r.val_pck)});
  }
  const std::string trace_path = join(out, "train_trace.csv");
  write_csv(trace_path, trace);

  RunManifest m;
  m.command = "train-source";
  m.config_hash = config_hash;
  m.seed = cfg.train.seed;
  m.inputs[join(data, "source/train")] = hash_path(join(data, "source/train"));
  m.inputs[join(data, "source/test")] = hash_path(join(data, "source/test"));
  m.outputs[ckpt_path] = hash_path(ckpt_path);
  m.outputs[trace_path] = hash_path(trace_path);
  m.wall_seconds = sw.seconds();
  save_manifest(out, m);

  const double final_pck = res.epochs.empty() ? 0.0 : res.epochs.back().val_pck;
  std::cout << "train-source: " << res.epochs.size() << " epochs, final val PCK@0.05 = "
            << fmt_double(final_pck) << ", checkpoint " << ckpt_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train-prior
// ---------------------------------------------------------------------------

inline int cmd_train_prior(const Args& a) {
  RunConfig cfg = load_config_arg(a);
  if (auto s = a.seed()) cfg.prior.seed = *s;
  if (a.exact_knn) cfg.prior.exact_knn = true;
  const std::string data = a.require("data");
  const std::string out = ensure_out_dir(a);
  const std::string config_hash = sha256_hex(config_canonical(cfg));
  Stopwatch sw;

  const std::string pose_path = join(data, "aux/poses.jsonl");
  require_file(pose_path, "aux pose file");
  const std::vector<Pose2D> aux = load_poses(pose_path);
  if (aux.empty()) throw std::runtime_error("aux pose file is empty: " + pose_path);

  const Skeleton sk = default_skeleton();
  std::vector<OrientationPose> clean;
  clean.reserve(aux.size());
  for (const auto& p : aux) clean.push_back(pose_to_orientations(p.coords, sk));

  TrainPriorResult res = train_prior(clean, sk, cfg.prior);

  const std::string ckpt_path = join(out, "prior.ckpt");
  save_checkpoint(ckpt_path,
                  res.model.to_checkpoint(ckpt_meta("train-prior", config_hash, cfg.prior.seed, "prior")));

  CsvTable trace;
  trace.header = {"epoch", "loss"};
  for (std::size_t e = 0; e < res.loss_trace.size(); ++e) {
    trace.rows.push_back({std::to_string(e), fmt_double(res.loss_trace[e])});
  }
  const std::string trace_path = join(out, "prior_trace.csv");
  write_csv(trace_path, trace);

  RunManifest m;
  m.command = "train-prior";
  m.config_hash = config_hash;
  m.seed = cfg.prior.seed;
  m.inputs[pose_path] = hash_path(pose_path);
  m.outputs[ckpt_path] = hash_path(ckpt_path);
  m.outputs[trace_path] = hash_path(trace_path);
  m.wall_seconds = sw.seconds();
  save_manifest(out, m);

  std::cout << "train-prior: " << res.loss_trace.size() << " epochs, final loss = "
            << fmt_double(res.loss_trace.empty() ? 0.0 : res.loss_trace.back()) << ", checkpoint "
            << ckpt_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// adapt
// ---------------------------------------------------------------------------

inline void write_adapt_outputs(const std::string& out, const AdaptResult& res,
                                const std::string& config_hash, std::uint64_t seed,
                                RunManifest& m) {
  const std::string student_path = join(out, "student.ckpt");
  const std::string teacher_path = join(out, "teacher.ckpt");
  save_checkpoint(student_path,
                  res.student.to_checkpoint(ckpt_meta("adapt", config_hash, seed, "student")));
  save_checkpoint(teacher_path,
                  res.teacher.to_checkpoint(ckpt_meta("adapt", config_hash, seed, "teacher")));

  CsvTable trace;
  trace.header = {"step", "l_out", "l_feat", "l_prior", "total", "kept_fraction"};
  for (const auto& r : res.trace) {
    trace.rows.push_back({std::to_string(r.step), fmt_double(r.l_out), fmt_double(r.l_feat),
                          fmt_double(r.l_prior), fmt_double(r.total), fmt_double(r.kept_fraction)});
  }
  const std::string trace_path = join(out, "adapt_trace.csv");
  write_csv(trace_path, trace);

  CsvTable epochs;
  epochs.header = {"epoch", "lr"};
  for (const auto& r : res.epochs) {
    epochs.rows.push_back({std::to_string(r.epoch), fmt_double(r.lr)});
  }
  const std::string epochs_path = join(out, "adapt_epochs.csv");
  write_csv(epochs_path, epochs);

  m.outputs[student_path] = hash_path(student_path);
  m.outputs[teacher_path] = hash_path(teacher_path);
  m.outputs[trace_path] = hash_path(trace_path);
  m.outputs[epochs_path] = hash_path(epochs_path);
}

inline int cmd_adapt(const Args& a) {
  RunConfig cfg = load_config_arg(a);
  if (auto s = a.seed()) cfg.adapt.seed = *s;
  const std::string images_dir = a.require("images");
  const std::string model_path = a.require("model");
  const std::string out = ensure_out_dir(a);
  const std::string config_hash = sha256_hex(config_canonical(cfg));
  Stopwatch sw;

  const PoseNet source = load_pose_net(model_path, cfg);
  std::optional<PriorModel> prior;
  if (a.has("prior")) prior = load_prior_model(a.flags.at("prior"));
  if (cfg.adapt.lambda2 != 0.0 && !prior) {
    throw std::runtime_error("adapt: config has lambda2 != 0 but no --prior checkpoint was given");
  }

  // Unlabeled by construction: the loader only reads image files, and no
  // label path for the target domain ever reaches this command.
  const std::vector<Image> images = load_images(images_dir);

  AdaptResult res = run_adaptation(source, prior ? &*prior : nullptr, images,
                                   ImageDataset{}, cfg.adapt);

  RunManifest m;
  m.command = "adapt";
  m.config_hash = config_hash;
  m.seed = cfg.adapt.seed;
  m.inputs[images_dir] = hash_path(images_dir);
  m.inputs[model_path] = hash_path(model_path);
  if (a.has("prior")) m.inputs[a.flags.at("prior")] = hash_path(a.flags.at("prior"));
  write_adapt_outputs(out, res, config_hash, cfg.adapt.seed, m);
  m.wall_seconds = sw.seconds();
  save_manifest(out, m);

  const double final_total = res.trace.empty() ? 0.0 : res.trace.back().total;
  std::cout << "adapt: " << res.trace.size() << " steps over " << res.epochs.size()
            << " epochs, final total loss = " << fmt_double(final_total)
            << ", checkpoints in " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalRow {
  std::string model_label;
  PckResult pck;
};

inline void print_pck_table(std::ostream& os, const std::vector<EvalRow>& rows) {
  if (rows.empty()) return;
  os << "model";
  for (const auto& [name, ratio] : rows[0].pck.groups) os << "\t" << name;
  os << "\tAvg.\n";
  char buf[32];
  for (const auto& r : rows) {
    os << r.model_label;
    for (const auto& [name, ratio] : r.pck.groups) {
      std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * ratio);
      os << "\t" << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * r.pck.avg);
    os << "\t" << buf << "\n";
  }
}

inline int cmd_eval(const Args& a) {
  const RunConfig cfg = load_config_arg(a);
  const std::string model_arg = a.require("model");
  const std::string split_dir = a.require("split");
  const std::string out = ensure_out_dir(a);
  const std::string which = a.get("which", "both");
  if (which != "student" && which != "teacher" && which != "both") {
    throw std::invalid_argument("--which: expected student, teacher, or both; got " + which);
  }
  const std::string config_hash = sha256_hex(config_canonical(cfg));
  Stopwatch sw;

  // --model accepts either a single checkpoint file or an adaptation output
  // directory containing student.ckpt and teacher.ckpt.
  std::vector<std::pair<std::string, std::string>> targets;  // label, path
  if (std::filesystem::is_directory(model_arg)) {
    if (which == "student" || which == "both") {
      targets.emplace_back("student", join(model_arg, "student.ckpt"));
    }
    if (which == "teacher" || which == "both") {
      targets.emplace_back("teacher", join(model_arg, "teacher.ckpt"));
    }
  } else {
    targets.emplace_back("model", model_arg);
  }

  const ImageDataset ds = load_split(split_dir);
  if (ds.size() == 0) throw std::runtime_error("eval: empty split: " + split_dir);

  std::vector<EvalRow> rows;
  RunManifest m;
  m.command = "eval";
  m.config_hash = config_hash;
  m.inputs[split_dir] = hash_path(split_dir);
  for (const auto& [label, path] : targets) {
    const PoseNet net = load_pose_net(path, cfg);
    rows.push_back({label, evaluate_pck(net, ds, 0.05)});
    m.inputs[path] = hash_path(path);
  }

  print_pck_table(std::cout, rows);

  CsvTable csv;
  csv.header = {"model"};
  for (const auto& [name, ratio] : rows[0].pck.groups) {
    std::string col = name;
    for (char& c : col) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    while (!col.empty() && col.back() == '.') col.pop_back();
    csv.header.push_back(col);
  }
  csv.header.push_back("avg");
  for (const auto& r : rows) {
    std::vector<std::string> row = {r.model_label};
    for (const auto& [name, ratio] : r.pck.groups) row.push_back(fmt_double(ratio));
    row.push_back(fmt_double(r.pck.avg));
    csv.rows.push_back(std::move(row));
  }
  const std::string metrics_path = join(out, "metrics.csv");
  write_csv(metrics_path, csv);

  m.outputs[metrics_path] = hash_path(metrics_path);
  m.wall_seconds = sw.seconds();
  save_manifest(out, m);
  return 0;
}

// ---------------------------------------------------------------------------
// score-poses
// ---------------------------------------------------------------------------

inline int cmd_score_poses(const Args& a) {
  RunConfig cfg = load_config_arg(a);
  const std::string prior_path = a.require("prior");
  const std::string out = ensure_out_dir(a);
  const double kappa = a.corrupt_kappa(2.0);
  const std::uint64_t seed = a.seed().value_or(cfg.prior.seed);
  if (a.positional.empty()) {
    throw std::invalid_argument("score-poses: expected at least one pose file argument");
  }
  const std::string config_hash = sha256_hex(config_canonical(cfg));
  Stopwatch sw;

  const PriorModel prior = load_prior_model(prior_path);
  const Skeleton& sk = prior.skeleton();

  std::vector<OrientationPose> clean;
  RunManifest m;
  for (const auto& path : a.positional) {
    require_file(path, "pose file");
    const std::vector<Pose2D> poses = load_poses(path);
    if (poses.empty()) throw std::runtime_error("pose file is empty: " + path);
    for (const auto& p : poses) clean.push_back(pose_to_orientations(p.coords, sk));
    m.inputs[path] = hash_path(path);
  }

  Rng rng(seed);
  std::vector<double> s_clean, s_corr;
  s_clean.reserve(clean.size());
  s_corr.reserve(clean.size());
  for (const auto& p : clean) {
    s_clean.push_back(prior.score(p));
    s_corr.push_back(prior.score(corrupt(p, rng, kappa, CorruptMode::Componentwise)));
  }

  // Shared binning across both series.
  double lo = s_clean[0], hi = s_clean[0];
  for (double v : s_clean) { lo = std::min(lo, v); hi = std::max(hi, v); }
  for (double v : s_corr) { lo = std::min(lo, v); hi = std::max(hi, v); }
  if (!(hi > lo)) hi = lo + 1.0;
  const std::size_t nbins = 40;
  const double width = (hi - lo) / static_cast<double>(nbins);
  std::vector<double> bin_left(nbins);
  for (std::size_t b = 0; b < nbins; ++b) bin_left[b] = lo + width * static_cast<double>(b);
  std::vector<std::size_t> c_clean(nbins, 0), c_corr(nbins, 0);
  auto bin_of = [&](double v) {
    const auto b = static_cast<std::ptrdiff_t>((v - lo) / width);
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(nbins) - 1));
  };
  for (double v : s_clean) ++c_clean[bin_of(v)];
  for (double v : s_corr) ++c_corr[bin_of(v)];

  CsvTable csv;
  csv.header = {"bin_left", "count_clean", "count_corrupted"};
  for (std::size_t b = 0; b < nbins; ++b) {
    csv.rows.push_back({fmt_double(bin_left[b]), std::to_string(c_clean[b]),
                        std::to_string(c_corr[b])});
  }
  const std::string csv_path = join(out, "histogram.csv");
  write_csv(csv_path, csv);

  char title[96];
  std::snprintf(title, sizeof(title), "Prior scores: clean vs corrupted (kappa=%g)", kappa);
  const std::string svg_path = join(out, "histogram.svg");
  write_histogram_svg(svg_path, bin_left, width,
                      {{"clean", "#4682b4", c_clean}, {"corrupted", "#cd5c5c", c_corr}},
                      title, "predicted distance to the pose manifold");

  m.command = "score-poses";
  m.config_hash = config_hash;
  m.seed = seed;
  m.inputs[prior_path] = hash_path(prior_path);
  m.outputs[csv_path] = hash_path(csv_path);
  m.outputs[svg_path] = hash_path(svg_path);
  m.wall_seconds = sw.seconds();
  save_manifest(out, m);

  double mean_clean = 0.0, mean_corr = 0.0;
  for (double v : s_clean) mean_clean += v;
  for (double v : s_corr) mean_corr += v;
  mean_clean /= static_cast<double>(s_clean.size());
  mean_corr /= static_cast<double>(s_corr.size());
  std::cout << "score-poses: " << clean.size() << " poses, mean score clean = "
            << fmt_double(mean_clean) << ", corrupted(kappa=" << kappa << ") = "
            << fmt_double(mean_corr) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateCell {
  std::string name;
  AdaptConfig cfg;
};

inline std::string format_p(double p) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%g", p);
  std::string s = buf;
  for (char& c : s) if (c == '.') c = '_';
  return s;
}

inline std::vector<AblateCell> ablate_cells(const RunConfig& cfg) {
  std::vector<AblateCell> cells;
  AdaptConfig base = cfg.adapt;
  {
    AdaptConfig c = base;
    c.lambda1 = 0.0;
    c.lambda2 = 0.0;
    cells.push_back({"loss_out", c});
  }
  {
    AdaptConfig c = base;
    c.lambda2 = 0.0;
    cells.push_back({"loss_out_feat", c});
  }
  cells.push_back({"loss_full", base});
  for (double p : cfg.ablate.p_grid) {
    AdaptConfig c = base;
    c.p = p;
    cells.push_back({"p_" + format_p(p), c});
  }
  return cells;
}

inline int cmd_ablate(const Args& a) {
  RunConfig cfg = load_config_arg(a);
  const std::string images_dir = a.require("images");
  const std::string model_path = a.require("model");
  const std::string split_dir = a.require("split");
  const std::string out = ensure_out_dir(a);
  const std::string config_hash = sha256_hex(config_canonical(cfg));
  Stopwatch sw;

  const PoseNet source = load_pose_net(model_path, cfg);
  std::optional<PriorModel> prior;
  if (a.has("prior")) prior = load_prior_model(a.flags.at("prior"));
  const std::vector<Image> images = load_images(images_dir);
  const ImageDataset test = load_split(split_dir);
  if (test.size() == 0) throw std::runtime_error("ablate: empty split: " + split_dir);

  const std::vector<AblateCell> cells = ablate_cells(cfg);
  for (const auto& cell : cells) {
    if (cell.cfg.lambda2 != 0.0 && !prior) {
      throw std::runtime_error("ablate: config has lambda2 != 0 but no --prior checkpoint was given");
    }
  }

  RunManifest top;
  top.command = "ablate";
  top.config_hash = config_hash;
  top.seed = cfg.adapt.seed;
  top.inputs[images_dir] = hash_path(images_dir);
  top.inputs[model_path] = hash_path(model_path);
  top.inputs[split_dir] = hash_path(split_dir);
  if (a.has("prior")) top.inputs[a.flags.at("prior")] = hash_path(a.flags.at("prior"));

  CsvTable runs;
  runs.header = {"cell", "p", "lambda1", "lambda2", "seed", "teacher_pck"};
  CsvTable summary;
  summary.header = {"cell", "p", "lambda1", "lambda2", "mean_teacher_pck"};

  for (const auto& cell : cells) {
    double mean = 0.0;
    for (std::uint64_t seed : cfg.ablate.seeds) {
      AdaptConfig run_cfg = cell.cfg;
      run_cfg.seed = seed;
      const std::string cell_dir = join(out, "cells/" + cell.name + "/seed_" + std::to_string(seed));
      std::filesystem::create_directories(cell_dir);
      Stopwatch cell_sw;

      AdaptResult res = run_adaptation(source, prior ? &*prior : nullptr, images,
                                       ImageDataset{}, run_cfg);
      const PckResult pck = evaluate_pck(res.teacher, test, 0.05);
      mean += pck.avg;

      const std::string ckpt_path = join(cell_dir, "teacher.ckpt");
      save_checkpoint(ckpt_path,
                      res.teacher.to_checkpoint(ckpt_meta("ablate", config_hash, seed, "teacher")));
      CsvTable cell_csv;
      cell_csv.header = {"cell", "p", "lambda1", "lambda2", "seed", "teacher_pck"};
      cell_csv.rows.push_back({cell.name, fmt_double(run_cfg.p), fmt_double(run_cfg.lambda1),
                               fmt_double(run_cfg.lambda2), std::to_string(seed),
                               fmt_double(pck.avg)});
      const std::string cell_metrics = join(cell_dir, "metrics.csv");
      write_csv(cell_metrics, cell_csv);

      RunManifest cm;
      cm.command = "ablate-cell";
      cm.config_hash = config_hash;
      cm.seed = seed;
      cm.inputs = top.inputs;
      cm.outputs[ckpt_path] = hash_path(ckpt_path);
      cm.outputs[cell_metrics] = hash_path(cell_metrics);
      cm.wall_seconds = cell_sw.seconds();
      save_manifest(cell_dir, cm);

      runs.rows.push_back(cell_csv.rows[0]);
      std::cout << "ablate: " << cell.name << " seed " << seed << " teacher PCK@0.05 = "
                << fmt_double(pck.avg) << "\n";
    }
    mean /= static_cast<double>(cfg.ablate.seeds.size());
    summary.rows.push_back({cell.name, fmt_double(cell.cfg.p), fmt_double(cell.cfg.lambda1),
                            fmt_double(cell.cfg.lambda2), fmt_double(mean)});
  }

  const std::string runs_path = join(out, "ablation_runs.csv");
  const std::string summary_path = join(out, "ablation.csv");
  write_csv(runs_path, runs);
  write_csv(summary_path, summary);
  top.outputs[runs_path] = hash_path(runs_path);
  top.outputs[summary_path] = hash_path(summary_path);
  top.wall_seconds = sw.seconds();
  save_manifest(out, top);
  return 0;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

inline const char* usage() {
  return
      "usage: poseadapt <command> [flags]\n"
      "\n"
      "commands:\n"
      "  gen-data     --out DIR [--config PATH] [--seed N]\n"
      "  train-source --data DIR --out DIR [--config PATH] [--seed N]\n"
      "  train-prior  --data DIR --out DIR [--config PATH] [--seed N] [--exact-knn]\n"
      "  adapt        --images DIR --model CKPT --out DIR [--prior CKPT] [--config PATH] [--seed N]\n"
      "  eval         --model CKPT|ADAPT_DIR --split DIR --out DIR [--which student|teacher|both]\n"
      "               [--config PATH]\n"
      "  score-poses  --prior CKPT --out DIR POSES.jsonl [POSES2.jsonl ...] [--corrupt KAPPA]\n"
      "               [--config PATH] [--seed N]\n"
      "  ablate       --images DIR --model CKPT --split DIR --out DIR [--prior CKPT]\n"
      "               [--config PATH]\n";
}

inline int run_cli(const std::vector<std::string>& argv) {
  try {
    if (argv.empty() || argv[0] == "--help" || argv[0] == "help") {
      std::cout << usage();
      return argv.empty() ? 1 : 0;
    }
    const Args a = parse_args(argv);
    if (a.command == "gen-data") return cmd_gen_data(a);
    if (a.command == "train-source") return cmd_train_source(a);
    if (a.command == "train-prior") return cmd_train_prior(a);
    if (a.command == "adapt") return cmd_adapt(a);
    if (a.command == "eval") return cmd_eval(a);
    if (a.command == "score-poses") return cmd_score_poses(a);
    if (a.command == "ablate") return cmd_ablate(a);
    throw std::invalid_argument("unknown command: " + a.command + " (see --help)");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  args.reserve(static_cast<std::size_t>(argc > 0 ? argc - 1 : 0));
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace cli
}  // namespace poseadapt
