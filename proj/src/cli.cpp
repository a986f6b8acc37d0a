#include "edge/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>

#include "edge/config.hpp"
#include "edge/datapipe.hpp"
#include "edge/error.hpp"
#include "edge/evalkit.hpp"
#include "edge/image_io.hpp"
#include "edge/network.hpp"
#include "edge/rng.hpp"

namespace edge {

namespace fs = std::filesystem;

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

struct Common {
  std::string config_path;
  std::optional<std::int64_t> seed;

  RunConfig load() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (seed) {
      if (*seed < 0) throw ConfigError("--seed must be non-negative");
      cfg.seed = static_cast<std::uint64_t>(*seed);
    }
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "random seed, overrides the config");
}

std::string resolve_manifest(const std::string& data) {
  return fs::is_directory(data) ? (fs::path(data) / "manifest.tsv").string() : data;
}

// ---- augment ----------------------------------------------------------------

struct AugmentArgs {
  Common common;
  std::string manifest, out_dir;
};

int cmd_augment(const AugmentArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = a.common.load();
  const std::vector<ManifestEntry> entries = read_manifest(a.manifest);
  if (entries.empty()) throw DataError("manifest '" + a.manifest + "' lists no samples");
  const fs::path root(a.out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "gt");
  std::vector<ManifestEntry> written;
  std::map<std::string, int> stems;
  for (const ManifestEntry& e : entries) {
    Sample src = load_sample(e.image, e.gt);
    // Keep ids unique when two sources share a file stem.
    const int dup = stems[src.id]++;
    if (dup > 0) src.id += "~" + std::to_string(dup);
    for (const Sample& s : expand(src, cfg.augment)) {
      const std::string name = s.id + ".png";
      write_png((root / "images" / name).string(), s.image);
      write_png((root / "gt" / name).string(), s.gt);
      written.push_back({"images/" + name, "gt/" + name});
    }
    err << "augmented " << e.image << '\n';
  }
  write_manifest((root / "manifest.tsv").string(), written);
  out << "sources " << entries.size() << '\n' << "emitted " << written.size() << '\n';
  return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data, checkpoint, resume, log;
  std::optional<int> steps;
};

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  }
  return order;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = a.common.load();
  if (a.steps) {
    if (*a.steps < 0) throw ConfigError("--steps must be >= 0");
    cfg.train.steps = *a.steps;
  }
  const std::vector<Sample> samples = load_dataset(resolve_manifest(a.data));
  if (samples.empty()) throw DataError("no training samples in '" + a.data + "'");
  std::vector<TrainItem> items;
  for (const Sample& s : samples) items.push_back({s.image, s.gt});

  std::optional<EdgeNetwork> net;
  Adam adam(cfg.train.adam);
  std::int64_t start = 0;
  if (!a.resume.empty()) {
    LoadedCheckpoint ck = load_checkpoint(a.resume, cfg.network);
    net = std::move(ck.net);
    start = ck.step;
    adam.set_steps(ck.step);
    adam.state() = std::move(ck.moments);
    err << "resumed from " << a.resume << " at step " << start << '\n';
  } else {
    net = EdgeNetwork::build(cfg.network, cfg.seed);
  }
  err << "parameters " << net->parameter_count() << '\n';

  const std::string log_path = a.log.empty() ? a.checkpoint + ".log.csv" : a.log;
  const bool fresh_log = a.resume.empty() || !fs::exists(log_path);
  std::ofstream log(log_path, fresh_log ? std::ios::trunc : std::ios::app);
  if (!log) throw DataError("cannot write loss log '" + log_path + "'");
  if (fresh_log) log << "step,total,side1,side2,side3,side4,side5,side6,fused\n";
  log << std::setprecision(9);

  const std::size_t n = items.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.train.batch_size);
  StepResult last;
  for (std::int64_t s = start; s < start + cfg.train.steps; ++s) {
    std::vector<TrainItem> chosen;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t flat = static_cast<std::size_t>(s) * batch + b;
      chosen.push_back(items[epoch_order(n, cfg.seed, flat / n)[flat % n]]);
    }
    last = train_step(*net, chosen, adam);
    log << s + 1 << ',' << last.loss;
    for (double t : last.terms) log << ',' << t;
    log << '\n';
    if (cfg.train.checkpoint_every > 0 && (s + 1) % cfg.train.checkpoint_every == 0) {
      save_checkpoint(a.checkpoint, *net, s + 1, &adam);
    }
    err << "step " << s + 1 << " loss " << last.loss << '\n';
  }
  const std::int64_t end = start + cfg.train.steps;
  save_checkpoint(a.checkpoint, *net, end, &adam);
  out << "step " << end << '\n';
  if (cfg.train.steps > 0) out << "loss " << std::setprecision(9) << last.loss << '\n';
  return 0;
}

// ---- infer ------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint, out_dir;
  std::vector<std::string> images;
  bool side_maps = false;
};

int cmd_infer(const InferArgs& a, std::ostream& out, std::ostream& err) {
  const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const int f = ck.net.config().max_downsample();
  fs::create_directories(a.out_dir);
  NoGradGuard no_grad;
  for (const std::string& path : a.images) {
    if (!fs::exists(path)) throw DataError("missing image file '" + path + "'");
    const Tensor image = read_png_rgb(path);
    const int h = image.dim(1), w = image.dim(2);
    Tensor input = image;
    if (h % f != 0 || w % f != 0) {
      err << "warning: " << path << " is " << h << "x" << w << ", not a multiple of " << f
          << "; reflect-padding for inference and cropping back\n";
      input = reflect_pad_to_multiple(image, f);
    }
    const NetworkOutput o = ck.net.forward(input);
    const std::string stem = fs::path(path).stem().string();
    const fs::path dir(a.out_dir);
    if (a.side_maps) {
      for (int s = 0; s < kSideOutputs; ++s) {
        const fs::path p = dir / (stem + "_s" + std::to_string(s + 1) + ".png");
        write_png(p.string(), crop_top_left(o.side[s], h, w));
        out << p.string() << '\n';
      }
      const fs::path p = dir / (stem + "_fused.png");
      write_png(p.string(), crop_top_left(o.fused, h, w));
      out << p.string() << '\n';
    } else {
      const fs::path p = dir / (stem + ".png");
      write_png(p.string(), crop_top_left(o.fused, h, w));
      out << p.string() << '\n';
    }
  }
  return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string pred_dir, gt_dir, csv;
};

std::vector<std::string> png_names(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("'" + dir + "' is not a directory");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

int cmd_eval(const EvalArgs& a, bool require_csv, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = a.common.load();
  const std::vector<std::string> preds = png_names(a.pred_dir), gts = png_names(a.gt_dir);
  std::vector<std::string> only_pred, only_gt;
  std::set_difference(preds.begin(), preds.end(), gts.begin(), gts.end(), std::back_inserter(only_pred));
  std::set_difference(gts.begin(), gts.end(), preds.begin(), preds.end(), std::back_inserter(only_gt));
  if (!only_pred.empty() || !only_gt.empty()) {
    std::string msg = "unmatched files:";
    for (const auto& n : only_pred) msg += " " + a.pred_dir + "/" + n + " (no ground truth)";
    for (const auto& n : only_gt) msg += " " + a.gt_dir + "/" + n + " (no prediction)";
    throw DataError(msg);
  }
  if (preds.empty()) throw DataError("no PNG files in '" + a.pred_dir + "'");
  std::vector<Tensor> pred_maps, gt_maps;
  for (const std::string& n : preds) {
    pred_maps.push_back(read_png_gray((fs::path(a.pred_dir) / n).string()));
    gt_maps.push_back(read_png_gray((fs::path(a.gt_dir) / n).string()));
  }
  const EvalReport r = evaluate(pred_maps, gt_maps, cfg.eval);
  const std::string csv = a.csv;
  if (!csv.empty()) {
    export_pr(r, csv);
    err << "wrote " << csv << '\n';
  } else if (require_csv) {
    throw ContractError("pr-export needs --out");
  }
  out << std::setprecision(6) << std::fixed << "ODS " << r.ods << " (threshold " << std::setprecision(2)
      << r.ods_threshold << ")\n"
      << std::setprecision(6) << "OIS " << r.ois << '\n'
      << "AP " << r.ap << '\n';
  return 0;
}

}  // namespace

Tensor reflect_pad_to_multiple(const Tensor& x, int multiple) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ph = (h + multiple - 1) / multiple * multiple, pw = (w + multiple - 1) / multiple * multiple;
  Tensor out(Shape{c, ph, pw});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < ph; ++i)
      for (int j = 0; j < pw; ++j) out.at(ch, i, j) = x.at(ch, reflect_index(i, h), reflect_index(j, w));
  return out;
}

Tensor crop_top_left(const Tensor& x, int h, int w) {
  const int c = x.dim(0);
  if (h > x.dim(1) || w > x.dim(2)) throw ShapeError("crop larger than " + shape_str(x.shape()));
  Tensor out(Shape{c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) out.at(ch, i, j) = x.at(ch, i, j);
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Edge detection toolkit", "edge"};
  app.require_subcommand(1);

  AugmentArgs aug;
  auto* c_aug = app.add_subcommand("augment", "expand a manifest into augmented samples");
  add_common(c_aug, aug.common);
  c_aug->add_option("--manifest", aug.manifest, "tab-separated image/gt manifest")->required();
  c_aug->add_option("--out", aug.out_dir, "output directory")->required();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "train a network");
  add_common(c_tr, tr.common);
  c_tr->add_option("--data", tr.data, "manifest file or directory holding manifest.tsv")->required();
  c_tr->add_option("--checkpoint", tr.checkpoint, "checkpoint to write")->required();
  c_tr->add_option("--resume", tr.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  c_tr->add_option("--log", tr.log, "loss log CSV (default <checkpoint>.log.csv)");
  c_tr->add_option("--steps", tr.steps, "number of steps, overrides the config");

  InferArgs inf;
  auto* c_inf = app.add_subcommand("infer", "write edge maps for images");
  c_inf->add_option("--checkpoint", inf.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  c_inf->add_option("--out", inf.out_dir, "output directory")->required();
  c_inf->add_flag("--side-maps", inf.side_maps, "also write the six side maps");
  c_inf->add_option("images", inf.images, "input PNG images")->required();

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "score predicted edge maps against ground truth");
  add_common(c_ev, ev.common);
  c_ev->add_option("--pred", ev.pred_dir, "directory of predicted PNG maps")->required();
  c_ev->add_option("--gt", ev.gt_dir, "directory of ground-truth PNG maps")->required();
  c_ev->add_option("--csv", ev.csv, "also write the precision/recall table");

  EvalArgs pr;
  auto* c_pr = app.add_subcommand("pr-export", "write the precision/recall table as CSV");
  add_common(c_pr, pr.common);
  c_pr->add_option("--pred", pr.pred_dir, "directory of predicted PNG maps")->required();
  c_pr->add_option("--gt", pr.gt_dir, "directory of ground-truth PNG maps")->required();
  c_pr->add_option("--out", pr.csv, "CSV path")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (c_aug->parsed()) return cmd_augment(aug, out, err);
    if (c_tr->parsed()) return cmd_train(tr, out, err);
    if (c_inf->parsed()) return cmd_infer(inf, out, err);
    if (c_ev->parsed()) return cmd_eval(ev, false, out, err);
    if (c_pr->parsed()) return cmd_eval(pr, true, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace edge
