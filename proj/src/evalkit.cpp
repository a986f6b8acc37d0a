#include "edge/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "edge/error.hpp"

namespace edge {

namespace {

constexpr double kTieTolerance = 1e-6;
constexpr double kFlatGradient = 1e-9;

struct Grid {
  int h = 0, w = 0;
  std::vector<float> v;

  float at(int i, int j) const { return v[static_cast<std::size_t>(i) * w + j]; }
  float clamped(int i, int j) const {
    return at(std::clamp(i, 0, h - 1), std::clamp(j, 0, w - 1));
  }
  // Bilinear sample with replicate border.
  double sample(double y, double x) const {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    return (1 - fy) * ((1 - fx) * clamped(y0, x0) + fx * clamped(y0, x0 + 1)) +
           fy * ((1 - fx) * clamped(y0 + 1, x0) + fx * clamped(y0 + 1, x0 + 1));
  }
};

Grid to_grid(const Tensor& t, const char* what) {
  if (!t.defined()) throw ContractError(std::string(what) + " map is undefined");
  Grid g;
  if (t.rank() == 2) {
    g.h = t.dim(0);
    g.w = t.dim(1);
  } else if (t.rank() == 3 && t.dim(0) == 1) {
    g.h = t.dim(1);
    g.w = t.dim(2);
  } else {
    throw ShapeError(std::string(what) + " map must be HxW or 1xHxW, got " + shape_str(t.shape()));
  }
  auto d = t.data();
  g.v.assign(d.begin(), d.end());
  return g;
}

void sobel(const Grid& g, int i, int j, double& gy, double& gx) {
  gx = (g.clamped(i - 1, j + 1) + 2.0 * g.clamped(i, j + 1) + g.clamped(i + 1, j + 1)) -
       (g.clamped(i - 1, j - 1) + 2.0 * g.clamped(i, j - 1) + g.clamped(i + 1, j - 1));
  gy = (g.clamped(i + 1, j - 1) + 2.0 * g.clamped(i + 1, j) + g.clamped(i + 1, j + 1)) -
       (g.clamped(i - 1, j - 1) + 2.0 * g.clamped(i - 1, j) + g.clamped(i - 1, j + 1));
}

std::vector<int> on_pixels(const Grid& g, float threshold) {
  std::vector<int> idx;
  for (int p = 0; p < g.h * g.w; ++p)
    if (g.v[static_cast<std::size_t>(p)] >= threshold) idx.push_back(p);
  return idx;
}

MatchCounts match_grids(const Grid& pred, const Grid& gt, float pred_threshold, double maxdist_px) {
  const std::vector<int> ps = on_pixels(pred, pred_threshold);
  const std::vector<int> gs = on_pixels(gt, 0.5f);
  std::vector<int> gt_index(static_cast<std::size_t>(gt.h) * gt.w, -1);
  for (std::size_t k = 0; k < gs.size(); ++k) gt_index[static_cast<std::size_t>(gs[k])] = static_cast<int>(k);

  struct Pair {
    int d2, p, g;
  };
  std::vector<Pair> pairs;
  const int reach = static_cast<int>(std::floor(maxdist_px + 1e-9));
  const double limit = maxdist_px * maxdist_px + 1e-9;
  for (std::size_t a = 0; a < ps.size(); ++a) {
    const int i = ps[a] / pred.w, j = ps[a] % pred.w;
    for (int di = -reach; di <= reach; ++di) {
      const int y = i + di;
      if (y < 0 || y >= gt.h) continue;
      for (int dj = -reach; dj <= reach; ++dj) {
        const int x = j + dj;
        if (x < 0 || x >= gt.w) continue;
        const int d2 = di * di + dj * dj;
        if (d2 > limit) continue;
        const int k = gt_index[static_cast<std::size_t>(y) * gt.w + x];
        if (k >= 0) pairs.push_back({d2, static_cast<int>(a), k});
      }
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& l, const Pair& r) {
    if (l.d2 != r.d2) return l.d2 < r.d2;
    if (l.p != r.p) return l.p < r.p;
    return l.g < r.g;
  });
  std::vector<char> pred_used(ps.size(), 0), gt_used(gs.size(), 0);
  std::size_t matched = 0;
  for (const Pair& pr : pairs) {
    if (pred_used[static_cast<std::size_t>(pr.p)] || gt_used[static_cast<std::size_t>(pr.g)]) continue;
    pred_used[static_cast<std::size_t>(pr.p)] = gt_used[static_cast<std::size_t>(pr.g)] = 1;
    ++matched;
  }
  return MatchCounts{matched, ps.size() - matched, gs.size() - matched};
}

}  // namespace

std::vector<double> EvalConfig::default_thresholds(int count) {
  std::vector<double> t;
  for (int k = 1; k <= count; ++k) t.push_back(static_cast<double>(k) / (count + 1));
  return t;
}

void EvalConfig::validate() const {
  if (!(maxdist >= 0.0)) throw ConfigError("eval.maxdist must be >= 0");
  if (!(f_beta > 0.0)) throw ConfigError("eval.f_beta must be positive");
  if (thresholds.empty()) throw ConfigError("eval.thresholds must not be empty");
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    if (!(thresholds[k] > 0.0 && thresholds[k] < 1.0)) throw ConfigError("eval.thresholds must lie in (0, 1)");
    if (k > 0 && thresholds[k] <= thresholds[k - 1]) throw ConfigError("eval.thresholds must be increasing");
  }
}

double precision_of(const MatchCounts& c) {
  return c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall_of(const MatchCounts& c) {
  return c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double f_measure(double precision, double recall, double beta) {
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  return denom <= 0.0 ? 0.0 : (1.0 + b2) * precision * recall / denom;
}

Tensor nms_thin(const Tensor& edge_map) {
  const Grid g = to_grid(edge_map, "edge");
  Tensor out = edge_map.clone();
  auto dst = out.data();
  for (int i = 0; i < g.h; ++i) {
    for (int j = 0; j < g.w; ++j) {
      const double v = g.at(i, j);
      double gy, gx;
      sobel(g, i, j, gy, gx);
      const double mag = std::hypot(gy, gx);
      if (mag < kFlatGradient) continue;  // flat neighborhood: tie, keep
      const double uy = gy / mag, ux = gx / mag;
      const double up = g.sample(i + uy, j + ux);
      const double down = g.sample(i - uy, j - ux);
      bool keep = !(v < up - kTieTolerance || v < down - kTieTolerance);
      if (keep && std::abs(v - up) <= kTieTolerance) {
        // Plateau on the uphill side: defer to the neighbor unless it points
        // back at us, in which case one side of the pair wins by orientation.
        const int qi = std::clamp(static_cast<int>(std::lround(i + uy)), 0, g.h - 1);
        const int qj = std::clamp(static_cast<int>(std::lround(j + ux)), 0, g.w - 1);
        if (qi != i || qj != j) {
          double qy, qx;
          sobel(g, qi, qj, qy, qx);
          if (std::hypot(qy, qx) < kFlatGradient) {
            keep = false;
          } else if (qy * gy + qx * gx < 0.0) {
            keep = gx < -kFlatGradient || (std::abs(gx) <= kFlatGradient && gy < 0.0);
          } else {
            keep = false;
          }
        }
      }
      if (!keep) dst[static_cast<std::size_t>(i) * g.w + j] = 0.0f;
    }
  }
  return out;
}

double max_distance_px(double maxdist, int height, int width) {
  return maxdist * std::sqrt(static_cast<double>(height) * height + static_cast<double>(width) * width);
}

MatchCounts match_boundaries(const Tensor& pred, const Tensor& gt, double maxdist_px) {
  const Grid p = to_grid(pred, "prediction"), g = to_grid(gt, "ground-truth");
  if (p.h != g.h || p.w != g.w) {
    throw ShapeError("prediction " + shape_str(pred.shape()) + " and ground truth " + shape_str(gt.shape()) +
                     " differ in size");
  }
  return match_grids(p, g, 0.5f, maxdist_px);
}

double average_precision(const std::vector<ThresholdStats>& curve) {
  if (curve.empty()) return 0.0;
  std::vector<ThresholdStats> s = curve;
  std::stable_sort(s.begin(), s.end(), [](const ThresholdStats& a, const ThresholdStats& b) {
    if (a.recall != b.recall) return a.recall < b.recall;
    return a.threshold > b.threshold;
  });
  double area = 0.0, prev_r = 0.0, prev_p = s.front().precision;
  for (const ThresholdStats& t : s) {
    area += (t.recall - prev_r) * (t.precision + prev_p) / 2.0;
    prev_r = t.recall;
    prev_p = t.precision;
  }
  return area;
}

EvalReport evaluate(std::span<const Tensor> predictions, std::span<const Tensor> ground_truth,
                    const EvalConfig& config) {
  config.validate();
  if (predictions.size() != ground_truth.size()) {
    throw ContractError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                        std::to_string(ground_truth.size()) + " ground-truth maps");
  }
  if (predictions.empty()) throw ContractError("evaluate: empty dataset");
  const std::vector<double>& thresholds = config.thresholds;

  EvalReport report;
  std::vector<MatchCounts> totals(thresholds.size());
  for (std::size_t n = 0; n < predictions.size(); ++n) {
    const Grid g = to_grid(ground_truth[n], "ground-truth");
    const Grid p = to_grid(config.apply_nms ? nms_thin(predictions[n]) : predictions[n], "prediction");
    if (p.h != g.h || p.w != g.w) {
      throw ShapeError("image " + std::to_string(n) + ": prediction " + shape_str(predictions[n].shape()) +
                       " vs ground truth " + shape_str(ground_truth[n].shape()));
    }
    const double tol = max_distance_px(config.maxdist, g.h, g.w);
    double best = 0.0;
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      const MatchCounts c = match_grids(p, g, static_cast<float>(thresholds[k]), tol);
      totals[k] += c;
      best = std::max(best, f_measure(precision_of(c), recall_of(c), config.f_beta));
    }
    report.per_image_best_f.push_back(best);
  }

  report.ods = -1.0;
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    ThresholdStats s;
    s.threshold = thresholds[k];
    s.counts = totals[k];
    s.precision = precision_of(totals[k]);
    s.recall = recall_of(totals[k]);
    s.f = f_measure(s.precision, s.recall, config.f_beta);
    if (s.f > report.ods) {
      report.ods = s.f;
      report.ods_threshold = s.threshold;
    }
    report.curve.push_back(s);
  }
  double sum = 0.0;
  for (double f : report.per_image_best_f) sum += f;
  report.ois = sum / static_cast<double>(report.per_image_best_f.size());
  report.ap = average_precision(report.curve);
  return report;
}

void export_pr(const EvalReport& report, const std::string& path) {
  if (report.curve.empty()) throw ContractError("export_pr: report has no thresholds");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << std::setprecision(10);
  out << "threshold,precision,recall,f\n";
  for (const ThresholdStats& s : report.curve) {
    out << s.threshold << ',' << s.precision << ',' << s.recall << ',' << s.f << '\n';
  }
  out << "# ods=" << report.ods << " ods_threshold=" << report.ods_threshold << " ois=" << report.ois
      << " ap=" << report.ap << '\n';
  if (!out) throw DataError("failed writing '" + path + "'");
}

EvalReport load_pr(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  EvalReport report;
  std::string line;
  if (!std::getline(in, line) || line != "threshold,precision,recall,f") {
    throw DataError(path + ": missing 'threshold,precision,recall,f' header");
  }
  int number = 1;
  bool summary = false;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream is(line.substr(1));
      std::map<std::string, double> kv;
      std::string tok;
      while (is >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw DataError(path + ":" + std::to_string(number) + ": bad summary");
        kv[tok.substr(0, eq)] = std::stod(tok.substr(eq + 1));
      }
      for (const char* key : {"ods", "ods_threshold", "ois", "ap"}) {
        if (!kv.count(key)) throw DataError(path + ": summary lacks '" + key + "'");
      }
      report.ods = kv["ods"];
      report.ods_threshold = kv["ods_threshold"];
      report.ois = kv["ois"];
      report.ap = kv["ap"];
      summary = true;
      continue;
    }
    ThresholdStats s;
    char c1, c2, c3;
    std::istringstream is(line);
    if (!(is >> s.threshold >> c1 >> s.precision >> c2 >> s.recall >> c3 >> s.f) || c1 != ',' || c2 != ',' ||
        c3 != ',') {
      throw DataError(path + ":" + std::to_string(number) + ": malformed row");
    }
    report.curve.push_back(s);
  }
  if (!summary) throw DataError(path + ": missing summary line");
  return report;
}

}  // namespace edge
