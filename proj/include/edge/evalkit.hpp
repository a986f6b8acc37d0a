#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "edge/tensor.hpp"

namespace edge {

struct EvalConfig {
  double maxdist = 0.0075;         // match tolerance as a fraction of the image diagonal
  std::vector<double> thresholds = default_thresholds();  // strictly increasing in (0, 1)
  double f_beta = 1.0;
  bool apply_nms = true;

  /// k/(count+1) for k = 1..count.
  static std::vector<double> default_thresholds(int count = 99);
  void validate() const;  // throws ConfigError
};

struct MatchCounts {
  std::size_t tp = 0, fp = 0, fn = 0;

  MatchCounts& operator+=(const MatchCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

double precision_of(const MatchCounts& c);
double recall_of(const MatchCounts& c);
double f_measure(double precision, double recall, double beta = 1.0);

/// Non-maximum suppression along the Sobel gradient direction. Accepts 1×H×W
/// or H×W maps and returns the same shape with suppressed pixels set to 0.
/// Plateaus keep exactly one pixel per cross-section.
Tensor nms_thin(const Tensor& edge_map);

/// Tolerance in pixels for a given image size.
double max_distance_px(double maxdist, int height, int width);

/// Greedy one-to-one matching of predicted to ground-truth boundary pixels
/// within a Euclidean distance of `maxdist_px`. Candidate pairs are accepted
/// in order of distance, then predicted index, then ground-truth index.
MatchCounts match_boundaries(const Tensor& pred, const Tensor& gt, double maxdist_px);

struct ThresholdStats {
  double threshold = 0, precision = 0, recall = 0, f = 0;
  MatchCounts counts;
};

struct EvalReport {
  std::vector<ThresholdStats> curve;  // one row per threshold, ascending
  double ods = 0, ods_threshold = 0;
  double ois = 0;
  double ap = 0;
  std::vector<double> per_image_best_f;
};

/// Predictions are thresholded with pred >= t after optional thinning; ground
/// truth is binarized at 0.5.
EvalReport evaluate(std::span<const Tensor> predictions, std::span<const Tensor> ground_truth,
                    const EvalConfig& config = {});

/// Area under the recall-sorted precision/recall samples by the trapezoid rule,
/// starting from recall 0 at the precision of the lowest-recall sample.
double average_precision(const std::vector<ThresholdStats>& curve);

/// CSV with header `threshold,precision,recall,f`, one row per threshold,
/// followed by a `# ods=... ods_threshold=... ois=... ap=...` line.
void export_pr(const EvalReport& report, const std::string& path);
EvalReport load_pr(const std::string& path);

}  // namespace edge
