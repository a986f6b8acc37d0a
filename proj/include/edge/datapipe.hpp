#pragma once

#include <array>
#include <string>
#include <vector>

#include "edge/tensor.hpp"

namespace edge {

struct Sample {
  Tensor image;  // 3×H×W in [0, 1]
  Tensor gt;     // 1×H×W, values in {0, 1}
  std::string id;
};

/// Offline augmentation recipe. Every source is split into width halves; each
/// half yields one plain center crop, one rotated crop per angle and one
/// gamma-corrected crop per gamma, and each of those appears unflipped,
/// horizontally flipped and vertically flipped.
struct AugmentPlan {
  int rotations = 15;  // angles are the multiples of 360/rotations degrees
  int crop_size = 256;
  std::vector<double> gammas{0.3030, 0.6060};
  bool split = true;

  std::vector<double> angles() const;
  /// Samples emitted per source.
  int factor() const;
  void validate() const;  // throws ConfigError
};

enum class Flip { kIdentity, kHorizontal, kVertical };

/// Left half [0, W/2) and right half [W/2, W), floor split.
std::array<Sample, 2> split_halves(const Sample& sample);

/// Rotates about the image center (bilinear for the image, nearest neighbor
/// for the ground truth, zero outside) and keeps the central crop×crop window.
Sample rotate_center_crop(const Sample& sample, double angle_deg, int crop);

Tensor gamma_correct(const Tensor& image, double gamma);

Sample flip(const Sample& sample, Flip mode);

/// Every augmented variant of one source, ids following
/// `<src>#<half>.<rot<angle>|gamma<g>|orig>.flip<i|h|v>`.
std::vector<Sample> expand(const Sample& source, const AugmentPlan& plan);

struct ManifestEntry {
  std::string image;
  std::string gt;
};

/// Tab-separated image/gt path pairs, one per line; relative paths resolve
/// against the manifest's directory. Blank lines and '#' comments are skipped.
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

/// Decodes one image/gt pair; gt is binarized at 0.5.
Sample load_sample(const std::string& image_path, const std::string& gt_path);

std::vector<Sample> load_dataset(const std::string& manifest_path);

}  // namespace edge
