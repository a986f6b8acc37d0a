#include "edge/datapipe.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "edge/error.hpp"
#include "edge/image_io.hpp"

namespace edge {

namespace fs = std::filesystem;

std::vector<double> AugmentPlan::angles() const {
  std::vector<double> out;
  for (int r = 0; r < rotations; ++r) out.push_back(360.0 * r / rotations);
  return out;
}

int AugmentPlan::factor() const {
  const int halves = split ? 2 : 1;
  return halves * (1 + rotations + static_cast<int>(gammas.size())) * 3;
}

void AugmentPlan::validate() const {
  if (rotations < 0) throw ConfigError("augment.rotations must be >= 0");
  if (crop_size < 1) throw ConfigError("augment.crop must be >= 1");
  for (double g : gammas) {
    if (!(g > 0.0)) throw ConfigError("augment.gammas must be positive");
  }
}

namespace {

Tensor crop_columns(const Tensor& t, int begin, int end) {
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor out(Shape{c, h, end - begin});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = begin; j < end; ++j) out.at(ch, i, j - begin) = t.at(ch, i, j);
  (void)w;
  return out;
}

std::string format_number(double v, int decimals) {
  if (std::abs(v - std::round(v)) < 1e-9) return std::to_string(static_cast<long long>(std::llround(v)));
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

// Exact trigonometry at multiples of 90 degrees keeps those rotations free of
// interpolation error.
void rotation(double angle_deg, double& c, double& s) {
  double a = std::fmod(angle_deg, 360.0);
  if (a < 0) a += 360.0;
  if (a == 0.0) { c = 1; s = 0; }
  else if (a == 90.0) { c = 0; s = 1; }
  else if (a == 180.0) { c = -1; s = 0; }
  else if (a == 270.0) { c = 0; s = -1; }
  else {
    c = std::cos(a * M_PI / 180.0);
    s = std::sin(a * M_PI / 180.0);
  }
}

}  // namespace

std::array<Sample, 2> split_halves(const Sample& sample) {
  const int w = sample.image.dim(2);
  if (w < 2) throw ContractError("split_halves: width must be >= 2");
  const int mid = w / 2;
  return {Sample{crop_columns(sample.image, 0, mid), crop_columns(sample.gt, 0, mid), sample.id + "#0"},
          Sample{crop_columns(sample.image, mid, w), crop_columns(sample.gt, mid, w), sample.id + "#1"}};
}

Sample rotate_center_crop(const Sample& sample, double angle_deg, int crop) {
  const int c = sample.image.dim(0), h = sample.image.dim(1), w = sample.image.dim(2);
  if (crop < 1 || crop > std::min(h, w)) {
    throw ConfigError("crop " + std::to_string(crop) + " does not fit a " + std::to_string(h) + "x" +
                      std::to_string(w) + " image");
  }
  double cs, sn;
  rotation(angle_deg, cs, sn);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const int top = (h - crop) / 2, left = (w - crop) / 2;
  Sample out{Tensor(Shape{c, crop, crop}), Tensor(Shape{1, crop, crop}), sample.id};
  auto in_bounds = [&](int i, int j) { return i >= 0 && i < h && j >= 0 && j < w; };
  for (int y = 0; y < crop; ++y) {
    for (int x = 0; x < crop; ++x) {
      const double dy = y + top - cy, dx = x + left - cx;
      // Inverse rotation: where does this output pixel come from?
      const double sx = cx + cs * dx + sn * dy;
      const double sy = cy - sn * dx + cs * dy;
      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      for (int ch = 0; ch < c; ++ch) {
        double v = 0.0;
        const double wts[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1}, xs[4] = {x0, x0 + 1, x0, x0 + 1};
        for (int t = 0; t < 4; ++t) {
          if (wts[t] != 0.0 && in_bounds(ys[t], xs[t])) v += wts[t] * sample.image.at(ch, ys[t], xs[t]);
        }
        out.image.at(ch, y, x) = static_cast<float>(v);
      }
      const int ny = static_cast<int>(std::lround(sy)), nx = static_cast<int>(std::lround(sx));
      out.gt.at(0, y, x) = in_bounds(ny, nx) ? sample.gt.at(0, ny, nx) : 0.0f;
    }
  }
  return out;
}

Tensor gamma_correct(const Tensor& image, double gamma) {
  if (!(gamma > 0.0)) throw ContractError("gamma must be positive");
  Tensor out(image.shape());
  auto src = image.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = static_cast<float>(std::pow(static_cast<double>(src[i]), gamma));
  return out;
}

Sample flip(const Sample& sample, Flip mode) {
  if (mode == Flip::kIdentity) return Sample{sample.image.clone(), sample.gt.clone(), sample.id};
  auto mirror = [mode](const Tensor& t) {
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out(t.shape());
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          out.at(ch, i, j) = mode == Flip::kHorizontal ? t.at(ch, i, w - 1 - j) : t.at(ch, h - 1 - i, j);
    return out;
  };
  return Sample{mirror(sample.image), mirror(sample.gt), sample.id};
}

std::vector<Sample> expand(const Sample& source, const AugmentPlan& plan) {
  plan.validate();
  std::vector<Sample> halves;
  if (plan.split) {
    for (Sample& s : split_halves(source)) halves.push_back(std::move(s));
  } else {
    halves.push_back(Sample{source.image, source.gt, source.id + "#0"});
  }
  const std::pair<Flip, const char*> flips[] = {
      {Flip::kIdentity, "i"}, {Flip::kHorizontal, "h"}, {Flip::kVertical, "v"}};
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(plan.factor()));
  for (const Sample& half : halves) {
    std::vector<std::pair<std::string, Sample>> variants;
    const Sample plain = rotate_center_crop(half, 0.0, plan.crop_size);
    variants.emplace_back("orig", plain);
    for (double angle : plan.angles()) {
      variants.emplace_back("rot" + format_number(angle, 3), rotate_center_crop(half, angle, plan.crop_size));
    }
    for (double g : plan.gammas) {
      std::ostringstream tag;
      tag << "gamma" << std::fixed << std::setprecision(4) << g;
      variants.emplace_back(tag.str(), Sample{gamma_correct(plain.image, g), plain.gt.clone(), plain.id});
    }
    for (const auto& [tag, variant] : variants) {
      for (const auto& [mode, letter] : flips) {
        Sample s = flip(variant, mode);
        s.id = half.id + "." + tag + ".flip" + letter;
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw DataError(path + ":" + std::to_string(number) + ": expected '<image>\\t<gt>'");
    }
    auto resolve = [&](const std::string& p) {
      const fs::path fp(p);
      return (fp.is_absolute() ? fp : base / fp).string();
    };
    entries.push_back({resolve(line.substr(0, tab)), resolve(line.substr(tab + 1))});
  }
  return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest '" + path + "'");
  for (const auto& e : entries) out << e.image << '\t' << e.gt << '\n';
  if (!out) throw DataError("failed writing manifest '" + path + "'");
}

Sample load_sample(const std::string& image_path, const std::string& gt_path) {
  if (!fs::exists(image_path)) throw DataError("missing image file '" + image_path + "'");
  if (!fs::exists(gt_path)) throw DataError("missing ground-truth file '" + gt_path + "'");
  Sample s{read_png_rgb(image_path), read_png_gray(gt_path), fs::path(image_path).stem().string()};
  if (s.gt.dim(1) != s.image.dim(1) || s.gt.dim(2) != s.image.dim(2)) {
    throw DataError("ground truth '" + gt_path + "' is " + std::to_string(s.gt.dim(1)) + "x" +
                    std::to_string(s.gt.dim(2)) + " but image is " + std::to_string(s.image.dim(1)) + "x" +
                    std::to_string(s.image.dim(2)));
  }
  for (float& v : s.gt.data()) v = v >= 0.5f ? 1.0f : 0.0f;
  return s;
}

std::vector<Sample> load_dataset(const std::string& manifest_path) {
  std::vector<Sample> out;
  for (const ManifestEntry& e : read_manifest(manifest_path)) out.push_back(load_sample(e.image, e.gt));
  return out;
}

}  // namespace edge
