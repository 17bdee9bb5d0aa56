#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "roadseg/image.hpp"
#include "roadseg/model.hpp"
#include "roadseg/tensor.hpp"

namespace roadseg {

struct RawScene {
  ImageU8 image;  // RGB
  Mask gt_mask;   // same geometry as image
};

// Boundary regression targets: fractions in [0, 0.5]. Column bins with no
// road get top = 0 (zero height from the bottom edge).
struct BoundaryTargets {
  float left = 0.0f;
  float right = 0.0f;
  std::vector<float> top;  // kSeqLen values
};

struct Sample {
  Tensor<float> input;  // [150, 600, 5], all values in [0,1]
  BoundaryTargets target;
  Mask source_mask;  // 150x600
  int scene_id = -1;
};

// KITTI ground-truth decode rule: a pixel is road iff its blue channel is 255
// (grayscale masks: value 255).
Mask mask_from_gt_image(const ImageU8& gt);

RawScene load_scene(const std::string& image_path, const std::string& gt_path);

// Bilinear resize to 600x150, RGB / 255, plus the normalized target-grid
// coordinate channels (row r -> r/150, column c -> c/600).
Tensor<float> make_input(const ImageU8& image);

BoundaryTargets derive_targets(const Mask& mask);  // mask must be 150x600

// Zero-mean Gaussian noise on the RGB channels only; values stay clamped to
// [0,1]. Coordinate channels are exact by construction and stay untouched.
void add_rgb_noise(Tensor<float>& input, double sigma, std::uint64_t seed);

// Scales image+gt identically, crops a 600x150 window at (dx, dy) in scaled
// coordinates, adds RGB noise, derives targets from the cropped gt.
Sample augment(const RawScene& scene, double scale, int dx, int dy, double noise_sigma,
               std::uint64_t seed);

struct SynthStyle {
  double top_row_lo = 0.52, top_row_hi = 0.72;        // road top edge, fraction of height
  double bottom_width_lo = 0.35, bottom_width_hi = 0.95;  // fraction of width
  double top_width_lo = 0.012, top_width_hi = 0.12;
  int max_occluders = 3;
  double road_fraction_lo = 0.05, road_fraction_hi = 0.6;

  static SynthStyle standard() { return {}; }
  // long, very narrow distant road: lost when the frame is downscaled, visible
  // in a native-resolution crop
  static SynthStyle thin_far() {
    SynthStyle s;
    s.top_row_lo = 0.52;
    s.top_row_hi = 0.58;
    s.top_width_lo = 0.004;
    s.top_width_hi = 0.022;
    return s;
  }
};

// Renders a trapezoidal road scene with textured road/background colors and
// optional occluding rectangles (image only; the mask is the exact trapezoid).
// Deterministic per seed; road fraction kept inside the style's bounds by
// rejection sampling.
RawScene synth_scene(std::uint64_t seed, int width = 1242, int height = 375,
                     const SynthStyle& style = SynthStyle::standard());

struct ScenePaths {
  std::string image;
  std::string gt;
  std::string id;  // image file stem
};

// KITTI road layout: <dir>/image_2/*.{png,ppm} with ground truth
// <dir>/gt_image_2/<prefix>_road_<rest>.{png,ppm}.
std::vector<ScenePaths> scan_dataset(const std::string& dir);

struct SamplePlan {
  bool resize_view = true;   // one full-frame resized sample per scene
  bool window_grid = false;  // scale set crossed with the shifting-window grid
  std::vector<double> scales{0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int step_x = 60, step_y = 20;
  int far_crops = 0;  // native-resolution crops centered on the gt road top
  double noise_sigma = 2e-4;
};

std::vector<Sample> build_samples(const RawScene& scene, int scene_id, const SamplePlan& plan,
                                  std::uint64_t seed);

}  // namespace roadseg
