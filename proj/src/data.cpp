#include "roadseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "roadseg/rng.hpp"

namespace roadseg {

namespace fs = std::filesystem;

Mask mask_from_gt_image(const ImageU8& gt) {
  Mask m(gt.h, gt.w);
  for (int y = 0; y < gt.h; ++y) {
    for (int x = 0; x < gt.w; ++x) {
      const std::uint8_t v = gt.c == 3 ? gt.at(y, x, 2) : gt.at(y, x, 0);
      m.at(y, x) = v == 255 ? 1 : 0;
    }
  }
  return m;
}

RawScene load_scene(const std::string& image_path, const std::string& gt_path) {
  ImageU8 image = read_image(image_path);
  if (image.c != 3) throw DataError("scene image must be RGB: " + image_path);
  ImageU8 gt = read_image(gt_path);
  if (image.w != gt.w || image.h != gt.h) {
    throw DataError("image/gt dimension mismatch: " + image_path + " is " +
                    std::to_string(image.w) + "x" + std::to_string(image.h) + ", " + gt_path +
                    " is " + std::to_string(gt.w) + "x" + std::to_string(gt.h));
  }
  return {std::move(image), mask_from_gt_image(gt)};
}

Tensor<float> make_input(const ImageU8& image) {
  if (image.empty() || image.c != 3) throw DataError("make_input needs a non-empty RGB image");
  const ImageU8 r = resize_bilinear(image, kInputWidth, kInputHeight);
  Tensor<float> out({kInputHeight, kInputWidth, kInputChannels});
  for (int y = 0; y < kInputHeight; ++y) {
    for (int x = 0; x < kInputWidth; ++x) {
      out(y, x, 0) = r.at(y, x, 0) / 255.0f;
      out(y, x, 1) = r.at(y, x, 1) / 255.0f;
      out(y, x, 2) = r.at(y, x, 2) / 255.0f;
      out(y, x, 3) = static_cast<float>(y) / kInputHeight;
      out(y, x, 4) = static_cast<float>(x) / kInputWidth;
    }
  }
  return out;
}

BoundaryTargets derive_targets(const Mask& mask) {
  if (mask.h != kInputHeight || mask.w != kInputWidth) {
    throw ShapeError("derive_targets expects a 150x600 mask, got " + std::to_string(mask.h) +
                     "x" + std::to_string(mask.w));
  }
  BoundaryTargets t;
  t.top.assign(kSeqLen, 0.0f);
  int left_col = -1, right_col = -1;
  for (int x = 0; x < mask.w && left_col < 0; ++x)
    for (int y = 0; y < mask.h; ++y)
      if (mask.at(y, x)) {
        left_col = x;
        break;
      }
  if (left_col < 0) {  // empty mask
    t.left = 0.5f;
    t.right = 0.5f;
    return t;
  }
  for (int x = mask.w - 1; x >= 0 && right_col < 0; --x)
    for (int y = 0; y < mask.h; ++y)
      if (mask.at(y, x)) {
        right_col = x;
        break;
      }
  auto clamp_half = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 0.5)); };
  t.left = clamp_half(static_cast<double>(left_col) / kInputWidth);
  t.right = clamp_half(static_cast<double>(kInputWidth - 1 - right_col) / kInputWidth);
  const int bin_w = kInputWidth / kSeqLen;
  for (int b = 0; b < kSeqLen; ++b) {
    int top_row = -1;
    for (int y = 0; y < mask.h && top_row < 0; ++y)
      for (int x = b * bin_w; x < (b + 1) * bin_w; ++x)
        if (mask.at(y, x)) {
          top_row = y;
          break;
        }
    if (top_row >= 0) {
      t.top[static_cast<std::size_t>(b)] =
          clamp_half(static_cast<double>(kInputHeight - top_row) / kInputHeight);
    }
  }
  return t;
}

void add_rgb_noise(Tensor<float>& input, double sigma, std::uint64_t seed) {
  if (sigma <= 0.0) return;
  Rng rng(seed);
  for (int y = 0; y < input.extent(0); ++y)
    for (int x = 0; x < input.extent(1); ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = input(y, x, c) + rng.normal(0.0, sigma);
        input(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
}

Sample augment(const RawScene& scene, double scale, int dx, int dy, double noise_sigma,
               std::uint64_t seed) {
  if (scale < 0.5 || scale > 1.0) {
    throw DataError("augment scale must be in [0.5, 1.0], got " + std::to_string(scale));
  }
  const int sw = scale == 1.0 ? scene.image.w
                              : static_cast<int>(std::lround(scene.image.w * scale));
  const int sh = scale == 1.0 ? scene.image.h
                              : static_cast<int>(std::lround(scene.image.h * scale));
  if (dx < 0 || dy < 0 || dx + kInputWidth > sw || dy + kInputHeight > sh) {
    throw DataError("augment window 600x150 at (" + std::to_string(dx) + "," +
                    std::to_string(dy) + ") does not fit the scaled image " +
                    std::to_string(sw) + "x" + std::to_string(sh));
  }
  const ImageU8 scaled = scale == 1.0 ? scene.image : resize_bilinear(scene.image, sw, sh);
  const Mask scaled_gt = scale == 1.0 ? scene.gt_mask : resize_mask_nearest(scene.gt_mask, sw, sh);
  Sample s;
  s.source_mask = crop(scaled_gt, dx, dy, kInputWidth, kInputHeight);
  s.input = make_input(crop(scaled, dx, dy, kInputWidth, kInputHeight));
  add_rgb_noise(s.input, noise_sigma, seed);
  s.target = derive_targets(s.source_mask);
  return s;
}

namespace {

struct Trapezoid {
  int y_top;
  double left_top, right_top, left_bot, right_bot;

  // road edges at row y, linear between the top and bottom edges
  void edges(int y, int height, int width, int* xl, int* xr) const {
    const double f = y == height - 1 ? 1.0
                                     : static_cast<double>(y - y_top) / (height - 1 - y_top);
    double l = left_top + f * (left_bot - left_top);
    double r = right_top + f * (right_bot - right_top);
    *xl = std::clamp(static_cast<int>(std::lround(l)), 0, width - 1);
    *xr = std::clamp(static_cast<int>(std::lround(r)), 0, width - 1);
  }
};

}  // namespace

RawScene synth_scene(std::uint64_t seed, int width, int height, const SynthStyle& style) {
  Rng rng(seed);
  Trapezoid tz{};
  // rejection-sample geometry until the road fraction is inside bounds
  for (int attempt = 0; attempt < 64; ++attempt) {
    tz.y_top = static_cast<int>(std::lround(height * rng.uniform(style.top_row_lo,
                                                                 style.top_row_hi)));
    const double bw = width * rng.uniform(style.bottom_width_lo, style.bottom_width_hi);
    const double tw = width * rng.uniform(style.top_width_lo, style.top_width_hi);
    const double bc = width * rng.uniform(0.35, 0.65);
    double tc = bc + width * rng.uniform(-0.08, 0.08);
    tc = std::clamp(tc, 0.08 * width + tw / 2, 0.92 * width - tw / 2);
    tz.left_top = tc - tw / 2;
    tz.right_top = tc + tw / 2;
    tz.left_bot = bc - bw / 2;
    tz.right_bot = bc + bw / 2;
    std::int64_t road = 0;
    for (int y = tz.y_top; y < height; ++y) {
      int xl, xr;
      tz.edges(y, height, width, &xl, &xr);
      road += xr - xl + 1;
    }
    const double frac = static_cast<double>(road) / (static_cast<double>(width) * height);
    if (frac >= style.road_fraction_lo && frac <= style.road_fraction_hi) break;
  }

  RawScene scene;
  scene.image = ImageU8(height, width, 3);
  scene.gt_mask = Mask(height, width);

  const int horizon = std::max(1, tz.y_top - static_cast<int>(std::lround(
                                                height * rng.uniform(0.03, 0.1))));
  const double sky_r = rng.uniform(110, 180), sky_g = rng.uniform(140, 200),
               sky_b = rng.uniform(180, 240);
  const double gnd_r = rng.uniform(60, 130), gnd_g = rng.uniform(90, 160),
               gnd_b = rng.uniform(40, 90);
  const double road_base = rng.uniform(70, 135);
  const double texture = rng.uniform(4, 14);

  for (int y = 0; y < height; ++y) {
    int xl = width, xr = -1;
    const bool road_row = y >= tz.y_top;
    if (road_row) tz.edges(y, height, width, &xl, &xr);
    for (int x = 0; x < width; ++x) {
      double r, g, b;
      if (road_row && x >= xl && x <= xr) {
        const double v = road_base + rng.normal(0.0, texture);
        r = g = b = v;
        scene.gt_mask.at(y, x) = 1;
      } else if (y < horizon) {
        const double f = static_cast<double>(y) / horizon;
        r = sky_r + f * 30 + rng.normal(0.0, 3.0);
        g = sky_g + f * 25 + rng.normal(0.0, 3.0);
        b = sky_b + f * 10 + rng.normal(0.0, 3.0);
      } else {
        r = gnd_r + rng.normal(0.0, texture);
        g = gnd_g + rng.normal(0.0, texture);
        b = gnd_b + rng.normal(0.0, texture);
      }
      scene.image.at(y, x, 0) = static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
      scene.image.at(y, x, 1) = static_cast<std::uint8_t>(std::clamp(g, 0.0, 255.0));
      scene.image.at(y, x, 2) = static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
    }
  }

  // dashed center line along the trapezoid axis
  if (rng.uniform() < 0.8) {
    for (int y = tz.y_top; y < height; ++y) {
      if ((y / 8) % 2 == 0) continue;
      int xl, xr;
      tz.edges(y, height, width, &xl, &xr);
      if (xr - xl < 6) continue;
      const int cx = (xl + xr) / 2;
      const int half = std::max(1, (xr - xl) / 120);
      for (int x = std::max(xl, cx - half); x <= std::min(xr, cx + half); ++x) {
        scene.image.at(y, x, 0) = 230;
        scene.image.at(y, x, 1) = 230;
        scene.image.at(y, x, 2) = 225;
      }
    }
  }

  // occluding rectangles perturb the image only; the mask stays the trapezoid
  const int n_occ = static_cast<int>(rng.uniform_int(0, style.max_occluders));
  for (int i = 0; i < n_occ; ++i) {
    const int ow = static_cast<int>(std::lround(width * rng.uniform(0.02, 0.1)));
    const int oh = static_cast<int>(std::lround(height * rng.uniform(0.04, 0.16)));
    const int ox = static_cast<int>(rng.uniform_int(0, std::max(0, width - ow - 1)));
    const int oy = static_cast<int>(rng.uniform_int(height / 3, std::max(height / 3, height - oh - 1)));
    const double cr = rng.uniform(20, 235), cg = rng.uniform(20, 235), cb = rng.uniform(20, 235);
    for (int y = oy; y < std::min(height, oy + oh); ++y)
      for (int x = ox; x < std::min(width, ox + ow); ++x) {
        scene.image.at(y, x, 0) = static_cast<std::uint8_t>(cr);
        scene.image.at(y, x, 1) = static_cast<std::uint8_t>(cg);
        scene.image.at(y, x, 2) = static_cast<std::uint8_t>(cb);
      }
  }
  return scene;
}

std::vector<ScenePaths> scan_dataset(const std::string& dir) {
  const fs::path image_dir = fs::path(dir) / "image_2";
  const fs::path gt_dir = fs::path(dir) / "gt_image_2";
  if (!fs::is_directory(image_dir)) {
    throw DataError("dataset has no image_2 directory: " + dir);
  }
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(image_dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".png" || ext == ".ppm") images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  std::vector<ScenePaths> out;
  for (const auto& img : images) {
    const std::string stem = img.stem().string();
    // KITTI gt naming inserts "road" after the category prefix:
    // um_000000 -> um_road_000000 (synth_000000 -> synth_road_000000)
    const auto us = stem.find('_');
    const std::string gt_stem =
        us == std::string::npos ? stem + "_road"
                                : stem.substr(0, us) + "_road" + stem.substr(us);
    std::string gt_path;
    for (const char* ext : {".png", ".ppm"}) {
      const fs::path cand = gt_dir / (gt_stem + ext);
      if (fs::exists(cand)) {
        gt_path = cand.string();
        break;
      }
    }
    if (gt_path.empty()) continue;
    out.push_back({img.string(), gt_path, stem});
  }
  return out;
}

std::vector<Sample> build_samples(const RawScene& scene, int scene_id, const SamplePlan& plan,
                                  std::uint64_t seed) {
  std::vector<Sample> out;
  std::uint64_t stream = 0;
  if (plan.resize_view) {
    Sample s;
    s.source_mask = resize_mask_nearest(scene.gt_mask, kInputWidth, kInputHeight);
    s.input = make_input(scene.image);
    add_rgb_noise(s.input, plan.noise_sigma, Rng::mix(seed, stream++));
    s.target = derive_targets(s.source_mask);
    s.scene_id = scene_id;
    out.push_back(std::move(s));
  }
  if (plan.window_grid) {
    for (double scale : plan.scales) {
      const int sw = static_cast<int>(std::lround(scene.image.w * scale));
      const int sh = static_cast<int>(std::lround(scene.image.h * scale));
      for (int dy = 0; dy + kInputHeight <= sh; dy += plan.step_y) {
        for (int dx = 0; dx + kInputWidth <= sw; dx += plan.step_x) {
          Sample s = augment(scene, scale, dx, dy, plan.noise_sigma, Rng::mix(seed, stream++));
          s.scene_id = scene_id;
          out.push_back(std::move(s));
        }
      }
    }
  }
  if (plan.far_crops > 0 && scene.image.w >= kInputWidth && scene.image.h >= kInputHeight) {
    // crops mimicking the far pass of pyramid inference: native resolution,
    // horizontally centered, vertically centered on the gt road top
    int top_row = scene.image.h - 1;
    bool found = false;
    for (int y = 0; y < scene.image.h && !found; ++y)
      for (int x = 0; x < scene.image.w; ++x)
        if (scene.gt_mask.at(y, x)) {
          top_row = y;
          found = true;
          break;
        }
    Rng rng(Rng::mix(seed, 0x0fa2c205u));
    for (int i = 0; i < plan.far_crops; ++i) {
      const int jx = static_cast<int>(rng.uniform_int(-40, 40));
      const int jy = static_cast<int>(rng.uniform_int(-15, 15));
      const int dx = std::clamp((scene.image.w - kInputWidth) / 2 + jx, 0,
                                scene.image.w - kInputWidth);
      const int dy = std::clamp(top_row - kInputHeight / 2 + jy, 0,
                                scene.image.h - kInputHeight);
      Sample s = augment(scene, 1.0, dx, dy, plan.noise_sigma, Rng::mix(seed, stream++));
      s.scene_id = scene_id;
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace roadseg
