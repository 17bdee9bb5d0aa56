#include "roadseg/eval.hpp"

#include <algorithm>
#include <cmath>

namespace roadseg {

MetricsReport metrics_from_counts(const MetricsCounts& c) {
  MetricsReport r;
  r.counts = c;
  auto frac = [&r](std::uint64_t num, std::uint64_t den) {
    if (den == 0) {
      r.degenerate = true;
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  r.precision = frac(c.tp, c.tp + c.fp);
  r.recall = frac(c.tp, c.tp + c.fn);
  if (r.precision + r.recall > 0.0) {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  } else {
    r.f1 = 0.0;
    r.degenerate = true;
  }
  r.ap = frac(c.tp + c.tn, c.total());
  r.fpr = frac(c.fp, c.fp + c.tn);
  r.fnr = frac(c.fn, c.fn + c.tp);
  return r;
}

MetricsReport compute_metrics(const Mask& pred, const Mask& gt) {
  if (pred.h != gt.h || pred.w != gt.w) {
    throw ShapeError("compute_metrics mask shape mismatch: " + std::to_string(pred.h) + "x" +
                     std::to_string(pred.w) + " vs " + std::to_string(gt.h) + "x" +
                     std::to_string(gt.w));
  }
  MetricsCounts c;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool g = gt.data[i] != 0;
    if (p && g) ++c.tp;
    else if (p && !g) ++c.fp;
    else if (!p && g) ++c.fn;
    else ++c.tn;
  }
  return metrics_from_counts(c);
}

Mask mask_from_boundaries(const BoundaryPrediction<float>& pred, int width, int height) {
  std::vector<float> curve;
  if (static_cast<int>(pred.top_upsampled.size()) == width) {
    curve = pred.top_upsampled;
  } else {
    Tensor<float> top({static_cast<int>(pred.top.size())},
                      std::vector<float>(pred.top.begin(), pred.top.end()));
    Tensor<float> up = ops::upsample_linear_1d(top, width);
    curve.assign(up.data(), up.data() + up.numel());
  }
  Mask m(height, width);
  const int c0 = std::max(0, static_cast<int>(std::lround(pred.left * width)));
  const int c1 = std::min(width - 1,
                          width - 1 - static_cast<int>(std::lround(pred.right * width)));
  for (int c = c0; c <= c1; ++c) {
    const int r0 = height - static_cast<int>(std::lround(curve[static_cast<std::size_t>(c)] * height));
    for (int r = std::max(0, r0); r < height; ++r) m.at(r, c) = 1;
  }
  return m;
}

ImageU8 confusion_image(const Mask& pred, const Mask& gt, const ImageU8* background) {
  if (pred.h != gt.h || pred.w != gt.w) {
    throw ShapeError("confusion_image mask shape mismatch");
  }
  if (background && (background->h != pred.h || background->w != pred.w || background->c != 3)) {
    throw ShapeError("confusion_image background must be RGB of the mask size");
  }
  ImageU8 img(pred.h, pred.w, 3);
  for (int y = 0; y < pred.h; ++y) {
    for (int x = 0; x < pred.w; ++x) {
      const bool p = pred.at(y, x) != 0;
      const bool g = gt.at(y, x) != 0;
      std::uint8_t r = 0, gg = 0, b = 0;
      if (p && g) {
        gg = 255;  // true positive
      } else if (p) {
        b = 255;  // false positive
      } else if (g) {
        r = 255;  // false negative
      } else if (background) {
        r = background->at(y, x, 0);
        gg = background->at(y, x, 1);
        b = background->at(y, x, 2);
      }
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = gg;
      img.at(y, x, 2) = b;
    }
  }
  return img;
}

void HeatmapAccumulator::add(const Mask& m) {
  if (m.empty()) throw DataError("heatmap: empty mask");
  if (acc_.empty()) acc_.assign(static_cast<std::size_t>(kInputHeight) * kInputWidth, 0.0);
  const Mask r = resize_mask_nearest(m, kInputWidth, kInputHeight);
  for (std::size_t i = 0; i < acc_.size(); ++i) acc_[i] += r.data[i] ? 1.0 : 0.0;
  ++count_;
}

Tensor<float> HeatmapAccumulator::mean() const {
  if (count_ == 0) throw DataError("heatmap over an empty dataset");
  Tensor<float> out({kInputHeight, kInputWidth});
  for (std::size_t i = 0; i < acc_.size(); ++i) {
    out[static_cast<std::int64_t>(i)] = static_cast<float>(acc_[i] / count_);
  }
  return out;
}

Tensor<float> heatmap(const std::vector<Mask>& masks) {
  HeatmapAccumulator acc;
  for (const Mask& m : masks) acc.add(m);
  return acc.mean();
}

BoundaryPrediction<float> predict_boundaries(const ImageU8& image,
                                             const ModelParams<float>& params) {
  return forward(make_input(image), params);
}

Mask near_pass_mask(const ImageU8& image, const ModelParams<float>& params) {
  const Mask m = mask_from_boundaries(predict_boundaries(image, params));
  return resize_mask_nearest(m, image.w, image.h);
}

FarCrop far_crop_location(const BoundaryPrediction<float>& near_pred, int image_w, int image_h) {
  FarCrop fc;
  if (image_w < kInputWidth || image_h < kInputHeight) return fc;
  float top_max = 0.0f;
  for (float v : near_pred.top_upsampled) top_max = std::max(top_max, v);
  const int top_row_600 =
      std::clamp(kInputHeight - static_cast<int>(std::lround(top_max * kInputHeight)), 0,
                 kInputHeight - 1);
  const int top_row_full =
      static_cast<int>(std::lround(top_row_600 * static_cast<double>(image_h) / kInputHeight));
  fc.x = (image_w - kInputWidth) / 2;
  fc.y = std::clamp(top_row_full - kInputHeight / 2, 0, image_h - kInputHeight);
  fc.valid = true;
  return fc;
}

Mask pyramid_predict(const ImageU8& image, const ModelParams<float>& params,
                     const PyramidOptions& opt) {
  const BoundaryPrediction<float> near_pred = predict_boundaries(image, params);
  Mask near = resize_mask_nearest(mask_from_boundaries(near_pred), image.w, image.h);
  if (!opt.enabled) return near;
  const FarCrop fc = far_crop_location(near_pred, image.w, image.h);
  if (!fc.valid) return near;  // image smaller than the crop window

  const ImageU8 window = crop(image, fc.x, fc.y, kInputWidth, kInputHeight);
  const Mask far = mask_from_boundaries(forward(make_input(window), params));

  Mask fused = near;
  for (int y = 0; y < kInputHeight; ++y) {
    for (int x = 0; x < kInputWidth; ++x) {
      std::uint8_t& dst = fused.at(fc.y + y, fc.x + x);
      if (opt.fusion == FusionMode::union_or) {
        dst = dst || far.at(y, x);
      } else {
        dst = dst && far.at(y, x);
      }
    }
  }
  return fused;
}

}  // namespace roadseg
