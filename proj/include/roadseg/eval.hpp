#pragma once

#include <cstdint>
#include <vector>

#include "roadseg/data.hpp"
#include "roadseg/image.hpp"
#include "roadseg/model.hpp"

namespace roadseg {

struct MetricsCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  MetricsCounts& operator+=(const MetricsCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

// precision = TP/(TP+FP); recall = TP/(TP+FN); F1 = 2PR/(P+R);
// AP = (TP+TN)/(TP+FP+TN+FN) (pixel accuracy); FPR = FP/(FP+TN);
// FNR = FN/(FN+TP). Zero denominators yield 0 and set the degenerate flag.
struct MetricsReport {
  MetricsCounts counts;
  double precision = 0, recall = 0, f1 = 0, ap = 0, fpr = 0, fnr = 0;
  bool degenerate = false;
};

MetricsReport metrics_from_counts(const MetricsCounts& c);
MetricsReport compute_metrics(const Mask& pred, const Mask& gt);

// Pixel (r,c) is road iff c >= round(left*width), c <= width-1-round(right*width)
// and r >= height - round(top_upsampled[c]*height). Every road column is a
// contiguous run reaching the bottom row.
Mask mask_from_boundaries(const BoundaryPrediction<float>& pred, int width = kInputWidth,
                          int height = kInputHeight);

// TP green, FP blue, FN red; TN keeps the background pixel (black without one).
ImageU8 confusion_image(const Mask& pred, const Mask& gt, const ImageU8* background = nullptr);

// Streaming per-pixel mean of masks resized to 150x600.
class HeatmapAccumulator {
 public:
  void add(const Mask& m);
  int count() const { return count_; }
  Tensor<float> mean() const;  // 150x600, values in [0,1]

 private:
  std::vector<double> acc_;
  int count_ = 0;
};

Tensor<float> heatmap(const std::vector<Mask>& masks);

enum class FusionMode { union_or, intersection };

struct PyramidOptions {
  bool enabled = true;
  FusionMode fusion = FusionMode::union_or;
};

// Near pass: the full frame resized to 600x150, prediction mapped back to
// full resolution.
BoundaryPrediction<float> predict_boundaries(const ImageU8& image,
                                             const ModelParams<float>& params);
Mask near_pass_mask(const ImageU8& image, const ModelParams<float>& params);

// Crop placement of the far pass: 600x150 at native resolution, horizontally
// centered, vertically centered on the near pass's predicted road top.
struct FarCrop {
  int x = 0, y = 0;
  bool valid = false;
};
FarCrop far_crop_location(const BoundaryPrediction<float>& near_pred, int image_w, int image_h);

// Near pass fused with the far pass (union by default; intersection applies
// inside the far window only). Images smaller than the crop window get the
// near pass alone.
Mask pyramid_predict(const ImageU8& image, const ModelParams<float>& params,
                     const PyramidOptions& opt = {});

}  // namespace roadseg
