#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "roadseg/tensor.hpp"

namespace roadseg {

// 8-bit image, row-major [h, w, c] with c = 1 (gray) or 3 (RGB).
struct ImageU8 {
  int h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> data;

  ImageU8() = default;
  ImageU8(int height, int width, int channels)
      : h(height), w(width), c(channels),
        data(static_cast<std::size_t>(height) * width * channels, 0) {}

  std::uint8_t& at(int y, int x, int ch) {
    return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  std::uint8_t at(int y, int x, int ch) const {
    return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  bool empty() const { return data.empty(); }
};

// Binary mask, row-major [h, w]; nonzero = road.
struct Mask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int height, int width) : h(height), w(width),
                                data(static_cast<std::size_t>(height) * width, 0) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * w + x]; }
  bool empty() const { return data.empty(); }
  std::int64_t count() const;

  bool operator==(const Mask& o) const { return h == o.h && w == o.w && data == o.data; }
};

// Decodes PPM (P6), PGM (P5) or PNG, chosen by file content.
ImageU8 read_image(const std::string& path);

void write_ppm(const std::string& path, const ImageU8& img);   // P6, requires c == 3
void write_pgm(const std::string& path, const ImageU8& img);   // P5, requires c == 1
void write_png(const std::string& path, const ImageU8& img);   // gray or RGB

// Picks the writer from the path extension (.png/.ppm/.pgm).
void write_image(const std::string& path, const ImageU8& img);

ImageU8 resize_bilinear(const ImageU8& in, int out_w, int out_h);
Mask resize_mask_nearest(const Mask& in, int out_w, int out_h);

ImageU8 crop(const ImageU8& in, int x, int y, int w, int h);
Mask crop(const Mask& in, int x, int y, int w, int h);

ImageU8 mask_to_gray(const Mask& m);  // 0 / 255

}  // namespace roadseg
