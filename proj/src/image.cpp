#include "roadseg/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <fstream>

namespace roadseg {

std::int64_t Mask::count() const {
  std::int64_t n = 0;
  for (std::uint8_t v : data) n += v ? 1 : 0;
  return n;
}

namespace {

int read_pnm_int(std::istream& is, const std::string& path) {
  // skips whitespace and '#' comments between header tokens
  int ch = is.peek();
  while (ch == '#' || std::isspace(ch)) {
    if (ch == '#') {
      std::string line;
      std::getline(is, line);
    } else {
      is.get();
    }
    ch = is.peek();
  }
  int v = -1;
  if (!(is >> v) || v < 0) throw IoError("bad PNM header in " + path);
  return v;
}

ImageU8 read_pnm(std::ifstream& is, const std::string& path, int channels) {
  const int w = read_pnm_int(is, path);
  const int h = read_pnm_int(is, path);
  const int maxval = read_pnm_int(is, path);
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw IoError("unsupported PNM geometry or depth in " + path);
  }
  is.get();  // single whitespace after maxval
  ImageU8 img(h, w, channels);
  if (!is.read(reinterpret_cast<char*>(img.data.data()),
               static_cast<std::streamsize>(img.data.size()))) {
    throw IoError("truncated PNM payload in " + path);
  }
  return img;
}

ImageU8 read_png_file(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot decode PNG " + path + ": " + image.message);
  }
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  ImageU8 img(static_cast<int>(image.height), static_cast<int>(image.width), gray ? 1 : 3);
  if (!png_image_finish_read(&image, nullptr, img.data.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot read PNG " + path + ": " + msg);
  }
  return img;
}

}  // namespace

ImageU8 read_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image: " + path);
  char m0 = 0, m1 = 0;
  is.get(m0).get(m1);
  if (m0 == 'P' && m1 == '6') return read_pnm(is, path, 3);
  if (m0 == 'P' && m1 == '5') return read_pnm(is, path, 1);
  is.close();
  if (static_cast<unsigned char>(m0) == 0x89 && m1 == 'P') return read_png_file(path);
  throw IoError("unrecognized image format (want PPM/PGM/PNG): " + path);
}

void write_ppm(const std::string& path, const ImageU8& img) {
  if (img.c != 3) throw IoError("write_ppm requires an RGB image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P6\n" << img.w << ' ' << img.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()),
           static_cast<std::streamsize>(img.data.size()));
  if (!os) throw IoError("failed writing " + path);
}

void write_pgm(const std::string& path, const ImageU8& img) {
  if (img.c != 1) throw IoError("write_pgm requires a grayscale image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P5\n" << img.w << ' ' << img.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()),
           static_cast<std::streamsize>(img.data.size()));
  if (!os) throw IoError("failed writing " + path);
}

void write_png(const std::string& path, const ImageU8& img) {
  if (img.c != 1 && img.c != 3) throw IoError("write_png requires gray or RGB");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.w);
  image.height = static_cast<png_uint_32>(img.h);
  image.format = img.c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.data.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path + ": " + image.message);
  }
}

void write_image(const std::string& path, const ImageU8& img) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0) {
    write_png(path, img);
  } else if (img.c == 1) {
    write_pgm(path, img);
  } else {
    write_ppm(path, img);
  }
}

ImageU8 resize_bilinear(const ImageU8& in, int out_w, int out_h) {
  if (in.empty()) throw IoError("resize of empty image");
  if (in.w == out_w && in.h == out_h) return in;
  ImageU8 out(out_h, out_w, in.c);
  const double sx = static_cast<double>(in.w) / out_w;
  const double sy = static_cast<double>(in.h) / out_h;
  for (int y = 0; y < out_h; ++y) {
    // pixel-center mapping
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), in.h - 1);
    const int y1 = std::min(y0 + 1, in.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), in.w - 1);
      const int x1 = std::min(x0 + 1, in.w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < in.c; ++c) {
        const double v = (1 - wy) * ((1 - wx) * in.at(y0, x0, c) + wx * in.at(y0, x1, c)) +
                         wy * ((1 - wx) * in.at(y1, x0, c) + wx * in.at(y1, x1, c));
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

Mask resize_mask_nearest(const Mask& in, int out_w, int out_h) {
  if (in.empty()) throw IoError("resize of empty mask");
  if (in.w == out_w && in.h == out_h) return in;
  Mask out(out_h, out_w);
  const double sx = static_cast<double>(in.w) / out_w;
  const double sy = static_cast<double>(in.h) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const int yy = std::min(static_cast<int>((y + 0.5) * sy), in.h - 1);
    for (int x = 0; x < out_w; ++x) {
      const int xx = std::min(static_cast<int>((x + 0.5) * sx), in.w - 1);
      out.at(y, x) = in.at(yy, xx);
    }
  }
  return out;
}

ImageU8 crop(const ImageU8& in, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || x + w > in.w || y + h > in.h) {
    throw DataError("crop window out of bounds: " + std::to_string(w) + "x" +
                    std::to_string(h) + " at (" + std::to_string(x) + "," + std::to_string(y) +
                    ") in " + std::to_string(in.w) + "x" + std::to_string(in.h));
  }
  ImageU8 out(h, w, in.c);
  for (int yy = 0; yy < h; ++yy) {
    const std::uint8_t* src = &in.data[(static_cast<std::size_t>(y + yy) * in.w + x) * in.c];
    std::copy(src, src + static_cast<std::size_t>(w) * in.c,
              &out.data[static_cast<std::size_t>(yy) * w * in.c]);
  }
  return out;
}

Mask crop(const Mask& in, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || x + w > in.w || y + h > in.h) {
    throw DataError("crop window out of bounds: " + std::to_string(w) + "x" +
                    std::to_string(h) + " at (" + std::to_string(x) + "," + std::to_string(y) +
                    ") in " + std::to_string(in.w) + "x" + std::to_string(in.h));
  }
  Mask out(h, w);
  for (int yy = 0; yy < h; ++yy) {
    const std::uint8_t* src = &in.data[static_cast<std::size_t>(y + yy) * in.w + x];
    std::copy(src, src + w, &out.data[static_cast<std::size_t>(yy) * w]);
  }
  return out;
}

ImageU8 mask_to_gray(const Mask& m) {
  ImageU8 img(m.h, m.w, 1);
  for (std::size_t i = 0; i < m.data.size(); ++i) img.data[i] = m.data[i] ? 255 : 0;
  return img;
}

}  // namespace roadseg
