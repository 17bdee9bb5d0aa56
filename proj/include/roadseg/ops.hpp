#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "roadseg/tensor.hpp"

namespace roadseg::ops {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<EMat<T>> mat_view(Tensor<T>& t, std::int64_t rows, std::int64_t cols) {
  return Eigen::Map<EMat<T>>(t.data(), rows, cols);
}

template <typename T>
Eigen::Map<const EMat<T>> mat_view(const Tensor<T>& t, std::int64_t rows, std::int64_t cols) {
  return Eigen::Map<const EMat<T>>(t.data(), rows, cols);
}

struct Conv2dSpec {
  int sh = 1, sw = 1;  // stride (rows, cols)
  int ph = 0, pw = 0;  // zero padding (rows, cols), symmetric
};

inline int conv_out_extent(int in, int k, int stride, int pad) {
  const int span = in + 2 * pad - k;
  if (span < 0) {
    throw ShapeError("conv kernel extent " + std::to_string(k) + " exceeds padded input " +
                     std::to_string(in + 2 * pad));
  }
  return span / stride + 1;
}

// input [H,W,C] -> matrix [OH*OW, kh*kw*C]; out-of-range taps are zero.
template <typename T>
Tensor<T> im2col(const Tensor<T>& in, int kh, int kw, const Conv2dSpec& s, int oh, int ow) {
  const int H = in.extent(0), W = in.extent(1), C = in.extent(2);
  Tensor<T> cols({oh * ow, kh * kw * C});
  T* dst = cols.data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int dy = 0; dy < kh; ++dy) {
        const int y = oy * s.sh + dy - s.ph;
        for (int dx = 0; dx < kw; ++dx) {
          const int x = ox * s.sw + dx - s.pw;
          if (y >= 0 && y < H && x >= 0 && x < W) {
            const T* src = in.data() + (static_cast<std::int64_t>(y) * W + x) * C;
            std::copy(src, src + C, dst);
          } else {
            std::fill(dst, dst + C, T(0));
          }
          dst += C;
        }
      }
    }
  }
  return cols;
}

// scatter-add transpose of im2col; accumulates into grad_in (shape [H,W,C])
template <typename T>
void col2im_add(const Tensor<T>& cols, int kh, int kw, const Conv2dSpec& s, int oh, int ow,
                Tensor<T>& grad_in) {
  const int H = grad_in.extent(0), W = grad_in.extent(1), C = grad_in.extent(2);
  const T* src = cols.data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int dy = 0; dy < kh; ++dy) {
        const int y = oy * s.sh + dy - s.ph;
        for (int dx = 0; dx < kw; ++dx) {
          const int x = ox * s.sw + dx - s.pw;
          if (y >= 0 && y < H && x >= 0 && x < W) {
            T* dst = grad_in.data() + (static_cast<std::int64_t>(y) * W + x) * C;
            for (int c = 0; c < C; ++c) dst[c] += src[c];
          }
          src += C;
        }
      }
    }
  }
}

inline bool is_pointwise(int kh, int kw, const Conv2dSpec& s) {
  return kh == 1 && kw == 1 && s.sh == 1 && s.sw == 1 && s.ph == 0 && s.pw == 0;
}

template <typename T>
void check_conv_args(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias) {
  if (input.rank() != 3) throw ShapeError("conv2d input must be rank 3 [H,W,C], got " +
                                          shape_str(input.shape()));
  if (kernel.rank() != 4) throw ShapeError("conv2d kernel must be rank 4 [kh,kw,Cin,Cout], got " +
                                           shape_str(kernel.shape()));
  if (kernel.extent(2) != input.extent(2)) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(input.extent(2)) +
                     " channels, kernel expects " + std::to_string(kernel.extent(2)));
  }
  if (bias.rank() != 1 || bias.extent(0) != kernel.extent(3)) {
    throw ShapeError("conv2d bias must be [Cout]=" + std::to_string(kernel.extent(3)) + ", got " +
                     shape_str(bias.shape()));
  }
}

// out[y,x,co] = bias[co] + sum_{dy,dx,ci} in_padded[y*sh+dy, x*sw+dx, ci] * k[dy,dx,ci,co]
// When cols_out is non-null the im2col matrix is stored there for reuse by the
// backward pass (empty for the pointwise fast path, which needs no im2col).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 const Conv2dSpec& s, Tensor<T>* cols_out = nullptr) {
  check_conv_args(input, kernel, bias);
  const int H = input.extent(0), W = input.extent(1);
  const int kh = kernel.extent(0), kw = kernel.extent(1);
  const int cin = kernel.extent(2), cout = kernel.extent(3);
  const int oh = conv_out_extent(H, kh, s.sh, s.ph);
  const int ow = conv_out_extent(W, kw, s.sw, s.pw);

  Tensor<T> out({oh, ow, cout});
  auto k2 = mat_view(kernel, static_cast<std::int64_t>(kh) * kw * cin, cout);
  auto o2 = mat_view(out, static_cast<std::int64_t>(oh) * ow, cout);
  if (is_pointwise(kh, kw, s)) {
    o2.noalias() = mat_view(input, static_cast<std::int64_t>(H) * W, cin) * k2;
  } else {
    Tensor<T> cols = im2col(input, kh, kw, s, oh, ow);
    o2.noalias() = mat_view(cols, static_cast<std::int64_t>(oh) * ow, kh * kw * cin) * k2;
    if (cols_out) *cols_out = std::move(cols);
  }
  auto bv = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data(), cout);
  o2.rowwise() += bv;
  return out;
}

// out[j] = b[j] + sum_i x[i] * w[i,j]
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 1 || w.rank() != 2 || b.rank() != 1) {
    throw ShapeError("dense expects x[n], w[n,m], b[m]; got " + shape_str(x.shape()) + ", " +
                     shape_str(w.shape()) + ", " + shape_str(b.shape()));
  }
  if (w.extent(0) != x.extent(0) || w.extent(1) != b.extent(0)) {
    throw ShapeError("dense dimension mismatch: x" + shape_str(x.shape()) + " w" +
                     shape_str(w.shape()) + " b" + shape_str(b.shape()));
  }
  const int n = x.extent(0), m = w.extent(1);
  Tensor<T> out({m});
  mat_view(out, 1, m).noalias() = mat_view(x, 1, n) * mat_view(w, n, m);
  for (int j = 0; j < m; ++j) out[j] += b[j];
  return out;
}

// out[j] = sum_i x[i] * w[i,j]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.rank() != 1 || w.rank() != 2 || w.extent(0) != x.extent(0)) {
    throw ShapeError("linear dimension mismatch: x" + shape_str(x.shape()) + " w" +
                     shape_str(w.shape()));
  }
  const int n = x.extent(0), m = w.extent(1);
  Tensor<T> out({m});
  mat_view(out, 1, m).noalias() = mat_view(x, 1, n) * mat_view(w, n, m);
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  }
  Tensor<T> out({a.extent(0), b.extent(1)});
  mat_view(out, a.extent(0), b.extent(1)).noalias() =
      mat_view(a, a.extent(0), a.extent(1)) * mat_view(b, b.extent(0), b.extent(1));
  return out;
}

enum class Act { sigmoid, tanh, relu };

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act kind) {
  Tensor<T> out(x.shape());
  const std::int64_t n = x.numel();
  switch (kind) {
    case Act::sigmoid:
      for (std::int64_t i = 0; i < n; ++i) out[i] = sigmoid(x[i]);
      break;
    case Act::tanh:
      for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
      break;
    case Act::relu:
      for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
      break;
  }
  return out;
}

// d(act)/dx expressed through the forward output y; accumulates gout*act'(x) into gin.
template <typename T>
void activation_backward_add(const Tensor<T>& y, const Tensor<T>& gout, Act kind, Tensor<T>& gin) {
  const std::int64_t n = y.numel();
  switch (kind) {
    case Act::sigmoid:
      for (std::int64_t i = 0; i < n; ++i) gin[i] += gout[i] * y[i] * (T(1) - y[i]);
      break;
    case Act::tanh:
      for (std::int64_t i = 0; i < n; ++i) gin[i] += gout[i] * (T(1) - y[i] * y[i]);
      break;
    case Act::relu:
      for (std::int64_t i = 0; i < n; ++i) gin[i] += y[i] > T(0) ? gout[i] : T(0);
      break;
  }
}

// Linear interpolation with endpoints aligned: out[0] = x[0], out[m-1] = x[n-1].
template <typename T>
Tensor<T> upsample_linear_1d(const Tensor<T>& x, int m) {
  if (x.rank() != 1) throw ShapeError("upsample_linear_1d expects rank-1 input");
  const int n = x.extent(0);
  if (n < 2) throw ShapeError("upsample_linear_1d needs input length >= 2, got " +
                              std::to_string(n));
  if (m < n) throw ShapeError("upsample_linear_1d target length " + std::to_string(m) +
                              " < input length " + std::to_string(n));
  Tensor<T> out({m});
  for (int i = 0; i < m; ++i) {
    const double pos = static_cast<double>(i) * (n - 1) / (m - 1);
    int k = static_cast<int>(pos);
    if (k > n - 2) k = n - 2;
    const double f = pos - k;
    out[i] = static_cast<T>((1.0 - f) * x[k] + f * x[k + 1]);
  }
  return out;
}

template <typename T>
void upsample_linear_1d_backward_add(int n, const Tensor<T>& gout, Tensor<T>& gin) {
  const int m = gout.extent(0);
  for (int i = 0; i < m; ++i) {
    const double pos = static_cast<double>(i) * (n - 1) / (m - 1);
    int k = static_cast<int>(pos);
    if (k > n - 2) k = n - 2;
    const double f = pos - k;
    gin[k] += static_cast<T>((1.0 - f) * gout[i]);
    gin[k + 1] += static_cast<T>(f * gout[i]);
  }
}

}  // namespace roadseg::ops
