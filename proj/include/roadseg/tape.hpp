#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "roadseg/ops.hpp"
#include "roadseg/tensor.hpp"

namespace roadseg {

// Handle to a value recorded on a Tape.
template <typename T>
struct Val {
  int id = -1;
};

// Reverse-mode tape. Ops append a node as they execute; backward() replays the
// nodes once in reverse order. A value consumed by k ops receives the sum of
// the k gradient contributions. Values are immutable once recorded; a tape is
// built, differentiated and discarded within one training step.
template <typename T>
class Tape {
 public:
  // constant leaf; no gradient is tracked through it
  Val<T> input(Tensor<T> v) { return {push(std::move(v), false)}; }

  // named trainable leaf
  Val<T> param(const std::string& name, Tensor<T> v) {
    for (const auto& [n, id] : named_) {
      if (n == name) throw ShapeError("duplicate parameter name on tape: " + name);
    }
    const int id = push(std::move(v), true);
    named_.emplace_back(name, id);
    return {id};
  }

  const Tensor<T>& value(Val<T> v) const { return slot(v).tensor; }
  bool requires_grad(Val<T> v) const { return slot(v).requires_grad; }
  std::size_t num_ops() const { return nodes_.size(); }

  Val<T> conv2d(Val<T> in, Val<T> kernel, Val<T> bias, ops::Conv2dSpec spec) {
    const Tensor<T>& x = value(in);
    const Tensor<T>& k = value(kernel);
    auto cols = std::make_shared<Tensor<T>>();
    Tensor<T> y = ops::conv2d(x, k, value(bias), spec, cols.get());
    return record({in, kernel, bias}, std::move(y),
                  [xi = in.id, ki = kernel.id, bi = bias.id, spec, cols](
                      const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    const Tensor<T>& x = t.vals_[xi].tensor;
                    const Tensor<T>& k = t.vals_[ki].tensor;
                    const int kh = k.extent(0), kw = k.extent(1);
                    const int cin = k.extent(2), cout = k.extent(3);
                    const int oh = gout.extent(0), ow = gout.extent(1);
                    const std::int64_t pix = static_cast<std::int64_t>(oh) * ow;
                    const std::int64_t kk = static_cast<std::int64_t>(kh) * kw * cin;
                    auto g2 = ops::mat_view(gout, pix, cout);
                    const bool pointwise = ops::is_pointwise(kh, kw, spec);
                    if (t.vals_[ki].requires_grad) {
                      auto gk = ops::mat_view(t.grad_buf(gr, ki), kk, cout);
                      if (pointwise) {
                        gk.noalias() += ops::mat_view(x, pix, cin).transpose() * g2;
                      } else {
                        gk.noalias() += ops::mat_view(*cols, pix, kk).transpose() * g2;
                      }
                    }
                    if (t.vals_[bi].requires_grad) {
                      auto gb = ops::mat_view(t.grad_buf(gr, bi), 1, cout);
                      gb.noalias() += g2.colwise().sum();
                    }
                    if (t.vals_[xi].requires_grad) {
                      Tensor<T>& gx = t.grad_buf(gr, xi);
                      if (pointwise) {
                        ops::mat_view(gx, pix, cin).noalias() +=
                            g2 * ops::mat_view(k, cin, cout).transpose();
                      } else {
                        Tensor<T> gcols({static_cast<int>(pix), static_cast<int>(kk)});
                        ops::mat_view(gcols, pix, kk).noalias() =
                            g2 * ops::mat_view(k, kk, cout).transpose();
                        ops::col2im_add(gcols, kh, kw, spec, oh, ow, gx);
                      }
                    }
                  });
  }

  Val<T> dense(Val<T> x, Val<T> w, Val<T> b) {
    Tensor<T> y = ops::dense(value(x), value(w), value(b));
    return record({x, w, b}, std::move(y),
                  [xi = x.id, wi = w.id, bi = b.id](const Tape& t, const Tensor<T>& gout,
                                                    Grads& gr) {
                    t.dense_backward(gr, xi, wi, bi, gout);
                  });
  }

  Val<T> linear(Val<T> x, Val<T> w) {
    Tensor<T> y = ops::linear(value(x), value(w));
    return record({x, w}, std::move(y),
                  [xi = x.id, wi = w.id](const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    t.dense_backward(gr, xi, wi, -1, gout);
                  });
  }

  Val<T> matmul(Val<T> a, Val<T> b) {
    Tensor<T> y = ops::matmul(value(a), value(b));
    return record({a, b}, std::move(y),
                  [ai = a.id, bi = b.id](const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    const Tensor<T>& a = t.vals_[ai].tensor;
                    const Tensor<T>& b = t.vals_[bi].tensor;
                    const int s = a.extent(0), n = a.extent(1), m = b.extent(1);
                    auto g2 = ops::mat_view(gout, s, m);
                    if (t.vals_[ai].requires_grad) {
                      ops::mat_view(t.grad_buf(gr, ai), s, n).noalias() +=
                          g2 * ops::mat_view(b, n, m).transpose();
                    }
                    if (t.vals_[bi].requires_grad) {
                      ops::mat_view(t.grad_buf(gr, bi), n, m).noalias() +=
                          ops::mat_view(a, s, n).transpose() * g2;
                    }
                  });
  }

  Val<T> add(Val<T> a, Val<T> b) {
    const Tensor<T>&va = value(a), &vb = value(b);
    check_same_shape(va, vb, "add");
    Tensor<T> y(va.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = va[i] + vb[i];
    return record({a, b}, std::move(y),
                  [ai = a.id, bi = b.id](const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    t.add_into(gr, ai, gout, T(1));
                    t.add_into(gr, bi, gout, T(1));
                  });
  }

  Val<T> sub(Val<T> a, Val<T> b) {
    const Tensor<T>&va = value(a), &vb = value(b);
    check_same_shape(va, vb, "sub");
    Tensor<T> y(va.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = va[i] - vb[i];
    return record({a, b}, std::move(y),
                  [ai = a.id, bi = b.id](const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    t.add_into(gr, ai, gout, T(1));
                    t.add_into(gr, bi, gout, T(-1));
                  });
  }

  Val<T> mul(Val<T> a, Val<T> b) {
    const Tensor<T>&va = value(a), &vb = value(b);
    check_same_shape(va, vb, "mul");
    Tensor<T> y(va.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = va[i] * vb[i];
    return record({a, b}, std::move(y),
                  [ai = a.id, bi = b.id](const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    const Tensor<T>& va = t.vals_[ai].tensor;
                    const Tensor<T>& vb = t.vals_[bi].tensor;
                    if (t.vals_[ai].requires_grad) {
                      Tensor<T>& ga = t.grad_buf(gr, ai);
                      for (std::int64_t i = 0; i < gout.numel(); ++i) ga[i] += gout[i] * vb[i];
                    }
                    if (t.vals_[bi].requires_grad) {
                      Tensor<T>& gb = t.grad_buf(gr, bi);
                      for (std::int64_t i = 0; i < gout.numel(); ++i) gb[i] += gout[i] * va[i];
                    }
                  });
  }

  // y = scale * a + shift
  Val<T> affine(Val<T> a, T scale, T shift) {
    const Tensor<T>& va = value(a);
    Tensor<T> y(va.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = scale * va[i] + shift;
    return record({a}, std::move(y),
                  [ai = a.id, scale](const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    t.add_into(gr, ai, gout, scale);
                  });
  }

  Val<T> activation(Val<T> a, ops::Act kind) {
    Tensor<T> y = ops::activation(value(a), kind);
    const bool rg = slot(a).requires_grad;
    const int out_id = push(std::move(y), rg);
    if (rg) {
      // derivative is expressed through the forward output, so capture its id
      nodes_.push_back({out_id, [ai = a.id, oi = out_id, kind](const Tape& t,
                                                               const Tensor<T>& gout, Grads& gr) {
                          if (!t.vals_[ai].requires_grad) return;
                          ops::activation_backward_add(t.vals_[oi].tensor, gout, kind,
                                                       t.grad_buf(gr, ai));
                        }});
    }
    return {out_id};
  }

  Val<T> abs(Val<T> a) {
    const Tensor<T>& va = value(a);
    Tensor<T> y(va.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = va[i] < T(0) ? -va[i] : va[i];
    return record({a}, std::move(y),
                  [ai = a.id](const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    if (!t.vals_[ai].requires_grad) return;
                    const Tensor<T>& va = t.vals_[ai].tensor;
                    Tensor<T>& ga = t.grad_buf(gr, ai);
                    // subgradient 0 at the kink
                    for (std::int64_t i = 0; i < gout.numel(); ++i) {
                      if (va[i] > T(0)) ga[i] += gout[i];
                      else if (va[i] < T(0)) ga[i] -= gout[i];
                    }
                  });
  }

  Val<T> sum(Val<T> a) {
    const Tensor<T>& va = value(a);
    T acc = T(0);
    for (std::int64_t i = 0; i < va.numel(); ++i) acc += va[i];
    return record({a}, Tensor<T>::scalar(acc),
                  [ai = a.id](const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    if (!t.vals_[ai].requires_grad) return;
                    Tensor<T>& ga = t.grad_buf(gr, ai);
                    const T g = gout[0];
                    for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
                  });
  }

  // A[s,m] + broadcast row b[m]
  Val<T> add_rowvec(Val<T> a, Val<T> b) {
    const Tensor<T>&va = value(a), &vb = value(b);
    if (va.rank() != 2 || vb.rank() != 1 || vb.extent(0) != va.extent(1)) {
      throw ShapeError("add_rowvec expects A[s,m] and b[m], got " + shape_str(va.shape()) +
                       ", " + shape_str(vb.shape()));
    }
    const int s = va.extent(0), m = va.extent(1);
    Tensor<T> y(va.shape());
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < m; ++j) y(i, j) = va(i, j) + vb(j);
    return record({a, b}, std::move(y),
                  [ai = a.id, bi = b.id, s, m](const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    t.add_into(gr, ai, gout, T(1));
                    if (t.vals_[bi].requires_grad) {
                      Tensor<T>& gb = t.grad_buf(gr, bi);
                      for (int i = 0; i < s; ++i)
                        for (int j = 0; j < m; ++j) gb[j] += gout(i, j);
                    }
                  });
  }

  Val<T> concat(Val<T> a, Val<T> b) {
    const Tensor<T>&va = value(a), &vb = value(b);
    if (va.rank() != 1 || vb.rank() != 1) throw ShapeError("concat expects rank-1 operands");
    const int na = va.extent(0), nb = vb.extent(0);
    Tensor<T> y({na + nb});
    std::copy(va.data(), va.data() + na, y.data());
    std::copy(vb.data(), vb.data() + nb, y.data() + na);
    return record({a, b}, std::move(y),
                  [ai = a.id, bi = b.id, na, nb](const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    if (t.vals_[ai].requires_grad) {
                      Tensor<T>& ga = t.grad_buf(gr, ai);
                      for (int i = 0; i < na; ++i) ga[i] += gout[i];
                    }
                    if (t.vals_[bi].requires_grad) {
                      Tensor<T>& gb = t.grad_buf(gr, bi);
                      for (int i = 0; i < nb; ++i) gb[i] += gout[na + i];
                    }
                  });
  }

  // r-th row of A[s,m] as a vector [m]
  Val<T> row(Val<T> a, int r) {
    const Tensor<T>& va = value(a);
    if (va.rank() != 2) throw ShapeError("row expects a rank-2 operand");
    if (r < 0 || r >= va.extent(0)) {
      throw ShapeError("row index " + std::to_string(r) + " out of range for " +
                       shape_str(va.shape()));
    }
    const int m = va.extent(1);
    Tensor<T> y({m});
    std::copy(va.data() + static_cast<std::int64_t>(r) * m, va.data() + (r + 1LL) * m, y.data());
    return record({a}, std::move(y),
                  [ai = a.id, r, m](const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    if (!t.vals_[ai].requires_grad) return;
                    Tensor<T>& ga = t.grad_buf(gr, ai);
                    T* dst = ga.data() + static_cast<std::int64_t>(r) * m;
                    for (int i = 0; i < m; ++i) dst[i] += gout[i];
                  });
  }

  Val<T> stack_rows(const std::vector<Val<T>>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows needs at least one row");
    const int m = value(rows[0]).extent(0);
    const int s = static_cast<int>(rows.size());
    Tensor<T> y({s, m});
    std::vector<int> ids(rows.size());
    bool rg = false;
    for (int i = 0; i < s; ++i) {
      const Tensor<T>& r = value(rows[i]);
      if (r.rank() != 1 || r.extent(0) != m) {
        throw ShapeError("stack_rows requires equal-length rank-1 rows");
      }
      std::copy(r.data(), r.data() + m, y.data() + static_cast<std::int64_t>(i) * m);
      ids[i] = rows[i].id;
      rg = rg || vals_[rows[i].id].requires_grad;
    }
    const int out_id = push(std::move(y), rg);
    if (rg) {
      nodes_.push_back({out_id,
                        [ids = std::move(ids), m](const Tape& t, const Tensor<T>& gout,
                                                  Grads& gr) {
                          for (int i = 0; i < static_cast<int>(ids.size()); ++i) {
                            if (!t.vals_[ids[i]].requires_grad) continue;
                            Tensor<T>& g = t.grad_buf(gr, ids[i]);
                            const T* src = gout.data() + static_cast<std::int64_t>(i) * m;
                            for (int j = 0; j < m; ++j) g[j] += src[j];
                          }
                        }});
    }
    return {out_id};
  }

  Val<T> reshape(Val<T> a, std::vector<int> shape) {
    const Tensor<T>& va = value(a);
    Tensor<T> y(std::move(shape), std::vector<T>(va.data(), va.data() + va.numel()));
    return record({a}, std::move(y),
                  [ai = a.id](const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    if (!t.vals_[ai].requires_grad) return;
                    Tensor<T>& ga = t.grad_buf(gr, ai);
                    for (std::int64_t i = 0; i < gout.numel(); ++i) ga[i] += gout[i];
                  });
  }

  Val<T> upsample_linear_1d(Val<T> a, int m) {
    Tensor<T> y = ops::upsample_linear_1d(value(a), m);
    return record({a}, std::move(y),
                  [ai = a.id](const Tape& t, const Tensor<T>& gout, Grads& gr) {
                    if (!t.vals_[ai].requires_grad) return;
                    ops::upsample_linear_1d_backward_add(t.vals_[ai].tensor.extent(0), gout,
                                                         t.grad_buf(gr, ai));
                  });
  }

  // Reverse sweep from a scalar loss. Returns gradients for every named
  // parameter; parameters the loss does not reach get zero gradients.
  std::map<std::string, Tensor<T>> backward(Val<T> loss) const {
    if (loss.id < 0 || loss.id >= static_cast<int>(vals_.size())) {
      throw ShapeError("loss is not a value on this tape");
    }
    const Tensor<T>& lv = vals_[loss.id].tensor;
    if (lv.numel() != 1) {
      throw ShapeError("backward needs a scalar loss, got " + shape_str(lv.shape()));
    }
    Grads gr;
    gr.g.resize(vals_.size());
    gr.has.assign(vals_.size(), 0);
    gr.g[loss.id] = Tensor<T>::full(lv.shape(), T(1));
    gr.has[loss.id] = 1;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!gr.has[it->out]) continue;
      it->bw(*this, gr.g[it->out], gr);
    }
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, id] : named_) {
      if (gr.has[id]) {
        out.emplace(name, std::move(gr.g[id]));
      } else {
        out.emplace(name, Tensor<T>(vals_[id].tensor.shape()));
      }
    }
    return out;
  }

 private:
  struct Slot {
    Tensor<T> tensor;
    bool requires_grad = false;
  };

  struct Grads {
    std::vector<Tensor<T>> g;
    std::vector<char> has;
  };

  struct Node {
    int out;
    std::function<void(const Tape&, const Tensor<T>&, Grads&)> bw;
  };

  const Slot& slot(Val<T> v) const {
    if (v.id < 0 || v.id >= static_cast<int>(vals_.size())) {
      throw ShapeError("value handle is not on this tape");
    }
    return vals_[v.id];
  }

  int push(Tensor<T> v, bool requires_grad) {
    vals_.push_back({std::move(v), requires_grad});
    return static_cast<int>(vals_.size()) - 1;
  }

  template <typename Fn>
  Val<T> record(std::initializer_list<Val<T>> ins, Tensor<T> out, Fn bw) {
    bool rg = false;
    for (Val<T> v : ins) rg = rg || slot(v).requires_grad;
    const int out_id = push(std::move(out), rg);
    if (rg) {
      nodes_.push_back({out_id, std::function<void(const Tape&, const Tensor<T>&, Grads&)>(
                                    std::move(bw))});
    }
    return {out_id};
  }

  // zero-initialized gradient buffer for value id, created on first touch
  Tensor<T>& grad_buf(Grads& gr, int id) const {
    if (!gr.has[id]) {
      gr.g[id] = Tensor<T>(vals_[id].tensor.shape());
      gr.has[id] = 1;
    }
    return gr.g[id];
  }

  void add_into(Grads& gr, int id, const Tensor<T>& gout, T scale) const {
    if (!vals_[id].requires_grad) return;
    Tensor<T>& g = grad_buf(gr, id);
    for (std::int64_t i = 0; i < gout.numel(); ++i) g[i] += scale * gout[i];
  }

  void dense_backward(Grads& gr, int xi, int wi, int bi, const Tensor<T>& gout) const {
    const Tensor<T>& x = vals_[xi].tensor;
    const Tensor<T>& w = vals_[wi].tensor;
    const int n = w.extent(0), m = w.extent(1);
    if (vals_[xi].requires_grad) {
      ops::mat_view(grad_buf(gr, xi), 1, n).noalias() +=
          ops::mat_view(gout, 1, m) * ops::mat_view(w, n, m).transpose();
    }
    if (vals_[wi].requires_grad) {
      ops::mat_view(grad_buf(gr, wi), n, m).noalias() +=
          ops::mat_view(x, n, 1) * ops::mat_view(gout, 1, m);
    }
    if (bi >= 0 && vals_[bi].requires_grad) {
      Tensor<T>& gb = grad_buf(gr, bi);
      for (int j = 0; j < m; ++j) gb[j] += gout[j];
    }
  }

  static void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!a.same_shape(b)) {
      throw ShapeError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
  }

  std::vector<Slot> vals_;
  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, int>> named_;
};

}  // namespace roadseg
