// Copyright 2026 The qvec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "qvec/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qvec::nn {
namespace {

struct SeqDims {
  std::size_t batch, time, channels;
};

SeqDims seq_dims(const Shape& shape, const char* op) {
  if (shape.size() != 3) {
    fail(ErrorCode::kShape, std::string(op) + " expects B x T x C input, got " +
                                shape_string(shape));
  }
  return {shape[0], shape[1], shape[2]};
}

std::vector<std::size_t> valid_lengths(Lengths lengths, std::size_t batch, std::size_t time) {
  if (lengths.empty()) return std::vector<std::size_t>(batch, time);
  if (lengths.size() != batch) {
    fail(ErrorCode::kShape, "length list has " + std::to_string(lengths.size()) +
                                " entries for a batch of " + std::to_string(batch));
  }
  for (std::size_t len : lengths) {
    if (len > time) fail(ErrorCode::kShape, "sequence length exceeds padded time axis");
  }
  return {lengths.begin(), lengths.end()};
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    fail(ErrorCode::kShape, std::string(op) + ": shape " + shape_string(a) + " vs " +
                                shape_string(b));
  }
}

}  // namespace

template <typename T>
Var<T> conv1d(Var<T> x, Var<T> weight, std::optional<Var<T>> bias, Lengths lengths) {
  Tape<T>& tape = *x.tape();
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = weight.value();
  const auto [B, Tn, Cin] = seq_dims(xv.shape(), "conv1d");
  if (wv.rank() != 2 && wv.rank() != 3) {
    fail(ErrorCode::kShape, "conv1d weight must be Cout x Cin x K, got " + shape_string(wv.shape()));
  }
  const std::size_t Cout = wv.dim(0);
  const std::size_t K = wv.rank() == 3 ? wv.dim(2) : 1;
  if (K % 2 == 0) {
    fail(ErrorCode::kConfig, "conv1d kernel size must be odd for same padding, got " +
                                 std::to_string(K));
  }
  if (wv.dim(1) != Cin) {
    fail(ErrorCode::kShape, "conv1d weight expects " + std::to_string(wv.dim(1)) +
                                " input channels, input has " + std::to_string(Cin));
  }
  if (bias && bias->value().shape() != Shape{Cout}) {
    fail(ErrorCode::kShape, "conv1d bias must have shape [" + std::to_string(Cout) + "]");
  }
  const auto len = valid_lengths(lengths, B, Tn);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K - 1) / 2;

  // K x Cout x Cin so that every tap is a contiguous matrix.
  std::vector<T> wk(K * Cout * Cin);
  for (std::size_t o = 0; o < Cout; ++o)
    for (std::size_t c = 0; c < Cin; ++c)
      for (std::size_t k = 0; k < K; ++k) wk[(k * Cout + o) * Cin + c] = wv[(o * Cin + c) * K + k];

  Tensor<T> y(Shape{B, Tn, Cout});
  for (std::size_t b = 0; b < B; ++b) {
    const auto n = static_cast<std::ptrdiff_t>(len[b]);
    for (std::ptrdiff_t t = 0; t < n; ++t) {
      T* yrow = y.ptr() + (b * Tn + static_cast<std::size_t>(t)) * Cout;
      if (bias) std::copy_n(bias->value().ptr(), Cout, yrow);
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(k) - pad;
        if (src < 0 || src >= n) continue;
        const T* xrow = xv.ptr() + (b * Tn + static_cast<std::size_t>(src)) * Cin;
        const T* wtap = wk.data() + k * Cout * Cin;
        for (std::size_t o = 0; o < Cout; ++o) yrow[o] += dot(wtap + o * Cin, xrow, Cin);
      }
    }
  }

  std::initializer_list<Var<T>> with_bias = {x, weight, bias.value_or(x)};
  auto backward = [x, weight, bias, wk = std::move(wk), len, pad, B, Tn, Cin, Cout, K](
                      Tape<T>& tp, const Tensor<T>& gy) {
    const Tensor<T>& xv = tp.value(x);
    const bool need_x = tp.requires_grad(x);
    const bool need_w = tp.requires_grad(weight);
    T* gx = need_x ? tp.grad_buffer(x).ptr() : nullptr;
    std::vector<T> gwk(need_w ? K * Cout * Cin : 0, T{0});
    for (std::size_t b = 0; b < B; ++b) {
      const auto n = static_cast<std::ptrdiff_t>(len[b]);
      for (std::ptrdiff_t t = 0; t < n; ++t) {
        const T* grow = gy.ptr() + (b * Tn + static_cast<std::size_t>(t)) * Cout;
        for (std::size_t k = 0; k < K; ++k) {
          const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(k) - pad;
          if (src < 0 || src >= n) continue;
          const std::size_t off = (b * Tn + static_cast<std::size_t>(src)) * Cin;
          const T* xrow = xv.ptr() + off;
          const T* wtap = wk.data() + k * Cout * Cin;
          for (std::size_t o = 0; o < Cout; ++o) {
            const T g = grow[o];
            if (g == T{0}) continue;
            if (gx) axpy(g, wtap + o * Cin, gx + off, Cin);
            if (need_w) axpy(g, xrow, gwk.data() + (k * Cout + o) * Cin, Cin);
          }
        }
      }
    }
    if (need_w) {
      T* gw = tp.grad_buffer(weight).ptr();
      for (std::size_t o = 0; o < Cout; ++o)
        for (std::size_t c = 0; c < Cin; ++c)
          for (std::size_t k = 0; k < K; ++k) gw[(o * Cin + c) * K + k] += gwk[(k * Cout + o) * Cin + c];
    }
    if (bias && tp.requires_grad(*bias)) {
      T* gb = tp.grad_buffer(*bias).ptr();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < len[b]; ++t) axpy(T{1}, gy.ptr() + (b * Tn + t) * Cout, gb, Cout);
    }
  };
  return tape.record(std::move(y), with_bias, std::move(backward));
}

template <typename T>
Var<T> depthwise_conv1d(Var<T> x, Var<T> weight, Lengths lengths) {
  Tape<T>& tape = *x.tape();
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = weight.value();
  const auto [B, Tn, C] = seq_dims(xv.shape(), "depthwise_conv1d");
  if (wv.rank() != 2 || wv.dim(0) != C) {
    fail(ErrorCode::kShape, "depthwise weight must be C x K with C = " + std::to_string(C) +
                                ", got " + shape_string(wv.shape()));
  }
  const std::size_t K = wv.dim(1);
  if (K % 2 == 0) {
    fail(ErrorCode::kConfig, "depthwise kernel size must be odd for same padding, got " +
                                 std::to_string(K));
  }
  const auto len = valid_lengths(lengths, B, Tn);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K - 1) / 2;

  std::vector<T> wt(K * C);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < K; ++k) wt[k * C + c] = wv[c * K + k];

  Tensor<T> y(Shape{B, Tn, C});
  for (std::size_t b = 0; b < B; ++b) {
    const auto n = static_cast<std::ptrdiff_t>(len[b]);
    for (std::ptrdiff_t t = 0; t < n; ++t) {
      T* yrow = y.ptr() + (b * Tn + static_cast<std::size_t>(t)) * C;
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(k) - pad;
        if (src < 0 || src >= n) continue;
        const T* xrow = xv.ptr() + (b * Tn + static_cast<std::size_t>(src)) * C;
        const T* wrow = wt.data() + k * C;
        for (std::size_t c = 0; c < C; ++c) yrow[c] += wrow[c] * xrow[c];
      }
    }
  }

  auto backward = [x, weight, wt = std::move(wt), len, pad, B, Tn, C, K](Tape<T>& tp,
                                                                          const Tensor<T>& gy) {
    const Tensor<T>& xv = tp.value(x);
    T* gx = tp.requires_grad(x) ? tp.grad_buffer(x).ptr() : nullptr;
    const bool need_w = tp.requires_grad(weight);
    std::vector<T> gwt(need_w ? K * C : 0, T{0});
    for (std::size_t b = 0; b < B; ++b) {
      const auto n = static_cast<std::ptrdiff_t>(len[b]);
      for (std::ptrdiff_t t = 0; t < n; ++t) {
        const T* grow = gy.ptr() + (b * Tn + static_cast<std::size_t>(t)) * C;
        for (std::size_t k = 0; k < K; ++k) {
          const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(k) - pad;
          if (src < 0 || src >= n) continue;
          const std::size_t off = (b * Tn + static_cast<std::size_t>(src)) * C;
          const T* wrow = wt.data() + k * C;
          if (gx) {
            for (std::size_t c = 0; c < C; ++c) gx[off + c] += grow[c] * wrow[c];
          }
          if (need_w) {
            T* gw = gwt.data() + k * C;
            for (std::size_t c = 0; c < C; ++c) gw[c] += grow[c] * xv[off + c];
          }
        }
      }
    }
    if (need_w) {
      T* gw = tp.grad_buffer(weight).ptr();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < K; ++k) gw[c * K + k] += gwt[k * C + c];
    }
  };
  return tape.record(std::move(y), {x, weight}, std::move(backward));
}

template <typename T>
Var<T> separable_conv1d(Var<T> x, Var<T> dw_weight, Var<T> pw_weight,
                        std::optional<Var<T>> pw_bias, Lengths lengths) {
  return conv1d(depthwise_conv1d(x, dw_weight, lengths), pw_weight, pw_bias, lengths);
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, const BatchNormStats<T>& stats,
                  bool training, Lengths lengths, BatchNormStats<T>* running_out) {
  Tape<T>& tape = *x.tape();
  const Tensor<T>& xv = x.value();
  std::size_t B = 0, Tn = 1, C = 0;
  if (xv.rank() == 3) {
    std::tie(B, Tn, C) = std::tuple{xv.dim(0), xv.dim(1), xv.dim(2)};
  } else if (xv.rank() == 2) {
    B = xv.dim(0);
    C = xv.dim(1);
    if (!lengths.empty()) fail(ErrorCode::kShape, "batch_norm lengths need a B x T x C input");
  } else {
    fail(ErrorCode::kShape, "batch_norm expects B x T x C or B x C, got " + shape_string(xv.shape()));
  }
  if (gamma.value().shape() != Shape{C} || beta.value().shape() != Shape{C} ||
      stats.running_mean.shape() != Shape{C} || stats.running_var.shape() != Shape{C}) {
    fail(ErrorCode::kShape, "batch_norm parameters must have shape [" + std::to_string(C) + "]");
  }
  const auto len = valid_lengths(lengths, B, Tn);
  std::size_t count = 0;
  for (std::size_t l : len) count += l;

  std::vector<T> mean(C), inv_std(C);
  if (training) {
    if (count < 2) {
      fail(ErrorCode::kDegenerateBatch,
           "batch_norm in training mode needs at least 2 positions per channel, got " +
               std::to_string(count));
    }
    std::vector<double> s1(C, 0.0), s2(C, 0.0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < len[b]; ++t) {
        const T* row = xv.ptr() + (b * Tn + t) * C;
        for (std::size_t c = 0; c < C; ++c) s1[c] += row[c];
      }
    for (std::size_t c = 0; c < C; ++c) s1[c] /= static_cast<double>(count);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < len[b]; ++t) {
        const T* row = xv.ptr() + (b * Tn + t) * C;
        for (std::size_t c = 0; c < C; ++c) {
          const double d = row[c] - s1[c];
          s2[c] += d * d;
        }
      }
    for (std::size_t c = 0; c < C; ++c) {
      const double var = s2[c] / static_cast<double>(count);
      mean[c] = static_cast<T>(s1[c]);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(stats.eps)));
      if (running_out) {
        BatchNormStats<T>& r = *running_out;
        r.running_mean[c] = (T{1} - r.momentum) * r.running_mean[c] + r.momentum * static_cast<T>(s1[c]);
        r.running_var[c] = (T{1} - r.momentum) * r.running_var[c] + r.momentum * static_cast<T>(var);
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = stats.running_mean[c];
      inv_std[c] = T{1} / std::sqrt(stats.running_var[c] + stats.eps);
    }
  }

  const T* g = gamma.value().ptr();
  const T* bt = beta.value().ptr();
  Tensor<T> xhat(xv.shape());
  Tensor<T> y(xv.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < len[b]; ++t) {
      const std::size_t off = (b * Tn + t) * C;
      for (std::size_t c = 0; c < C; ++c) {
        const T h = (xv[off + c] - mean[c]) * inv_std[c];
        xhat[off + c] = h;
        y[off + c] = g[c] * h + bt[c];
      }
    }

  auto backward = [x, gamma, beta, training, xhat = std::move(xhat), inv_std, len, B, Tn, C,
                   count](Tape<T>& tp, const Tensor<T>& gy) {
    const T* g = tp.value(gamma).ptr();
    std::vector<double> sum_gy(C, 0.0), sum_gy_xhat(C, 0.0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < len[b]; ++t) {
        const std::size_t off = (b * Tn + t) * C;
        for (std::size_t c = 0; c < C; ++c) {
          sum_gy[c] += gy[off + c];
          sum_gy_xhat[c] += gy[off + c] * xhat[off + c];
        }
      }
    if (tp.requires_grad(gamma)) {
      T* gg = tp.grad_buffer(gamma).ptr();
      for (std::size_t c = 0; c < C; ++c) gg[c] += static_cast<T>(sum_gy_xhat[c]);
    }
    if (tp.requires_grad(beta)) {
      T* gb = tp.grad_buffer(beta).ptr();
      for (std::size_t c = 0; c < C; ++c) gb[c] += static_cast<T>(sum_gy[c]);
    }
    if (!tp.requires_grad(x)) return;
    T* gx = tp.grad_buffer(x).ptr();
    const double n = static_cast<double>(count);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < len[b]; ++t) {
        const std::size_t off = (b * Tn + t) * C;
        for (std::size_t c = 0; c < C; ++c) {
          if (training) {
            // dx = inv_std / n * (n dxhat - sum dxhat - xhat sum(dxhat xhat)), dxhat = g gy
            const double v = static_cast<double>(g[c]) *
                             (n * gy[off + c] - sum_gy[c] - xhat[off + c] * sum_gy_xhat[c]);
            gx[off + c] += static_cast<T>(static_cast<double>(inv_std[c]) * v / n);
          } else {
            gx[off + c] += g[c] * inv_std[c] * gy[off + c];
          }
        }
      }
  };
  return tape.record(std::move(y), {x, gamma, beta}, std::move(backward));
}

template <typename T>
Var<T> relu(Var<T> x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = xv[i] > T{0} ? xv[i] : T{0};
  return x.tape()->record(std::move(y), {x}, [x](Tape<T>& tp, const Tensor<T>& gy) {
    const Tensor<T>& xv = tp.value(x);
    T* gx = tp.grad_buffer(x).ptr();
    for (std::size_t i = 0; i < xv.numel(); ++i)
      if (xv[i] > T{0}) gx[i] += gy[i];
  });
}

template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double p, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    fail(ErrorCode::kConfig, "dropout probability must be in [0, 1), got " + std::to_string(p));
  }
  Tensor<T> mask(shape);
  std::bernoulli_distribution keep(1.0 - p);
  const T kept = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = keep(rng) ? kept : T{0};
  return mask;
}

template <typename T>
Var<T> dropout_with_mask(Var<T> x, const Tensor<T>& mask) {
  const Tensor<T>& xv = x.value();
  require_same_shape(xv.shape(), mask.shape(), "dropout");
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = xv[i] * mask[i];
  return x.tape()->record(std::move(y), {x}, [x, mask](Tape<T>& tp, const Tensor<T>& gy) {
    T* gx = tp.grad_buffer(x).ptr();
    for (std::size_t i = 0; i < mask.numel(); ++i) gx[i] += gy[i] * mask[i];
  });
}

template <typename T>
Var<T> dropout(Var<T> x, double p, bool training, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    fail(ErrorCode::kConfig, "dropout probability must be in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  return dropout_with_mask(x, dropout_mask<T>(x.value().shape(), p, rng));
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape(av.shape(), bv.shape(), "add");
  Tensor<T> y(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) y[i] = av[i] + bv[i];
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& gy) {
    for (Var<T> v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      T* g = tp.grad_buffer(v).ptr();
      for (std::size_t i = 0; i < gy.numel(); ++i) g[i] += gy[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  const Tensor<T>& xv = x.value();
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = xv[i] * factor;
  return x.tape()->record(std::move(y), {x}, [x, factor](Tape<T>& tp, const Tensor<T>& gy) {
    T* gx = tp.grad_buffer(x).ptr();
    for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * factor;
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  const Tensor<T>& xv = x.value();
  double acc = 0.0;
  for (T v : xv.data()) acc += v;
  Tensor<T> y(Shape{1}, static_cast<T>(acc));
  return x.tape()->record(std::move(y), {x}, [x](Tape<T>& tp, const Tensor<T>& gy) {
    Tensor<T>& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[0];
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = weight.value();
  if (wv.rank() != 2 || xv.rank() == 0) {
    fail(ErrorCode::kShape, "linear expects a Dout x Din weight, got " + shape_string(wv.shape()));
  }
  const std::size_t Dout = wv.dim(0), Din = wv.dim(1);
  if (xv.shape().back() != Din) {
    fail(ErrorCode::kShape, "linear input width " + std::to_string(xv.shape().back()) +
                                " does not match weight input width " + std::to_string(Din));
  }
  if (bias && bias->value().shape() != Shape{Dout}) {
    fail(ErrorCode::kShape, "linear bias must have shape [" + std::to_string(Dout) + "]");
  }
  const std::size_t rows = xv.numel() / Din;
  Shape out_shape = xv.shape();
  out_shape.back() = Dout;
  Tensor<T> y(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xrow = xv.ptr() + r * Din;
    T* yrow = y.ptr() + r * Dout;
    for (std::size_t o = 0; o < Dout; ++o) {
      yrow[o] = dot(wv.ptr() + o * Din, xrow, Din) + (bias ? bias->value()[o] : T{0});
    }
  }
  std::initializer_list<Var<T>> inputs = {x, weight, bias.value_or(x)};
  return x.tape()->record(
      std::move(y), inputs, [x, weight, bias, rows, Din, Dout](Tape<T>& tp, const Tensor<T>& gy) {
        const Tensor<T>& xv = tp.value(x);
        const Tensor<T>& wv = tp.value(weight);
        T* gx = tp.requires_grad(x) ? tp.grad_buffer(x).ptr() : nullptr;
        T* gw = tp.requires_grad(weight) ? tp.grad_buffer(weight).ptr() : nullptr;
        T* gb = bias && tp.requires_grad(*bias) ? tp.grad_buffer(*bias).ptr() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* grow = gy.ptr() + r * Dout;
          const T* xrow = xv.ptr() + r * Din;
          for (std::size_t o = 0; o < Dout; ++o) {
            const T g = grow[o];
            if (g == T{0}) continue;
            if (gx) axpy(g, wv.ptr() + o * Din, gx + r * Din, Din);
            if (gw) axpy(g, xrow, gw + o * Din, Din);
            if (gb) gb[o] += g;
          }
        }
      });
}

template <typename T>
Var<T> stats_pool(Var<T> x, Lengths lengths, T eps) {
  const Tensor<T>& xv = x.value();
  const auto [B, Tn, C] = seq_dims(xv.shape(), "stats_pool");
  const auto len = valid_lengths(lengths, B, Tn);
  Tensor<T> y(Shape{B, 2 * C});
  std::vector<T> means(B * C), stds(B * C);
  for (std::size_t b = 0; b < B; ++b) {
    if (len[b] == 0) fail(ErrorCode::kShape, "stats_pool needs at least one frame per item");
    const double n = static_cast<double>(len[b]);
    std::vector<double> s1(C, 0.0), s2(C, 0.0);
    for (std::size_t t = 0; t < len[b]; ++t) {
      const T* row = xv.ptr() + (b * Tn + t) * C;
      for (std::size_t c = 0; c < C; ++c) s1[c] += row[c];
    }
    for (std::size_t c = 0; c < C; ++c) s1[c] /= n;
    for (std::size_t t = 0; t < len[b]; ++t) {
      const T* row = xv.ptr() + (b * Tn + t) * C;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = row[c] - s1[c];
        s2[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      means[b * C + c] = static_cast<T>(s1[c]);
      stds[b * C + c] = static_cast<T>(std::sqrt(s2[c] / n + static_cast<double>(eps)));
      y[b * 2 * C + c] = means[b * C + c];
      y[b * 2 * C + C + c] = stds[b * C + c];
    }
  }
  return x.tape()->record(
      std::move(y), {x},
      [x, len, means = std::move(means), stds = std::move(stds), B, Tn, C](Tape<T>& tp,
                                                                         const Tensor<T>& gy) {
        const Tensor<T>& xv = tp.value(x);
        T* gx = tp.grad_buffer(x).ptr();
        for (std::size_t b = 0; b < B; ++b) {
          const T n = static_cast<T>(len[b]);
          const T* gmean = gy.ptr() + b * 2 * C;
          const T* gstd = gmean + C;
          for (std::size_t t = 0; t < len[b]; ++t) {
            const std::size_t off = (b * Tn + t) * C;
            for (std::size_t c = 0; c < C; ++c) {
              const T centered = xv[off + c] - means[b * C + c];
              gx[off + c] += gmean[c] / n + gstd[c] * centered / (n * stds[b * C + c]);
            }
          }
        }
      });
}

template <typename T>
Var<T> normalize_rows(Var<T> x) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() == 0) fail(ErrorCode::kShape, "normalize_rows needs at least one axis");
  const std::size_t D = xv.shape().back();
  const std::size_t rows = D == 0 ? 0 : xv.numel() / D;
  Tensor<T> y(xv.shape());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.ptr() + r * D;
    double ss = 0.0;
    for (std::size_t i = 0; i < D; ++i) ss += static_cast<double>(row[i]) * row[i];
    if (!(ss > 0.0)) {
      fail(ErrorCode::kDegenerateNorm, "row " + std::to_string(r) + " has zero norm");
    }
    norms[r] = static_cast<T>(std::sqrt(ss));
    for (std::size_t i = 0; i < D; ++i) y[r * D + i] = row[i] / norms[r];
  }
  Tensor<T> ycopy = y;
  return x.tape()->record(
      std::move(y), {x},
      [x, yv = std::move(ycopy), norms = std::move(norms), rows, D](Tape<T>& tp,
                                                                   const Tensor<T>& gy) {
        T* gx = tp.grad_buffer(x).ptr();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* yrow = yv.ptr() + r * D;
          const T* grow = gy.ptr() + r * D;
          const T proj = dot(yrow, grow, D);
          for (std::size_t i = 0; i < D; ++i) gx[r * D + i] += (grow[i] - yrow[i] * proj) / norms[r];
        }
      });
}

template <typename T>
Var<T> angular_margin_logits(Var<T> cosines, std::span<const int> labels, T margin, T scale) {
  const Tensor<T>& cv = cosines.value();
  if (cv.rank() != 2 || cv.dim(0) != labels.size()) {
    fail(ErrorCode::kShape, "margin logits expect B x N cosines and B labels");
  }
  const std::size_t B = cv.dim(0), N = cv.dim(1);
  const T lo = T(-1) + T(1e-7), hi = T(1) - T(1e-7);
  const T cos_m = std::cos(margin), sin_m = std::sin(margin);
  Tensor<T> y(cv.shape());
  std::vector<T> dtarget(B);
  for (std::size_t b = 0; b < B; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= N) {
      fail(ErrorCode::kArgument, "label " + std::to_string(label) + " outside [0, " +
                                     std::to_string(N) + ")");
    }
    for (std::size_t j = 0; j < N; ++j) y[b * N + j] = scale * cv[b * N + j];
    const T raw = cv[b * N + static_cast<std::size_t>(label)];
    const T c = std::clamp(raw, lo, hi);
    const T s = std::sqrt(std::max(T{0}, T{1} - c * c));
    y[b * N + static_cast<std::size_t>(label)] = scale * (c * cos_m - s * sin_m);
    dtarget[b] = (raw > lo && raw < hi) ? scale * (cos_m + c / s * sin_m) : T{0};
  }
  std::vector<int> label_copy(labels.begin(), labels.end());
  return cosines.tape()->record(
      std::move(y), {cosines},
      [cosines, label_copy, dtarget = std::move(dtarget), scale, B, N](Tape<T>& tp,
                                                                       const Tensor<T>& gy) {
        T* gc = tp.grad_buffer(cosines).ptr();
        for (std::size_t b = 0; b < B; ++b) {
          const auto target = static_cast<std::size_t>(label_copy[b]);
          for (std::size_t j = 0; j < N; ++j) {
            gc[b * N + j] += gy[b * N + j] * (j == target ? dtarget[b] : scale);
          }
        }
      });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels) {
  const Tensor<T>& zv = logits.value();
  if (zv.rank() != 2 || zv.dim(0) != labels.size()) {
    fail(ErrorCode::kShape, "cross_entropy expects B x N logits and B labels, got " +
                                shape_string(zv.shape()));
  }
  const std::size_t B = zv.dim(0), N = zv.dim(1);
  if (B == 0) fail(ErrorCode::kShape, "cross_entropy on an empty batch");
  Tensor<T> probs(zv.shape());
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= N) {
      fail(ErrorCode::kArgument, "label " + std::to_string(label) + " outside [0, " +
                                     std::to_string(N) + ")");
    }
    const T* z = zv.ptr() + b * N;
    const T mx = *std::max_element(z, z + N);
    double denom = 0.0;
    for (std::size_t j = 0; j < N; ++j) denom += std::exp(static_cast<double>(z[j] - mx));
    // (max - z_y) first keeps the result exact when the target is the max.
    total += static_cast<double>(mx - z[label]) + std::log(denom);
    for (std::size_t j = 0; j < N; ++j) {
      probs[b * N + j] = static_cast<T>(std::exp(static_cast<double>(z[j] - mx)) / denom);
    }
  }
  Tensor<T> y(Shape{1}, static_cast<T>(total / static_cast<double>(B)));
  std::vector<int> label_copy(labels.begin(), labels.end());
  return logits.tape()->record(
      std::move(y), {logits},
      [logits, probs = std::move(probs), label_copy, B, N](Tape<T>& tp, const Tensor<T>& gy) {
        T* gz = tp.grad_buffer(logits).ptr();
        const T g = gy[0] / static_cast<T>(B);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t j = 0; j < N; ++j) {
            const T onehot = static_cast<std::size_t>(label_copy[b]) == j ? T{1} : T{0};
            gz[b * N + j] += g * (probs[b * N + j] - onehot);
          }
        }
      });
}

#define QVEC_INSTANTIATE(T)                                                                   \
  template Var<T> conv1d(Var<T>, Var<T>, std::optional<Var<T>>, Lengths);                     \
  template Var<T> depthwise_conv1d(Var<T>, Var<T>, Lengths);                                  \
  template Var<T> separable_conv1d(Var<T>, Var<T>, Var<T>, std::optional<Var<T>>, Lengths);   \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, const BatchNormStats<T>&, bool, Lengths,     \
                             BatchNormStats<T>*);                                            \
  template Var<T> relu(Var<T>);                                                               \
  template Var<T> dropout(Var<T>, double, bool, std::mt19937_64&);                            \
  template Var<T> dropout_with_mask(Var<T>, const Tensor<T>&);                                \
  template Tensor<T> dropout_mask<T>(const Shape&, double, std::mt19937_64&);                 \
  template Var<T> add(Var<T>, Var<T>);                                                        \
  template Var<T> scale(Var<T>, T);                                                           \
  template Var<T> sum(Var<T>);                                                                \
  template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);                              \
  template Var<T> stats_pool(Var<T>, Lengths, T);                                             \
  template Var<T> normalize_rows(Var<T>);                                                     \
  template Var<T> angular_margin_logits(Var<T>, std::span<const int>, T, T);                  \
  template Var<T> cross_entropy(Var<T>, std::span<const int>);

QVEC_INSTANTIATE(float)
QVEC_INSTANTIATE(double)

#undef QVEC_INSTANTIATE

}  // namespace qvec::nn
