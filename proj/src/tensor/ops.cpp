#include "agln/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>

namespace agln {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::size_t channels, height, width;  // image side
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;             // patch grid
};

// cols is (channels*k*k, out_h*out_w).
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const std::size_t spatial = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * spatial;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::int64_t>(oh * g.stride + ki) - static_cast<std::int64_t>(g.pad);
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::int64_t>(g.height)) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = img + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::int64_t>(ow * g.stride + kj) - static_cast<std::int64_t>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::int64_t>(g.width)) ? T{0} : src[iw];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds cols back into img.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* img) {
  const std::size_t spatial = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * spatial;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::int64_t>(oh * g.stride + ki) - static_cast<std::int64_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::int64_t>(g.height)) continue;
          const T* src = row + oh * g.out_w;
          T* dst = img + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::int64_t>(ow * g.stride + kj) - static_cast<std::int64_t>(g.pad);
            if (iw >= 0 && iw < static_cast<std::int64_t>(g.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
Graph<T>* common_graph(std::initializer_list<Var<T>> vars) {
  Graph<T>* g = vars.begin()->graph;
  for (const auto& v : vars) {
    if (v.graph != g) throw GraphError("operands recorded on different graphs");
  }
  return g;
}

template <typename T>
Var<T> conv2d_unpadded_or_zero(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t zero_pad) {
  Graph<T>* graph = common_graph({x, w, b});
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require(xs.size() == 4, "conv2d: input must be rank 4, got " + shape_str(xs));
  require(ws.size() == 4 && ws[2] == ws[3], "conv2d: weight must be (Cout,Cin,k,k), got " + shape_str(ws));
  require(ws[1] == xs[1], "conv2d: input channels " + std::to_string(xs[1]) + " vs weight " + shape_str(ws));
  require(b.shape() == Shape{ws[0]}, "conv2d: bias must be (Cout), got " + shape_str(b.shape()));
  require(stride >= 1, "conv2d: stride must be positive");
  const std::size_t k = ws[2];
  const std::size_t ph = xs[2] + 2 * zero_pad;
  const std::size_t pw = xs[3] + 2 * zero_pad;
  require(ph >= k && pw >= k, "conv2d: padded extent smaller than kernel");

  ConvGeometry geo{xs[1], xs[2], xs[3], k, stride, zero_pad, (ph - k) / stride + 1, (pw - k) / stride + 1};
  const std::size_t n_batch = xs[0];
  const std::size_t c_out = ws[0];
  const std::size_t patch = xs[1] * k * k;
  const std::size_t spatial = geo.out_h * geo.out_w;

  const bool keep_cols = w.requires_grad();
  AlignedVector<T> cols_all(keep_cols ? n_batch * patch * spatial : patch * spatial);
  Tensor<T> out(Shape{n_batch, c_out, geo.out_h, geo.out_w});
  ConstMatMap<T> wm(w.value().data(), c_out, patch);
  const T* bias = b.value().data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    T* cols = cols_all.data() + (keep_cols ? n * patch * spatial : 0);
    im2col(x.value().data() + n * xs[1] * xs[2] * xs[3], geo, cols);
    MatMap<T> om(out.data() + n * c_out * spatial, c_out, spatial);
    om.noalias() = wm * ConstMatMap<T>(cols, patch, spatial);
    for (std::size_t co = 0; co < c_out; ++co) om.row(co).array() += bias[co];
  }

  if (!keep_cols) cols_all = {};
  const std::size_t w_id = w.id;
  return graph->record(
      std::move(out), {x, w, b},
      [graph, geo, n_batch, c_out, patch, spatial, w_id, cols_all = std::move(cols_all)](
          const Tensor<T>& gout, const Tensor<T>&, std::span<Tensor<T>*> grads) {
        ConstMatMap<T> wm(graph->value(w_id).data(), c_out, patch);
        const std::size_t img = geo.channels * geo.height * geo.width;
        AlignedVector<T> dcols;
        if (grads[0]) dcols.resize(patch * spatial);
        for (std::size_t n = 0; n < n_batch; ++n) {
          ConstMatMap<T> gm(gout.data() + n * c_out * spatial, c_out, spatial);
          if (grads[1]) {
            const T* cols = cols_all.data() + n * patch * spatial;
            MatMap<T>(grads[1]->data(), c_out, patch).noalias() += gm * ConstMatMap<T>(cols, patch, spatial).transpose();
          }
          if (grads[2]) {
            T* db = grads[2]->data();
            for (std::size_t co = 0; co < c_out; ++co) db[co] += gm.row(co).sum();
          }
          if (grads[0]) {
            MatMap<T>(dcols.data(), patch, spatial).noalias() = wm.transpose() * gm;
            col2im(dcols.data(), geo, grads[0]->data() + n * img);
          }
        }
      });
}

}  // namespace

template <typename T>
Var<T> reflect_pad2d(Var<T> x, std::size_t pad) {
  const Shape& xs = x.shape();
  require(xs.size() == 4, "reflect_pad2d: input must be rank 4, got " + shape_str(xs));
  require(pad < xs[2] && pad < xs[3], "reflect_pad2d: pad must be smaller than the spatial extent");
  const std::size_t h = xs[2];
  const std::size_t w = xs[3];
  const std::size_t oh = h + 2 * pad;
  const std::size_t ow = w + 2 * pad;
  auto reflect = [pad](std::size_t i, std::size_t n) {
    const auto s = static_cast<std::int64_t>(i) - static_cast<std::int64_t>(pad);
    if (s < 0) return static_cast<std::size_t>(-s);
    if (s >= static_cast<std::int64_t>(n)) return static_cast<std::size_t>(2 * (static_cast<std::int64_t>(n) - 1) - s);
    return static_cast<std::size_t>(s);
  };
  std::vector<std::size_t> row_src(oh), col_src(ow);
  for (std::size_t i = 0; i < oh; ++i) row_src[i] = reflect(i, h);
  for (std::size_t j = 0; j < ow; ++j) col_src[j] = reflect(j, w);

  const std::size_t planes = xs[0] * xs[1];
  Tensor<T> out(Shape{xs[0], xs[1], oh, ow});
  const T* src = x.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) out[(p * oh + i) * ow + j] = src[(p * h + row_src[i]) * w + col_src[j]];
    }
  }
  return x.graph->record(std::move(out), {x},
                         [planes, h, w, oh, ow, row_src, col_src](const Tensor<T>& gout, const Tensor<T>&,
                                                                  std::span<Tensor<T>*> grads) {
                           T* dx = grads[0]->data();
                           for (std::size_t p = 0; p < planes; ++p) {
                             for (std::size_t i = 0; i < oh; ++i) {
                               for (std::size_t j = 0; j < ow; ++j) {
                                 dx[(p * h + row_src[i]) * w + col_src[j]] += gout[(p * oh + i) * ow + j];
                               }
                             }
                           }
                         });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, Padding pad) {
  switch (pad.mode) {
    case PadMode::none:
      return conv2d_unpadded_or_zero(x, w, b, stride, 0);
    case PadMode::zero:
      return conv2d_unpadded_or_zero(x, w, b, stride, pad.amount);
    case PadMode::reflect:
      return conv2d_unpadded_or_zero(pad.amount ? reflect_pad2d(x, pad.amount) : x, w, b, stride, 0);
  }
  throw ShapeError("conv2d: unknown padding mode");
}

template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad, std::size_t out_pad) {
  Graph<T>* graph = common_graph({x, w, b});
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require(xs.size() == 4, "conv_transpose2d: input must be rank 4, got " + shape_str(xs));
  require(ws.size() == 4 && ws[2] == ws[3], "conv_transpose2d: weight must be (Cin,Cout,k,k), got " + shape_str(ws));
  require(ws[0] == xs[1], "conv_transpose2d: input channels " + std::to_string(xs[1]) + " vs weight " + shape_str(ws));
  require(b.shape() == Shape{ws[1]}, "conv_transpose2d: bias must be (Cout), got " + shape_str(b.shape()));
  require(stride >= 1, "conv_transpose2d: stride must be positive");
  require(out_pad < stride, "conv_transpose2d: out_pad must be smaller than stride");
  const std::size_t k = ws[2];
  const auto extent = [&](std::size_t n) {
    const auto e = static_cast<std::int64_t>((n - 1) * stride + k + out_pad) - 2 * static_cast<std::int64_t>(pad);
    require(e > 0, "conv_transpose2d: non-positive output extent");
    return static_cast<std::size_t>(e);
  };
  const std::size_t c_in = xs[1];
  const std::size_t c_out = ws[1];
  const std::size_t oh = extent(xs[2]);
  const std::size_t ow = extent(xs[3]);
  // The matching forward convolution maps (c_out, oh, ow) onto the (h, w) input grid.
  ConvGeometry geo{c_out, oh, ow, k, stride, pad, xs[2], xs[3]};
  const std::size_t n_batch = xs[0];
  const std::size_t patch = c_out * k * k;
  const std::size_t spatial = xs[2] * xs[3];
  const std::size_t out_plane = oh * ow;

  Tensor<T> out(Shape{n_batch, c_out, oh, ow});
  ConstMatMap<T> wm(w.value().data(), c_in, patch);
  AlignedVector<T> cols(patch * spatial);
  const T* bias = b.value().data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    ConstMatMap<T> xm(x.value().data() + n * c_in * spatial, c_in, spatial);
    MatMap<T>(cols.data(), patch, spatial).noalias() = wm.transpose() * xm;
    T* o = out.data() + n * c_out * out_plane;
    col2im(cols.data(), geo, o);
    for (std::size_t co = 0; co < c_out; ++co) {
      for (std::size_t i = 0; i < out_plane; ++i) o[co * out_plane + i] += bias[co];
    }
  }

  const std::size_t w_id = w.id;
  const std::size_t x_id = x.id;
  return graph->record(
      std::move(out), {x, w, b},
      [graph, geo, n_batch, c_in, c_out, patch, spatial, out_plane, w_id, x_id](
          const Tensor<T>& gout, const Tensor<T>&, std::span<Tensor<T>*> grads) {
        ConstMatMap<T> wm(graph->value(w_id).data(), c_in, patch);
        AlignedVector<T> gcols(patch * spatial);
        for (std::size_t n = 0; n < n_batch; ++n) {
          const T* go = gout.data() + n * c_out * out_plane;
          if (grads[0] || grads[1]) {
            im2col(go, geo, gcols.data());
            ConstMatMap<T> gc(gcols.data(), patch, spatial);
            if (grads[0]) MatMap<T>(grads[0]->data() + n * c_in * spatial, c_in, spatial).noalias() += wm * gc;
            if (grads[1]) {
              ConstMatMap<T> xm(graph->value(x_id).data() + n * c_in * spatial, c_in, spatial);
              MatMap<T>(grads[1]->data(), c_in, patch).noalias() += xm * gc.transpose();
            }
          }
          if (grads[2]) {
            T* db = grads[2]->data();
            for (std::size_t co = 0; co < c_out; ++co) {
              T s{0};
              for (std::size_t i = 0; i < out_plane; ++i) s += go[co * out_plane + i];
              db[co] += s;
            }
          }
        }
      });
}

template <typename T>
Var<T> instance_norm(Var<T> x, double eps) {
  const Shape& xs = x.shape();
  require(xs.size() == 4, "instance_norm: input must be rank 4, got " + shape_str(xs));
  require(xs[2] * xs[3] >= 1, "instance_norm: empty spatial extent");
  const std::size_t planes = xs[0] * xs[1];
  const std::size_t plane = xs[2] * xs[3];
  Tensor<T> out(xs);
  std::vector<T> inv_std(planes);
  const T* src = x.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* xp = src + p * plane;
    T* yp = out.data() + p * plane;
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += xp[i];
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) var += (xp[i] - mean) * (xp[i] - mean);
    var /= static_cast<double>(plane);
    const double denom = var + eps;
    // A constant slice with eps = 0 has nothing to standardise.
    const double s = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
    inv_std[p] = static_cast<T>(s);
    for (std::size_t i = 0; i < plane; ++i) yp[i] = static_cast<T>((xp[i] - mean) * s);
  }
  return x.graph->record(std::move(out), {x},
                         [planes, plane, inv_std = std::move(inv_std)](const Tensor<T>& gout, const Tensor<T>& y,
                                                                       std::span<Tensor<T>*> grads) {
                           T* dx = grads[0]->data();
                           for (std::size_t p = 0; p < planes; ++p) {
                             const T* g = gout.data() + p * plane;
                             const T* yp = y.data() + p * plane;
                             double g_mean = 0.0, gy_mean = 0.0;
                             for (std::size_t i = 0; i < plane; ++i) {
                               g_mean += g[i];
                               gy_mean += static_cast<double>(g[i]) * yp[i];
                             }
                             g_mean /= static_cast<double>(plane);
                             gy_mean /= static_cast<double>(plane);
                             const double s = inv_std[p];
                             for (std::size_t i = 0; i < plane; ++i) {
                               dx[p * plane + i] += static_cast<T>(s * (g[i] - g_mean - yp[i] * gy_mean));
                             }
                           }
                         });
}

template <typename T>
Var<T> activation(Var<T> x, Activation kind) {
  Tensor<T> out(x.shape());
  const T* src = x.value().data();
  const T slope = static_cast<T>(kLeakySlope);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = src[i];
    switch (kind) {
      case Activation::relu: out[i] = v > T{0} ? v : T{0}; break;
      case Activation::leaky_relu: out[i] = v > T{0} ? v : slope * v; break;
      case Activation::tanh: out[i] = std::tanh(v); break;
      case Activation::sigmoid: out[i] = T{1} / (T{1} + std::exp(-v)); break;
    }
  }
  Graph<T>* graph = x.graph;
  const std::size_t x_id = x.id;
  return graph->record(std::move(out), {x},
                       [graph, x_id, kind, slope](const Tensor<T>& gout, const Tensor<T>& y,
                                                  std::span<Tensor<T>*> grads) {
                         T* dx = grads[0]->data();
                         const T* xv = graph->value(x_id).data();
                         for (std::size_t i = 0; i < gout.size(); ++i) {
                           T d{0};
                           switch (kind) {
                             case Activation::relu: d = xv[i] > T{0} ? T{1} : T{0}; break;
                             case Activation::leaky_relu: d = xv[i] > T{0} ? T{1} : slope; break;
                             case Activation::tanh: d = T{1} - y[i] * y[i]; break;
                             case Activation::sigmoid: d = y[i] * (T{1} - y[i]); break;
                           }
                           dx[i] += d * gout[i];
                         }
                       });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>* graph = common_graph({a, b});
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return graph->record(std::move(out), {a, b}, [](const Tensor<T>& g, const Tensor<T>&, std::span<Tensor<T>*> grads) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!grads[k]) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[k])[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Graph<T>* graph = common_graph({a, b});
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return graph->record(std::move(out), {a, b}, [](const Tensor<T>& g, const Tensor<T>&, std::span<Tensor<T>*> grads) {
    if (grads[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
    }
    if (grads[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>* graph = common_graph({a, b});
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::size_t a_id = a.id;
  const std::size_t b_id = b.id;
  return graph->record(std::move(out), {a, b},
                       [graph, a_id, b_id](const Tensor<T>& g, const Tensor<T>&, std::span<Tensor<T>*> grads) {
                         const Tensor<T>& av = graph->value(a_id);
                         const Tensor<T>& bv = graph->value(b_id);
                         if (grads[0]) {
                           for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * bv[i];
                         }
                         if (grads[1]) {
                           for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i] * av[i];
                         }
                       });
}

template <typename T>
Var<T> scale(Var<T> a, double factor) {
  const T f = static_cast<T>(factor);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * f;
  return a.graph->record(std::move(out), {a}, [f](const Tensor<T>& g, const Tensor<T>&, std::span<Tensor<T>*> grads) {
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * f;
  });
}

template <typename T>
Var<T> reduce_loss(Var<T> a, Var<T> b, LossKind kind) {
  Graph<T>* graph = common_graph({a, b});
  require_same_shape(a, b, kind == LossKind::l1 ? "l1" : "mse");
  const std::size_t n = a.value().size();
  require(n > 0, "reduce_loss: empty operands");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.value()[i]) - static_cast<double>(b.value()[i]);
    acc += kind == LossKind::l1 ? std::abs(d) : d * d;
  }
  const std::size_t a_id = a.id;
  const std::size_t b_id = b.id;
  return graph->record(
      Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n))), {a, b},
      [graph, a_id, b_id, n, kind](const Tensor<T>& g, const Tensor<T>&, std::span<Tensor<T>*> grads) {
        const Tensor<T>& av = graph->value(a_id);
        const Tensor<T>& bv = graph->value(b_id);
        const T scale_factor = g[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const T d = av[i] - bv[i];
          T local{0};
          if (kind == LossKind::l1) {
            local = d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0});
          } else {
            local = T{2} * d;
          }
          const T v = local * scale_factor;
          if (grads[0]) (*grads[0])[i] += v;
          if (grads[1]) (*grads[1])[i] -= v;
        }
      });
}

template <typename T>
Var<T> sum(Var<T> a) {
  double acc = 0.0;
  for (const T v : a.value().values()) acc += v;
  return a.graph->record(Tensor<T>::scalar(static_cast<T>(acc)), {a},
                         [](const Tensor<T>& g, const Tensor<T>&, std::span<Tensor<T>*> grads) {
                           for (T& v : grads[0]->values()) v += g[0];
                         });
}

template <typename T>
Var<T> full_like(Var<T> like, T value) {
  return like.graph->constant(Tensor<T>(like.shape(), value));
}

#define AGLN_INSTANTIATE_OPS(T)                                                                 \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, std::size_t, Padding);                      \
  template Var<T> conv_transpose2d<T>(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t,         \
                                      std::size_t);                                             \
  template Var<T> reflect_pad2d<T>(Var<T>, std::size_t);                                        \
  template Var<T> instance_norm<T>(Var<T>, double);                                             \
  template Var<T> activation<T>(Var<T>, Activation);                                            \
  template Var<T> add<T>(Var<T>, Var<T>);                                                       \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                       \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                       \
  template Var<T> scale<T>(Var<T>, double);                                                     \
  template Var<T> reduce_loss<T>(Var<T>, Var<T>, LossKind);                                     \
  template Var<T> sum<T>(Var<T>);                                                               \
  template Var<T> full_like<T>(Var<T>, T);

AGLN_INSTANTIATE_OPS(float)
AGLN_INSTANTIATE_OPS(double)

#undef AGLN_INSTANTIATE_OPS

}  // namespace agln
