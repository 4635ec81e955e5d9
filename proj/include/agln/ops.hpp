#pragma once

#include <cstddef>

#include "agln/graph.hpp"

namespace agln {

enum class PadMode { none, zero, reflect };

struct Padding {
  PadMode mode = PadMode::none;
  std::size_t amount = 0;

  static Padding none() { return {}; }
  static Padding zero(std::size_t k) { return {PadMode::zero, k}; }
  static Padding reflect(std::size_t k) { return {PadMode::reflect, k}; }
};

enum class Activation { relu, leaky_relu, tanh, sigmoid };
enum class LossKind { l1, mse };

inline constexpr double kLeakySlope = 0.2;

// x (N,Cin,H,W), w (Cout,Cin,k,k), b (Cout).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, Padding pad = {});

// x (N,Cin,H,W), w (Cin,Cout,k,k), b (Cout). Output extent (H-1)*stride - 2*pad + k + out_pad.
template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad,
                        std::size_t out_pad);

template <typename T>
Var<T> reflect_pad2d(Var<T> x, std::size_t pad);

// Per (n, c) slice standardisation without affine parameters.
template <typename T>
Var<T> instance_norm(Var<T> x, double eps);

template <typename T>
Var<T> activation(Var<T> x, Activation kind);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, double factor);

// Mean of |a-b| (l1) or (a-b)^2 (mse) as a rank-0 tensor.
template <typename T>
Var<T> reduce_loss(Var<T> a, Var<T> b, LossKind kind);

template <typename T>
Var<T> sum(Var<T> a);

template <typename T>
Var<T> relu(Var<T> x) { return activation(x, Activation::relu); }
template <typename T>
Var<T> leaky_relu(Var<T> x) { return activation(x, Activation::leaky_relu); }
template <typename T>
Var<T> tanh(Var<T> x) { return activation(x, Activation::tanh); }
template <typename T>
Var<T> sigmoid(Var<T> x) { return activation(x, Activation::sigmoid); }

template <typename T>
Var<T> l1_loss(Var<T> a, Var<T> b) { return reduce_loss(a, b, LossKind::l1); }
template <typename T>
Var<T> mse_loss(Var<T> a, Var<T> b) { return reduce_loss(a, b, LossKind::mse); }

// Constant tensor of `shape` filled with `value`, on the same graph as `like`.
template <typename T>
Var<T> full_like(Var<T> like, T value);

}  // namespace agln
