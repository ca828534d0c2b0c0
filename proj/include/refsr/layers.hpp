#pragma once

#include <random>
#include <vector>

#include "refsr/kernels.hpp"

namespace refsr {

/// A k x k convolution with bias. Also used as the gradient container for itself.
template <typename T>
struct ConvLayer {
  BasicTensor<T> weight;  // (out, in, k, k)
  std::vector<T> bias;

  ConvLayer() = default;
  ConvLayer(int in_ch, int out_ch, int k = 3) : weight(Shape{out_ch, in_ch, k, k}), bias(out_ch, T(0)) {}

  int in_channels() const { return weight.c(); }
  int out_channels() const { return weight.n(); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return conv2d(x, weight, bias); }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  void init_uniform(std::mt19937_64& rng, bool zero_bias = false);
  void set_zero();
  ConvLayer zeros_like() const;
  ConvLayer& operator+=(const ConvLayer& other);

  template <typename U>
  ConvLayer<U> cast() const {
    ConvLayer<U> out;
    out.weight = weight.template cast<U>();
    out.bias.assign(bias.begin(), bias.end());
    return out;
  }
};

/// Conv layers with relu between them (none after the last).
template <typename T>
struct ConvStack {
  std::vector<ConvLayer<T>> layers;

  struct Cache {
    std::vector<BasicTensor<T>> inputs;  // input of each layer
    std::vector<BasicTensor<T>> pre;     // conv output of each layer before relu
  };

  BasicTensor<T> forward(const BasicTensor<T>& x, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients into `grads` (same layout) and returns d input.
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, const Cache& cache, ConvStack& grads,
                          bool need_input_grad = true) const;

  ConvStack zeros_like() const;

  template <typename U>
  ConvStack<U> cast() const {
    ConvStack<U> out;
    for (const auto& l : layers) out.layers.push_back(l.template cast<U>());
    return out;
  }
};

}  // namespace refsr
