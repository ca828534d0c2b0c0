#include "refsr/layers.hpp"

#include <cmath>

namespace refsr {

template <typename T>
void ConvLayer<T>::init_uniform(std::mt19937_64& rng, bool zero_bias) {
  const double fan_in = static_cast<double>(weight.c()) * weight.h() * weight.w();
  const double bound = 1.0 / std::sqrt(fan_in);
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : weight.values()) v = static_cast<T>(u(rng));
  for (auto& b : bias) b = zero_bias ? T(0) : static_cast<T>(u(rng));
}

template <typename T>
void ConvLayer<T>::set_zero() {
  for (auto& v : weight.values()) v = T(0);
  for (auto& b : bias) b = T(0);
}

template <typename T>
ConvLayer<T> ConvLayer<T>::zeros_like() const {
  ConvLayer out;
  out.weight = BasicTensor<T>(weight.shape());
  out.bias.assign(bias.size(), T(0));
  return out;
}

template <typename T>
ConvLayer<T>& ConvLayer<T>::operator+=(const ConvLayer& other) {
  weight += other.weight;
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += other.bias[i];
  return *this;
}

template <typename T>
BasicTensor<T> ConvStack<T>::forward(const BasicTensor<T>& x, Cache* cache) const {
  BasicTensor<T> cur = x;
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    BasicTensor<T> pre = layers[l](cur);
    if (cache) {
      cache->inputs.push_back(std::move(cur));
      cache->pre.push_back(pre);
    }
    cur = l + 1 < layers.size() ? relu(std::move(pre)) : std::move(pre);
  }
  return cur;
}

template <typename T>
BasicTensor<T> ConvStack<T>::backward(const BasicTensor<T>& grad_out, const Cache& cache, ConvStack& grads,
                                      bool need_input_grad) const {
  BasicTensor<T> g = grad_out;
  for (std::size_t l = layers.size(); l-- > 0;) {
    if (l + 1 < layers.size()) g = relu_backward(g, cache.pre[l]);
    const bool want_input = l > 0 || need_input_grad;
    ConvGrads<T> cg = conv2d_backward(cache.inputs[l], layers[l].weight, g, want_input);
    grads.layers[l].weight += cg.weight;
    for (std::size_t i = 0; i < cg.bias.size(); ++i) grads.layers[l].bias[i] += cg.bias[i];
    g = std::move(cg.input);
  }
  return g;
}

template <typename T>
ConvStack<T> ConvStack<T>::zeros_like() const {
  ConvStack out;
  for (const auto& l : layers) out.layers.push_back(l.zeros_like());
  return out;
}

template struct ConvLayer<float>;
template struct ConvLayer<double>;
template struct ConvStack<float>;
template struct ConvStack<double>;

}  // namespace refsr
