#include "ucs/layers.hpp"

#include <cmath>

namespace ucs {

template <typename T>
void fan_in_uniform(Tensor<T>& weight, std::size_t fan_in, Rng& rng) {
  const double a = std::sqrt(6.0 / double(fan_in));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& v : weight.mutable_data()) v = T(dist(rng));
}

template <typename T>
ConvLayer<T> ConvLayer<T>::zeros(std::size_t cout, std::size_t cin, std::size_t kernel, bool with_bias,
                                 std::size_t stride, std::size_t pad) {
  ConvLayer layer;
  layer.weight = Tensor<T>::zeros({cout, cin, kernel, kernel}, true);
  if (with_bias) layer.bias = Tensor<T>::zeros({cout}, true);
  layer.stride = stride;
  layer.pad = pad == SIZE_MAX ? kernel / 2 : pad;
  return layer;
}

template <typename T>
ConvLayer<T> ConvLayer<T>::make(std::size_t cout, std::size_t cin, std::size_t kernel, Rng& rng,
                                bool with_bias, std::size_t stride, std::size_t pad) {
  auto layer = zeros(cout, cin, kernel, with_bias, stride, pad);
  fan_in_uniform(layer.weight, cin * kernel * kernel, rng);
  return layer;
}

template <typename T>
Tensor<T> ConvLayer<T>::operator()(const Tensor<T>& x) const {
  return conv2d(x, weight, bias, {stride, stride}, {pad, pad});
}

template <typename T>
void ConvLayer<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight, true});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, true});
}

template <typename T>
FeatureBlock<T> FeatureBlock<T>::make(std::size_t channels, Rng& rng) {
  FeatureBlock block;
  block.conv = ConvLayer<T>::make(channels, channels, 3, rng, false);
  block.gamma = Tensor<T>::full({channels}, T(1), true);
  block.beta = Tensor<T>::zeros({channels}, true);
  block.stats = BatchNormStats<T>::make(channels);
  return block;
}

template <typename T>
Tensor<T> FeatureBlock<T>::operator()(const Tensor<T>& x, Mode mode) {
  return relu(batchnorm(conv(x), gamma, beta, stats, mode));
}

template <typename T>
void FeatureBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  conv.collect(out, prefix + ".conv");
  out.push_back({prefix + ".bn.gamma", gamma, true});
  out.push_back({prefix + ".bn.beta", beta, true});
  out.push_back({prefix + ".bn.running_mean", stats.running_mean, false});
  out.push_back({prefix + ".bn.running_var", stats.running_var, false});
}

template void fan_in_uniform(Tensor<float>&, std::size_t, Rng&);
template void fan_in_uniform(Tensor<double>&, std::size_t, Rng&);
template struct ConvLayer<float>;
template struct ConvLayer<double>;
template struct FeatureBlock<float>;
template struct FeatureBlock<double>;

}  // namespace ucs
