#include "ucs/ssg.hpp"

#include "ucs/errors.hpp"

namespace ucs {

std::string to_string(SsgVariant v) {
  switch (v) {
    case SsgVariant::full: return "full";
    case SsgVariant::block: return "block";
    case SsgVariant::global: return "global";
    case SsgVariant::fixed: return "fixed";
  }
  return "?";
}

SsgVariant parse_ssg_variant(const std::string& name) {
  if (name == "full") return SsgVariant::full;
  if (name == "block") return SsgVariant::block;
  if (name == "global") return SsgVariant::global;
  if (name == "fixed") return SsgVariant::fixed;
  throw ConfigError("unknown ssg variant '" + name + "'");
}

template <typename T>
SsgNetParams<T> SsgNetParams<T>::create(SsgVariant variant, std::size_t channels, std::size_t febs,
                                        std::size_t block, Rng& rng) {
  if (channels == 0) throw ConfigError("ssg: channel count must be positive");
  if (febs == 0) throw ConfigError("ssg: at least one feature block required");
  if (variant == SsgVariant::block && block == 0) throw ConfigError("ssg: block variant needs B > 0");
  SsgNetParams p;
  p.variant = variant;
  p.channels = channels;
  p.block = block;
  if (variant == SsgVariant::fixed) {
    p.rho_logit = Tensor<T>::zeros({1}, true);
    return p;
  }
  p.head = ConvLayer<T>::make(channels, channels, 3, rng);
  for (std::size_t q = 0; q < febs; ++q) p.febs.push_back(FeatureBlock<T>::make(channels, rng));
  p.tail = ConvLayer<T>::make(1, channels, 3, rng);
  if (variant == SsgVariant::full) p.norm = ConvLayer<T>::make(1, 1, 3, rng);
  if (variant == SsgVariant::block) p.norm = ConvLayer<T>::make(1, 1, block, rng, true, block, 0);
  return p;
}

template <typename T>
void SsgNetParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  if (variant == SsgVariant::fixed) {
    out.push_back({prefix + ".rho_logit", rho_logit, true});
    return;
  }
  head.collect(out, prefix + ".head");
  for (std::size_t q = 0; q < febs.size(); ++q) febs[q].collect(out, prefix + ".feb" + std::to_string(q));
  tail.collect(out, prefix + ".tail");
  if (norm.weight.defined()) norm.collect(out, prefix + ".norm");
}

template <typename T>
StepSizeMap<T> ssg_forward(SsgNetParams<T>& params, const Tensor<T>& h_prev, Mode mode) {
  StepSizeMap<T> map;
  map.variant = params.variant;
  if (params.variant == SsgVariant::fixed) {
    map.values = add_scalar(tanh(params.rho_logit), T(1));
    map.expanded = map.values;
    return map;
  }
  if (h_prev.ndim() != 4 || h_prev.dim(1) != params.channels)
    throw ShapeError("ssg_forward: expected [N," + std::to_string(params.channels) + ",H,W], got " +
                     shape_string(h_prev.shape()));
  const std::size_t h = h_prev.dim(2), w = h_prev.dim(3);

  const Tensor<T> head = params.head(h_prev);
  Tensor<T> f = head;
  for (auto& feb : params.febs) f = feb(f, mode);
  const Tensor<T> feature = params.tail(add(f, head));

  switch (params.variant) {
    case SsgVariant::full:
      map.values = add_scalar(tanh(params.norm(feature)), T(1));
      map.expanded = map.values;
      break;
    case SsgVariant::block: {
      const std::size_t b = params.block;
      if (h % b != 0 || w % b != 0)
        throw ShapeError("ssg_forward: block variant needs dims divisible by " + std::to_string(b));
      map.values = add_scalar(tanh(params.norm(feature)), T(1));
      map.expanded = upsample_nearest(map.values, b, b);
      break;
    }
    case SsgVariant::global:
      map.values = add_scalar(tanh(global_avg_pool(feature)), T(1));
      map.expanded = upsample_nearest(map.values, h, w);
      break;
    case SsgVariant::fixed:
      break;
  }
  return map;
}

template <typename T>
StepSizeMap<T> constant_step_map(T rho) {
  StepSizeMap<T> map;
  map.variant = SsgVariant::fixed;
  map.values = Tensor<T>::scalar(rho);
  map.expanded = map.values;
  return map;
}

template <typename T>
Tensor<T> gradient_step(const SamplingOperator<T>& op, const Tensor<T>& x_prev,
                        const MeasurementSet<T>& m, const StepSizeMap<T>& map) {
  const Tensor<T> grad = apply_fidelity_gradient(op, x_prev, m);
  const auto& p = map.expanded;
  if (p.numel() != 1 && p.shape() != x_prev.shape())
    throw ShapeError("gradient_step: step map " + shape_string(p.shape()) +
                     " does not broadcast to " + shape_string(x_prev.shape()));
  return sub(x_prev, mul(p, grad));
}

#define UCS_INSTANTIATE(T)                                                                       \
  template struct SsgNetParams<T>;                                                               \
  template StepSizeMap<T> ssg_forward(SsgNetParams<T>&, const Tensor<T>&, Mode);                 \
  template StepSizeMap<T> constant_step_map(T);                                                  \
  template Tensor<T> gradient_step(const SamplingOperator<T>&, const Tensor<T>&,                 \
                                   const MeasurementSet<T>&, const StepSizeMap<T>&);
UCS_INSTANTIATE(float)
UCS_INSTANTIATE(double)
#undef UCS_INSTANTIATE

}  // namespace ucs
