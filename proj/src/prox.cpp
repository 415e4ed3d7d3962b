#include "ucs/prox.hpp"

#include "ucs/errors.hpp"

namespace ucs {

std::string to_string(NonLocalKind k) {
  switch (k) {
    case NonLocalKind::dinlm: return "dinlm";
    case NonLocalKind::nlm: return "nlm";
    case NonLocalKind::none: return "none";
  }
  return "?";
}

NonLocalKind parse_nonlocal_kind(const std::string& name) {
  if (name == "dinlm") return NonLocalKind::dinlm;
  if (name == "nlm") return NonLocalKind::nlm;
  if (name == "none") return NonLocalKind::none;
  throw ConfigError("unknown non-local kind '" + name + "'");
}

template <typename T>
DinlmParams<T> DinlmParams<T>::create(std::size_t channels, std::size_t patch, bool with_offsets,
                                      Rng& rng) {
  if (channels == 0) throw ConfigError("non-local: channel count must be positive");
  if (patch == 0 || patch % 2 == 0) throw ConfigError("non-local: patch size d must be odd");
  DinlmParams p;
  p.channels = channels;
  p.embed = std::max<std::size_t>(1, channels / 2);
  p.patch = patch;
  if (with_offsets) p.offset = ConvLayer<T>::zeros(2 * patch * patch, channels, 3);
  p.theta = ConvLayer<T>::make(p.embed, channels, patch, rng);
  p.phi_kernel = Tensor<T>::zeros({p.embed, channels, patch, patch}, true);
  p.g_kernel = Tensor<T>::zeros({p.embed, channels, patch, patch}, true);
  fan_in_uniform(p.phi_kernel, channels * patch * patch, rng);
  fan_in_uniform(p.g_kernel, channels * patch * patch, rng);
  p.project = ConvLayer<T>::make(channels, p.embed, 1, rng);
  return p;
}

template <typename T>
void DinlmParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  if (has_offsets()) offset.collect(out, prefix + ".offset");
  theta.collect(out, prefix + ".theta");
  out.push_back({prefix + ".phi.weight", phi_kernel, true});
  out.push_back({prefix + ".g.weight", g_kernel, true});
  project.collect(out, prefix + ".project");
}

namespace {

template <typename T>
void check_features(const Tensor<T>& features, const DinlmParams<T>& params, const char* who) {
  if (features.ndim() != 4 || features.dim(1) != params.channels)
    throw ShapeError(std::string(who) + ": expected [N," + std::to_string(params.channels) +
                     ",H,W], got " + shape_string(features.shape()));
}

template <typename T>
AffinityMatrix<T> snapshot(const Tensor<T>& a) {
  const auto d = a.data();
  return AffinityMatrix<T>{a.dim(0), a.dim(1), std::vector<T>(d.begin(), d.end())};
}

// Embedded-Gaussian attention given the three embeddings, then the residual
// projection back to c channels.
template <typename T>
NonLocalOutput<T> attend(const Tensor<T>& features, const DinlmParams<T>& params, const Tensor<T>& theta,
                         Tensor<T> phi, Tensor<T> g, const NonLocalOptions& options) {
  const std::size_t n = features.dim(0), h = features.dim(2), w = features.dim(3);
  const std::size_t ce = params.embed;
  if (options.subsample > 1 && h >= 8 && w >= 8) {
    phi = max_pool2d(phi, options.subsample);
    g = max_pool2d(g, options.subsample);
  }
  const std::size_t keys = phi.dim(2) * phi.dim(3);

  NonLocalOutput<T> out;
  std::vector<Tensor<T>> items;
  items.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto q = transpose(reshape(select_batch(theta, b), {ce, h * w}));  // [HW, ce]
    const auto k = reshape(select_batch(phi, b), {ce, keys});                 // [ce, K]
    const auto v = transpose(reshape(select_batch(g, b), {ce, keys}));        // [K, ce]
    const auto a = softmax_rows(matmul(q, k));                                // [HW, K]
    if (options.keep_affinity) out.affinity.push_back(snapshot(a));
    items.push_back(reshape(transpose(matmul(a, v)), {1, ce, h, w}));
  }
  const auto y = n == 1 ? items.front() : concat_batch(items);
  out.output = add(features, params.project(y));
  return out;
}

}  // namespace

template <typename T>
NonLocalOutput<T> nlm_forward(const Tensor<T>& features, const DinlmParams<T>& params,
                              const NonLocalOptions& options) {
  check_features(features, params, "nlm_forward");
  const std::size_t pad = params.patch / 2;
  const auto theta = params.theta(features);
  const auto phi = conv2d(features, params.phi_kernel, Tensor<T>(), {1, 1}, {pad, pad});
  const auto g = conv2d(features, params.g_kernel, Tensor<T>(), {1, 1}, {pad, pad});
  return attend(features, params, theta, phi, g, options);
}

template <typename T>
NonLocalOutput<T> dinlm_forward(const Tensor<T>& features, const DinlmParams<T>& params,
                                const NonLocalOptions& options) {
  check_features(features, params, "dinlm_forward");
  if (!params.has_offsets()) throw ConfigError("dinlm_forward: params carry no offset conv");
  const auto offsets = params.offset(features);
  const auto theta = params.theta(features);
  const auto phi = deformable_conv2d(features, params.phi_kernel, offsets);
  const auto g = deformable_conv2d(features, params.g_kernel, offsets);
  auto out = attend(features, params, theta, phi, g, options);
  out.offsets = offsets;
  return out;
}

template <typename T>
DenseResidualBlock<T> DenseResidualBlock<T>::create(std::size_t channels, std::size_t layers, Rng& rng) {
  DenseResidualBlock block;
  for (std::size_t j = 0; j < layers; ++j) {
    if (j > 0) block.projections.push_back(ConvLayer<T>::make(channels, (j + 1) * channels, 1, rng));
    block.convs.push_back(ConvLayer<T>::make(channels, channels, 3, rng));
  }
  return block;
}

template <typename T>
Tensor<T> DenseResidualBlock<T>::operator()(const Tensor<T>& x) const {
  std::vector<Tensor<T>> seen{x};
  Tensor<T> last;
  for (std::size_t j = 0; j < convs.size(); ++j) {
    const auto in = j == 0 ? x : projections[j - 1](concat_channels(seen));
    last = relu(convs[j](in));
    seen.push_back(last);
  }
  return add(x, last);
}

template <typename T>
void DenseResidualBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  for (std::size_t j = 0; j < convs.size(); ++j) {
    if (j > 0) projections[j - 1].collect(out, prefix + ".proj" + std::to_string(j));
    convs[j].collect(out, prefix + ".conv" + std::to_string(j));
  }
}

template <typename T>
ProxParams<T> ProxParams<T>::create(std::size_t channels, std::size_t patch, NonLocalKind kind, Rng& rng) {
  if (channels == 0) throw ConfigError("prox: channel count must be positive");
  ProxParams p;
  p.channels = channels;
  p.fusion = ConvLayer<T>::make(channels, channels + 1, 3, rng);
  p.block1 = DenseResidualBlock<T>::create(channels, 3, rng);
  if (kind != NonLocalKind::none)
    p.nonlocal = DinlmParams<T>::create(channels, patch, kind == NonLocalKind::dinlm, rng);
  p.block2 = DenseResidualBlock<T>::create(channels, 3, rng);
  p.head = ConvLayer<T>::make(1, channels, 3, rng);
  return p;
}

template <typename T>
void ProxParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  fusion.collect(out, prefix + ".fusion");
  block1.collect(out, prefix + ".block1");
  if (nonlocal) nonlocal->collect(out, prefix + ".nonlocal");
  block2.collect(out, prefix + ".block2");
  head.collect(out, prefix + ".head");
}

template <typename T>
ProxOutput<T> prox_forward(const ProxParams<T>& params, const Tensor<T>& r, const Tensor<T>& h_prev,
                           NonLocalKind kind, const NonLocalOptions& options) {
  if (r.ndim() != 4 || r.dim(1) != 1)
    throw ShapeError("prox_forward: r must be [N,1,H,W], got " + shape_string(r.shape()));
  if (h_prev.ndim() != 4 || h_prev.dim(0) != r.dim(0) || h_prev.dim(1) != params.channels ||
      h_prev.dim(2) != r.dim(2) || h_prev.dim(3) != r.dim(3))
    throw ShapeError("prox_forward: h_prev " + shape_string(h_prev.shape()) + " inconsistent with r " +
                     shape_string(r.shape()));
  if (kind != NonLocalKind::none && !params.nonlocal)
    throw ConfigError("prox_forward: params carry no non-local weights");

  ProxOutput<T> out;
  auto f = params.block1(params.fusion(concat_channels<T>({r, h_prev})));
  if (kind != NonLocalKind::none) {
    auto nl = kind == NonLocalKind::dinlm ? dinlm_forward(f, *params.nonlocal, options)
                                          : nlm_forward(f, *params.nonlocal, options);
    f = nl.output;
    out.affinity = std::move(nl.affinity);
    out.offsets = nl.offsets;
  }
  out.h = params.block2(f);
  out.x = add(r, params.head(out.h));
  return out;
}

#define UCS_INSTANTIATE(T)                                                                         \
  template struct DinlmParams<T>;                                                                  \
  template struct DenseResidualBlock<T>;                                                           \
  template struct ProxParams<T>;                                                                   \
  template NonLocalOutput<T> nlm_forward(const Tensor<T>&, const DinlmParams<T>&,                  \
                                         const NonLocalOptions&);                                  \
  template NonLocalOutput<T> dinlm_forward(const Tensor<T>&, const DinlmParams<T>&,                \
                                           const NonLocalOptions&);                                \
  template ProxOutput<T> prox_forward(const ProxParams<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                      NonLocalKind, const NonLocalOptions&);
UCS_INSTANTIATE(float)
UCS_INSTANTIATE(double)
#undef UCS_INSTANTIATE

}  // namespace ucs
