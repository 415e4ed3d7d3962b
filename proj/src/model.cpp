#include "ucs/model.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "ucs/errors.hpp"

namespace ucs {

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'C', 'S', 'W'};
constexpr std::uint8_t kCheckpointVersion = 1;
constexpr const char* kPhiName = "sampling.phi";

std::uint8_t ssg_code(SsgVariant v) { return static_cast<std::uint8_t>(v); }
std::uint8_t nl_code(NonLocalKind k) { return static_cast<std::uint8_t>(k); }

}  // namespace

void ModelConfig::validate() const {
  constexpr std::size_t u16 = std::numeric_limits<std::uint16_t>::max();
  constexpr std::size_t u8 = std::numeric_limits<std::uint8_t>::max();
  if (phases == 0 || phases > u16) throw ConfigError("K must be in [1, 65535]");
  if (block == 0 || block > u16) throw ConfigError("B must be in [1, 65535]");
  if (channels == 0 || channels > u16) throw ConfigError("c must be in [1, 65535]");
  if (febs == 0 || febs > u8) throw ConfigError("Q must be in [1, 255]");
  if (patch == 0 || patch % 2 == 0 || patch > u8) throw ConfigError("d must be odd and at most 255");
  if (nl_subsample != 1 && nl_subsample != 2) throw ConfigError("nl_subsample must be 1 or 2");
  measurement_count(block, rate);
}

std::size_t ModelConfig::measurements() const { return measurement_count(block, rate); }

std::string ModelConfig::describe() const {
  std::ostringstream os;
  os << "K=" << phases << " B=" << block << " rate=" << rate << " n_B=" << measurements()
     << " c=" << channels << " Q=" << febs << " d=" << patch << " ssg=" << to_string(ssg)
     << " nl=" << to_string(nl) << " nl_subsample=" << nl_subsample << " seed=" << seed;
  return os.str();
}

template <typename T>
ParamList<T> ModelParams<T>::named() const {
  ParamList<T> out;
  init_feature.collect(out, "init");
  for (std::size_t k = 0; k < phases.size(); ++k) {
    const std::string prefix = "phase" + std::to_string(k + 1);
    phases[k].ssg.collect(out, prefix + ".ssg");
    phases[k].prox.collect(out, prefix + ".prox");
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> ModelParams<T>::trainable() const {
  std::vector<Tensor<T>> out;
  for (auto& e : named())
    if (e.trainable) out.push_back(e.tensor);
  return out;
}

template <typename T>
ModelParams<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams<T> p;
  p.init_feature = ConvLayer<T>::make(config.channels, 1, 3, rng);
  for (std::size_t k = 0; k < config.phases; ++k) {
    PhaseParams<T> phase{
        SsgNetParams<T>::create(config.ssg, config.channels, config.febs, config.block, rng),
        ProxParams<T>::create(config.channels, config.patch, config.nl, rng)};
    p.phases.push_back(std::move(phase));
  }
  return p;
}

std::size_t parameter_count(const ModelConfig& config) {
  config.validate();
  const std::size_t c = config.channels, d2 = config.patch * config.patch;
  const std::size_t ce = std::max<std::size_t>(1, c / 2);
  const auto conv = [](std::size_t cout, std::size_t cin, std::size_t k2, bool bias) {
    return cout * cin * k2 + (bias ? cout : 0);
  };

  std::size_t ssg = 0;
  if (config.ssg == SsgVariant::fixed) {
    ssg = 1;
  } else {
    ssg = conv(c, c, 9, true) + config.febs * (conv(c, c, 9, false) + 2 * c) + conv(1, c, 9, true);
    if (config.ssg == SsgVariant::full) ssg += conv(1, 1, 9, true);
    if (config.ssg == SsgVariant::block) ssg += conv(1, 1, config.block * config.block, true);
  }

  const std::size_t dense = 3 * conv(c, c, 9, true) + conv(c, 2 * c, 1, true) + conv(c, 3 * c, 1, true);
  std::size_t nonlocal = 0;
  if (config.nl != NonLocalKind::none) {
    nonlocal = conv(ce, c, d2, true) + 2 * conv(ce, c, d2, false) + conv(c, ce, 1, true);
    if (config.nl == NonLocalKind::dinlm) nonlocal += conv(2 * d2, c, 9, true);
  }
  const std::size_t prox = conv(c, c + 1, 9, true) + 2 * dense + nonlocal + conv(1, c, 9, true);
  return conv(c, 1, 9, true) + config.phases * (ssg + prox);
}

template <typename T>
ForwardResult<T> forward(const ModelConfig& config, ModelParams<T>& params, const SamplingOperator<T>& op,
                         const MeasurementSet<T>& m, Mode mode) {
  if (params.phases.size() != config.phases)
    throw ShapeError("forward: params hold " + std::to_string(params.phases.size()) + " phases, config " +
                     std::to_string(config.phases));
  ForwardResult<T> out;
  out.x0 = initial_reconstruction(op, m);
  Tensor<T> x = out.x0;
  Tensor<T> h = params.init_feature(x);
  const NonLocalOptions nl_options{config.nl_subsample, false};
  for (auto& phase : params.phases) {
    auto map = ssg_forward(phase.ssg, h, mode);
    const auto r = gradient_step(op, x, m, map);
    auto prox = prox_forward(phase.prox, r, h, config.nl, nl_options);
    x = prox.x;
    h = prox.h;
    out.outputs.push_back(x);
    out.maps.push_back(std::move(map));
    if (prox.offsets.defined()) out.offsets.push_back(prox.offsets);
  }
  out.h = h;
  return out;
}

template <typename T>
Tensor<T> loss(const std::vector<Tensor<T>>& outputs, const Tensor<T>& target) {
  if (outputs.empty()) throw ShapeError("loss: no phase outputs");
  if (target.ndim() == 0) throw ShapeError("loss: empty target");
  Tensor<T> total;
  for (const auto& x : outputs) {
    if (x.shape() != target.shape())
      throw ShapeError("loss: output " + shape_string(x.shape()) + " vs target " +
                       shape_string(target.shape()));
    const auto diff = sub(x, target);
    const auto term = sum(mul(diff, diff));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, T(1.0 / double(outputs.size() * target.dim(0))));
}

template <typename T>
void write_checkpoint(std::ostream& os, const Checkpoint<T>& ckpt) {
  const auto& cfg = ckpt.config;
  cfg.validate();
  detail::LittleEndianWriter out(os);
  out.put_bytes(std::string(kCheckpointMagic, 4));
  out.put(kCheckpointVersion);
  out.put(static_cast<std::uint16_t>(cfg.phases));
  out.put(static_cast<std::uint16_t>(cfg.block));
  out.put(static_cast<std::uint16_t>(cfg.measurements()));
  out.put(static_cast<std::uint16_t>(cfg.channels));
  out.put(static_cast<std::uint8_t>(cfg.febs));
  out.put(static_cast<std::uint8_t>(cfg.patch));
  out.put(ssg_code(cfg.ssg));
  out.put(nl_code(cfg.nl));
  out.put(static_cast<std::uint8_t>(cfg.nl_subsample));
  out.put_f32(static_cast<float>(cfg.rate));

  auto entries = ckpt.params.named();
  entries.push_back({kPhiName, ckpt.op.phi, false});
  out.put(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    out.put(static_cast<std::uint16_t>(e.name.size()));
    out.put_bytes(e.name);
    out.put(static_cast<std::uint8_t>(e.tensor.ndim()));
    for (auto dim : e.tensor.shape()) out.put(static_cast<std::uint32_t>(dim));
    for (auto v : e.tensor.data()) out.put_f32(static_cast<float>(v));
  }
}

template <typename T>
Checkpoint<T> read_checkpoint(std::istream& is) {
  detail::LittleEndianReader in(is, "DCSW");
  if (in.get_bytes(4) != std::string(kCheckpointMagic, 4)) in.fail("bad magic");
  if (in.get<std::uint8_t>() != kCheckpointVersion) in.fail("unsupported version");

  ModelConfig cfg;
  cfg.phases = in.get<std::uint16_t>();
  cfg.block = in.get<std::uint16_t>();
  const std::size_t nb = in.get<std::uint16_t>();
  cfg.channels = in.get<std::uint16_t>();
  cfg.febs = in.get<std::uint8_t>();
  cfg.patch = in.get<std::uint8_t>();
  const auto ssg = in.get<std::uint8_t>();
  const auto nl = in.get<std::uint8_t>();
  cfg.nl_subsample = in.get<std::uint8_t>();
  cfg.rate = in.get_f32();
  if (ssg > ssg_code(SsgVariant::fixed)) in.fail("unknown ssg variant code");
  if (nl > nl_code(NonLocalKind::none)) in.fail("unknown non-local kind code");
  cfg.ssg = static_cast<SsgVariant>(ssg);
  cfg.nl = static_cast<NonLocalKind>(nl);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    in.fail(std::string("invalid config: ") + e.what());
  }
  if (cfg.measurements() != nb) in.fail("n_B inconsistent with B and rate");

  Checkpoint<T> ckpt;
  ckpt.config = cfg;
  ckpt.params = init_parameters<T>(cfg, 0);
  std::map<std::string, Tensor<T>> slots;
  for (auto& e : ckpt.params.named()) slots.emplace(e.name, e.tensor);
  Tensor<T> phi = Tensor<T>::zeros({nb, cfg.block * cfg.block});
  slots.emplace(kPhiName, phi);

  const std::size_t count = in.get<std::uint32_t>();
  if (count != slots.size()) in.fail("tensor count does not match the configuration");
  std::map<std::string, bool> filled;
  for (std::size_t t = 0; t < count; ++t) {
    const std::string name = in.get_bytes(in.get<std::uint16_t>());
    const auto it = slots.find(name);
    if (it == slots.end()) in.fail("unexpected tensor '" + name + "'");
    if (filled[name]) in.fail("duplicate tensor '" + name + "'");
    filled[name] = true;
    Tensor<T>& slot = it->second;
    const std::size_t ndim = in.get<std::uint8_t>();
    Shape shape(ndim);
    for (auto& dim : shape) dim = in.get<std::uint32_t>();
    if (shape != slot.shape())
      in.fail("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
              shape_string(slot.shape()));
    auto data = slot.mutable_data();
    for (auto& v : data) {
      const float f = in.get_f32();
      if (!std::isfinite(f)) in.fail("non-finite value in '" + name + "'");
      v = T(f);
    }
  }
  if (!in.at_end()) in.fail("trailing bytes");
  ckpt.op = operator_from_matrix(cfg.block, cfg.rate, phi, false);
  return ckpt;
}

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(os, ckpt);
  if (!os) throw std::runtime_error("failed writing " + path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_checkpoint<T>(is);
}

template <typename T>
Tensor<T> reconstruct(Checkpoint<T>& ckpt, const MeasurementSet<T>& m) {
  if (m.block != ckpt.config.block || m.measurements() != ckpt.config.measurements())
    throw ShapeError("reconstruct: measurements use B=" + std::to_string(m.block) + ", n_B=" +
                     std::to_string(m.measurements()) + "; checkpoint expects B=" +
                     std::to_string(ckpt.config.block) + ", n_B=" + std::to_string(ckpt.config.measurements()));
  NoGradGuard no_grad;
  const auto out = forward(ckpt.config, ckpt.params, ckpt.op, m, Mode::eval);
  return crop(out.outputs.back(), m.original_h, m.original_w);
}

#define UCS_INSTANTIATE(T)                                                                          \
  template struct ModelParams<T>;                                                                   \
  template ModelParams<T> init_parameters<T>(const ModelConfig&, std::uint64_t);                    \
  template ForwardResult<T> forward(const ModelConfig&, ModelParams<T>&, const SamplingOperator<T>&, \
                                    const MeasurementSet<T>&, Mode);                                \
  template Tensor<T> loss(const std::vector<Tensor<T>>&, const Tensor<T>&);                         \
  template void write_checkpoint(std::ostream&, const Checkpoint<T>&);                              \
  template Checkpoint<T> read_checkpoint<T>(std::istream&);                                         \
  template void save_checkpoint(const std::string&, const Checkpoint<T>&);                          \
  template Checkpoint<T> load_checkpoint<T>(const std::string&);                                    \
  template Tensor<T> reconstruct(Checkpoint<T>&, const MeasurementSet<T>&);
UCS_INSTANTIATE(float)
UCS_INSTANTIATE(double)
#undef UCS_INSTANTIATE

}  // namespace ucs
