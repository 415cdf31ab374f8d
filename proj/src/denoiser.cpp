#include "despoof/denoiser.hpp"

#include <cmath>
#include <stdexcept>

#include "despoof/ops.hpp"

namespace despoof {

std::string to_string(DomainTag tag) {
  return tag == DomainTag::spoof_union ? "spoof_union" : "genuine_only";
}

DomainTag parse_domain_tag(const std::string& s) {
  if (s == "spoof_union") return DomainTag::spoof_union;
  if (s == "genuine_only") return DomainTag::genuine_only;
  throw std::invalid_argument("unknown domain tag '" + s + "'");
}

void DenoiserConfig::validate() const {
  if (image_size <= 0 || channels <= 0 || base_width <= 0 || depth_levels <= 0 || time_embed_dim <= 0) {
    throw std::invalid_argument("denoiser config: all dimensions must be positive");
  }
  if (depth_levels > 6) throw std::invalid_argument("denoiser config: depth_levels too large");
  if (image_size % (1 << depth_levels) != 0) {
    throw std::invalid_argument("denoiser config: image_size must be divisible by 2^depth_levels");
  }
  if (time_embed_dim % 2 != 0) throw std::invalid_argument("denoiser config: time_embed_dim must be even");
  if (!(sigma_data >= 0.0) || !std::isfinite(sigma_data)) {
    throw std::invalid_argument("denoiser config: sigma_data must be finite and >= 0");
  }
}

void DenoiserConfig::write_meta(Metadata& meta) const {
  meta["denoiser.image_size"] = std::to_string(image_size);
  meta["denoiser.channels"] = std::to_string(channels);
  meta["denoiser.base_width"] = std::to_string(base_width);
  meta["denoiser.depth_levels"] = std::to_string(depth_levels);
  meta["denoiser.time_embed_dim"] = std::to_string(time_embed_dim);
  meta["denoiser.sigma_data"] = format_double(sigma_data);
  meta["denoiser.seed"] = std::to_string(seed);
}

DenoiserConfig DenoiserConfig::from_meta(const Metadata& meta) {
  auto get = [&](const char* k) -> const std::string& {
    auto it = meta.find(k);
    if (it == meta.end()) throw FormatError(std::string("missing denoiser field ") + k);
    return it->second;
  };
  DenoiserConfig c;
  c.image_size = std::stoi(get("denoiser.image_size"));
  c.channels = std::stoi(get("denoiser.channels"));
  c.base_width = std::stoi(get("denoiser.base_width"));
  c.depth_levels = std::stoi(get("denoiser.depth_levels"));
  c.time_embed_dim = std::stoi(get("denoiser.time_embed_dim"));
  c.sigma_data = parse_double(get("denoiser.sigma_data"));
  c.seed = std::stoull(get("denoiser.seed"));
  c.validate();
  return c;
}

namespace {

std::size_t res_block_count(std::size_t cin, std::size_t cout, std::size_t e) {
  std::size_t n = 9 * cin * cout + cout + e * cout + cout + 9 * cout * cout + cout;
  if (cin != cout) n += cin * cout + cout;
  return n;
}

template <class T>
void add_res_block(ParamSet<T>& ps, const std::string& p, std::size_t cin, std::size_t cout, std::size_t e, Rng& rng) {
  ps.add_fan_in(p + ".conv1.w", {cout, cin, 3, 3}, 9 * cin, rng);
  ps.add_zeros(p + ".conv1.b", {cout});
  ps.add_fan_in(p + ".temb.w", {cout, e}, e, rng);
  ps.add_zeros(p + ".temb.b", {cout});
  ps.add_fan_in(p + ".conv2.w", {cout, cout, 3, 3}, 9 * cout, rng);
  ps.add_zeros(p + ".conv2.b", {cout});
  if (cin != cout) {
    ps.add_fan_in(p + ".skip.w", {cout, cin, 1, 1}, cin, rng);
    ps.add_zeros(p + ".skip.b", {cout});
  }
}

template <class T>
Var<T> conv_bias(const ParamSet<T>& ps, const std::string& p, const Var<T>& x, std::size_t stride, std::size_t pad) {
  return add_channel_bias(conv2d(x, ps[p + ".w"], stride, pad), ps[p + ".b"]);
}

}  // namespace

std::size_t denoiser_param_count(const DenoiserConfig& c) {
  c.validate();
  const auto e = static_cast<std::size_t>(c.time_embed_dim);
  const auto ch = static_cast<std::size_t>(c.channels);
  const auto levels = c.depth_levels;
  std::size_t n = e * e + e;
  n += 9 * ch * c.width(0) + c.width(0);
  for (int l = 0; l < levels; ++l) {
    const std::size_t w = c.width(l), wn = c.width(l + 1);
    n += res_block_count(w, w, e) + 9 * w * wn + wn;
  }
  n += res_block_count(c.width(levels), c.width(levels), e);
  for (int l = levels - 1; l >= 0; --l) {
    n += res_block_count(c.width(l + 1) + c.width(l), c.width(l), e);
  }
  n += 9 * c.width(0) * ch + ch;
  return n;
}

template <class T>
BasicTensor<T> time_embedding(int t, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw std::invalid_argument("time_embedding: dim must be positive and even");
  if (t < 0) throw std::invalid_argument("time_embedding: t must be nonnegative");
  BasicTensor<T> out(Shape{static_cast<std::size_t>(dim)});
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    out[2 * i] = static_cast<T>(std::sin(t * freq));
    out[2 * i + 1] = static_cast<T>(std::cos(t * freq));
  }
  return out;
}

template <class T>
BasicTensor<T> NoisePredictor<T>::predict(const BasicTensor<T>& x_t, int t) const {
  NoGradGuard guard;
  if (x_t.rank() == 3) {
    Shape batched = x_t.shape();
    batched.insert(batched.begin(), 1);
    const int steps[1] = {t};
    auto y = forward(Var<T>(x_t.reshaped(batched)), steps);
    return y.value().reshaped(x_t.shape());
  }
  std::vector<int> steps(x_t.dim(0), t);
  return forward(Var<T>(x_t), steps).value();
}

template <class T>
BasicDenoiserParams<T>::BasicDenoiserParams(DenoiserConfig config, DomainTag tag, ParamSet<T> layers,
                                            NoiseSchedule schedule)
    : config_(config), tag_(tag), layers_(std::move(layers)), schedule_(std::move(schedule)) {
  config_.validate();
}

template <class T>
Var<T> BasicDenoiserParams<T>::res_block(const std::string& p, const Var<T>& x, const Var<T>& temb) const {
  const auto& ps = layers_;
  auto h = conv_bias(ps, p + ".conv1", silu(x), 1, 1);
  h = add_channel_shift(h, linear(temb, ps[p + ".temb.w"], ps[p + ".temb.b"]));
  h = conv_bias(ps, p + ".conv2", silu(h), 1, 1);
  auto skip = ps.contains(p + ".skip.w") ? conv_bias(ps, p + ".skip", x, 1, 0) : x;
  return add(skip, h);
}

template <class T>
Var<T> BasicDenoiserParams<T>::forward(const Var<T>& x_t, std::span<const int> t) const {
  return forward(x_t, t, DenoiserForwardOptions{});
}

template <class T>
Var<T> BasicDenoiserParams<T>::forward(const Var<T>& x_t, std::span<const int> t,
                                       const DenoiserForwardOptions& opts) const {
  const auto n = static_cast<std::size_t>(config_.image_size);
  const auto ch = static_cast<std::size_t>(config_.channels);
  const auto& s = x_t.shape();
  if (s.size() != 4 || s[1] != ch || s[2] != n || s[3] != n) {
    throw std::invalid_argument("denoiser: expected input [B," + std::to_string(ch) + "," + std::to_string(n) + "," +
                                std::to_string(n) + "], got " + shape_str(s));
  }
  if (t.size() != s[0]) throw std::invalid_argument("denoiser: one timestep per batch element required");
  const auto e = static_cast<std::size_t>(config_.time_embed_dim);

  std::vector<BasicTensor<T>> embeds;
  embeds.reserve(t.size());
  for (int step : t) embeds.push_back(time_embedding<T>(step, config_.time_embed_dim));
  auto temb = silu(linear(Var<T>(stack(embeds).reshaped({t.size(), e})), layers_["time.w"], layers_["time.b"]));

  const int levels = config_.depth_levels;
  const double sd = config_.sigma_data;
  std::vector<T> c_in, c_skip, c_out;
  for (int step : t) {
    const double a = schedule_.alpha_bar(step);
    const double v = 1.0 - a + a * sd * sd;
    c_in.push_back(static_cast<T>(1.0 / std::sqrt(v)));
    c_skip.push_back(static_cast<T>(std::sqrt(1.0 - a) / v));
    c_out.push_back(static_cast<T>(sd * std::sqrt(a) / std::sqrt(v)));
  }
  auto h = conv_bias(layers_, "in", sd > 0 ? scale_batch(x_t, c_in) : x_t, 1, 1);
  std::vector<Var<T>> skips;
  for (int l = 0; l < levels; ++l) {
    const auto p = "enc" + std::to_string(l);
    h = res_block(p + ".res", h, temb);
    skips.push_back(h);
    h = conv_bias(layers_, p + ".down", h, 2, 1);
  }
  h = res_block("mid.res", h, temb);
  for (int l = levels - 1; l >= 0; --l) {
    h = upsample_nearest2(h);
    auto skip = opts.drop_skips ? Var<T>(BasicTensor<T>::zeros(skips[l].shape())) : skips[l];
    h = res_block("dec" + std::to_string(l) + ".res", concat_channels(h, skip), temb);
  }
  auto out = conv_bias(layers_, "out", silu(h), 1, 1);
  if (sd == 0) return out;
  return add(scale_batch(x_t, std::move(c_skip)), scale_batch(out, std::move(c_out)));
}

template <class T>
BasicDenoiserParams<T> init_denoiser(const DenoiserConfig& c, DomainTag tag, const NoiseSchedule& schedule) {
  c.validate();
  Rng rng(derive_seed(c.seed, "denoiser.init"));
  ParamSet<T> ps;
  const auto e = static_cast<std::size_t>(c.time_embed_dim);
  const auto ch = static_cast<std::size_t>(c.channels);
  const int levels = c.depth_levels;
  ps.add_fan_in("time.w", {e, e}, e, rng);
  ps.add_zeros("time.b", {e});
  ps.add_fan_in("in.w", {static_cast<std::size_t>(c.width(0)), ch, 3, 3}, 9 * ch, rng);
  ps.add_zeros("in.b", {static_cast<std::size_t>(c.width(0))});
  for (int l = 0; l < levels; ++l) {
    const std::size_t w = c.width(l), wn = c.width(l + 1);
    const auto p = "enc" + std::to_string(l);
    add_res_block(ps, p + ".res", w, w, e, rng);
    ps.add_fan_in(p + ".down.w", {wn, w, 3, 3}, 9 * w, rng);
    ps.add_zeros(p + ".down.b", {wn});
  }
  add_res_block(ps, "mid.res", c.width(levels), c.width(levels), e, rng);
  for (int l = levels - 1; l >= 0; --l) {
    add_res_block(ps, "dec" + std::to_string(l) + ".res", c.width(l + 1) + c.width(l), c.width(l), e, rng);
  }
  ps.add_fan_in("out.w", {ch, static_cast<std::size_t>(c.width(0)), 3, 3}, 9 * c.width(0), rng);
  ps.add_zeros("out.b", {ch});
  return BasicDenoiserParams<T>(c, tag, std::move(ps), schedule);
}

template <class T>
BasicTensor<T> predict_eps(const BasicDenoiserParams<T>& params, const BasicTensor<T>& x_t, int t) {
  const auto n = static_cast<std::size_t>(params.config().image_size);
  const Shape expect{static_cast<std::size_t>(params.config().channels), n, n};
  if (x_t.shape() != expect) {
    throw std::invalid_argument("predict_eps: expected " + shape_str(expect) + ", got " + shape_str(x_t.shape()));
  }
  return params.predict(x_t, t);
}

void save_denoiser(const std::string& path, const DenoiserParams& params, const NoiseSchedule& schedule) {
  Container c;
  std::copy_n(kDenoiserMagic, 4, c.magic.begin());
  params.config().write_meta(c.meta);
  schedule.write_meta(c.meta);
  c.meta["domain_tag"] = to_string(params.domain_tag());
  c.tensors = params.layers().to_named();
  save_container(path, c);
}

LoadedDenoiser load_denoiser(const std::string& path) {
  auto c = load_container(path);
  if (!std::equal(c.magic.begin(), c.magic.end(), kDenoiserMagic)) {
    throw FormatError("'" + path + "' is not a denoiser checkpoint");
  }
  auto config = DenoiserConfig::from_meta(c.meta);
  auto schedule = NoiseSchedule::from_meta(c.meta);
  auto params = init_denoiser<float>(config, parse_domain_tag(c.value("domain_tag")), schedule);
  params.layers().load_named(c.tensors);
  return {std::move(params), std::move(schedule)};
}

template class NoisePredictor<float>;
template class NoisePredictor<double>;
template class BasicDenoiserParams<float>;
template class BasicDenoiserParams<double>;
template BasicTensor<float> time_embedding(int, int);
template BasicTensor<double> time_embedding(int, int);
template BasicDenoiserParams<float> init_denoiser(const DenoiserConfig&, DomainTag, const NoiseSchedule&);
template BasicDenoiserParams<double> init_denoiser(const DenoiserConfig&, DomainTag, const NoiseSchedule&);
template BasicTensor<float> predict_eps(const BasicDenoiserParams<float>&, const BasicTensor<float>&, int);
template BasicTensor<double> predict_eps(const BasicDenoiserParams<double>&, const BasicTensor<double>&, int);

}  // namespace despoof
