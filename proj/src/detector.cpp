#include "despoof/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "despoof/adam.hpp"
#include "despoof/metrics.hpp"
#include "despoof/ops.hpp"

namespace despoof {

std::string to_string(DetectorInputs v) {
  switch (v) {
    case DetectorInputs::rgb: return "rgb";
    case DetectorInputs::noise: return "noise";
    case DetectorInputs::rgb_rgb: return "rgb_rgb";
    case DetectorInputs::rgb_noise: return "rgb_noise";
  }
  throw std::logic_error("bad DetectorInputs");
}

DetectorInputs parse_detector_inputs(const std::string& s) {
  for (auto v : {DetectorInputs::rgb, DetectorInputs::noise, DetectorInputs::rgb_rgb, DetectorInputs::rgb_noise}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown detector inputs '" + s + "' (rgb, noise, rgb_rgb, rgb_noise)");
}

bool needs_noise(DetectorInputs v) { return v == DetectorInputs::noise || v == DetectorInputs::rgb_noise; }
bool is_two_stream(DetectorInputs v) { return v == DetectorInputs::rgb_rgb || v == DetectorInputs::rgb_noise; }

void DetectorConfig::validate() const {
  if (width1 <= 0 || width2 <= 0 || width3 <= 0 || head_width <= 0) {
    throw std::invalid_argument("detector config: widths must be positive");
  }
  if (!(cdc_theta >= 0.0 && cdc_theta <= 1.0)) throw std::invalid_argument("detector config: cdc_theta must be in [0, 1]");
  if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) {
    throw std::invalid_argument("detector config: crop_fraction must be in (0, 1]");
  }
  if (!(noise_gain > 0.0) || !std::isfinite(noise_gain)) throw std::invalid_argument("detector config: noise_gain must be > 0");
  if (image_size <= 0 || image_size % 8 != 0) throw std::invalid_argument("detector config: image_size must be a multiple of 8");
}

void DetectorConfig::write_meta(Metadata& meta) const {
  meta["detector.inputs"] = to_string(inputs);
  meta["detector.width1"] = std::to_string(width1);
  meta["detector.width2"] = std::to_string(width2);
  meta["detector.width3"] = std::to_string(width3);
  meta["detector.head_width"] = std::to_string(head_width);
  meta["detector.cdc_theta"] = format_double(cdc_theta);
  meta["detector.crop_fraction"] = format_double(crop_fraction);
  meta["detector.noise_gain"] = format_double(noise_gain);
  meta["detector.image_size"] = std::to_string(image_size);
  meta["detector.seed"] = std::to_string(seed);
}

DetectorConfig DetectorConfig::from_meta(const Metadata& meta) {
  auto get = [&](const char* k) -> const std::string& {
    auto it = meta.find(k);
    if (it == meta.end()) throw FormatError(std::string("missing detector field ") + k);
    return it->second;
  };
  DetectorConfig c;
  c.inputs = parse_detector_inputs(get("detector.inputs"));
  c.width1 = std::stoi(get("detector.width1"));
  c.width2 = std::stoi(get("detector.width2"));
  c.width3 = std::stoi(get("detector.width3"));
  c.head_width = std::stoi(get("detector.head_width"));
  c.cdc_theta = parse_double(get("detector.cdc_theta"));
  c.crop_fraction = parse_double(get("detector.crop_fraction"));
  c.noise_gain = parse_double(get("detector.noise_gain"));
  c.image_size = std::stoi(get("detector.image_size"));
  c.seed = std::stoull(get("detector.seed"));
  c.validate();
  return c;
}

template <class T>
BasicTensor<T> center_crop(const BasicTensor<T>& image, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("center_crop: fraction must be in (0, 1]");
  if (image.rank() < 2) throw std::invalid_argument("center_crop: need at least [H,W]");
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  const std::size_t planes = image.size() / (h * w);
  struct Tap {
    std::size_t lo, hi;
    double f;
  };
  auto taps = [fraction](std::size_t n) {
    std::vector<Tap> out(n);
    const double origin = (1.0 - fraction) / 2.0 * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      double src = origin + (static_cast<double>(i) + 0.5) * fraction - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(n - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      out[i] = {lo, std::min(lo + 1, n - 1), src - static_cast<double>(lo)};
    }
    return out;
  };
  const auto ty = taps(h), tx = taps(w);
  BasicTensor<T> out(image.shape());
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = image.data() + p * h * w;
    T* o = out.data() + p * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      const auto& a = ty[i];
      for (std::size_t j = 0; j < w; ++j) {
        const auto& b = tx[j];
        const double top = in[a.lo * w + b.lo] * (1 - b.f) + in[a.lo * w + b.hi] * b.f;
        const double bot = in[a.hi * w + b.lo] * (1 - b.f) + in[a.hi * w + b.hi] * b.f;
        o[i * w + j] = static_cast<T>(a.f == 0.0 ? top : top * (1 - a.f) + bot * a.f);
      }
    }
  }
  return out;
}

template <class T>
BasicDetectorParams<T>::BasicDetectorParams(DetectorConfig config, ParamSet<T> layers)
    : config_(config), layers_(std::move(layers)) {
  config_.validate();
}

template <class T>
std::vector<std::string> BasicDetectorParams<T>::branch_names() const {
  switch (config_.inputs) {
    case DetectorInputs::rgb: return {"rgb"};
    case DetectorInputs::noise: return {"noise"};
    case DetectorInputs::rgb_rgb: return {"rgb", "full"};
    case DetectorInputs::rgb_noise: return {"rgb", "noise"};
  }
  throw std::logic_error("bad DetectorInputs");
}

template <class T>
Var<T> BasicDetectorParams<T>::block(const std::string& p, const Var<T>& x) const {
  auto h = cdc2d(x, layers_[p + ".w"], static_cast<T>(config_.cdc_theta), 1, 1);
  return max_pool2(relu(add_channel_bias(h, layers_[p + ".b"])));
}

namespace {

template <class T>
BasicTensor<T> as_batch(const BasicTensor<T>& x, std::size_t image_size, const char* what) {
  BasicTensor<T> b = x;
  if (b.rank() == 3) {
    Shape s = b.shape();
    s.insert(s.begin(), 1);
    b = b.reshaped(s);
  }
  if (b.rank() != 4 || b.dim(1) != 3 || b.dim(2) != image_size || b.dim(3) != image_size) {
    throw std::invalid_argument(std::string("detector: ") + what + " must be [B,3," + std::to_string(image_size) + "," +
                                std::to_string(image_size) + "], got " + shape_str(x.shape()));
  }
  return b;
}

template <class T>
Var<T> depth_head(const Var<T>& logits, std::size_t size) {
  return sigmoid(resize_bilinear(logits, size, size));
}

}  // namespace

template <class T>
DetectorOutput<T> BasicDetectorParams<T>::forward(const BasicTensor<T>& rgb, const BasicTensor<T>& noise,
                                                  const DetectorForwardOptions& opts) const {
  const auto n = static_cast<std::size_t>(config_.image_size);
  const auto names = branch_names();
  BasicTensor<T> rgb_b, noise_b;
  if (config_.inputs != DetectorInputs::noise) rgb_b = as_batch(rgb, n, "rgb");
  if (needs_noise(config_.inputs)) {
    if (noise.empty()) throw std::invalid_argument("detector: inputs '" + to_string(config_.inputs) + "' need a noise pattern");
    noise_b = as_batch(noise, n, "noise");
    if (!rgb_b.empty() && rgb_b.dim(0) != noise_b.dim(0)) throw std::invalid_argument("detector: rgb/noise batch mismatch");
    noise_b = scale(Var<T>(noise_b), static_cast<T>(config_.noise_gain)).value();
  }

  DetectorOutput<T> out;
  std::vector<Var<T>> mid;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto& b = names[k];
    BasicTensor<T> x = b == "rgb" ? center_crop(rgb_b, config_.crop_fraction) : b == "full" ? rgb_b : noise_b;
    auto h2 = block(b + ".b2", block(b + ".b1", Var<T>(std::move(x))));
    if (names.size() > 1) {
      auto h3 = block(b + ".b3", h2);
      out.aux.push_back(depth_head(add_channel_bias(conv2d(h3, layers_[b + ".aux.w"], 1, 1), layers_[b + ".aux.b"]), n));
    }
    if (k == 1 && opts.zero_second_stream) h2 = Var<T>(BasicTensor<T>::zeros(h2.shape()));
    mid.push_back(h2);
  }
  auto fused = mid.size() == 1 ? mid[0] : concat_channels(mid[0], mid[1]);
  auto h = relu(add_channel_bias(cdc2d(fused, layers_["head.cdc.w"], static_cast<T>(config_.cdc_theta), 1, 1),
                                 layers_["head.cdc.b"]));
  out.depth = depth_head(add_channel_bias(conv2d(h, layers_["head.out.w"], 1, 1), layers_["head.out.b"]), n);
  return out;
}

template <class T>
BasicDetectorParams<T> init_detector(const DetectorConfig& c) {
  c.validate();
  Rng rng(derive_seed(c.seed, "detector.init"));
  ParamSet<T> ps;
  const double relu_gain = std::sqrt(6.0);
  auto conv = [&](const std::string& p, std::size_t cout, std::size_t cin, double gain) {
    ps.add_fan_in(p + ".w", {cout, cin, 3, 3}, 9 * cin, rng, gain);
    ps.add_zeros(p + ".b", {cout});
  };
  const std::size_t w1 = c.width1, w2 = c.width2, w3 = c.width3;
  const bool two = is_two_stream(c.inputs);
  std::vector<std::string> names;
  switch (c.inputs) {
    case DetectorInputs::rgb: names = {"rgb"}; break;
    case DetectorInputs::noise: names = {"noise"}; break;
    case DetectorInputs::rgb_rgb: names = {"rgb", "full"}; break;
    case DetectorInputs::rgb_noise: names = {"rgb", "noise"}; break;
  }
  for (const auto& b : names) {
    conv(b + ".b1", w1, 3, relu_gain);
    conv(b + ".b2", w2, w1, relu_gain);
    if (two) {
      conv(b + ".b3", w3, w2, relu_gain);
      conv(b + ".aux", 1, w3, 1.0);
    }
  }
  conv("head.cdc", static_cast<std::size_t>(c.head_width), w2 * names.size(), relu_gain);
  conv("head.out", 1, static_cast<std::size_t>(c.head_width), 1.0);
  return BasicDetectorParams<T>(c, std::move(ps));
}

template <class T>
BasicTensor<T> forward_two_stream(const BasicDetectorParams<T>& params, const BasicTensor<T>& rgb,
                                  const BasicTensor<T>& noise, const DetectorForwardOptions& opts) {
  NoGradGuard guard;
  auto d = params.forward(rgb, noise, opts).depth.value();
  if (d.dim(0) != 1) throw std::invalid_argument("forward_two_stream: expects a single sample");
  return d.slice0(0);
}

namespace {

template <class T>
void check_same(const Var<T>& a, const Var<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

template <class T>
Var<T> contrast_kernels() {
  BasicTensor<T> k(Shape{8, 1, 3, 3}, T{0});
  std::size_t i = 0;
  for (std::size_t n = 0; n < 9; ++n) {
    if (n == 4) continue;
    k[i * 9 + 4] = T{1};
    k[i * 9 + n] = T{-1};
    ++i;
  }
  return Var<T>(std::move(k));
}

template <class T>
Var<T> as_maps(const Var<T>& x) {
  if (x.rank() == 3) {
    Shape s = x.shape();
    s.insert(s.begin(), 1);
    return reshape(x, s);
  }
  return x;
}

}  // namespace

template <class T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& label) {
  check_same(pred, label, "mse_loss");
  return mse(pred, label);
}

template <class T>
Var<T> cdl_loss(const Var<T>& pred, const Var<T>& label) {
  check_same(pred, label, "cdl_loss");
  const auto& s = pred.shape();
  if (s.size() < 3 || s[s.size() - 3] != 1 || s[s.size() - 2] < 3 || s[s.size() - 1] < 3) {
    throw std::invalid_argument("cdl_loss: expected [1,H,W] or [B,1,H,W] maps with H, W >= 3");
  }
  static const Var<T> kernels = contrast_kernels<T>();
  auto c = conv2d(as_maps(sub(pred, label)), kernels, 1, 0);
  // mean over all 8 channels is (1/8) of the sum of per-kernel means
  return scale(mean(square(c)), T{8});
}

template <class T>
Var<T> overall_loss(const Var<T>& pred, const Var<T>& label) {
  return add(mse_loss(pred, label), cdl_loss(pred, label));
}

template <class T>
double score(const BasicTensor<T>& depth) {
  double acc = 0;
  for (T v : depth.vec()) acc += static_cast<double>(v);
  return acc / static_cast<double>(depth.size());
}

double fuse_scores(double s1, double s2) {
  if (!(s1 >= 0.0 && s1 <= 1.0 && s2 >= 0.0 && s2 <= 1.0)) throw std::invalid_argument("fuse_scores: scores must be in [0, 1]");
  return (s1 + s2) / 2;
}

namespace {

void check_samples(const DetectorConfig& c, std::span<const DetectorSample> samples, const char* what) {
  const auto n = static_cast<std::size_t>(c.image_size);
  for (const auto& s : samples) {
    if (s.rgb.shape() != Shape{3, n, n}) throw std::invalid_argument(std::string(what) + ": bad rgb shape for " + s.id);
    if (needs_noise(c.inputs) && s.noise.shape() != Shape{3, n, n}) {
      throw std::invalid_argument(std::string(what) + ": sample " + s.id + " has no noise pattern");
    }
    if (s.depth.shape() != Shape{1, DepthLabel::kSize, DepthLabel::kSize}) {
      throw std::invalid_argument(std::string(what) + ": bad depth label shape for " + s.id);
    }
    const bool any = std::any_of(s.depth.vec().begin(), s.depth.vec().end(), [](float v) { return v != 0.0f; });
    if ((s.label == Label::spoof) == any) {
      throw std::invalid_argument(std::string(what) + ": sample " + s.id +
                                  (any ? " is a spoof with a nonzero depth label" : " is genuine with an all-zero depth label"));
    }
  }
}

struct Batch {
  TensorF rgb, noise, depth;
};

Batch gather(const DetectorConfig& c, std::span<const DetectorSample> samples, std::span<const std::size_t> idx) {
  std::vector<TensorF> rgb, noise, depth;
  for (auto i : idx) {
    rgb.push_back(samples[i].rgb);
    if (needs_noise(c.inputs)) noise.push_back(samples[i].noise);
    depth.push_back(samples[i].depth);
  }
  Batch b;
  b.rgb = stack(std::span<const TensorF>(rgb));
  if (!noise.empty()) b.noise = stack(std::span<const TensorF>(noise));
  b.depth = stack(std::span<const TensorF>(depth));
  return b;
}

struct DevEval {
  double eer = 1, loss = 0;
};

DevEval evaluate_dev(const DetectorParams& params, std::span<const DetectorSample> dev) {
  NoGradGuard guard;
  DevEval e;
  ScoreSet set;
  double loss = 0;
  constexpr std::size_t chunk = 64;
  for (std::size_t s = 0; s < dev.size(); s += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, dev.size() - s));
    std::iota(idx.begin(), idx.end(), s);
    auto b = gather(params.config(), dev, idx);
    auto out = params.forward(b.rgb, b.noise);
    loss += overall_loss(out.depth, Var<float>(b.depth)).value().item() * static_cast<double>(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) set.add(score(out.depth.value().slice0(k)), dev[idx[k]].label);
  }
  e.loss = loss / static_cast<double>(dev.size());
  const bool both = std::count(set.labels.begin(), set.labels.end(), Label::genuine) > 0 &&
                    std::count(set.labels.begin(), set.labels.end(), Label::spoof) > 0;
  e.eer = both ? eer(set).eer : 0.0;
  return e;
}

}  // namespace

DetectorTrainLog train_detector(DetectorParams& params, std::span<const DetectorSample> train,
                                std::span<const DetectorSample> dev, const DetectorTrainConfig& cfg,
                                const std::function<void(int, double)>& on_step) {
  if (train.empty()) throw std::invalid_argument("train_detector: empty training set");
  if (cfg.batch_size < 1 || cfg.max_steps < 1 || cfg.decay_every < 1) {
    throw std::invalid_argument("train_detector: bad budget");
  }
  check_samples(params.config(), train, "train_detector");
  check_samples(params.config(), dev, "train_detector (dev)");

  AdamHyper hyper;
  hyper.learning_rate = cfg.learning_rate;
  hyper.weight_decay = cfg.weight_decay;
  AdamOptimizer<float> opt(params.layers().vars(), hyper);
  Rng order_rng(derive_seed(cfg.seed, "detector.batches"));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const auto batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), train.size());

  DetectorTrainLog log;
  ParamSet<float> best = params.layers().clone();
  DevEval best_eval{2.0, 0.0};
  for (int step = 0; step < cfg.max_steps; ++step) {
    std::vector<std::size_t> idx;
    while (idx.size() < batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng.engine());
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    auto b = gather(params.config(), train, idx);
    opt.set_learning_rate(step_decay_lr(cfg.learning_rate, static_cast<std::uint64_t>(step),
                                        static_cast<std::uint64_t>(cfg.decay_every), cfg.decay_factor));
    opt.zero_grad();
    auto out = params.forward(b.rgb, b.noise);
    Var<float> label(b.depth);
    auto fused = overall_loss(out.depth, label);
    auto total = fused;
    for (const auto& a : out.aux) total = add(total, overall_loss(a, label));
    total.backward();
    opt.step();
    const double l = fused.value().item();
    log.losses.push_back(l);
    if (on_step) on_step(step, l);

    const bool last = step + 1 == cfg.max_steps;
    if (!dev.empty() && cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || last)) {
      const auto e = evaluate_dev(params, dev);
      log.dev_eer.emplace_back(step + 1, e.eer);
      spdlog::debug("detector step {}: loss {:.5f}, dev eer {:.4f}, dev loss {:.5f}", step + 1, l, e.eer, e.loss);
      if (e.eer < best_eval.eer || (e.eer == best_eval.eer && e.loss < best_eval.loss)) {
        best_eval = e;
        best = params.layers().clone();
        log.best_step = step + 1;
      }
    }
  }
  if (log.best_step > 0) {
    params.layers().load_named(best.to_named());
  } else {
    log.best_step = cfg.max_steps;
  }
  return log;
}

std::vector<double> score_samples(const DetectorParams& params, std::span<const DetectorSample> samples, bool fuse) {
  if (fuse && !is_two_stream(params.config().inputs)) {
    throw std::invalid_argument("score fusion needs a two-stream detector");
  }
  NoGradGuard guard;
  std::vector<double> out;
  out.reserve(samples.size());
  constexpr std::size_t chunk = 64;
  for (std::size_t s = 0; s < samples.size(); s += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, samples.size() - s));
    std::iota(idx.begin(), idx.end(), s);
    std::vector<TensorF> rgb, noise;
    for (auto i : idx) {
      rgb.push_back(samples[i].rgb);
      if (needs_noise(params.config().inputs)) noise.push_back(samples[i].noise);
    }
    const TensorF r = stack(std::span<const TensorF>(rgb));
    const TensorF nz = noise.empty() ? TensorF() : stack(std::span<const TensorF>(noise));
    auto o = params.forward(r, nz);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (fuse) {
        out.push_back(fuse_scores(score(o.aux[0].value().slice0(k)), score(o.aux[1].value().slice0(k))));
      } else {
        out.push_back(score(o.depth.value().slice0(k)));
      }
    }
  }
  return out;
}

void save_detector(const std::string& path, const DetectorParams& params) {
  Container c;
  std::copy_n(kDetectorMagic, 4, c.magic.begin());
  params.config().write_meta(c.meta);
  c.tensors = params.layers().to_named();
  save_container(path, c);
}

DetectorParams load_detector(const std::string& path) {
  auto c = load_container(path);
  if (!std::equal(c.magic.begin(), c.magic.end(), kDetectorMagic)) {
    throw FormatError("'" + path + "' is not a detector checkpoint");
  }
  auto params = init_detector<float>(DetectorConfig::from_meta(c.meta));
  params.layers().load_named(c.tensors);
  return params;
}

template BasicTensor<float> center_crop(const BasicTensor<float>&, double);
template BasicTensor<double> center_crop(const BasicTensor<double>&, double);
template class BasicDetectorParams<float>;
template class BasicDetectorParams<double>;
template BasicDetectorParams<float> init_detector(const DetectorConfig&);
template BasicDetectorParams<double> init_detector(const DetectorConfig&);
template BasicTensor<float> forward_two_stream(const BasicDetectorParams<float>&, const BasicTensor<float>&,
                                               const BasicTensor<float>&, const DetectorForwardOptions&);
template BasicTensor<double> forward_two_stream(const BasicDetectorParams<double>&, const BasicTensor<double>&,
                                                const BasicTensor<double>&, const DetectorForwardOptions&);
template Var<float> mse_loss(const Var<float>&, const Var<float>&);
template Var<double> mse_loss(const Var<double>&, const Var<double>&);
template Var<float> cdl_loss(const Var<float>&, const Var<float>&);
template Var<double> cdl_loss(const Var<double>&, const Var<double>&);
template Var<float> overall_loss(const Var<float>&, const Var<float>&);
template Var<double> overall_loss(const Var<double>&, const Var<double>&);
template double score(const BasicTensor<float>&);
template double score(const BasicTensor<double>&);

}  // namespace despoof
