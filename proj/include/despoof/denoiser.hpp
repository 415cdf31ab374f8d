#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "despoof/autograd.hpp"
#include "despoof/params.hpp"
#include "despoof/schedule.hpp"
#include "despoof/serialize.hpp"

namespace despoof {

/// Which data a noise-prediction model was trained on.
enum class DomainTag {
  spoof_union,   // genuine and spoof images together
  genuine_only,  // genuine images only
};

std::string to_string(DomainTag tag);
DomainTag parse_domain_tag(const std::string& s);

struct DenoiserConfig {
  int image_size = 32;
  int channels = 3;
  int base_width = 32;
  int depth_levels = 2;
  int time_embed_dim = 64;
  // Output preconditioning (see BasicDenoiserParams); 0 makes the UNet output eps directly.
  double sigma_data = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  /// Channel width at UNet level l (0 = full resolution).
  int width(int level) const { return base_width << level; }

  void write_meta(Metadata& meta) const;
  static DenoiserConfig from_meta(const Metadata& meta);
  bool operator==(const DenoiserConfig&) const = default;
};

/// Number of scalars init_denoiser creates for a config.
std::size_t denoiser_param_count(const DenoiserConfig& config);

/// Sinusoidal embedding; element 2i is sin(t / 10000^(2i/dim)), element 2i+1 the matching cos.
template <class T>
BasicTensor<T> time_embedding(int t, int dim);

/// Interface of an epsilon-prediction model, batched over [B,C,H,W] inputs with one step per sample.
template <class T>
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Var<T> forward(const Var<T>& x_t, std::span<const int> t) const = 0;

  /// Inference without graph recording. Accepts [C,H,W] or [B,C,H,W]; t applies to every sample.
  BasicTensor<T> predict(const BasicTensor<T>& x_t, int t) const;
};

struct DenoiserForwardOptions {
  bool drop_skips = false;  // test hook: zero the encoder-to-decoder skip tensors
};

/// UNet epsilon-predictor: residual blocks with per-block time projection,
/// strided-conv downsampling, nearest upsampling and concatenated skips.
///
/// With sigma_data = s > 0 the raw UNet output F is preconditioned per sample,
/// with a = alpha_bar_t and v = 1 - a + a s^2:
///   eps = sqrt(1 - a) / v * x_t + s sqrt(a) / sqrt(v) * F(x_t / sqrt(v), t)
/// At high noise eps tends to x_t whatever F is, so two models trained on
/// different data agree there and a latent encoded by one decodes sensibly
/// under the other. Without it, the DDIM decode amplifies any model mismatch
/// at t near T by up to sqrt((1 - a) / a), about 156 for the default schedule.
template <class T>
class BasicDenoiserParams final : public NoisePredictor<T> {
 public:
  BasicDenoiserParams(DenoiserConfig config, DomainTag tag, ParamSet<T> layers,
                      NoiseSchedule schedule = build_linear_schedule());

  const DenoiserConfig& config() const noexcept { return config_; }
  DomainTag domain_tag() const noexcept { return tag_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  const ParamSet<T>& layers() const noexcept { return layers_; }
  ParamSet<T>& layers() noexcept { return layers_; }

  Var<T> forward(const Var<T>& x_t, std::span<const int> t) const override;
  Var<T> forward(const Var<T>& x_t, std::span<const int> t, const DenoiserForwardOptions& opts) const;

  /// Deep copy carrying a different domain tag (used to warm-start one model from another).
  BasicDenoiserParams retagged(DomainTag tag) const { return BasicDenoiserParams(config_, tag, layers_.clone(), schedule_); }

  template <class U>
  BasicDenoiserParams<U> cast() const {
    return BasicDenoiserParams<U>(config_, tag_, layers_.template cast<U>(), schedule_);
  }

 private:
  Var<T> res_block(const std::string& prefix, const Var<T>& x, const Var<T>& temb) const;

  DenoiserConfig config_;
  DomainTag tag_;
  ParamSet<T> layers_;
  NoiseSchedule schedule_;
};

using DenoiserParams = BasicDenoiserParams<float>;

template <class T>
BasicDenoiserParams<T> init_denoiser(const DenoiserConfig& config, DomainTag tag = DomainTag::spoof_union,
                                     const NoiseSchedule& schedule = build_linear_schedule());

/// Single-image epsilon prediction, x_t: [C,H,W].
template <class T>
BasicTensor<T> predict_eps(const BasicDenoiserParams<T>& params, const BasicTensor<T>& x_t, int t);

inline constexpr char kDenoiserMagic[4] = {'D', 'S', 'P', 'D'};

void save_denoiser(const std::string& path, const DenoiserParams& params, const NoiseSchedule& schedule);
struct LoadedDenoiser {
  DenoiserParams params;
  NoiseSchedule schedule;
};
LoadedDenoiser load_denoiser(const std::string& path);

}  // namespace despoof
