#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "despoof/autograd.hpp"
#include "despoof/corpus.hpp"
#include "despoof/params.hpp"

namespace despoof {

inline constexpr char kDetectorMagic[4] = {'D', 'S', 'P', 'C'};

/// Which inputs feed the network; mirrors the four ablation rows.
///   rgb       single stream on the centre-cropped image
///   noise     single stream on the noise pattern
///   rgb_rgb   two streams: cropped image + full image
///   rgb_noise two streams: cropped image + noise pattern
enum class DetectorInputs { rgb, noise, rgb_rgb, rgb_noise };

std::string to_string(DetectorInputs v);
DetectorInputs parse_detector_inputs(const std::string& s);
bool needs_noise(DetectorInputs v);
bool is_two_stream(DetectorInputs v);

struct DetectorConfig {
  DetectorInputs inputs = DetectorInputs::rgb_noise;
  int width1 = 32, width2 = 64, width3 = 64;
  int head_width = 64;
  double cdc_theta = 0.7;
  double crop_fraction = 0.8;
  // Noise patterns are mean |x_s - x_g| ~ 0.05; scaled up before the first conv.
  double noise_gain = 10.0;
  int image_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
  void write_meta(Metadata& meta) const;
  static DetectorConfig from_meta(const Metadata& meta);
  bool operator==(const DetectorConfig&) const = default;
};

/// Central fraction of the image, resized back to H x W with bilinear
/// sampling at half-pixel centres. fraction = 1 is the identity.
template <class T>
BasicTensor<T> center_crop(const BasicTensor<T>& image, double fraction);

struct DetectorForwardOptions {
  bool zero_second_stream = false;  // test hook: zero the second branch's pre-fusion features
};

template <class T>
struct DetectorOutput {
  Var<T> depth;             // [B,1,32,32], fused head
  std::vector<Var<T>> aux;  // per-branch auxiliary depth heads (two-stream only)
};

/// Each branch: three blocks of cdc2d -> relu -> 2x2 max-pool. The fused head
/// takes the channel-concatenated block-2 outputs (halfway fusion):
/// cdc2d -> relu -> 3x3 conv to one channel -> bilinear to 32x32 -> sigmoid.
/// Block 3 of each branch feeds its own auxiliary head, used for score fusion.
template <class T>
class BasicDetectorParams {
 public:
  BasicDetectorParams(DetectorConfig config, ParamSet<T> layers);

  const DetectorConfig& config() const noexcept { return config_; }
  const ParamSet<T>& layers() const noexcept { return layers_; }
  ParamSet<T>& layers() noexcept { return layers_; }

  /// rgb and noise: [B,3,H,W] (or [3,H,W]); noise may be empty when unused.
  DetectorOutput<T> forward(const BasicTensor<T>& rgb, const BasicTensor<T>& noise,
                            const DetectorForwardOptions& opts = {}) const;

  template <class U>
  BasicDetectorParams<U> cast() const {
    return BasicDetectorParams<U>(config_, layers_.template cast<U>());
  }

 private:
  std::vector<std::string> branch_names() const;
  Var<T> block(const std::string& p, const Var<T>& x) const;

  DetectorConfig config_;
  ParamSet<T> layers_;
};

using DetectorParams = BasicDetectorParams<float>;

template <class T>
BasicDetectorParams<T> init_detector(const DetectorConfig& config);

/// Fused depth map for one sample: [1,32,32] in [0,1].
template <class T>
BasicTensor<T> forward_two_stream(const BasicDetectorParams<T>& params, const BasicTensor<T>& rgb,
                                  const BasicTensor<T>& noise, const DetectorForwardOptions& opts = {});

template <class T> Var<T> mse_loss(const Var<T>& pred, const Var<T>& label);
/// Sum over the eight 3x3 neighbour-contrast kernels of mean((K*pred - K*label)^2),
/// valid positions only, so constant offsets cancel.
template <class T> Var<T> cdl_loss(const Var<T>& pred, const Var<T>& label);
/// mse_loss + cdl_loss
template <class T> Var<T> overall_loss(const Var<T>& pred, const Var<T>& label);

/// Mean of the depth map; higher is more genuine.
template <class T> double score(const BasicTensor<T>& depth);
double fuse_scores(double s1, double s2);

struct DetectorSample {
  TensorF rgb;    // [3,32,32] in [-1,1]
  TensorF noise;  // [3,32,32] >= 0, empty for rgb-only configs
  TensorF depth;  // [1,32,32]; zeros for spoofs
  Label label = Label::genuine;
  std::string id;
};

struct DetectorTrainConfig {
  int max_steps = 1500;
  int batch_size = 64;
  double learning_rate = 1e-4;
  double weight_decay = 5e-5;
  int decay_every = 500;
  double decay_factor = 0.1;
  int eval_every = 100;
  std::uint64_t seed = 0;
};

struct DetectorTrainLog {
  std::vector<double> losses;                    // fused L_overall per step
  std::vector<std::pair<int, double>> dev_eer;   // (step, dev EER)
  int best_step = 0;
};

/// Trains on `train`, keeps the parameters with the lowest dev EER (ties: lower
/// dev loss, then earlier). Without dev samples the final parameters are kept.
DetectorTrainLog train_detector(DetectorParams& params, std::span<const DetectorSample> train,
                                std::span<const DetectorSample> dev, const DetectorTrainConfig& cfg,
                                const std::function<void(int, double)>& on_step = {});

/// Per-sample scores, in input order. With fuse = true (two-stream only) the
/// score is fuse_scores over the auxiliary heads instead of the fused map.
std::vector<double> score_samples(const DetectorParams& params, std::span<const DetectorSample> samples,
                                  bool fuse = false);

void save_detector(const std::string& path, const DetectorParams& params);
DetectorParams load_detector(const std::string& path);

}  // namespace despoof
