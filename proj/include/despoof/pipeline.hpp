#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "despoof/config.hpp"
#include "despoof/metrics.hpp"

// The five commands of the CLI, as library calls. Each returns a process exit
// code: 0 iff every declared output was written; failures are logged.
//
// Layout under config.out:
//   corpus/images/<id>.png, <id>_depth.png
//   corpus/manifest.tsv               every record, split = per-domain intra split
//   corpus/protocol_<scheme>.tsv      records of one protocol with its splits
//   <scheme>/diffusion_<tag>.dspd     denoiser checkpoints, <tag>_log.tsv loss curves
//   <scheme>/despoof_s<steps>/        recon/<id>.png, noise/<id>.png, noise.bin, energies.tsv
//   <scheme>/detector_<run>.dspc      detector checkpoint and detector_<run>_log.tsv
//   <scheme>/eval/report_<run>.txt    MetricsReport, roc_<run>.tsv, results.tsv
// where <run> is the detector inputs, suffixed _s<steps> when noise is used.
namespace despoof {

namespace fs = std::filesystem;

inline constexpr char kNoiseMagic[4] = {'D', 'S', 'P', 'N'};

struct RunPaths {
  fs::path root;
  std::string scheme;
  std::string run;  // detector run label
  int despoof_steps = 50;

  explicit RunPaths(const RunConfig& c);

  fs::path corpus_dir() const { return root / "corpus"; }
  fs::path image_dir() const { return corpus_dir() / "images"; }
  fs::path manifest() const { return corpus_dir() / "manifest.tsv"; }
  fs::path protocol_manifest() const { return corpus_dir() / ("protocol_" + scheme + ".tsv"); }
  fs::path protocol_dir() const { return root / scheme; }
  fs::path denoiser(DomainTag tag) const { return protocol_dir() / ("diffusion_" + to_string(tag) + ".dspd"); }
  fs::path denoiser_log(DomainTag tag) const { return protocol_dir() / ("diffusion_" + to_string(tag) + "_log.tsv"); }
  fs::path despoof_dir() const { return protocol_dir() / ("despoof_s" + std::to_string(despoof_steps)); }
  fs::path noise_bin() const { return despoof_dir() / "noise.bin"; }
  fs::path energies() const { return despoof_dir() / "energies.tsv"; }
  fs::path detector() const { return protocol_dir() / ("detector_" + run + ".dspc"); }
  fs::path detector_log() const { return protocol_dir() / ("detector_" + run + "_log.tsv"); }
  fs::path eval_dir() const { return protocol_dir() / "eval"; }
  fs::path report() const { return eval_dir() / ("report_" + run + ".txt"); }
  fs::path roc() const { return eval_dir() / ("roc_" + run + ".tsv"); }
  fs::path results() const { return eval_dir() / "results.tsv"; }
};

/// Detector run label, e.g. "rgb" or "rgb_noise_s50".
std::string run_label(const RunConfig& c);

int cmd_corpus(const RunConfig& c);
/// genuine_only = false trains the spoof-union model.
int cmd_train_diffusion(const RunConfig& c, DomainTag tag);
int cmd_despoof(const RunConfig& c);
int cmd_train_detector(const RunConfig& c);
int cmd_eval(const RunConfig& c);

// Building blocks, also used by the acceptance suite.

/// Records of the configured protocol (reads corpus/protocol_<scheme>.tsv).
std::vector<SampleRecord> load_protocol_records(const RunConfig& c);
std::vector<SampleRecord> filter_split(const std::vector<SampleRecord>& rs, Split split);
TensorF load_image(const RunConfig& c, const SampleRecord& r);
/// Noise patterns written by cmd_despoof, keyed by record id.
std::map<std::string, TensorF> load_noise(const RunConfig& c);
/// rgb + depth (+ noise when the detector needs it) for each record.
std::vector<DetectorSample> load_detector_samples(const RunConfig& c, const std::vector<SampleRecord>& rs);
/// Scores `rs` with a detector, using score fusion when configured.
ScoreSet score_records(const RunConfig& c, const DetectorParams& det, const std::vector<SampleRecord>& rs);

/// Raises glibc's mmap threshold so the large, short-lived conv buffers are
/// recycled instead of mapped and unmapped on every call. No-op elsewhere.
void tune_allocator();

}  // namespace despoof
