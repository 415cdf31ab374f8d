#include "despoof/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "despoof/image_io.hpp"
#include "despoof/serialize.hpp"

namespace despoof {

namespace {

constexpr std::size_t kDespoofBatch = 32;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create directory '" + p.string() + "': " + ec.message());
}

template <class F>
int guarded(const char* name, F&& body) {
  try {
    body();
    return 0;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", name, e.what());
    return 1;
  }
}

std::string tsv_escape_free(const std::string& s) {
  if (s.find_first_of("\t\n") != std::string::npos) throw std::invalid_argument("field contains tab or newline: " + s);
  return s;
}

std::vector<TensorF> load_images(const RunConfig& c, const std::vector<SampleRecord>& rs) {
  std::vector<TensorF> out;
  out.reserve(rs.size());
  for (const auto& r : rs) out.push_back(load_image(c, r));
  return out;
}

std::vector<SampleRecord> take(std::vector<SampleRecord> rs, int cap) {
  if (cap > 0 && rs.size() > static_cast<std::size_t>(cap)) rs.resize(static_cast<std::size_t>(cap));
  return rs;
}

DenoiserParams load_tagged(const fs::path& path, DomainTag want) {
  if (!fs::exists(path)) throw std::runtime_error("missing denoiser checkpoint '" + path.string() + "'");
  auto loaded = load_denoiser(path.string());
  if (loaded.params.domain_tag() != want) {
    throw std::runtime_error("checkpoint '" + path.string() + "' is tagged " + to_string(loaded.params.domain_tag()) +
                             ", expected " + to_string(want));
  }
  return std::move(loaded.params);
}

}  // namespace

RunPaths::RunPaths(const RunConfig& c)
    : root(c.out), scheme(to_string(c.scheme)), run(run_label(c)), despoof_steps(c.despoof_steps) {}

std::string run_label(const RunConfig& c) {
  auto label = to_string(c.detector.inputs);
  if (needs_noise(c.detector.inputs)) label += "_s" + std::to_string(c.despoof_steps);
  if (c.score_fusion) label += "_fused";
  return label;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

std::vector<SampleRecord> load_protocol_records(const RunConfig& c) {
  const RunPaths p(c);
  if (!fs::exists(p.protocol_manifest())) {
    throw std::runtime_error("missing corpus manifest '" + p.protocol_manifest().string() + "' (run the corpus command)");
  }
  return read_manifest(p.protocol_manifest().string());
}

std::vector<SampleRecord> filter_split(const std::vector<SampleRecord>& rs, Split split) {
  std::vector<SampleRecord> out;
  std::copy_if(rs.begin(), rs.end(), std::back_inserter(out), [split](const auto& r) { return r.split == split; });
  return out;
}

TensorF load_image(const RunConfig& c, const SampleRecord& r) {
  const RunPaths p(c);
  auto img = read_png_rgb((p.corpus_dir() / r.image_path).string());
  const auto n = static_cast<std::size_t>(c.image_size);
  if (img.shape() != Shape{3, n, n}) throw std::runtime_error("image '" + r.image_path + "' has the wrong size");
  return img;
}

std::map<std::string, TensorF> load_noise(const RunConfig& c) {
  const RunPaths p(c);
  if (!fs::exists(p.noise_bin())) {
    throw std::runtime_error("missing noise patterns '" + p.noise_bin().string() + "' (run the despoof command)");
  }
  auto cont = load_container(p.noise_bin().string());
  if (!std::equal(cont.magic.begin(), cont.magic.end(), kNoiseMagic)) throw FormatError("bad noise pattern file");
  std::map<std::string, TensorF> out;
  for (auto& [name, t] : cont.tensors) out.emplace(name, std::move(t));
  return out;
}

std::vector<DetectorSample> load_detector_samples(const RunConfig& c, const std::vector<SampleRecord>& rs) {
  const RunPaths p(c);
  std::map<std::string, TensorF> noise;
  if (needs_noise(c.detector.inputs)) noise = load_noise(c);
  std::vector<DetectorSample> out;
  out.reserve(rs.size());
  for (const auto& r : rs) {
    DetectorSample s;
    s.id = r.id;
    s.label = r.label;
    s.rgb = load_image(c, r);
    if (r.label == Label::genuine) {
      s.depth = read_png_gray((p.corpus_dir() / depth_path_for(r.image_path)).string());
    } else {
      s.depth = TensorF(Shape{1, DepthLabel::kSize, DepthLabel::kSize}, 0.0f);
    }
    if (needs_noise(c.detector.inputs)) {
      auto it = noise.find(r.id);
      if (it == noise.end()) throw std::runtime_error("no noise pattern for " + r.id + " (rerun despoof)");
      s.noise = it->second;
    }
    out.push_back(std::move(s));
  }
  return out;
}

ScoreSet score_records(const RunConfig& c, const DetectorParams& det, const std::vector<SampleRecord>& rs) {
  const auto samples = load_detector_samples(c, rs);
  const auto scores = score_samples(det, samples, c.score_fusion);
  ScoreSet set;
  for (std::size_t i = 0; i < rs.size(); ++i) set.add(scores[i], rs[i].label);
  return set;
}

int cmd_corpus(const RunConfig& c) {
  return guarded("corpus", [&] {
    c.validate();
    const RunPaths p(c);
    make_dirs(p.image_dir());
    const auto seed = derive_seed(c.seed, "corpus");
    std::vector<SampleRecord> all;
    for (char d : c.domains) {
      const auto style = domain_style(d);
      auto gen = gen_genuine(seed, c.genuine_per_domain, c.image_size, style);
      auto spf = gen_spoof(seed, c.spoof_per_domain, c.image_size, style);
      std::vector<SampleRecord> recs;
      for (auto* group : {&gen, &spf}) {
        for (auto& s : *group) {
          s.record.image_path = "images/" + s.record.id + ".png";
          write_png_rgb((p.corpus_dir() / s.record.image_path).string(), s.image);
          write_png_gray((p.corpus_dir() / depth_path_for(s.record.image_path)).string(), s.depth.map);
          recs.push_back(s.record);
        }
      }
      // manifest.tsv carries each domain's own intra split
      const auto intra = build_protocols(recs, ProtocolScheme::intra, d);
      for (const auto* part : {&intra.train, &intra.dev, &intra.test}) all.insert(all.end(), part->begin(), part->end());
      spdlog::info("corpus: domain {} has {} genuine and {} spoof images", d, gen.size(), spf.size());
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    write_manifest(p.manifest().string(), all);

    std::vector<ProtocolScheme> schemes{ProtocolScheme::intra};
    if (c.domains.find('A') != std::string::npos && c.domains.find('B') != std::string::npos) {
      schemes.push_back(ProtocolScheme::cross_ab);
      schemes.push_back(ProtocolScheme::cross_ba);
    }
    for (auto scheme : schemes) {
      const char intra_domain = c.domains.find(c.intra_domain) != std::string::npos ? c.intra_domain : c.domains[0];
      const auto proto = build_protocols(all, scheme, intra_domain);
      std::vector<SampleRecord> rs;
      for (const auto* part : {&proto.train, &proto.dev, &proto.test}) rs.insert(rs.end(), part->begin(), part->end());
      write_manifest((p.corpus_dir() / ("protocol_" + to_string(scheme) + ".tsv")).string(), rs);
      spdlog::info("corpus: protocol {}: {} train, {} dev, {} test", to_string(scheme), proto.train.size(),
                   proto.dev.size(), proto.test.size());
    }
  });
}

int cmd_train_diffusion(const RunConfig& c, DomainTag tag) {
  return guarded("train-diffusion", [&] {
    c.validate();
    const RunPaths p(c);
    const auto records = load_protocol_records(c);
    auto train = filter_split(records, Split::train);
    if (tag == DomainTag::genuine_only) {
      std::erase_if(train, [](const auto& r) { return r.label != Label::genuine; });
    }
    train = take(std::move(train), c.diffusion_max_images);
    auto holdout_recs = filter_split(records, Split::dev);
    std::erase_if(holdout_recs, [](const auto& r) { return r.label != Label::genuine; });
    holdout_recs = take(std::move(holdout_recs), 32);
    if (train.empty()) throw std::runtime_error("no training images for the " + to_string(tag) + " model");
    const auto images = load_images(c, train);
    const auto holdout = load_images(c, holdout_recs);
    const auto schedule = c.schedule();

    DenoiserConfig dc = c.denoiser;
    dc.image_size = c.image_size;
    dc.seed = derive_seed(c.seed, "denoiser." + to_string(tag));
    DiffusionTrainConfig tc = c.diffusion;
    tc.seed = derive_seed(c.seed, "diffusion." + to_string(tag));
    DenoiserParams model = init_denoiser<float>(dc, tag, schedule);
    if (tag == DomainTag::genuine_only) {
      tc.max_steps = c.genuine_max_steps;
      tc.learning_rate = c.genuine_learning_rate;
      if (c.genuine_init == GenuineInit::spoof_union) {
        model = load_tagged(p.denoiser(DomainTag::spoof_union), DomainTag::spoof_union).retagged(tag);
        auto want = dc;
        want.seed = model.config().seed;
        if (!(model.config() == want)) {
          throw std::runtime_error("spoof-union checkpoint does not match the denoiser config");
        }
      }
    }
    make_dirs(p.protocol_dir());
    std::ofstream log(p.denoiser_log(tag), std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write '" + p.denoiser_log(tag).string() + "'");
    log << "step\tloss\n";
    spdlog::info("train-diffusion: {} model on {} images, {} steps", to_string(tag), images.size(), tc.max_steps);
    const auto result = train_diffusion(model, images, schedule, tc, holdout, [&](int step, double loss) {
      log << step + 1 << '\t' << format_double(loss) << '\n';
      if ((step + 1) % 100 == 0) spdlog::info("train-diffusion: step {} loss {:.5f}", step + 1, loss);
    });
    if (!result.roundtrip_mse.empty()) {
      std::ofstream rt(p.protocol_dir() / ("diffusion_" + to_string(tag) + "_roundtrip.tsv"), std::ios::trunc);
      rt << "step\troundtrip_mse\n";
      for (const auto& [s, v] : result.roundtrip_mse) rt << s << '\t' << format_double(v) << '\n';
    }
    log.close();
    if (!log) throw std::runtime_error("write failed for the training log");
    save_denoiser(p.denoiser(tag).string(), model, schedule);
  });
}

int cmd_despoof(const RunConfig& c) {
  return guarded("despoof", [&] {
    c.validate();
    const RunPaths p(c);
    const auto ms = load_tagged(p.denoiser(DomainTag::spoof_union), DomainTag::spoof_union);
    const auto mg = load_tagged(p.denoiser(DomainTag::genuine_only), DomainTag::genuine_only);
    const auto schedule = c.schedule();
    const auto records = load_protocol_records(c);
    make_dirs(p.despoof_dir() / "recon");
    make_dirs(p.despoof_dir() / "noise");

    Container noise;
    std::copy_n(kNoiseMagic, 4, noise.magic.begin());
    noise.meta["despoof.steps"] = std::to_string(c.despoof_steps);
    std::string energies = "id\tlabel\tattack_type\tsplit\tenergy\n";
    for (std::size_t s = 0; s < records.size(); s += kDespoofBatch) {
      const std::vector<SampleRecord> chunk(records.begin() + static_cast<std::ptrdiff_t>(s),
                                            records.begin() + static_cast<std::ptrdiff_t>(std::min(records.size(), s + kDespoofBatch)));
      const auto images = load_images(c, chunk);
      const auto res = despoof(stack(std::span<const TensorF>(images)), ms, mg, schedule, c.despoof_steps);
      for (std::size_t k = 0; k < chunk.size(); ++k) {
        const auto& r = chunk[k];
        auto map = res.noise.map.slice0(k);
        write_png_rgb((p.despoof_dir() / "recon" / (r.id + ".png")).string(), res.genuine.slice0(k));
        // noise lies in [0, 2]; shifted by -1 so the PNG spans it
        TensorF vis = map;
        for (auto& v : vis.vec()) v = v - 1.0f;
        write_png_rgb((p.despoof_dir() / "noise" / (r.id + ".png")).string(), vis);
        energies += tsv_escape_free(r.id) + '\t' + to_string(r.label) + '\t' + to_string(r.attack_type) + '\t' +
                    to_string(r.split) + '\t' + format_double(map.mean()) + '\n';
        noise.tensors.emplace_back(r.id, std::move(map));
      }
      spdlog::info("despoof: {}/{} images", std::min(records.size(), s + kDespoofBatch), records.size());
    }
    save_container(p.noise_bin().string(), noise);
    write_text(p.energies(), energies);
  });
}

int cmd_train_detector(const RunConfig& c) {
  return guarded("train-detector", [&] {
    c.validate();
    const RunPaths p(c);
    const auto records = load_protocol_records(c);
    const auto train = load_detector_samples(c, filter_split(records, Split::train));
    const auto dev = load_detector_samples(c, filter_split(records, Split::dev));
    DetectorConfig dc = c.detector;
    dc.image_size = c.image_size;
    dc.seed = derive_seed(c.seed, "detector." + run_label(c));
    DetectorTrainConfig tc = c.detector_train;
    tc.seed = derive_seed(c.seed, "detector.train." + run_label(c));
    auto det = init_detector<float>(dc);
    make_dirs(p.protocol_dir());
    std::ofstream log(p.detector_log(), std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write '" + p.detector_log().string() + "'");
    log << "step\tloss\n";
    spdlog::info("train-detector: {} on {} train / {} dev samples", run_label(c), train.size(), dev.size());
    const auto result = train_detector(det, train, dev, tc, [&](int step, double loss) {
      log << step + 1 << '\t' << format_double(loss) << '\n';
      if ((step + 1) % 100 == 0) spdlog::info("train-detector: step {} loss {:.5f}", step + 1, loss);
    });
    log.close();
    if (!log) throw std::runtime_error("write failed for the training log");
    spdlog::info("train-detector: keeping parameters from step {}", result.best_step);
    save_detector(p.detector().string(), det);
  });
}

int cmd_eval(const RunConfig& c) {
  return guarded("eval", [&] {
    c.validate();
    const RunPaths p(c);
    if (!fs::exists(p.detector())) throw std::runtime_error("missing detector checkpoint '" + p.detector().string() + "'");
    const auto det = load_detector(p.detector().string());
    if (det.config().inputs != c.detector.inputs) {
      throw std::runtime_error("detector checkpoint inputs " + to_string(det.config().inputs) + " differ from config");
    }
    const auto records = load_protocol_records(c);
    const auto dev = score_records(c, det, filter_split(records, Split::dev));
    const auto test = score_records(c, det, filter_split(records, Split::test));
    const auto threshold = eer(dev).threshold;
    const auto report = make_report(test, threshold);
    make_dirs(p.eval_dir());
    write_text(p.report(), format_report(report));
    write_text(p.roc(), format_roc(roc_table(test)));
    const bool fresh = !fs::exists(p.results());
    std::ofstream rows(p.results(), std::ios::app);
    if (fresh) rows << report_tsv_header() << '\n';
    rows << report_tsv_row(p.run, report) << '\n';
    if (!rows) throw std::runtime_error("cannot append to '" + p.results().string() + "'");
    spdlog::info("eval {}: apcer {:.4f} bpcer {:.4f} acer {:.4f} eer {:.4f} hter {:.4f}", p.run, report.apcer,
                 report.bpcer, report.acer, report.eer, report.hter);
  });
}

}  // namespace despoof
