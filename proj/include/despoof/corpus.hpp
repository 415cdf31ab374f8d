#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "despoof/tensor.hpp"

namespace despoof {

enum class Label { genuine, spoof };
enum class AttackType { none, print_blur, replay_moire, color_cast, glare_band, medium_border };
enum class Split { train, dev, test };
enum class ProtocolScheme { intra, cross_ab, cross_ba };

std::string to_string(Label v);
std::string to_string(AttackType v);
std::string to_string(Split v);
std::string to_string(ProtocolScheme v);
Label parse_label(const std::string& s);
AttackType parse_attack_type(const std::string& s);
Split parse_split(const std::string& s);
ProtocolScheme parse_scheme(const std::string& s);

inline constexpr AttackType kAttackTypes[] = {AttackType::print_blur, AttackType::replay_moire, AttackType::color_cast,
                                              AttackType::glare_band, AttackType::medium_border};

/// One manifest row. Ids have the form "<domain>-<g|s>-<index>".
struct SampleRecord {
  std::string id;
  std::string image_path;
  Label label = Label::genuine;
  AttackType attack_type = AttackType::none;
  Split split = Split::train;
  std::uint64_t seed = 0;

  bool operator==(const SampleRecord&) const = default;
};

/// Throws if label and attack type disagree (genuine <=> none).
void check_record(const SampleRecord& r);
/// Domain letter encoded in the record id.
char record_domain(const SampleRecord& r);

/// Pseudo-depth supervision at 32x32: a smooth bump over the head for genuine
/// faces, all zeros for spoofs.
struct DepthLabel {
  static constexpr std::size_t kSize = 32;
  TensorF map;  // [1,32,32] in [0,1]
};

/// Per-domain rendering and attack statistics. Two domains emulate a cross-dataset gap.
struct DomainStyle {
  char name = 'A';
  float background[3] = {0.45f, 0.47f, 0.50f};
  double texture_cycles_lo = 1.5, texture_cycles_hi = 3.5;
  double texture_amp = 0.06;
  double color_temperature = 0.0;  // >0 warms: red up, blue down
  double strength_lo = 0.15, strength_hi = 0.6;
  double moire_period_lo = 2.5, moire_period_hi = 4.0;
};

DomainStyle domain_style(char domain);

struct GeneratedSample {
  TensorF image;  // [3,N,N] in [-1,1]
  DepthLabel depth;
  SampleRecord record;
};

/// Deterministic per (seed, first_index + i). Records carry no split yet.
std::vector<GeneratedSample> gen_genuine(std::uint64_t seed, int count, int image_size,
                                         const DomainStyle& style = domain_style('A'), int first_index = 0);

/// Spoofs: a face rendered from its own stream, then one attack at a
/// style-dependent strength. Attack types cycle over kAttackTypes.
std::vector<GeneratedSample> gen_spoof(std::uint64_t seed, int count, int image_size,
                                       const DomainStyle& style = domain_style('A'), int first_index = 0);

/// Deterministic degradation of a genuine image; strength in (0, 1].
TensorF apply_spoof(const TensorF& image, AttackType attack, double strength, std::uint64_t seed,
                    const DomainStyle& style = domain_style('A'));

/// Regenerates the image of a record from its seed, bit-identical to generation.
TensorF render_record(const SampleRecord& r, int image_size);
DepthLabel depth_for_record(const SampleRecord& r, int image_size);

struct Protocol {
  ProtocolScheme scheme = ProtocolScheme::intra;
  std::vector<SampleRecord> train, dev, test;
};

/// intra: stratified 70/10/20 split of one domain (default 'A').
/// cross_ab: train+dev from A (7:1), test on all of B; cross_ba the reverse.
/// Order is a pure function of the record ids.
Protocol build_protocols(const std::vector<SampleRecord>& records, ProtocolScheme scheme, char intra_domain = 'A');

/// Tab-separated, one record per line: id, image_path, label, attack_type, split, seed.
std::string format_manifest_line(const SampleRecord& r);
SampleRecord parse_manifest_line(const std::string& line);
void write_manifest(const std::string& path, const std::vector<SampleRecord>& records);
std::vector<SampleRecord> read_manifest(const std::string& path);

/// Depth label path next to an image: "x/y.png" -> "x/y_depth.png".
std::string depth_path_for(const std::string& image_path);

}  // namespace despoof
