#include "despoof/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "despoof/rng.hpp"
#include "despoof/serialize.hpp"

namespace despoof {

namespace {

constexpr double kPi = std::numbers::pi;

template <class E, std::size_t N>
E parse_enum(const std::string& s, const std::array<E, N>& values, const char* what) {
  for (auto v : values) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + s + "'");
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

struct FaceGeometry {
  double cx, cy, a, b;  // in units of image width
};

struct FaceParams {
  FaceGeometry geo;
  double skin[3];
  double light[3];
  double ambient, diffuse;
  double bg[3];
  double tex_fx[2], tex_fy[2], tex_phase[2];
  std::uint64_t grain_seed;
};

FaceParams draw_face(Rng& rng, const DomainStyle& style) {
  FaceParams p{};
  p.geo.cx = 0.5 + rng.uniform(-0.06, 0.06);
  p.geo.cy = 0.5 + rng.uniform(-0.04, 0.06);
  p.geo.a = rng.uniform(0.25, 0.32);
  p.geo.b = rng.uniform(0.33, 0.41);
  const double tone = rng.uniform();
  const double light_skin[3] = {0.93, 0.74, 0.60};
  const double dark_skin[3] = {0.42, 0.28, 0.20};
  const double temp = style.color_temperature + rng.uniform(-0.04, 0.04);
  for (int c = 0; c < 3; ++c) p.skin[c] = light_skin[c] * (1 - tone) + dark_skin[c] * tone;
  p.skin[0] *= 1 + temp;
  p.skin[2] *= 1 - temp;
  const double phi = rng.uniform(0, 2 * kPi);
  const double elev = rng.uniform(0.5, 0.9);
  p.light[0] = std::cos(phi) * std::sqrt(1 - elev * elev);
  p.light[1] = std::sin(phi) * std::sqrt(1 - elev * elev);
  p.light[2] = elev;
  p.ambient = rng.uniform(0.35, 0.5);
  p.diffuse = rng.uniform(0.45, 0.65);
  const double bright = rng.uniform(-0.12, 0.12);
  for (int c = 0; c < 3; ++c) p.bg[c] = style.background[c] + bright + rng.uniform(-0.05, 0.05);
  for (int k = 0; k < 2; ++k) {
    const double cyc = rng.uniform(style.texture_cycles_lo, style.texture_cycles_hi);
    const double ang = rng.uniform(0, kPi);
    p.tex_fx[k] = cyc * std::cos(ang);
    p.tex_fy[k] = cyc * std::sin(ang);
    p.tex_phase[k] = rng.uniform(0, 2 * kPi);
  }
  p.grain_seed = rng.engine()();
  return p;
}

TensorF render_face(const FaceParams& p, int n, const DomainStyle& style) {
  TensorF img(Shape{3, static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
  Rng grain(p.grain_seed);
  const double eye_dark[3] = {0.10, 0.08, 0.08};
  const double mouth_col[3] = {0.55, 0.16, 0.16};
  const double px = 1.0 / n;
  const auto& g = p.geo;
  const std::size_t hw = static_cast<std::size_t>(n) * n;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double x = (j + 0.5) * px, y = (i + 0.5) * px;
      const double u = (x - g.cx) / g.a, v = (y - g.cy) / g.b;
      const double r = std::sqrt(u * u + v * v);
      const double z = std::sqrt(std::max(0.0, 1 - r * r));
      const double lambert = std::max(0.0, u * p.light[0] + v * p.light[1] + z * p.light[2]);
      const double shade = p.ambient + p.diffuse * lambert;
      double face[3];
      for (int c = 0; c < 3; ++c) face[c] = p.skin[c] * shade;
      for (int side = -1; side <= 1; side += 2) {
        const double ex = g.cx + side * 0.38 * g.a, ey = g.cy - 0.18 * g.b;
        const double d = std::hypot(x - ex, y - ey) / (0.13 * g.a);
        const double w = 1 - smoothstep(0.75, 1.0, d);
        for (int c = 0; c < 3; ++c) face[c] = face[c] * (1 - w) + eye_dark[c] * w;
      }
      {
        const double mx = std::abs(x - g.cx) / (0.38 * g.a);
        const double my = std::abs(y - (g.cy + 0.5 * g.b)) / (0.07 * g.b);
        const double w = (1 - smoothstep(0.8, 1.0, mx)) * (1 - smoothstep(0.6, 1.0, my));
        for (int c = 0; c < 3; ++c) face[c] = face[c] * (1 - w) + mouth_col[c] * shade * w;
      }
      // One-pixel feathered silhouette.
      const double edge = (1 - r) * std::min(g.a, g.b) / px;
      const double alpha = std::clamp(edge + 0.5, 0.0, 1.0);
      double tex = 0;
      for (int k = 0; k < 2; ++k) tex += std::sin(2 * kPi * (p.tex_fx[k] * x + p.tex_fy[k] * y) + p.tex_phase[k]);
      tex *= style.texture_amp * 0.5;
      const double noise = 0.015 * grain.normal();
      for (int c = 0; c < 3; ++c) {
        const double bg = p.bg[c] + tex;
        const double val = alpha * face[c] + (1 - alpha) * bg + noise;
        img[c * hw + static_cast<std::size_t>(i) * n + j] = static_cast<float>(std::clamp(val * 2 - 1, -1.0, 1.0));
      }
    }
  }
  return img;
}

DepthLabel render_depth(const FaceGeometry& g) {
  constexpr std::size_t n = DepthLabel::kSize;
  TensorF map(Shape{1, n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double x = (j + 0.5) / n, y = (i + 0.5) / n;
      const double u = (x - g.cx) / g.a, v = (y - g.cy) / g.b;
      map[i * n + j] = static_cast<float>(std::sqrt(std::max(0.0, 1 - u * u - v * v)));
    }
  }
  return {std::move(map)};
}

DepthLabel zero_depth() {
  constexpr std::size_t n = DepthLabel::kSize;
  return {TensorF(Shape{1, n, n}, 0.0f)};
}

std::string make_id(char domain, Label label, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c-%c-%06d", domain, label == Label::genuine ? 'g' : 's', index);
  return buf;
}

// Separable [1 2 1]/4 blur with edge clamping, per channel.
TensorF blur3(const TensorF& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  TensorF tmp(x.shape()), out(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t jl = j == 0 ? 0 : j - 1, jr = std::min(j + 1, w - 1);
        const std::size_t r = (ch * h + i) * w;
        tmp[r + j] = 0.25f * x[r + jl] + 0.5f * x[r + j] + 0.25f * x[r + jr];
      }
    }
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t iu = i == 0 ? 0 : i - 1, id = std::min(i + 1, h - 1);
      for (std::size_t j = 0; j < w; ++j) {
        out[(ch * h + i) * w + j] = 0.25f * tmp[(ch * h + iu) * w + j] + 0.5f * tmp[(ch * h + i) * w + j] +
                                    0.25f * tmp[(ch * h + id) * w + j];
      }
    }
  }
  return out;
}

struct SpoofDraw {
  AttackType attack;
  double strength;
  std::uint64_t face_seed;
  std::uint64_t attack_seed;
};

SpoofDraw draw_spoof(std::uint64_t record_seed, AttackType attack, const DomainStyle& style) {
  Rng rng(record_seed);
  SpoofDraw d;
  d.attack = attack;
  d.strength = rng.uniform(style.strength_lo, style.strength_hi);
  d.face_seed = derive_seed(record_seed, "face");
  d.attack_seed = derive_seed(record_seed, "attack");
  return d;
}

}  // namespace

std::string to_string(Label v) { return v == Label::genuine ? "genuine" : "spoof"; }

std::string to_string(AttackType v) {
  switch (v) {
    case AttackType::none: return "none";
    case AttackType::print_blur: return "print_blur";
    case AttackType::replay_moire: return "replay_moire";
    case AttackType::color_cast: return "color_cast";
    case AttackType::glare_band: return "glare_band";
    case AttackType::medium_border: return "medium_border";
  }
  throw std::logic_error("bad AttackType");
}

std::string to_string(Split v) {
  switch (v) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  throw std::logic_error("bad Split");
}

std::string to_string(ProtocolScheme v) {
  switch (v) {
    case ProtocolScheme::intra: return "intra";
    case ProtocolScheme::cross_ab: return "cross_ab";
    case ProtocolScheme::cross_ba: return "cross_ba";
  }
  throw std::logic_error("bad ProtocolScheme");
}

Label parse_label(const std::string& s) {
  return parse_enum(s, std::array{Label::genuine, Label::spoof}, "label");
}
AttackType parse_attack_type(const std::string& s) {
  return parse_enum(s,
                    std::array{AttackType::none, AttackType::print_blur, AttackType::replay_moire,
                               AttackType::color_cast, AttackType::glare_band, AttackType::medium_border},
                    "attack type");
}
Split parse_split(const std::string& s) { return parse_enum(s, std::array{Split::train, Split::dev, Split::test}, "split"); }
ProtocolScheme parse_scheme(const std::string& s) {
  return parse_enum(s, std::array{ProtocolScheme::intra, ProtocolScheme::cross_ab, ProtocolScheme::cross_ba},
                    "protocol scheme");
}

void check_record(const SampleRecord& r) {
  if ((r.label == Label::genuine) != (r.attack_type == AttackType::none)) {
    throw std::invalid_argument("record '" + r.id + "': label " + to_string(r.label) + " inconsistent with attack " +
                                to_string(r.attack_type));
  }
}

char record_domain(const SampleRecord& r) {
  if (r.id.size() < 2 || r.id[1] != '-') throw std::invalid_argument("record id '" + r.id + "' has no domain prefix");
  return r.id[0];
}

DomainStyle domain_style(char domain) {
  DomainStyle s;
  s.name = domain;
  if (domain == 'A') return s;
  if (domain == 'B') {
    s.background[0] = 0.56f;
    s.background[1] = 0.50f;
    s.background[2] = 0.40f;
    s.texture_cycles_lo = 4.0;
    s.texture_cycles_hi = 7.0;
    s.texture_amp = 0.10;
    s.color_temperature = 0.07;
    s.strength_lo = 0.35;
    s.strength_hi = 0.9;
    s.moire_period_lo = 3.5;
    s.moire_period_hi = 6.0;
    return s;
  }
  throw std::invalid_argument(std::string("unknown corpus domain '") + domain + "'");
}

std::vector<GeneratedSample> gen_genuine(std::uint64_t seed, int count, int image_size, const DomainStyle& style,
                                         int first_index) {
  if (count < 1) throw std::invalid_argument("gen_genuine: count must be >= 1");
  if (image_size < 8) throw std::invalid_argument("gen_genuine: image_size must be >= 8");
  std::vector<GeneratedSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const int index = first_index + k;
    SampleRecord r;
    r.id = make_id(style.name, Label::genuine, index);
    r.label = Label::genuine;
    r.attack_type = AttackType::none;
    r.seed = derive_seed(seed, std::string("genuine.") + style.name, static_cast<std::uint64_t>(index));
    out.push_back({render_record(r, image_size), depth_for_record(r, image_size), r});
  }
  return out;
}

std::vector<GeneratedSample> gen_spoof(std::uint64_t seed, int count, int image_size, const DomainStyle& style,
                                       int first_index) {
  if (count < 1) throw std::invalid_argument("gen_spoof: count must be >= 1");
  std::vector<GeneratedSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const int index = first_index + k;
    SampleRecord r;
    r.id = make_id(style.name, Label::spoof, index);
    r.label = Label::spoof;
    r.attack_type = kAttackTypes[static_cast<std::size_t>(index) % std::size(kAttackTypes)];
    r.seed = derive_seed(seed, std::string("spoof.") + style.name, static_cast<std::uint64_t>(index));
    out.push_back({render_record(r, image_size), zero_depth(), r});
  }
  return out;
}

TensorF render_record(const SampleRecord& r, int image_size) {
  check_record(r);
  const auto style = domain_style(record_domain(r));
  if (r.label == Label::genuine) {
    Rng rng(r.seed);
    return render_face(draw_face(rng, style), image_size, style);
  }
  const auto d = draw_spoof(r.seed, r.attack_type, style);
  Rng face_rng(d.face_seed);
  const auto face = render_face(draw_face(face_rng, style), image_size, style);
  return apply_spoof(face, d.attack, d.strength, d.attack_seed, style);
}

DepthLabel depth_for_record(const SampleRecord& r, int /*image_size*/) {
  check_record(r);
  if (r.label == Label::spoof) return zero_depth();
  const auto style = domain_style(record_domain(r));
  Rng rng(r.seed);
  return render_depth(draw_face(rng, style).geo);
}

TensorF apply_spoof(const TensorF& image, AttackType attack, double strength, std::uint64_t seed,
                    const DomainStyle& style) {
  if (attack == AttackType::none) throw std::invalid_argument("apply_spoof: attack type 'none' is not an attack");
  if (!(strength > 0.0 && strength <= 1.0)) throw std::invalid_argument("apply_spoof: strength must be in (0, 1]");
  if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("apply_spoof: expected [3,H,W] image");
  const std::size_t h = image.dim(1), w = image.dim(2), hw = h * w;
  const auto s = static_cast<float>(strength);
  Rng rng(seed);
  TensorF out = image;
  switch (attack) {
    case AttackType::color_cast: {
      for (std::size_t c = 0; c < 3; ++c) {
        const auto gain = static_cast<float>(1.0 + strength * 0.25 * rng.uniform(-1, 1));
        const auto offset = static_cast<float>(strength * 0.15 * rng.uniform(-1, 1));
        for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = gain * image[c * hw + i] + offset;
      }
      break;
    }
    case AttackType::replay_moire: {
      const double period = rng.uniform(style.moire_period_lo, style.moire_period_hi);
      const double ang = rng.uniform(0, kPi);
      const double phase = rng.uniform(0, 2 * kPi);
      const double fx = std::cos(ang) / period, fy = std::sin(ang) / period;
      // Beat of two nearly aligned gratings, the usual screen-recapture look.
      const double fx2 = fx * 1.07, fy2 = fy * 0.93;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const double pat = 0.5 * (std::sin(2 * kPi * (fx * j + fy * i) + phase) +
                                    std::sin(2 * kPi * (fx2 * j + fy2 * i) + 0.5 * phase));
          const auto m = static_cast<float>(1.0 + strength * 0.2 * pat);
          for (std::size_t c = 0; c < 3; ++c) out[c * hw + i * w + j] = image[c * hw + i * w + j] * m;
        }
      }
      break;
    }
    case AttackType::print_blur: {
      const auto b1 = blur3(image);
      const auto b2 = blur3(b1);
      for (std::size_t i = 0; i < out.size(); ++i) {
        const float printed = b1[i] + 0.3f * (b1[i] - b2[i]);
        out[i] = (1 - s) * image[i] + s * printed;
      }
      break;
    }
    case AttackType::glare_band: {
      const double ang = rng.uniform(0.2 * kPi, 0.8 * kPi);
      const double centre = rng.uniform(0.3, 0.7);
      const double width = rng.uniform(0.08, 0.16);
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const double x = (j + 0.5) / w, y = (i + 0.5) / h;
          const double d = (x * std::cos(ang) + y * std::sin(ang)) / (std::abs(std::cos(ang)) + std::abs(std::sin(ang)));
          const double band = std::exp(-std::pow((d - centre) / width, 2));
          const auto add = static_cast<float>(strength * 0.6 * band);
          for (std::size_t c = 0; c < 3; ++c) out[c * hw + i * w + j] = image[c * hw + i * w + j] + add;
        }
      }
      break;
    }
    case AttackType::medium_border: {
      const double frame = rng.uniform(0.06, 0.12);
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const double x = (j + 0.5) / w, y = (i + 0.5) / h;
          const double edge = std::min({x, y, 1 - x, 1 - y});
          const double m = 1 - smoothstep(frame * 0.6, frame, edge);
          for (std::size_t c = 0; c < 3; ++c) {
            const float v = image[c * hw + i * w + j];
            out[c * hw + i * w + j] = v - static_cast<float>(strength * 0.6 * m) * (v + 1.0f);
          }
        }
      }
      break;
    }
    case AttackType::none: break;
  }
  for (auto& v : out.vec()) v = std::clamp(v, -1.0f, 1.0f);
  return out;
}

namespace {

std::vector<SampleRecord> sorted_by_hash(std::vector<SampleRecord> rs) {
  std::sort(rs.begin(), rs.end(), [](const SampleRecord& a, const SampleRecord& b) {
    const auto ha = fnv1a64(a.id), hb = fnv1a64(b.id);
    return ha != hb ? ha < hb : a.id < b.id;
  });
  return rs;
}

void split_two_way(const std::vector<SampleRecord>& rs, double first_frac, Split first, Split second,
                   std::vector<SampleRecord>& a, std::vector<SampleRecord>& b) {
  std::vector<SampleRecord> gen, spf;
  for (const auto& r : rs) (r.label == Label::genuine ? gen : spf).push_back(r);
  const auto n_first = static_cast<std::size_t>(std::lround(first_frac * static_cast<double>(rs.size())));
  auto g_first = static_cast<std::size_t>(std::lround(first_frac * static_cast<double>(gen.size())));
  g_first = std::min(g_first, n_first);
  const std::size_t s_first = std::min(n_first - g_first, spf.size());
  for (std::size_t i = 0; i < gen.size(); ++i) {
    auto r = gen[i];
    r.split = i < g_first ? first : second;
    (i < g_first ? a : b).push_back(r);
  }
  for (std::size_t i = 0; i < spf.size(); ++i) {
    auto r = spf[i];
    r.split = i < s_first ? first : second;
    (i < s_first ? a : b).push_back(r);
  }
}

void require_both_labels(const std::vector<SampleRecord>& rs, const char* what) {
  const bool g = std::any_of(rs.begin(), rs.end(), [](const auto& r) { return r.label == Label::genuine; });
  const bool s = std::any_of(rs.begin(), rs.end(), [](const auto& r) { return r.label == Label::spoof; });
  if (!g || !s) throw std::invalid_argument(std::string("build_protocols: ") + what + " must contain both labels");
}

}  // namespace

Protocol build_protocols(const std::vector<SampleRecord>& records, ProtocolScheme scheme, char intra_domain) {
  for (const auto& r : records) check_record(r);
  Protocol p;
  p.scheme = scheme;
  if (scheme == ProtocolScheme::intra) {
    std::vector<SampleRecord> pool;
    for (const auto& r : records) {
      if (record_domain(r) == intra_domain) pool.push_back(r);
    }
    require_both_labels(pool, "intra domain records");
    pool = sorted_by_hash(std::move(pool));
    std::vector<SampleRecord> rest;
    split_two_way(pool, 0.7, Split::train, Split::test, p.train, rest);
    // dev is 10 of the remaining 30 percent
    std::vector<SampleRecord> rest_sorted = sorted_by_hash(rest);
    const double dev_frac = static_cast<double>(std::lround(0.1 * static_cast<double>(pool.size()))) /
                            static_cast<double>(std::max<std::size_t>(1, rest_sorted.size()));
    split_two_way(rest_sorted, dev_frac, Split::dev, Split::test, p.dev, p.test);
    return p;
  }
  const char src = scheme == ProtocolScheme::cross_ab ? 'A' : 'B';
  const char dst = scheme == ProtocolScheme::cross_ab ? 'B' : 'A';
  std::vector<SampleRecord> source, target;
  for (const auto& r : records) {
    const char d = record_domain(r);
    if (d == src) source.push_back(r);
    if (d == dst) target.push_back(r);
  }
  require_both_labels(source, "source domain records");
  require_both_labels(target, "target domain records");
  split_two_way(sorted_by_hash(std::move(source)), 7.0 / 8.0, Split::train, Split::dev, p.train, p.dev);
  for (auto r : sorted_by_hash(std::move(target))) {
    r.split = Split::test;
    p.test.push_back(r);
  }
  return p;
}

std::string format_manifest_line(const SampleRecord& r) {
  return r.id + '\t' + r.image_path + '\t' + to_string(r.label) + '\t' + to_string(r.attack_type) + '\t' +
         to_string(r.split) + '\t' + std::to_string(r.seed);
}

SampleRecord parse_manifest_line(const std::string& line) {
  std::vector<std::string> f;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, '\t')) f.push_back(cur);
  if (f.size() != 6) throw std::invalid_argument("manifest line needs 6 tab-separated fields: '" + line + "'");
  SampleRecord r;
  r.id = f[0];
  r.image_path = f[1];
  r.label = parse_label(f[2]);
  r.attack_type = parse_attack_type(f[3]);
  r.split = parse_split(f[4]);
  std::size_t used = 0;
  r.seed = std::stoull(f[5], &used);
  if (used != f[5].size()) throw std::invalid_argument("bad seed field '" + f[5] + "'");
  check_record(r);
  return r;
}

void write_manifest(const std::string& path, const std::vector<SampleRecord>& records) {
  std::set<std::string> ids;
  for (const auto& r : records) {
    check_record(r);
    if (!ids.insert(r.id).second) throw std::invalid_argument("manifest: duplicate id '" + r.id + "'");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest '" + path + "'");
  for (const auto& r : records) os << format_manifest_line(r) << '\n';
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<SampleRecord> read_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read manifest '" + path + "'");
  std::vector<SampleRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(parse_manifest_line(line));
  }
  std::set<std::string> ids;
  for (const auto& r : out) {
    if (!ids.insert(r.id).second) throw FormatError("manifest '" + path + "': duplicate id '" + r.id + "'");
  }
  return out;
}

std::string depth_path_for(const std::string& image_path) {
  const auto dot = image_path.rfind('.');
  const auto slash = image_path.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return image_path + "_depth.png";
  return image_path.substr(0, dot) + "_depth.png";
}

}  // namespace despoof
