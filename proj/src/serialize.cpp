#include "despoof/serialize.hpp"

#include <bit>
#include <limits>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace despoof {

namespace {

static_assert(std::numeric_limits<float>::is_iec559, "IEEE-754 float required");

template <class U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf.data(), buf.size());
}

template <class U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> buf{};
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) throw FormatError("unexpected end of stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get_le<std::uint32_t>(is);
  if (n > (1u << 24)) throw FormatError("string length out of range");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw FormatError("unexpected end of stream in string");
  return s;
}

void read_header(std::istream& is, Container& c) {
  if (!is.read(c.magic.data(), 4)) throw FormatError("missing container magic");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kContainerFormatVersion) throw FormatError("unsupported container version " + std::to_string(version));
  const auto n_meta = get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = get_string(is);
    c.meta[k] = get_string(is);
  }
}

}  // namespace

void write_tensor(std::ostream& os, const TensorF& t) {
  os.write("DSPT", 4);
  put_le<std::uint32_t>(os, kTensorFormatVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint64_t>(os, d);
  for (float v : t.vec()) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
}

TensorF read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "DSPT", 4) != 0) throw FormatError("bad tensor magic");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kTensorFormatVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
  const auto rank = get_le<std::uint32_t>(is);
  if (rank == 0 || rank > 8) throw FormatError("tensor rank out of range");
  Shape shape(rank);
  for (auto& d : shape) {
    d = get_le<std::uint64_t>(is);
    if (d == 0 || d > (1ULL << 32)) throw FormatError("tensor dimension out of range");
  }
  const std::size_t n = shape_numel(shape);
  std::vector<float> data(n);
  for (auto& v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(is));
  return TensorF(std::move(shape), std::move(data));
}

const TensorF& Container::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("container has no tensor named '" + name + "'");
}

const std::string& Container::value(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("container metadata missing key '" + key + "'");
  return it->second;
}

void write_container(std::ostream& os, const Container& c) {
  os.write(c.magic.data(), 4);
  put_le<std::uint32_t>(os, kContainerFormatVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.meta.size()));
  for (const auto& [k, v] : c.meta) {
    put_string(os, k);
    put_string(os, v);
  }
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    put_string(os, name);
    write_tensor(os, t);
  }
}

Container read_container(std::istream& is) {
  Container c;
  read_header(is, c);
  const auto n = get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = get_string(is);
    c.tensors.emplace_back(std::move(name), read_tensor(is));
  }
  return c;
}

void save_container(const std::string& path, const Container& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_container(os, c);
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

Container load_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_container(is);
}

Container peek_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  Container c;
  read_header(is, c);
  return c;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw FormatError("not a number: '" + s + "'");
  return v;
}

}  // namespace despoof
