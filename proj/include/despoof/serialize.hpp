#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "despoof/tensor.hpp"

// Binary formats, all little-endian.
//
// Tensor:    "DSPT" | u32 version | u32 rank | u64 shape[rank] | f32 data[numel]
// Container: magic[4] | u32 version
//            | u32 n_meta  | (string key, string value) * n_meta
//            | u32 n_tensor | (string name, Tensor) * n_tensor
// where string = u32 length | bytes.
namespace despoof {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::uint32_t kContainerFormatVersion = 1;

void write_tensor(std::ostream& os, const TensorF& t);
TensorF read_tensor(std::istream& is);

using Metadata = std::map<std::string, std::string>;
using NamedTensors = std::vector<std::pair<std::string, TensorF>>;

struct Container {
  std::array<char, 4> magic{};
  Metadata meta;
  NamedTensors tensors;

  const TensorF& tensor(const std::string& name) const;
  const std::string& value(const std::string& key) const;
};

void write_container(std::ostream& os, const Container& c);
Container read_container(std::istream& is);

void save_container(const std::string& path, const Container& c);
Container load_container(const std::string& path);

/// Reads only the magic and metadata block.
Container peek_container(const std::string& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace despoof
