#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "htrlab/autodiff/tensor.hpp"

namespace htrlab::io {

/// Named array of raw doubles with a shape.
struct Array {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

/// Generic binary container used for checkpoints and codebooks: a kind tag,
/// ordered string metadata, and named arrays stored as raw IEEE doubles so a
/// write/read round trip is bit-exact.
struct Bundle {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<Array> arrays;

  void set(const std::string& key, const std::string& value);
  /// Throws FormatError when missing.
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const;

  void add(const std::string& name, const ad::Tensor& t);
  void add(const std::string& name, ad::Shape shape, std::vector<double> values);
  const Array& array(const std::string& name) const;
  bool has_array(const std::string& name) const;
  ad::Tensor tensor(const std::string& name) const;
};

void write_bundle(const std::filesystem::path& path, const Bundle& b);
/// IOError when unreadable, FormatError when malformed or of another kind.
Bundle read_bundle(const std::filesystem::path& path, const std::string& expected_kind = "");

/// FNV-1a over the bytes of every array; cheap identity check for tests.
std::uint64_t checksum(const std::vector<ad::Tensor>& ts);

}  // namespace htrlab::io
