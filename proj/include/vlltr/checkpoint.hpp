#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vlltr/io.hpp"
#include "vlltr/tensor.hpp"

namespace vlltr {

// "VLCK" checkpoint: magic, u32 version, u32 metadata count, metadata
// key/value strings (u32 length + bytes each), u32 section count, then per
// section: u32 name length, name bytes, u32 rank, rank x u64 extents,
// row-major float64 values. All integers little-endian.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> sections;

  void put(std::string name, Tensor t);
  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  // Names starting with `prefix`, in file order.
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  void write(const std::filesystem::path& path) const;
  static Checkpoint read(const std::filesystem::path& path);

  Digest digest() const { return sha256(serialize()); }
};

}  // namespace vlltr
