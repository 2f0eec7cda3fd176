#pragma once

// Named-array container shared by dataset, checkpoint and smoothing-dump files.
//
// Layout (all integers and floats little-endian):
//   magic     8 bytes  "DNSARR\0\1"
//   version   u32
//   meta_len  u64, followed by meta_len bytes of UTF-8 JSON
//   count     u32
//   count x { name_len u16, name bytes, ndim u8, dims u64[ndim],
//             values f64[prod(dims)] }

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace dns {

inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;

  std::uint64_t element_count() const;
};

struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
  const NamedArray& at(const std::string& name) const;
  void add(std::string name, std::vector<std::uint64_t> shape,
           std::vector<double> values);
};

std::string serialize(const Container& c);
Container deserialize(const std::string& bytes,
                      const std::optional<std::set<std::string>>& only = std::nullopt);

/// Writes via a temporary file and rename, so a crash never leaves a torn file.
void write_container(const std::filesystem::path& path, const Container& c);

/// Reads a container. When `only` is given, arrays not named in it are
/// skipped on disk and never loaded.
Container read_container(const std::filesystem::path& path,
                         const std::optional<std::set<std::string>>& only = std::nullopt);

}  // namespace dns
