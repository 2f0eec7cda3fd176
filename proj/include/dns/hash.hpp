#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace dns {

/// FNV-1a 64-bit, hex encoded. Used for config hashes.
std::string fnv1a_hex(std::string_view data);

/// SHA-1 of "blob <size>\0<content>", i.e. what `git hash-object` prints.
std::string git_blob_hash(std::string_view content);
std::string git_blob_hash_file(const std::filesystem::path& path);

}  // namespace dns
