#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace pgnet {

inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

// FNV-1a over a file's bytes, as a 16-digit hex string. Used for the input
// content hashes recorded in run manifests.
std::string file_content_hash(const std::string& path);

}  // namespace pgnet
