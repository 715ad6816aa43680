#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace qf {

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

// U+241F SYMBOL FOR UNIT SEPARATOR, used to join n-gram tokens before hashing.
inline constexpr std::string_view kGramSeparator = "\xE2\x90\x9F";

constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

// Hash of tokens joined by kGramSeparator, without materialising the join.
template <typename Range>
std::uint64_t fnv1a64_joined(const Range& tokens) {
  std::uint64_t h = kFnvOffset;
  bool first = true;
  for (const auto& t : tokens) {
    if (!first) h = fnv1a64(kGramSeparator, h);
    h = fnv1a64(std::string_view(t), h);
    first = false;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// FNV-1a-64 over a whole file, hex encoded. Used for change detection only.
std::string file_content_hash(const std::filesystem::path& path);

}  // namespace qf
