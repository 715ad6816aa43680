#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace qf::unicode {

inline constexpr char32_t kReplacementChar = 0xFFFD;

// Decodes one codepoint at `pos` and advances it. Returns false (and advances
// by one byte) on an ill-formed sequence, overlong form, or surrogate.
bool decode_next(std::string_view s, std::size_t& pos, char32_t& cp);

bool is_valid_utf8(std::string_view s);

void append_utf8(std::string& out, char32_t cp);

// Unicode White_Space property.
constexpr bool is_white_space(char32_t cp) {
  if (cp <= 0x20) return cp == 0x20 || (cp >= 0x09 && cp <= 0x0D);
  if (cp < 0x85) return false;
  return cp == 0x85 || cp == 0xA0 || cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) ||
         cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F || cp == 0x3000;
}

// Maximal runs of non-White_Space codepoints, as views into `s`. Ill-formed
// bytes are treated as non-whitespace.
std::vector<std::string_view> split_whitespace(std::string_view s);

// Per-codepoint tokens, skipping whitespace.
std::vector<std::string_view> split_codepoints(std::string_view s);

// Full Unicode lowercase mapping (ICU).
std::string to_lower(std::string_view s);

// NFC, then lowercase, then removal of every codepoint in general categories
// P* and S*. Version-tagged by kNormalizationTag in decontam.hpp.
std::string normalize_nfc_lower_strip(std::string_view s);

}  // namespace qf::unicode
