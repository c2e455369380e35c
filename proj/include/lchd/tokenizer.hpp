#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lchd::tok {

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by the four
// control tokens.
inline constexpr int kPad = 256;
inline constexpr int kMask = 257;
inline constexpr int kSep = 258;
inline constexpr int kCls = 259;
inline constexpr int kVocab = 260;

inline bool is_special(int id) { return id >= 256; }

inline std::vector<int> encode(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

inline std::string decode(const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    switch (id) {
      case kPad: out += "[PAD]"; break;
      case kMask: out += "[MASK]"; break;
      case kSep: out += "[SEP]"; break;
      case kCls: out += "[CLS]"; break;
      default: out += static_cast<char>(static_cast<unsigned char>(id)); break;
    }
  }
  return out;
}

}  // namespace lchd::tok
