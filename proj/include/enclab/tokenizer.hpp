#pragma once

// Byte-level tokenizer: ids 0..255 are raw bytes, followed by four
// specials.  No external vocabulary, fully deterministic.

#include <string_view>
#include <vector>

namespace enclab::tok {

inline constexpr int PAD = 256;
inline constexpr int CLS = 257;
inline constexpr int SEP = 258;
inline constexpr int MASK = 259;
inline constexpr int VOCAB_SIZE = 260;

inline constexpr bool is_special(int id) { return id >= 256; }

// Raw bytes, no specials.
inline std::vector<int> encode_bytes(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    return ids;
}

// CLS + bytes + SEP, truncated to max_len when positive.
inline std::vector<int> encode(std::string_view text, int max_len = -1) {
    std::vector<int> ids;
    ids.reserve(text.size() + 2);
    ids.push_back(CLS);
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    ids.push_back(SEP);
    if (max_len > 0 && static_cast<int>(ids.size()) > max_len) ids.resize(max_len);
    return ids;
}

}  // namespace enclab::tok
