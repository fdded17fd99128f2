#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace testutil {

// Exhaustive-history LZ76 parser: each phrase is extended while it still
// occurs somewhere in the text that precedes its last symbol. A trailing
// phrase that runs into the end of the sequence counts as one phrase.
inline std::size_t lz76_bruteforce(const std::vector<std::uint8_t>& bits) {
  const std::string s(bits.begin(), bits.end());
  const std::size_t n = s.size();
  std::size_t c = 0, i = 0;
  while (i < n) {
    std::size_t len = 1;
    while (i + len <= n && s.substr(0, i + len - 1).find(s.substr(i, len)) != std::string::npos) ++len;
    ++c;
    i += len;
  }
  return c;
}

}  // namespace testutil
