#include "mmworld/text.hpp"

#include <cctype>

namespace mmw {

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

Tokenizer make_hash_tokenizer(int n_tokens, int vocab) {
  return [n_tokens, vocab](const std::string& prompt) {
    std::vector<int64_t> ids;
    std::string word;
    auto flush = [&] {
      if (!word.empty() && static_cast<int>(ids.size()) < n_tokens)
        ids.push_back(1 + static_cast<int64_t>(fnv1a(word) % static_cast<uint64_t>(vocab - 1)));
      word.clear();
    };
    for (char c : prompt) {
      if (std::isspace(static_cast<unsigned char>(c)))
        flush();
      else
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    flush();
    while (static_cast<int>(ids.size()) < n_tokens) ids.push_back(0);
    return ids;
  };
}

}  // namespace mmw
