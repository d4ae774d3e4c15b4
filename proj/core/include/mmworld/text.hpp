#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mmw {

/// Maps a prompt to exactly n_tokens ids in [0, vocab); id 0 is padding.
using Tokenizer = std::function<std::vector<int64_t>(const std::string&)>;

/// Deterministic provider: FNV-1a hash of each lowercased whitespace word
/// into [1, vocab), truncated or zero-padded to n_tokens.
Tokenizer make_hash_tokenizer(int n_tokens, int vocab);

}  // namespace mmw
