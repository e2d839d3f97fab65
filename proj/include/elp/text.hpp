#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace elp::text {

// Whitespace-delimited tokens (space, tab, newline, CR, FF, VT).
std::vector<std::string_view> split_whitespace(std::string_view s);
std::size_t count_whitespace_tokens(std::string_view s);

// Analyzer used by the bag-of-words models: optional ASCII lowercasing and
// splitting on runs of non-alphanumeric bytes. Bytes >= 0x80 count as word
// characters so UTF-8 words stay whole.
std::vector<std::string> analyze(std::string_view s, bool lowercase = true);

std::string to_lower(std::string_view s);
std::string join(std::span<const std::string> parts, std::string_view sep);
std::vector<std::string> split(std::string_view s, char delim);

// 64-bit FNV-1a; stable across platforms, used for content hashes and ids.
std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::string content_hash(std::string_view data);

// Porter (1980) suffix-stripping stemmer. Input is expected lowercase ASCII;
// anything else is returned unchanged.
std::string porter_stem(std::string_view word);

}  // namespace elp::text
