#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace selfteach::text {

// UTF-8 <-> UTF-32. Invalid input throws DataError.
std::u32string decode(std::string_view utf8);
std::string encode(std::u32string_view chars);

// Number of Unicode scalar values.
std::size_t length(std::string_view utf8);

// Canonical composition (NFC).
std::string nfc(std::string_view utf8);

// Trims and collapses internal whitespace runs to one ASCII space.
std::string collapse_whitespace(std::string_view utf8);

bool is_whitespace(char32_t c);
bool is_punctuation(char32_t c);
bool is_cjk(char32_t c);

// Lowercases Latin-script letters and leaves every other script untouched.
char32_t fold_latin(char32_t c);
std::u32string fold_latin(std::u32string_view s);

// Substring test that ignores case for Latin letters only.
bool contains_latin_folded(std::u32string_view haystack, std::u32string_view needle);

}  // namespace selfteach::text
