#include "selfteach/vocabulary.hpp"

#include "selfteach/errors.hpp"
#include "selfteach/unicode.hpp"

namespace selfteach {

void Vocabulary::add(std::u32string_view text) {
  for (char32_t c : text) {
    if (ids_.emplace(c, static_cast<int>(size())).second) chars_.push_back(c);
  }
}

void Vocabulary::add_utf8(std::string_view text) { add(text::decode(text)); }

int Vocabulary::id(char32_t c) const {
  auto it = ids_.find(c);
  return it == ids_.end() ? kUnknown : it->second;
}

Vocabulary Vocabulary::from_chars(const std::vector<char32_t>& chars) {
  Vocabulary v;
  for (char32_t c : chars) {
    if (!v.ids_.emplace(c, static_cast<int>(v.size())).second) {
      throw DataError("vocabulary: duplicate character U+" + std::to_string(static_cast<unsigned>(c)));
    }
    v.chars_.push_back(c);
  }
  return v;
}

}  // namespace selfteach
