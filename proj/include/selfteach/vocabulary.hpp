#pragma once

#include <string_view>
#include <unordered_map>
#include <vector>

namespace selfteach {

// Character vocabulary. Ids are dense and assigned in first-seen order after the
// reserved ids.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnknown = 1;
  static constexpr int kSeparator = 2;
  static constexpr int kNumReserved = 3;

  Vocabulary() = default;

  void add(std::u32string_view text);
  void add_utf8(std::string_view text);

  int id(char32_t c) const;
  std::size_t size() const { return kNumReserved + chars_.size(); }

  // Non-reserved characters in id order (id = index + kNumReserved).
  const std::vector<char32_t>& chars() const { return chars_; }
  static Vocabulary from_chars(const std::vector<char32_t>& chars);

  bool operator==(const Vocabulary& other) const { return chars_ == other.chars_; }

 private:
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, int> ids_;
};

}  // namespace selfteach
