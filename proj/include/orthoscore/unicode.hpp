#pragma once

#include <string>
#include <string_view>

namespace orthoscore {

// Decodes UTF-8 into Unicode scalar values. Invalid byte sequences raise an
// encoding error.
std::u32string utf8_decode(std::string_view text);

std::string utf8_encode(std::u32string_view text);
std::string utf8_encode(char32_t cp);

// Canonical composition of base letter + combining mark pairs for the Latin,
// Greek and Cyrillic ranges used by the supported orthographies. Strings that
// are already composed pass through unchanged.
std::u32string nfc(std::u32string_view text);

bool is_space(char32_t cp);

// Uppercase detection over the alphabets this toolkit ingests (basic Latin,
// Latin-1, Latin Extended-A, Greek, Cyrillic).
bool is_upper(char32_t cp);

} // namespace orthoscore
