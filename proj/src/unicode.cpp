#include "orthoscore/unicode.hpp"

#include <array>
#include <unordered_map>

#include "orthoscore/errors.hpp"

namespace orthoscore {

namespace {

[[noreturn]] void bad_utf8(size_t offset) {
    fail(ErrorKind::Encoding, "invalid UTF-8 byte sequence at offset " + std::to_string(offset));
}

struct Composition {
    char32_t base;
    char32_t mark;
    char32_t composed;
};

// Canonical (base, combining mark) -> precomposed pairs for the Latin-1,
// Latin Extended-A, Greek and Cyrillic letters that occur in the supported
// orthographies. Combining marks: 0300 grave, 0301 acute, 0302 circumflex,
// 0303 tilde, 0304 macron, 0306 breve, 0308 diaeresis, 030A ring, 030B double
// acute, 030C caron, 0327 cedilla, 0328 ogonek.
constexpr Composition kCompositions[] = {
    {U'A', 0x300, 0xC0}, {U'A', 0x301, 0xC1}, {U'A', 0x302, 0xC2}, {U'A', 0x303, 0xC3},
    {U'A', 0x308, 0xC4}, {U'A', 0x30A, 0xC5}, {U'C', 0x327, 0xC7}, {U'E', 0x300, 0xC8},
    {U'E', 0x301, 0xC9}, {U'E', 0x302, 0xCA}, {U'E', 0x308, 0xCB}, {U'I', 0x300, 0xCC},
    {U'I', 0x301, 0xCD}, {U'I', 0x302, 0xCE}, {U'I', 0x308, 0xCF}, {U'N', 0x303, 0xD1},
    {U'O', 0x300, 0xD2}, {U'O', 0x301, 0xD3}, {U'O', 0x302, 0xD4}, {U'O', 0x303, 0xD5},
    {U'O', 0x308, 0xD6}, {U'U', 0x300, 0xD9}, {U'U', 0x301, 0xDA}, {U'U', 0x302, 0xDB},
    {U'U', 0x308, 0xDC}, {U'Y', 0x301, 0xDD},
    {U'a', 0x300, 0xE0}, {U'a', 0x301, 0xE1}, {U'a', 0x302, 0xE2}, {U'a', 0x303, 0xE3},
    {U'a', 0x308, 0xE4}, {U'a', 0x30A, 0xE5}, {U'c', 0x327, 0xE7}, {U'e', 0x300, 0xE8},
    {U'e', 0x301, 0xE9}, {U'e', 0x302, 0xEA}, {U'e', 0x308, 0xEB}, {U'i', 0x300, 0xEC},
    {U'i', 0x301, 0xED}, {U'i', 0x302, 0xEE}, {U'i', 0x308, 0xEF}, {U'n', 0x303, 0xF1},
    {U'o', 0x300, 0xF2}, {U'o', 0x301, 0xF3}, {U'o', 0x302, 0xF4}, {U'o', 0x303, 0xF5},
    {U'o', 0x308, 0xF6}, {U'u', 0x300, 0xF9}, {U'u', 0x301, 0xFA}, {U'u', 0x302, 0xFB},
    {U'u', 0x308, 0xFC}, {U'y', 0x301, 0xFD}, {U'y', 0x308, 0xFF},
    // Latin Extended-A (macron, breve, ogonek, acute, caron, circumflex,
    // double acute, cedilla; both cases).
    {U'A', 0x304, 0x100}, {U'a', 0x304, 0x101}, {U'A', 0x306, 0x102}, {U'a', 0x306, 0x103},
    {U'A', 0x328, 0x104}, {U'a', 0x328, 0x105}, {U'C', 0x301, 0x106}, {U'c', 0x301, 0x107},
    {U'C', 0x302, 0x108}, {U'c', 0x302, 0x109}, {U'C', 0x30C, 0x10C}, {U'c', 0x30C, 0x10D},
    {U'D', 0x30C, 0x10E}, {U'd', 0x30C, 0x10F}, {U'E', 0x304, 0x112}, {U'e', 0x304, 0x113},
    {U'E', 0x328, 0x118}, {U'e', 0x328, 0x119}, {U'E', 0x30C, 0x11A}, {U'e', 0x30C, 0x11B},
    {U'G', 0x302, 0x11C}, {U'g', 0x302, 0x11D}, {U'G', 0x306, 0x11E}, {U'g', 0x306, 0x11F},
    {U'H', 0x302, 0x124}, {U'h', 0x302, 0x125}, {U'I', 0x304, 0x12A}, {U'i', 0x304, 0x12B},
    {U'J', 0x302, 0x134}, {U'j', 0x302, 0x135}, {U'L', 0x301, 0x139}, {U'l', 0x301, 0x13A},
    {U'N', 0x301, 0x143}, {U'n', 0x301, 0x144}, {U'N', 0x30C, 0x147}, {U'n', 0x30C, 0x148},
    {U'O', 0x304, 0x14C}, {U'o', 0x304, 0x14D}, {U'O', 0x30B, 0x150}, {U'o', 0x30B, 0x151},
    {U'R', 0x30C, 0x158}, {U'r', 0x30C, 0x159}, {U'S', 0x301, 0x15A}, {U's', 0x301, 0x15B},
    {U'S', 0x302, 0x15C}, {U's', 0x302, 0x15D}, {U'S', 0x327, 0x15E}, {U's', 0x327, 0x15F},
    {U'S', 0x30C, 0x160}, {U's', 0x30C, 0x161}, {U'T', 0x30C, 0x164}, {U't', 0x30C, 0x165},
    {U'U', 0x304, 0x16A}, {U'u', 0x304, 0x16B}, {U'U', 0x306, 0x16C}, {U'u', 0x306, 0x16D},
    {U'U', 0x30A, 0x16E}, {U'u', 0x30A, 0x16F}, {U'U', 0x30B, 0x170}, {U'u', 0x30B, 0x171},
    {U'Z', 0x301, 0x179}, {U'z', 0x301, 0x17A}, {U'Z', 0x30C, 0x17D}, {U'z', 0x30C, 0x17E},
    // Greek tonos.
    {0x391, 0x301, 0x386}, {0x395, 0x301, 0x388}, {0x397, 0x301, 0x389}, {0x399, 0x301, 0x38A},
    {0x39F, 0x301, 0x38C}, {0x3A5, 0x301, 0x38E}, {0x3A9, 0x301, 0x38F},
    {0x3B1, 0x301, 0x3AC}, {0x3B5, 0x301, 0x3AD}, {0x3B7, 0x301, 0x3AE}, {0x3B9, 0x301, 0x3AF},
    {0x3BF, 0x301, 0x3CC}, {0x3C5, 0x301, 0x3CD}, {0x3C9, 0x301, 0x3CE},
    // Cyrillic breve / diaeresis.
    {0x418, 0x306, 0x419}, {0x438, 0x306, 0x439}, {0x415, 0x308, 0x401}, {0x435, 0x308, 0x451},
    {0x423, 0x306, 0x40E}, {0x443, 0x306, 0x45E},
};

const std::unordered_map<uint64_t, char32_t>& composition_map() {
    static const std::unordered_map<uint64_t, char32_t> map = [] {
        std::unordered_map<uint64_t, char32_t> m;
        for (const auto& c : kCompositions) {
            m.emplace((static_cast<uint64_t>(c.base) << 32) | c.mark, c.composed);
        }
        return m;
    }();
    return map;
}

} // namespace

std::u32string utf8_decode(std::string_view text) {
    std::u32string out;
    out.reserve(text.size());
    size_t i = 0;
    while (i < text.size()) {
        const auto b0 = static_cast<unsigned char>(text[i]);
        char32_t cp = 0;
        size_t len = 0;
        if (b0 < 0x80) {
            cp = b0;
            len = 1;
        } else if ((b0 & 0xE0) == 0xC0) {
            cp = b0 & 0x1F;
            len = 2;
        } else if ((b0 & 0xF0) == 0xE0) {
            cp = b0 & 0x0F;
            len = 3;
        } else if ((b0 & 0xF8) == 0xF0) {
            cp = b0 & 0x07;
            len = 4;
        } else {
            bad_utf8(i);
        }
        if (i + len > text.size()) {
            bad_utf8(i);
        }
        for (size_t k = 1; k < len; ++k) {
            const auto b = static_cast<unsigned char>(text[i + k]);
            if ((b & 0xC0) != 0x80) {
                bad_utf8(i);
            }
            cp = (cp << 6) | (b & 0x3F);
        }
        // Reject overlong encodings and surrogates.
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
            (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) {
            bad_utf8(i);
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

std::string utf8_encode(char32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return out;
}

std::string utf8_encode(std::u32string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char32_t cp : text) {
        out += utf8_encode(cp);
    }
    return out;
}

std::u32string nfc(std::u32string_view text) {
    std::u32string out;
    out.reserve(text.size());
    const auto& map = composition_map();
    for (char32_t cp : text) {
        if (!out.empty()) {
            const auto it = map.find((static_cast<uint64_t>(out.back()) << 32) | cp);
            if (it != map.end()) {
                out.back() = it->second;
                continue;
            }
        }
        out.push_back(cp);
    }
    return out;
}

bool is_space(char32_t cp) {
    return cp == U' ' || cp == U'\t' || cp == U'\r' || cp == U'\n' || cp == U'\f' ||
           cp == U'\v' || cp == 0xA0 || cp == 0x2009 || cp == 0x200A || cp == 0x2002 ||
           cp == 0x2003 || cp == 0x3000;
}

bool is_upper(char32_t cp) {
    if (cp >= U'A' && cp <= U'Z') {
        return true;
    }
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) { // Latin-1 uppercase
        return true;
    }
    if (cp >= 0x100 && cp <= 0x177) { // Latin Extended-A case pairs
        return (cp % 2) == 0;
    }
    if (cp >= 0x179 && cp <= 0x17D) {
        return (cp % 2) == 1;
    }
    if (cp >= 0x391 && cp <= 0x3A9) { // Greek capitals
        return true;
    }
    if ((cp >= 0x400 && cp <= 0x42F)) { // Cyrillic capitals
        return true;
    }
    return false;
}

} // namespace orthoscore
