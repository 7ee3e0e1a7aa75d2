#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace confex::text {

// Shortest round-trip decimal form ("200", "0.25", "1e+20").
std::string format_number(double value);

// Whole-string parse after trimming spaces; rejects inf/nan spellings.
std::optional<double> parse_number(std::string_view text);

std::string to_lower(std::string_view text);
std::string_view trim(std::string_view text);

// 64-bit FNV-1a; pass a previous result as `state` to hash incrementally.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        state ^= c;
        state *= 0x100000001b3ULL;
    }
    return state;
}

std::string hex64(std::uint64_t value);

}  // namespace confex::text
