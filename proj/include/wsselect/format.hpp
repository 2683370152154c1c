#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <system_error>

namespace wss {

// Shortest round-trip decimal form; "nan" for missing values.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) return "nan";
    return {buf, ptr};
}

}  // namespace wss
