#ifndef LORTSAR_FORMAT_HPP
#define LORTSAR_FORMAT_HPP

#include <charconv>
#include <string>

namespace lortsar {

/// Shortest text that parses back to the same double.
inline std::string to_text(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

} // namespace lortsar

#endif // LORTSAR_FORMAT_HPP
