#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace passcam {

/// Lowercase hex SHA-256 of a byte range.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

}  // namespace passcam
