#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace steerkit {

std::string base64_encode(std::span<const std::uint8_t> bytes);
// Throws Parse on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace steerkit
