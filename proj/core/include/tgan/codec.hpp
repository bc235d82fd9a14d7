/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tgan::codec {

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Strict decode; nullopt for truncated or malformed input.
std::optional<std::vector<std::uint8_t>> base64_decode(std::string_view text);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

/// Stable 64-bit seed derivation (FNV-1a followed by a splitmix finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace tgan::codec
