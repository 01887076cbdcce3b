#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace twostream {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);

// Write-temp-then-rename so partially written artifacts are never observed.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

// FNV-1a 64 over raw bytes; used for artifact fingerprints in run manifests.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xCBF29CE484222325ull);
std::uint64_t hash_file(const std::filesystem::path& path);

// Stable fingerprint of a whole artifact directory (sorted relative paths,
// each path mixed with its file bytes).
std::uint64_t hash_directory(const std::filesystem::path& dir);

std::string to_hex(std::uint64_t value);

} // namespace twostream
