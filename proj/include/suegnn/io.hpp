#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace suegnn {

/// Hex SHA-256 of a byte string / file.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames into place.
void write_text_file(const std::filesystem::path& path, std::string_view text);
void ensure_directory(const std::filesystem::path& dir);

/// Little-endian primitives for the binary tensor and checkpoint files.
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
void write_f64s(std::ostream& out, std::span<const double> values);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);
void read_f64s(std::istream& in, std::span<double> values);

/// UTC time as ISO-8601.
std::string utc_timestamp();
/// `git describe` of the source tree when available, else "unknown".
std::string tool_version();

}  // namespace suegnn
