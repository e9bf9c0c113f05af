#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace foodcrowd {

using Bytes = std::vector<std::uint8_t>;
using Clock = std::chrono::system_clock;
using TimePoint = std::chrono::time_point<Clock, std::chrono::milliseconds>;

/// Lowercase hex SHA-256 of a byte buffer.
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view data);

Bytes read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);
// Writes to a sibling temp file then renames over the target.
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

/// RFC 3339 UTC timestamp with millisecond precision, e.g. 2024-03-01T12:00:00.250Z.
std::string format_rfc3339(TimePoint t);
// Accepts the output of format_rfc3339 and the same form without fractional
// seconds or with a numeric offset.
TimePoint parse_rfc3339(std::string_view text);
TimePoint now_ms();

enum class ImageFormat { Png, Jpeg, Gif, Bmp, Webp };

struct ImageInfo {
    ImageFormat format;
    std::uint32_t width;
    std::uint32_t height;
};

// Header-level decode: identifies the container and reads its declared
// dimensions. Returns nullopt when the bytes are not a recognised image or the
// header is truncated or declares a zero dimension.
std::optional<ImageInfo> probe_image(std::span<const std::uint8_t> data);
std::string_view extension_for(ImageFormat format);

// Unbiased integer in [0, n) by rejection. Unlike std::uniform_int_distribution
// the sequence is identical across standard library implementations.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n);

// `[a-z0-9_-]+`
bool is_valid_slug(std::string_view s);
std::string slugify(std::string_view text);

}  // namespace foodcrowd
