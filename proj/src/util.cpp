#include "foodcrowd/util.hpp"

#include "foodcrowd/error.hpp"

#include <openssl/evp.h>

#include <array>
#include <cctype>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>
#include <limits>
#include <memory>
#include <sstream>

namespace foodcrowd {

std::string sha256_hex(std::span<const std::uint8_t> data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0x0f]);
    }
    return out;
}

std::string sha256_hex(std::string_view data) {
    return sha256_hex(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFound("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFound("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("short write to " + path.string());
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.flush();
        if (!out) throw Error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string format_rfc3339(TimePoint t) {
    auto ms = t.time_since_epoch().count();
    auto secs = ms / 1000;
    auto frac = ms % 1000;
    if (frac < 0) {
        frac += 1000;
        --secs;
    }
    std::time_t tt = static_cast<std::time_t>(secs);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                  static_cast<int>(frac));
    return buf;
}

TimePoint parse_rfc3339(std::string_view text) {
    auto fail = [&] { return ValidationError("bad RFC 3339 timestamp: " + std::string(text)); };
    if (text.size() < 20) throw fail();
    auto num = [&](std::size_t pos, std::size_t len) {
        int v = 0;
        for (std::size_t i = pos; i < pos + len; ++i) {
            if (!std::isdigit(static_cast<unsigned char>(text[i]))) throw fail();
            v = v * 10 + (text[i] - '0');
        }
        return v;
    };
    if (text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != 't') ||
        text[13] != ':' || text[16] != ':') {
        throw fail();
    }
    std::tm tm{};
    tm.tm_year = num(0, 4) - 1900;
    tm.tm_mon = num(5, 2) - 1;
    tm.tm_mday = num(8, 2);
    tm.tm_hour = num(11, 2);
    tm.tm_min = num(14, 2);
    tm.tm_sec = num(17, 2);
    std::size_t pos = 19;
    long long millis = 0;
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        int digits = 0;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
            if (digits < 3) millis = millis * 10 + (text[pos] - '0');
            ++digits;
            ++pos;
        }
        if (digits == 0) throw fail();
        for (int d = digits; d < 3; ++d) millis *= 10;
    }
    long long offset_secs = 0;
    if (pos < text.size() && (text[pos] == 'Z' || text[pos] == 'z')) {
        ++pos;
    } else if (pos + 6 == text.size() && (text[pos] == '+' || text[pos] == '-') &&
               text[pos + 3] == ':') {
        int sign = text[pos] == '+' ? 1 : -1;
        offset_secs = sign * (num(pos + 1, 2) * 3600LL + num(pos + 4, 2) * 60LL);
        pos += 6;
    } else {
        throw fail();
    }
    if (pos != text.size()) throw fail();
    long long secs = static_cast<long long>(timegm(&tm)) - offset_secs;
    return TimePoint(std::chrono::milliseconds(secs * 1000 + millis));
}

TimePoint now_ms() { return std::chrono::time_point_cast<std::chrono::milliseconds>(Clock::now()); }

namespace {

std::uint32_t be16(std::span<const std::uint8_t> d, std::size_t i) {
    return (std::uint32_t{d[i]} << 8) | d[i + 1];
}
std::uint32_t be32(std::span<const std::uint8_t> d, std::size_t i) {
    return (std::uint32_t{d[i]} << 24) | (std::uint32_t{d[i + 1]} << 16) |
           (std::uint32_t{d[i + 2]} << 8) | d[i + 3];
}
std::uint32_t le16(std::span<const std::uint8_t> d, std::size_t i) {
    return std::uint32_t{d[i]} | (std::uint32_t{d[i + 1]} << 8);
}
std::uint32_t le24(std::span<const std::uint8_t> d, std::size_t i) {
    return le16(d, i) | (std::uint32_t{d[i + 2]} << 16);
}
std::uint32_t le32(std::span<const std::uint8_t> d, std::size_t i) {
    return le16(d, i) | (le16(d, i + 2) << 16);
}

std::optional<ImageInfo> probe_jpeg(std::span<const std::uint8_t> d) {
    std::size_t i = 2;
    while (i + 4 <= d.size()) {
        if (d[i] != 0xFF) return std::nullopt;
        std::uint8_t marker = d[i + 1];
        if (marker == 0xFF) {
            ++i;
            continue;
        }
        if (marker == 0xD8 || (marker >= 0xD0 && marker <= 0xD7) || marker == 0x01) {
            i += 2;
            continue;
        }
        if (marker == 0xD9 || marker == 0xDA) return std::nullopt;
        std::uint32_t len = be16(d, i + 2);
        if (len < 2) return std::nullopt;
        bool sof = marker >= 0xC0 && marker <= 0xCF && marker != 0xC4 && marker != 0xC8 &&
                   marker != 0xCC;
        if (sof) {
            if (i + 9 > d.size()) return std::nullopt;
            return ImageInfo{ImageFormat::Jpeg, be16(d, i + 7), be16(d, i + 5)};
        }
        i += 2 + len;
    }
    return std::nullopt;
}

std::optional<ImageInfo> probe_webp(std::span<const std::uint8_t> d) {
    if (d.size() < 30) return std::nullopt;
    auto tag = [&](std::size_t i, const char* s) {
        return d[i] == s[0] && d[i + 1] == s[1] && d[i + 2] == s[2] && d[i + 3] == s[3];
    };
    if (tag(12, "VP8X")) return ImageInfo{ImageFormat::Webp, le24(d, 24) + 1, le24(d, 27) + 1};
    if (tag(12, "VP8L")) {
        if (d[20] != 0x2F) return std::nullopt;
        std::uint32_t bits = le32(d, 21);
        return ImageInfo{ImageFormat::Webp, (bits & 0x3FFF) + 1, ((bits >> 14) & 0x3FFF) + 1};
    }
    if (tag(12, "VP8 ")) {
        if (d[23] != 0x9D || d[24] != 0x01 || d[25] != 0x2A) return std::nullopt;
        return ImageInfo{ImageFormat::Webp, le16(d, 26) & 0x3FFF, le16(d, 28) & 0x3FFF};
    }
    return std::nullopt;
}

}  // namespace

std::optional<ImageInfo> probe_image(std::span<const std::uint8_t> d) {
    std::optional<ImageInfo> info;
    static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    if (d.size() >= 24 && std::equal(std::begin(png_sig), std::end(png_sig), d.begin())) {
        if (d[12] == 'I' && d[13] == 'H' && d[14] == 'D' && d[15] == 'R') {
            info = ImageInfo{ImageFormat::Png, be32(d, 16), be32(d, 20)};
        }
    } else if (d.size() >= 4 && d[0] == 0xFF && d[1] == 0xD8 && d[2] == 0xFF) {
        info = probe_jpeg(d);
    } else if (d.size() >= 10 && d[0] == 'G' && d[1] == 'I' && d[2] == 'F' && d[3] == '8' &&
               (d[4] == '7' || d[4] == '9') && d[5] == 'a') {
        info = ImageInfo{ImageFormat::Gif, le16(d, 6), le16(d, 8)};
    } else if (d.size() >= 26 && d[0] == 'B' && d[1] == 'M') {
        auto w = static_cast<std::int32_t>(le32(d, 18));
        auto h = static_cast<std::int32_t>(le32(d, 22));
        if (w > 0 && h != 0 && h != INT32_MIN) {
            info = ImageInfo{ImageFormat::Bmp, static_cast<std::uint32_t>(w),
                             static_cast<std::uint32_t>(h < 0 ? -h : h)};
        }
    } else if (d.size() >= 12 && d[0] == 'R' && d[1] == 'I' && d[2] == 'F' && d[3] == 'F' &&
               d[8] == 'W' && d[9] == 'E' && d[10] == 'B' && d[11] == 'P') {
        info = probe_webp(d);
    }
    if (info && (info->width == 0 || info->height == 0)) return std::nullopt;
    return info;
}

std::string_view extension_for(ImageFormat format) {
    switch (format) {
        case ImageFormat::Png: return "png";
        case ImageFormat::Jpeg: return "jpg";
        case ImageFormat::Gif: return "gif";
        case ImageFormat::Bmp: return "bmp";
        case ImageFormat::Webp: return "webp";
    }
    return "bin";
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
    if (n == 0) throw ValidationError("uniform_below: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return v % n;
}

bool is_valid_slug(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
        if (!ok) return false;
    }
    return true;
}

std::string slugify(std::string_view text) {
    std::string out;
    bool pending_sep = false;
    for (char raw : text) {
        auto c = static_cast<unsigned char>(raw);
        if (std::isalnum(c)) {
            if (pending_sep && !out.empty()) out.push_back('_');
            pending_sep = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else if (c == '-' || c == '_') {
            if (!out.empty()) out.push_back(static_cast<char>(c));
            pending_sep = false;
        } else {
            pending_sep = true;
        }
    }
    return out;
}

}  // namespace foodcrowd
