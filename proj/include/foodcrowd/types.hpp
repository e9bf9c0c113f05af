#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace foodcrowd {

struct SearchLabel {
    std::string id;
    std::string text;

    friend bool operator==(const SearchLabel&, const SearchLabel&) = default;
};

// Throws ValidationError on an empty text, a malformed id, or a repeated id.
void validate_labels(const std::vector<SearchLabel>& labels);

// Accepts either a JSON array of {"id", "text"} objects (or bare strings) or a
// plain text file with one label per line, in which case ids are slugified.
std::vector<SearchLabel> load_labels(const std::filesystem::path& path);

enum class ImageStatus {
    Fetched,
    Scored,
    AutoRejected,
    PendingReview,
    NoisyRejected,
    Confirmed,
    Annotated,
};

enum class NoisyReason { Irrelevant, Aesthetic };

std::string_view to_string(ImageStatus s);
std::string_view to_string(NoisyReason r);
ImageStatus parse_status(std::string_view s);
NoisyReason parse_noisy_reason(std::string_view s);

struct ImageRecord {
    std::string image_id;
    std::string label_id;
    std::string source_url;
    std::int64_t rank = 0;
    std::string content_hash;
    std::int64_t width_px = 0;
    std::int64_t height_px = 0;
    ImageStatus status = ImageStatus::Fetched;
    std::optional<double> foodness;
    std::optional<NoisyReason> noisy_reason;

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

// Field-level invariants of a single record (score presence vs status, reason
// presence vs status, positive rank and dimensions, hash shape).
void validate_record(const ImageRecord& r);

void to_json(nlohmann::json& j, const ImageRecord& r);
void from_json(const nlohmann::json& j, ImageRecord& r);

// Normalized rectangle, origin top-left, all components in [0,1].
struct NormBox {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;

    friend bool operator==(const NormBox&, const NormBox&) = default;
};

bool valid_geometry(const NormBox& b);

struct PixelBox {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t w = 0;
    std::int64_t h = 0;

    friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

// Scales by the image dimensions and rounds half-up.
PixelBox to_pixels(const NormBox& b, std::int64_t width, std::int64_t height);

}  // namespace foodcrowd
