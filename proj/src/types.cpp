#include "foodcrowd/types.hpp"

#include "foodcrowd/error.hpp"
#include "foodcrowd/util.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace foodcrowd {

void validate_labels(const std::vector<SearchLabel>& labels) {
    std::set<std::string> seen;
    for (const auto& l : labels) {
        if (l.text.empty()) throw ValidationError("label text must be non-empty (id '" + l.id + "')");
        if (!is_valid_slug(l.id)) throw ValidationError("label id '" + l.id + "' must match [a-z0-9_-]+");
        if (!seen.insert(l.id).second) throw ValidationError("duplicate label id '" + l.id + "'");
    }
}

std::vector<SearchLabel> load_labels(const std::filesystem::path& path) {
    std::string text = read_text(path);
    std::vector<SearchLabel> labels;
    auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[') {
        auto arr = nlohmann::json::parse(text);
        for (const auto& item : arr) {
            if (item.is_string()) {
                auto t = item.get<std::string>();
                labels.push_back({slugify(t), t});
            } else {
                SearchLabel l;
                l.text = item.at("text").get<std::string>();
                l.id = item.contains("id") ? item.at("id").get<std::string>() : slugify(l.text);
                labels.push_back(std::move(l));
            }
        }
    } else {
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            auto b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos || line[b] == '#') continue;
            auto e = line.find_last_not_of(" \t\r");
            auto t = line.substr(b, e - b + 1);
            labels.push_back({slugify(t), t});
        }
    }
    validate_labels(labels);
    return labels;
}

std::string_view to_string(ImageStatus s) {
    switch (s) {
        case ImageStatus::Fetched: return "FETCHED";
        case ImageStatus::Scored: return "SCORED";
        case ImageStatus::AutoRejected: return "AUTO_REJECTED";
        case ImageStatus::PendingReview: return "PENDING_REVIEW";
        case ImageStatus::NoisyRejected: return "NOISY_REJECTED";
        case ImageStatus::Confirmed: return "CONFIRMED";
        case ImageStatus::Annotated: return "ANNOTATED";
    }
    return "?";
}

std::string_view to_string(NoisyReason r) {
    return r == NoisyReason::Irrelevant ? "IRRELEVANT" : "AESTHETIC";
}

ImageStatus parse_status(std::string_view s) {
    for (auto st : {ImageStatus::Fetched, ImageStatus::Scored, ImageStatus::AutoRejected,
                    ImageStatus::PendingReview, ImageStatus::NoisyRejected, ImageStatus::Confirmed,
                    ImageStatus::Annotated}) {
        if (to_string(st) == s) return st;
    }
    throw ValidationError("unknown image status '" + std::string(s) + "'");
}

NoisyReason parse_noisy_reason(std::string_view s) {
    if (s == "IRRELEVANT") return NoisyReason::Irrelevant;
    if (s == "AESTHETIC") return NoisyReason::Aesthetic;
    throw ValidationError("unknown noisy reason '" + std::string(s) + "'");
}

void validate_record(const ImageRecord& r) {
    auto bad = [&](const std::string& why) { return ValidationError("record " + r.image_id + ": " + why); };
    if (r.image_id.empty()) throw ValidationError("record with empty image_id");
    if (r.rank < 1) throw bad("rank must be positive");
    if (r.width_px < 1 || r.height_px < 1) throw bad("dimensions must be positive");
    if (r.content_hash.size() != 64) throw bad("content_hash must be 64 hex digits");
    bool scored = r.status != ImageStatus::Fetched;
    if (scored != r.foodness.has_value()) throw bad("foodness present iff status is not FETCHED");
    if (r.foodness && !(*r.foodness >= 0.0 && *r.foodness <= 1.0)) throw bad("foodness outside [0,1]");
    bool noisy = r.status == ImageStatus::NoisyRejected;
    if (noisy != r.noisy_reason.has_value()) throw bad("noisy_reason present iff status is NOISY_REJECTED");
}

void to_json(nlohmann::json& j, const ImageRecord& r) {
    j = nlohmann::json{
        {"image_id", r.image_id},
        {"label_id", r.label_id},
        {"source_url", r.source_url},
        {"rank", r.rank},
        {"content_hash", r.content_hash},
        {"width_px", r.width_px},
        {"height_px", r.height_px},
        {"status", to_string(r.status)},
        {"foodness", r.foodness ? nlohmann::json(*r.foodness) : nlohmann::json(nullptr)},
        {"noisy_reason",
         r.noisy_reason ? nlohmann::json(to_string(*r.noisy_reason)) : nlohmann::json(nullptr)},
    };
}

void from_json(const nlohmann::json& j, ImageRecord& r) {
    r.image_id = j.at("image_id").get<std::string>();
    r.label_id = j.at("label_id").get<std::string>();
    r.source_url = j.at("source_url").get<std::string>();
    r.rank = j.at("rank").get<std::int64_t>();
    r.content_hash = j.at("content_hash").get<std::string>();
    r.width_px = j.at("width_px").get<std::int64_t>();
    r.height_px = j.at("height_px").get<std::int64_t>();
    r.status = parse_status(j.at("status").get<std::string>());
    const auto& f = j.at("foodness");
    r.foodness = f.is_null() ? std::nullopt : std::optional<double>(f.get<double>());
    const auto& n = j.at("noisy_reason");
    r.noisy_reason = n.is_null() ? std::nullopt
                                 : std::optional<NoisyReason>(parse_noisy_reason(n.get<std::string>()));
}

bool valid_geometry(const NormBox& b) {
    auto finite = std::isfinite(b.x) && std::isfinite(b.y) && std::isfinite(b.w) && std::isfinite(b.h);
    return finite && b.x >= 0 && b.y >= 0 && b.w > 0 && b.h > 0 && b.x + b.w <= 1.0 &&
           b.y + b.h <= 1.0;
}

PixelBox to_pixels(const NormBox& b, std::int64_t width, std::int64_t height) {
    auto r = [](double v) { return static_cast<std::int64_t>(std::floor(v + 0.5)); };
    return PixelBox{r(b.x * static_cast<double>(width)), r(b.y * static_cast<double>(height)),
                    r(b.w * static_cast<double>(width)), r(b.h * static_cast<double>(height))};
}

}  // namespace foodcrowd
