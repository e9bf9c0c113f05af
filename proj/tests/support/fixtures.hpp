#pragma once

#include "foodcrowd/annostore.hpp"
#include "foodcrowd/crawler.hpp"
#include "foodcrowd/types.hpp"
#include "foodcrowd/util.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

namespace testing {

class TempDir {
public:
    explicit TempDir(const std::string& tag = "fc") {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                (tag + "-" + std::to_string(rd()) + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

// Shared, thread-safe manual clock for Store options.
class ManualClock {
public:
    explicit ManualClock(foodcrowd::TimePoint start = foodcrowd::parse_rfc3339("2024-01-01T00:00:00.000Z"))
        : now_(std::make_shared<std::atomic<std::int64_t>>(start.time_since_epoch().count())) {}

    foodcrowd::TimePoint now() const { return foodcrowd::TimePoint(std::chrono::milliseconds(now_->load())); }
    void advance(std::chrono::milliseconds d) { now_->fetch_add(d.count()); }
    std::function<foodcrowd::TimePoint()> fn() const {
        auto p = now_;
        return [p] { return foodcrowd::TimePoint(std::chrono::milliseconds(p->load())); };
    }

private:
    std::shared_ptr<std::atomic<std::int64_t>> now_;
};

inline std::vector<foodcrowd::SearchLabel> table_labels() {
    return {{"doughnut", "Doughnut"}, {"cupcake", "Cupcake"},       {"cornbread", "Cornbread"},
            {"tostada", "Tostada"},   {"broccoli", "Broccoli"},     {"cookie", "Cookie"},
            {"waffle", "Waffle"},     {"red-wine", "Red Wine"},     {"bananas", "Bananas"},
            {"cheese-burger", "Cheese Burger"}};
}

inline std::string fake_hash(std::uint64_t n) { return foodcrowd::sha256_hex(std::to_string(n) + ":img"); }

// A scored record with the given foodness, ready for REVIEW_QUEUED.
inline foodcrowd::ImageRecord scored_record(const std::string& label, std::int64_t rank, double foodness,
                                            std::uint64_t salt = 0) {
    foodcrowd::ImageRecord r;
    r.content_hash = fake_hash(static_cast<std::uint64_t>(rank) * 1000003u + salt +
                               std::hash<std::string>{}(label));
    r.image_id = foodcrowd::crawler::image_id_for(r.content_hash);
    r.label_id = label;
    r.source_url = "http://fixture.local/files/" + label + "_" + std::to_string(rank) + ".png";
    r.rank = rank;
    r.width_px = 640;
    r.height_px = 480;
    r.status = foodcrowd::ImageStatus::Scored;
    r.foodness = foodness;
    return r;
}

}  // namespace testing
