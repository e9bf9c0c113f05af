#pragma once

#include "foodcrowd/crawler.hpp"
#include "foodcrowd/types.hpp"
#include "foodcrowd/util.hpp"

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <vector>

namespace foodcrowd::scorer {

struct Detection {
    NormBox box;
    double objectness = 0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

bool valid_detection(const Detection& d);

struct FoodnessResult {
    std::string image_id;
    std::vector<Detection> detections;
    double foodness = 0;
};

// Image-level foodness: the strongest region wins; no regions means 0.
double aggregate_foodness(std::span<const Detection> detections);

class DetectorBackend {
public:
    virtual ~DetectorBackend() = default;
    virtual std::string name() const = 0;
    // Throws BackendUnavailable when the detector cannot answer right now.
    virtual std::vector<Detection> detect(std::span<const std::uint8_t> image,
                                          const std::string& content_hash) = 0;
};

// Deterministic detections derived from a keyed SHA-256 of the content hash,
// or a fixed list when constructed with one.
class MockBackend final : public DetectorBackend {
public:
    explicit MockBackend(std::string key = "foodcrowd-mock");
    explicit MockBackend(std::vector<Detection> fixed);

    std::string name() const override { return "mock"; }
    std::vector<Detection> detect(std::span<const std::uint8_t> image, const std::string& content_hash) override;

private:
    std::string key_;
    std::optional<std::vector<Detection>> fixed_;
};

// Replays precomputed model output: `<dir>/<content_hash>.score` holds one
// decimal in [0,1], reported as a single full-frame detection.
class SidecarBackend final : public DetectorBackend {
public:
    explicit SidecarBackend(std::filesystem::path dir);

    std::string name() const override { return "sidecar"; }
    std::vector<Detection> detect(std::span<const std::uint8_t> image, const std::string& content_hash) override;

private:
    std::filesystem::path dir_;
};

// POSTs raw image bytes to `<endpoint>/detect` and parses
// {"detections":[{"x":..,"y":..,"w":..,"h":..,"objectness":..}]}.
class RemoteBackend final : public DetectorBackend {
public:
    explicit RemoteBackend(std::string endpoint, std::size_t max_in_flight = 4,
                           std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));

    std::string name() const override { return "remote"; }
    std::vector<Detection> detect(std::span<const std::uint8_t> image, const std::string& content_hash) override;

private:
    crawler::ParsedUrl endpoint_;
    std::string base_path_;
    std::chrono::milliseconds timeout_;
    std::counting_semaphore<1024> in_flight_;
};

// Parses the remote wire format; throws ValidationError on malformed bodies or
// detections that violate the geometry/objectness invariants.
std::vector<Detection> parse_detections(std::string_view body);

// Throws DecodeError when the bytes are not a recognised image.
FoodnessResult score_image(const std::string& image_id, std::span<const std::uint8_t> image,
                           DetectorBackend& backend);

// Scores every FETCHED or SCORED record from the image store, `parallelism`
// images at a time. Output order and values do not depend on scheduling.
std::vector<ImageRecord> score_records(std::vector<ImageRecord> records, const crawler::ImageStore& store,
                                       DetectorBackend& backend, std::size_t parallelism = 4);

struct Partition {
    std::vector<ImageRecord> kept;
    std::vector<ImageRecord> rejected;
};

// foodness >= threshold is kept (PENDING_REVIEW), the rest AUTO_REJECTED.
// Throws MissingScore naming the first record without a score.
Partition filter_partition(std::vector<ImageRecord> records, double threshold);

}  // namespace foodcrowd::scorer
