#include "foodcrowd/scorer.hpp"

#include "foodcrowd/error.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <thread>

namespace foodcrowd::scorer {

bool valid_detection(const Detection& d) {
    return valid_geometry(d.box) && std::isfinite(d.objectness) && d.objectness >= 0.0 && d.objectness <= 1.0;
}

double aggregate_foodness(std::span<const Detection> detections) {
    double best = 0.0;
    for (const auto& d : detections) best = std::max(best, d.objectness);
    return best;
}

// ---------------------------------------------------------------------------

MockBackend::MockBackend(std::string key) : key_(std::move(key)) {}

MockBackend::MockBackend(std::vector<Detection> fixed) : fixed_(std::move(fixed)) {
    for (const auto& d : *fixed_) {
        if (!valid_detection(d)) throw ValidationError("mock detection violates detection invariants");
    }
}

std::vector<Detection> MockBackend::detect(std::span<const std::uint8_t>, const std::string& content_hash) {
    if (fixed_) return *fixed_;
    auto digest = sha256_hex(key_ + ":" + content_hash);
    auto byte = [&](std::size_t i) { return std::stoul(digest.substr(2 * i, 2), nullptr, 16); };
    std::vector<Detection> out;
    const std::size_t count = byte(0) % 4;
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t base = 1 + i * 6;
        Detection d;
        d.box.x = static_cast<double>(byte(base)) / 255.0 * 0.5;
        d.box.y = static_cast<double>(byte(base + 1)) / 255.0 * 0.5;
        d.box.w = 0.05 + static_cast<double>(byte(base + 2)) / 255.0 * 0.45;
        d.box.h = 0.05 + static_cast<double>(byte(base + 3)) / 255.0 * 0.45;
        d.objectness = static_cast<double>((byte(base + 4) << 8 | byte(base + 5)) % 10001) / 10000.0;
        out.push_back(d);
    }
    return out;
}

// ---------------------------------------------------------------------------

SidecarBackend::SidecarBackend(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::vector<Detection> SidecarBackend::detect(std::span<const std::uint8_t>, const std::string& content_hash) {
    auto path = dir_ / (content_hash + ".score");
    std::string text;
    try {
        text = read_text(path);
    } catch (const NotFound&) {
        throw BackendUnavailable("no sidecar score file " + path.string());
    }
    auto b = text.find_first_not_of(" \t\r\n");
    auto e = text.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) throw ValidationError("empty sidecar score file " + path.string());
    double value = 0;
    auto [ptr, ec] = std::from_chars(text.data() + b, text.data() + e + 1, value);
    if (ec != std::errc() || ptr != text.data() + e + 1 || !(value >= 0.0 && value <= 1.0)) {
        throw ValidationError("sidecar score in " + path.string() + " is not a decimal in [0,1]");
    }
    return {Detection{NormBox{0.0, 0.0, 1.0, 1.0}, value}};
}

// ---------------------------------------------------------------------------

RemoteBackend::RemoteBackend(std::string endpoint, std::size_t max_in_flight, std::chrono::milliseconds timeout)
    : endpoint_(crawler::parse_url(endpoint)),
      timeout_(timeout),
      in_flight_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(max_in_flight, 1, 1024))) {
    base_path_ = endpoint_.path_and_query;
    while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
}

std::vector<Detection> parse_detections(std::string_view body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("detector response is not JSON: ") + e.what());
    }
    std::vector<Detection> out;
    try {
        for (const auto& d : j.at("detections")) {
            Detection det{NormBox{d.at("x").get<double>(), d.at("y").get<double>(), d.at("w").get<double>(),
                                  d.at("h").get<double>()},
                          d.at("objectness").get<double>()};
            if (!valid_detection(det)) throw ValidationError("detector returned an invalid detection");
            out.push_back(det);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed detector response: ") + e.what());
    }
    return out;
}

std::vector<Detection> RemoteBackend::detect(std::span<const std::uint8_t> image, const std::string&) {
    in_flight_.acquire();
    struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
    } release{in_flight_};

    if (endpoint_.scheme != "http") throw BackendUnavailable("only http endpoints are supported");
    httplib::Client client(endpoint_.host, endpoint_.port);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    auto res = client.Post(base_path_ + "/detect", reinterpret_cast<const char*>(image.data()), image.size(),
                           "application/octet-stream");
    if (!res) {
        throw BackendUnavailable("detector at " + endpoint_.origin() + " unreachable: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw BackendUnavailable("detector returned HTTP " + std::to_string(res->status));
    }
    return parse_detections(res->body);
}

// ---------------------------------------------------------------------------

FoodnessResult score_image(const std::string& image_id, std::span<const std::uint8_t> image,
                           DetectorBackend& backend) {
    if (!probe_image(image)) throw DecodeError("image " + image_id + " is not decodable");
    FoodnessResult result;
    result.image_id = image_id;
    result.detections = backend.detect(image, sha256_hex(image));
    for (const auto& d : result.detections) {
        if (!valid_detection(d)) throw ValidationError(backend.name() + " backend returned an invalid detection");
    }
    result.foodness = aggregate_foodness(result.detections);
    return result;
}

std::vector<ImageRecord> score_records(std::vector<ImageRecord> records, const crawler::ImageStore& store,
                                       DetectorBackend& backend, std::size_t parallelism) {
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].status == ImageStatus::Fetched || records[i].status == ImageStatus::Scored) todo.push_back(i);
    }
    std::vector<std::exception_ptr> errors(todo.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k; (k = next.fetch_add(1)) < todo.size();) {
            auto& rec = records[todo[k]];
            try {
                auto bytes = store.read(rec.content_hash);
                auto res = score_image(rec.image_id, bytes, backend);
                rec.foodness = res.foodness;
                rec.status = ImageStatus::Scored;
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        std::size_t n = std::max<std::size_t>(1, std::min(parallelism, todo.size()));
        for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return records;
}

Partition filter_partition(std::vector<ImageRecord> records, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("threshold must lie in [0,1]");
    Partition out;
    for (const auto& r : records) {
        if (!r.foodness) throw MissingScore(r.image_id);
    }
    for (auto& r : records) {
        if (*r.foodness >= threshold) {
            r.status = ImageStatus::PendingReview;
            out.kept.push_back(std::move(r));
        } else {
            r.status = ImageStatus::AutoRejected;
            out.rejected.push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace foodcrowd::scorer
