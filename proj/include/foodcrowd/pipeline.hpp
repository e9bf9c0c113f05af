#pragma once

#include "foodcrowd/calibration.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

// Pipeline stages behind the command-line tool. Every stage works against one
// data directory:
//   labels.json                 food list copied in by collect
//   images/                     content-addressed image store
//   manifest.jsonl              one ImageRecord per line
//   calibration/report.json     calibration report
//   calibration/pr_points.csv   curves of the report
//   store/                      annotation event log and snapshots
//   export/coco.json            exported annotations
//   stamps/<stage>.json         idempotency stamps
//   .lock                       advisory lock held by mutating stages
namespace foodcrowd::pipeline {

struct PipelineConfig {
    std::filesystem::path data_dir = "foodcrowd-data";
    std::optional<std::filesystem::path> labels;
    std::optional<std::filesystem::path> manifest;  // defaults to data_dir/manifest.jsonl

    // collect
    std::string provider = "fixture";
    std::optional<std::string> provider_url;
    std::optional<std::filesystem::path> fixture_dir;
    std::size_t max_per_label = 100;
    double rate = 1.0;
    std::size_t concurrency = 4;

    // score
    std::string backend = "mock";
    std::optional<std::string> endpoint;
    std::optional<std::filesystem::path> sidecar_dir;
    std::string mock_key = "foodcrowd-mock";
    std::size_t score_parallelism = 4;
    std::size_t max_in_flight = 4;

    // calibrate
    std::optional<std::filesystem::path> food_pool;
    std::optional<std::filesystem::path> nonfood_pool;
    calibration::CalibrationConfig calibration;
    std::optional<std::filesystem::path> report;  // defaults to data_dir/calibration/report.json

    // filter: a number in [0,1] or "auto" (midpoint of the report's range)
    std::string threshold = "auto";

    // serve
    std::string host = "127.0.0.1";
    int port = 8080;
    double lease_ttl_s = 600;
    std::optional<std::filesystem::path> tutorial;
    std::optional<std::filesystem::path> static_dir;

    // export
    std::string export_format = "coco";
    std::optional<std::filesystem::path> export_out;  // defaults to data_dir/export/coco.json

    bool dry_run = false;
    bool force = false;  // ignore idempotency stamps
};

// Throws ConfigError.
void validate(const PipelineConfig& config);

std::filesystem::path manifest_path(const PipelineConfig& config);
std::filesystem::path report_path(const PipelineConfig& config);

struct StageResult {
    std::vector<std::string> lines;  // human-readable summary
    bool up_to_date = false;
};

StageResult run_collect(const PipelineConfig& config);
StageResult run_score(const PipelineConfig& config);
StageResult run_calibrate(const PipelineConfig& config);
StageResult run_filter(const PipelineConfig& config);
StageResult run_export(const PipelineConfig& config);
StageResult run_stats(const PipelineConfig& config, bool as_json = false);

// Threshold applied by filter: the number itself, or the midpoint of the
// calibration report's intersected range for "auto". Throws ConfigError when
// "auto" has no report or the range is empty.
double resolve_threshold(const PipelineConfig& config);

// Exclusive advisory lock on data_dir/.lock; throws Error if another process
// holds it.
class DirLock {
public:
    explicit DirLock(const std::filesystem::path& data_dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    int fd_ = -1;
};

}  // namespace foodcrowd::pipeline
