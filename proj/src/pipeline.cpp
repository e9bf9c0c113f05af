#include "foodcrowd/pipeline.hpp"

#include "foodcrowd/annoserve.hpp"
#include "foodcrowd/annostore.hpp"
#include "foodcrowd/crawler.hpp"
#include "foodcrowd/error.hpp"
#include "foodcrowd/scorer.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <spdlog/spdlog.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>

namespace foodcrowd::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

void validate(const PipelineConfig& c) {
    if (c.data_dir.empty()) throw ConfigError("data directory must be set");
    if (c.provider != "fixture" && c.provider != "live") throw ConfigError("provider must be fixture or live");
    if (c.max_per_label < 1) throw ConfigError("max-per-label must be at least 1");
    if (!(c.rate > 0) || !std::isfinite(c.rate)) throw ConfigError("rate must be a positive number");
    if (c.concurrency < 1) throw ConfigError("concurrency must be at least 1");
    if (c.backend != "mock" && c.backend != "sidecar" && c.backend != "remote") {
        throw ConfigError("backend must be mock, sidecar or remote");
    }
    if (c.score_parallelism < 1 || c.max_in_flight < 1) throw ConfigError("parallelism must be at least 1");
    if (c.threshold != "auto") {
        std::size_t used = 0;
        double t = 0;
        try {
            t = std::stod(c.threshold, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != c.threshold.size() || !(t >= 0.0 && t <= 1.0)) {
            throw ConfigError("threshold must be \"auto\" or a number in [0,1], got '" + c.threshold + "'");
        }
    }
    if (c.port < 0 || c.port > 65535) throw ConfigError("port must be in [0, 65535]");
    if (!(c.lease_ttl_s > 0) || !std::isfinite(c.lease_ttl_s)) throw ConfigError("lease-ttl must be positive");
    try {
        calibration::validate_config(c.calibration);
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
}

fs::path manifest_path(const PipelineConfig& c) { return c.manifest ? *c.manifest : c.data_dir / "manifest.jsonl"; }

fs::path report_path(const PipelineConfig& c) {
    return c.report ? *c.report : c.data_dir / "calibration" / "report.json";
}

namespace {

fs::path images_dir(const PipelineConfig& c) { return c.data_dir / "images"; }
fs::path store_dir(const PipelineConfig& c) { return c.data_dir / "store"; }
fs::path export_path(const PipelineConfig& c) {
    return c.export_out ? *c.export_out : c.data_dir / "export" / "coco.json";
}

bool path_exists(const fs::path& p) {
    std::error_code ec;
    return fs::exists(p, ec);
}

std::string file_hash(const fs::path& p) {
    std::error_code ec;
    if (!fs::is_regular_file(p, ec)) return "";
    return sha256_hex(read_text(p));
}

std::vector<SearchLabel> resolve_labels(const PipelineConfig& c) {
    if (c.labels) {
        if (!path_exists(*c.labels)) throw ConfigError("labels file " + c.labels->string() + " does not exist");
        try {
            return load_labels(*c.labels);
        } catch (const ValidationError& e) {
            throw ConfigError(e.what());
        }
    }
    auto copied = c.data_dir / "labels.json";
    if (path_exists(copied)) return load_labels(copied);
    throw ConfigError("no labels file given and " + copied.string() + " does not exist");
}

json labels_json(const std::vector<SearchLabel>& labels) {
    json j = json::array();
    for (const auto& l : labels) j.push_back({{"id", l.id}, {"text", l.text}});
    return j;
}

// Stage stamps: the key covers the parameters and the hashes of inputs the
// stage does not rewrite; outputs are compared by hash.
struct Stamp {
    std::string stage;
    std::string key;
    std::vector<fs::path> outputs;
};

fs::path stamp_path(const PipelineConfig& c, const std::string& stage) { return c.data_dir / "stamps" / (stage + ".json"); }

Stamp make_stamp(const std::string& stage, const json& params, std::vector<fs::path> outputs) {
    return {stage, sha256_hex(json{{"stage", stage}, {"params", params}}.dump()), std::move(outputs)};
}

bool stamp_current(const PipelineConfig& c, const Stamp& s) {
    if (c.force) return false;
    auto path = stamp_path(c, s.stage);
    if (!path_exists(path)) return false;
    try {
        auto j = json::parse(read_text(path));
        if (j.at("key").get<std::string>() != s.key) return false;
        const auto& outs = j.at("outputs");
        for (const auto& o : s.outputs) {
            auto h = file_hash(o);
            if (h.empty() || !outs.contains(o.string()) || outs.at(o.string()).get<std::string>() != h) return false;
        }
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

void write_stamp(const PipelineConfig& c, const Stamp& s) {
    json outs = json::object();
    for (const auto& o : s.outputs) outs[o.string()] = file_hash(o);
    auto path = stamp_path(c, s.stage);
    fs::create_directories(path.parent_path());
    write_text_atomic(path, json{{"stage", s.stage}, {"key", s.key}, {"outputs", outs}}.dump(2) + "\n");
}

StageResult up_to_date(const std::string& stage) {
    StageResult r;
    r.up_to_date = true;
    r.lines.push_back(stage + ": up to date");
    return r;
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

DirLock::DirLock(const fs::path& data_dir) {
    fs::create_directories(data_dir);
    auto path = data_dir / ".lock";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open lock file " + path.string() + ": " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw Error("data directory " + data_dir.string() + " is locked by another stage");
    }
}

DirLock::~DirLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

// ---------------------------------------------------------------------------

StageResult run_collect(const PipelineConfig& c) {
    validate(c);
    auto labels = resolve_labels(c);
    if (c.provider == "fixture" && !c.provider_url && !c.fixture_dir) {
        throw ConfigError("fixture provider needs --provider-url or --fixture-dir");
    }
    json params{{"labels", labels_json(labels)},
                {"provider", c.provider},
                {"provider_url", c.provider_url.value_or("")},
                {"fixture", c.fixture_dir ? file_hash(*c.fixture_dir / "ranking.json") : ""},
                {"max_per_label", c.max_per_label}};
    auto manifest = manifest_path(c);
    auto stamp = make_stamp("collect", params, {manifest});

    if (c.dry_run) {
        StageResult r;
        r.lines.push_back("collect (dry run): " + std::to_string(labels.size()) + " labels, up to " +
                          std::to_string(c.max_per_label) + " images each, rate " + fmt_double(c.rate) + " req/s");
        r.lines.push_back("  would write " + manifest.string() + " and images under " + images_dir(c).string());
        if (stamp_current(c, stamp)) r.lines.push_back("  stage is up to date");
        return r;
    }
    DirLock lock(c.data_dir);
    if (stamp_current(c, stamp)) return up_to_date("collect");

    std::unique_ptr<crawler::FixtureServer> fixture;
    std::string base_url = c.provider_url.value_or("");
    if (c.provider == "fixture" && c.fixture_dir) {
        fixture = std::make_unique<crawler::FixtureServer>(*c.fixture_dir);
        base_url = fixture->base_url();
    }
    auto limiter = std::make_shared<crawler::HostRateLimiter>(c.rate);
    crawler::HttpFetcher fetcher(limiter);
    crawler::ImageStore images(images_dir(c));
    crawler::Crawler crawler(fetcher, images);
    std::unique_ptr<crawler::SearchProvider> provider;
    if (c.provider == "fixture") {
        provider = std::make_unique<crawler::FixtureProvider>(base_url, fetcher);
    } else {
        provider = std::make_unique<crawler::LiveProvider>();
    }

    StageResult r;
    std::vector<ImageRecord> all;
    for (const auto& label : labels) {
        auto records = crawler.crawl(label, *provider, {c.max_per_label, c.concurrency});
        const auto& st = crawler.last_stats();
        r.lines.push_back(label.id + ": " + std::to_string(records.size()) + " images (" +
                          std::to_string(st.duplicates) + " duplicates, " + std::to_string(st.failed) +
                          " failed, " + std::to_string(st.undecodable) + " undecodable)");
        all.insert(all.end(), records.begin(), records.end());
    }
    write_text_atomic(c.data_dir / "labels.json", labels_json(labels).dump(2) + "\n");
    crawler::write_manifest(manifest, all);
    write_stamp(c, stamp);
    r.lines.push_back("collect: " + std::to_string(all.size()) + " records written to " + manifest.string());
    return r;
}

StageResult run_score(const PipelineConfig& c) {
    validate(c);
    auto manifest = manifest_path(c);
    if (c.backend == "remote" && !c.endpoint) throw ConfigError("remote backend needs --endpoint");
    if (c.backend == "sidecar" && !c.sidecar_dir) throw ConfigError("sidecar backend needs --sidecar-dir");
    json params{{"backend", c.backend},
                {"endpoint", c.endpoint.value_or("")},
                {"sidecar_dir", c.sidecar_dir ? c.sidecar_dir->string() : ""},
                {"mock_key", c.backend == "mock" ? c.mock_key : ""}};
    auto stamp = make_stamp("score", params, {manifest});
    if (!path_exists(manifest)) throw ConfigError("manifest " + manifest.string() + " does not exist; run collect first");

    if (c.dry_run) {
        auto records = crawler::read_manifest(manifest);
        std::size_t todo = 0;
        for (const auto& rec : records) todo += rec.status == ImageStatus::Fetched || rec.status == ImageStatus::Scored;
        StageResult r;
        r.lines.push_back("score (dry run): " + std::to_string(todo) + " of " + std::to_string(records.size()) +
                          " records with the " + c.backend + " backend");
        r.lines.push_back("  would rewrite " + manifest.string());
        if (stamp_current(c, stamp)) r.lines.push_back("  stage is up to date");
        return r;
    }
    DirLock lock(c.data_dir);
    if (stamp_current(c, stamp)) return up_to_date("score");

    std::unique_ptr<scorer::DetectorBackend> backend;
    if (c.backend == "mock") {
        backend = std::make_unique<scorer::MockBackend>(c.mock_key);
    } else if (c.backend == "sidecar") {
        backend = std::make_unique<scorer::SidecarBackend>(*c.sidecar_dir);
    } else {
        backend = std::make_unique<scorer::RemoteBackend>(*c.endpoint, c.max_in_flight);
    }
    crawler::ImageStore images(images_dir(c));
    auto records = scorer::score_records(crawler::read_manifest(manifest), images, *backend, c.score_parallelism);
    crawler::write_manifest(manifest, records);
    write_stamp(c, stamp);
    std::size_t scored = 0;
    for (const auto& rec : records) scored += rec.status == ImageStatus::Scored;
    return {{"score: " + std::to_string(scored) + " records scored with the " + backend->name() + " backend"}, false};
}

StageResult run_calibrate(const PipelineConfig& c) {
    validate(c);
    if (!c.food_pool || !c.nonfood_pool) throw ConfigError("calibrate needs --food and --nonfood score files");
    for (const auto& p : {*c.food_pool, *c.nonfood_pool}) {
        if (!path_exists(p)) throw ConfigError("score file " + p.string() + " does not exist");
    }
    auto report_file = report_path(c);
    auto csv_file = report_file.parent_path() / "pr_points.csv";
    calibration::CalibrationReport shell;
    shell.config = c.calibration;
    json params{{"config", report_to_json(shell).at("config")},
                {"food", file_hash(*c.food_pool)},
                {"nonfood", file_hash(*c.nonfood_pool)}};
    // parallelism does not change the report
    params["config"].erase("parallelism");
    auto stamp = make_stamp("calibrate", params, {report_file, csv_file});

    if (c.dry_run) {
        StageResult r;
        r.lines.push_back("calibrate (dry run): mode " + std::string(calibration::to_string(c.calibration.mode)) +
                          ", " + std::to_string(c.calibration.fractions.size()) + " fractions");
        r.lines.push_back("  would write " + report_file.string() + " and " + csv_file.string());
        if (stamp_current(c, stamp)) r.lines.push_back("  stage is up to date");
        return r;
    }
    DirLock lock(c.data_dir);
    if (stamp_current(c, stamp)) {
        auto r = up_to_date("calibrate");
        auto report = calibration::report_from_json(json::parse(read_text(report_file)));
        r.lines.push_back("intersection: " + calibration::format_range(report.intersection));
        return r;
    }

    auto pools = calibration::load_pools(*c.food_pool, *c.nonfood_pool);
    auto report = calibration::calibrate(pools, c.calibration);
    fs::create_directories(report_file.parent_path());
    write_text_atomic(report_file, calibration::report_to_json(report).dump(2) + "\n");
    write_text_atomic(csv_file, calibration::report_csv(report));
    write_stamp(c, stamp);

    StageResult r;
    for (const auto& f : report.fractions) {
        char head[32];
        std::snprintf(head, sizeof head, "fraction %.2f: ", f.food_fraction);
        r.lines.push_back(head + calibration::format_range(f.range) + (f.range.multimodal ? " (multimodal)" : ""));
    }
    r.lines.push_back("intersection: " + calibration::format_range(report.intersection));
    if (report.default_threshold) r.lines.push_back("default threshold: " + fmt_double(*report.default_threshold));
    r.lines.push_back("report written to " + report_file.string());
    return r;
}

double resolve_threshold(const PipelineConfig& c) {
    if (c.threshold != "auto") return std::stod(c.threshold);
    auto path = report_path(c);
    if (!path_exists(path)) throw ConfigError("threshold auto needs a calibration report at " + path.string());
    calibration::CalibrationReport report;
    try {
        report = calibration::report_from_json(json::parse(read_text(path)));
    } catch (const std::exception& e) {
        throw ConfigError("unreadable calibration report " + path.string() + ": " + e.what());
    }
    auto mid = calibration::range_midpoint(report.intersection);
    if (!mid) throw ConfigError("calibration report has an empty acceptable range; pass a numeric threshold");
    return *mid;
}

StageResult run_filter(const PipelineConfig& c) {
    validate(c);
    auto manifest = manifest_path(c);
    if (!path_exists(manifest)) throw ConfigError("manifest " + manifest.string() + " does not exist; run collect first");
    auto labels = resolve_labels(c);
    double threshold = resolve_threshold(c);
    auto log = store_dir(c) / "events.jsonl";
    json params{{"threshold", threshold}, {"labels", labels_json(labels)}};
    auto stamp = make_stamp("filter", params, {manifest, log});

    if (c.dry_run) {
        StageResult r;
        r.lines.push_back("filter (dry run): threshold " + fmt_double(threshold));
        r.lines.push_back("  would rewrite " + manifest.string() + " and append to " + log.string());
        if (stamp_current(c, stamp)) r.lines.push_back("  stage is up to date");
        return r;
    }
    DirLock lock(c.data_dir);
    if (stamp_current(c, stamp)) {
        auto r = up_to_date("filter");
        r.lines.push_back("applied threshold " + fmt_double(threshold));
        return r;
    }

    auto records = crawler::read_manifest(manifest);
    std::vector<ImageRecord> pending;
    for (const auto& rec : records) {
        if (rec.status == ImageStatus::Fetched || rec.status == ImageStatus::Scored) pending.push_back(rec);
    }
    auto part = scorer::filter_partition(pending, threshold);
    std::map<std::string, ImageStatus> outcome;
    for (const auto& rec : part.kept) outcome[rec.image_id] = rec.status;
    for (const auto& rec : part.rejected) outcome[rec.image_id] = rec.status;

    annostore::StoreOptions opts;
    opts.dir = store_dir(c);
    opts.food_list = labels;
    annostore::Store store(std::move(opts));
    std::size_t kept = 0, rejected = 0, skipped = 0;
    for (auto& rec : records) {
        auto it = outcome.find(rec.image_id);
        if (it == outcome.end()) continue;
        auto existing = store.image(rec.image_id);
        if (!existing) {
            store.ingest({rec});
            existing = store.image(rec.image_id);
        }
        if (existing->status == ImageStatus::Scored) {
            rec.status = store.apply_threshold(rec.image_id, threshold);
        } else {
            // filtered before; the store keeps its earlier outcome
            ++skipped;
            rec.status = existing->status == ImageStatus::AutoRejected ? ImageStatus::AutoRejected
                                                                       : ImageStatus::PendingReview;
        }
        if (rec.status == ImageStatus::PendingReview) {
            ++kept;
        } else {
            ++rejected;
        }
    }
    crawler::write_manifest(manifest, records);
    write_stamp(c, stamp);

    StageResult r;
    r.lines.push_back("applied threshold " + fmt_double(threshold));
    r.lines.push_back("kept " + std::to_string(kept) + ", auto-rejected " + std::to_string(rejected) +
                      (skipped ? ", " + std::to_string(skipped) + " already filtered" : std::string()));
    return r;
}

StageResult run_export(const PipelineConfig& c) {
    validate(c);
    if (c.export_format != "coco") throw ConfigError("unknown export format '" + c.export_format + "'");
    auto labels = resolve_labels(c);
    auto out = export_path(c);
    auto log = store_dir(c) / "events.jsonl";
    json params{{"format", c.export_format}, {"labels", labels_json(labels)}, {"events", file_hash(log)}};
    auto stamp = make_stamp("export", params, {out});
    if (c.dry_run) {
        StageResult r;
        r.lines.push_back("export (dry run): would write " + out.string());
        if (stamp_current(c, stamp)) r.lines.push_back("  stage is up to date");
        return r;
    }
    if (stamp_current(c, stamp)) return up_to_date("export");

    annostore::StoreOptions opts;
    opts.dir = store_dir(c);
    opts.food_list = labels;
    opts.snapshot_every = 0;
    annostore::Store store(std::move(opts));
    crawler::ImageStore images(images_dir(c));
    auto manifest = annoserve::export_coco(store.state(), labels, &images);
    fs::create_directories(out.parent_path());
    write_text_atomic(out, annoserve::export_text(manifest));
    write_stamp(c, stamp);
    return {{"export: " + std::to_string(manifest["images"].size()) + " images, " +
             std::to_string(manifest["annotations"].size()) + " boxes written to " + out.string()},
            false};
}

StageResult run_stats(const PipelineConfig& c, bool as_json) {
    validate(c);
    auto labels = resolve_labels(c);
    annostore::Stats stats;
    if (path_exists(store_dir(c) / "events.jsonl")) {
        annostore::StoreOptions opts;
        opts.dir = store_dir(c);
        opts.food_list = labels;
        opts.snapshot_every = 0;
        annostore::Store store(std::move(opts));
        stats = store.stats();
    } else {
        stats = annostore::compute_stats({}, labels);
    }
    StageResult r;
    if (as_json) {
        r.lines.push_back(annostore::stats_to_json(stats).dump(2));
    } else {
        auto table = annostore::format_stats_table(stats);
        if (!table.empty() && table.back() == '\n') table.pop_back();
        r.lines.push_back(table);
    }
    return r;
}

}  // namespace foodcrowd::pipeline
