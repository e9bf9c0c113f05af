// foodcrowd: command-line driver for the collection, calibration and
// annotation pipeline.

#include "foodcrowd/annoserve.hpp"
#include "foodcrowd/annostore.hpp"
#include "foodcrowd/crawler.hpp"
#include "foodcrowd/error.hpp"
#include "foodcrowd/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <iostream>

namespace fs = std::filesystem;
using foodcrowd::pipeline::PipelineConfig;
using nlohmann::json;

namespace {

constexpr int kExitStage = 1;
constexpr int kExitConfig = 2;

std::vector<std::string> config_inputs(const json& v) {
    std::vector<std::string> out;
    auto one = [](const json& x) { return x.is_string() ? x.get<std::string>() : x.dump(); };
    if (v.is_array()) {
        for (const auto& x : v) out.push_back(one(x));
    } else {
        out.push_back(one(v));
    }
    return out;
}

// Fills options not given on the command line from a JSON config. A key is
// looked up in the subcommand's section first, then at the top level.
void merge_config(CLI::App& app, CLI::App* sub, const fs::path& path) {
    json cfg;
    try {
        cfg = json::parse(foodcrowd::read_text(path));
    } catch (const std::exception& e) {
        throw foodcrowd::ConfigError("cannot read config " + path.string() + ": " + e.what());
    }
    if (!cfg.is_object()) throw foodcrowd::ConfigError("config " + path.string() + " must be a JSON object");
    const json* section = nullptr;
    if (sub && cfg.contains(sub->get_name()) && cfg.at(sub->get_name()).is_object()) {
        section = &cfg.at(sub->get_name());
    }
    auto apply = [&](CLI::App& owner) {
        for (CLI::Option* opt : owner.get_options()) {
            if (opt->count() > 0 || opt->get_lnames().empty()) continue;
            for (const auto& name : opt->get_lnames()) {
                const json* v = nullptr;
                if (section && section->contains(name)) {
                    v = &section->at(name);
                } else if (cfg.contains(name) && !(sub && name == sub->get_name())) {
                    v = &cfg.at(name);
                }
                if (!v) continue;
                for (const auto& in : config_inputs(*v)) opt->add_result(in);
                try {
                    opt->run_callback();
                } catch (const CLI::Error& e) {
                    throw foodcrowd::ConfigError("config key '" + name + "': " + e.what());
                }
                break;
            }
        }
    };
    apply(app);
    if (sub) apply(*sub);
}

int run_serve(const PipelineConfig& c) {
    foodcrowd::pipeline::validate(c);
    std::vector<foodcrowd::SearchLabel> labels;
    if (c.labels) {
        labels = foodcrowd::load_labels(*c.labels);
    } else if (fs::exists(c.data_dir / "labels.json")) {
        labels = foodcrowd::load_labels(c.data_dir / "labels.json");
    } else {
        throw foodcrowd::ConfigError("serve needs --labels or a collected data directory");
    }
    if (c.dry_run) {
        std::cout << "serve (dry run): would listen on " << c.host << ":" << c.port << " with store "
                  << (c.data_dir / "store").string() << "\n";
        return 0;
    }
    foodcrowd::pipeline::DirLock lock(c.data_dir);

    // Block the stop signals before any server thread exists so they are
    // delivered only to sigwait below.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    foodcrowd::annostore::StoreOptions opts;
    opts.dir = c.data_dir / "store";
    opts.food_list = labels;
    opts.lease_ttl = std::chrono::milliseconds(static_cast<std::int64_t>(c.lease_ttl_s * 1000.0));
    foodcrowd::annostore::Store store(std::move(opts));
    foodcrowd::crawler::ImageStore images(c.data_dir / "images");
    foodcrowd::annoserve::Server server(store, &images, {c.tutorial, c.static_dir});
    server.start(c.host, c.port);
    std::cout << "serving on " << server.base_url() << std::endl;

    int sig = 0;
    sigwait(&set, &sig);
    spdlog::info("received signal {}, shutting down", sig);
    server.stop();
    store.write_snapshot();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("foodcrowd"));
    spdlog::set_pattern("%^%l%$: %v");

    CLI::App app{"Food image collection, calibration and annotation pipeline", "foodcrowd"};
    app.require_subcommand(1);
    app.fallthrough();

    PipelineConfig c;
    std::string config_file;
    std::string labels, manifest, mode = "trials";
    bool verbose = false, quiet = false, stats_json = false;

    app.add_option("--config", config_file, "JSON file with option values; command-line flags win");
    app.add_option("--data", c.data_dir, "Data directory")->capture_default_str();
    app.add_option("--labels", labels, "Food label list (JSON array or one label per line)");
    app.add_option("--manifest", manifest, "Manifest path (default <data>/manifest.jsonl)");
    app.add_flag("--dry-run", c.dry_run, "Print the plan without side effects");
    app.add_flag("--force", c.force, "Run even if the stage is up to date");
    app.add_flag("-v,--verbose", verbose, "Debug logging");
    app.add_flag("-q,--quiet", quiet, "Warnings and errors only");

    auto* collect = app.add_subcommand("collect", "Crawl images for every label");
    collect->add_option("--out", c.data_dir, "Data directory (same as --data)");
    collect->add_option("--max-per-label", c.max_per_label)->capture_default_str();
    collect->add_option("--provider", c.provider)->check(CLI::IsMember({"fixture", "live"}))->capture_default_str();
    std::string provider_url, fixture_dir;
    collect->add_option("--provider-url", provider_url, "Base URL of a running fixture server");
    collect->add_option("--fixture-dir", fixture_dir, "Serve this fixture directory in-process");
    collect->add_option("--rate", c.rate, "Requests per second per host")->capture_default_str();
    collect->add_option("--concurrency", c.concurrency)->capture_default_str();

    auto* score = app.add_subcommand("score", "Compute foodness scores for fetched images");
    score->add_option("--backend", c.backend)->check(CLI::IsMember({"mock", "sidecar", "remote"}))->capture_default_str();
    std::string endpoint, sidecar_dir;
    score->add_option("--endpoint", endpoint, "Remote detector base URL");
    score->add_option("--sidecar-dir", sidecar_dir, "Directory of <content_hash>.score files");
    score->add_option("--mock-key", c.mock_key)->capture_default_str();
    score->add_option("--parallelism", c.score_parallelism)->capture_default_str();
    score->add_option("--max-in-flight", c.max_in_flight)->capture_default_str();

    auto* calibrate = app.add_subcommand("calibrate", "Calibrate the foodness threshold");
    std::string food, nonfood, report;
    calibrate->add_option("--food", food, "Food score file (JSON Lines)");
    calibrate->add_option("--nonfood", nonfood, "Non-food score file (JSON Lines)");
    calibrate->add_option("--fractions", c.calibration.fractions)->delimiter(',')->capture_default_str();
    calibrate->add_option("--trials", c.calibration.trials)->capture_default_str();
    calibrate->add_option("--sample-size", c.calibration.sample_size)->capture_default_str();
    calibrate->add_option("--grid", c.calibration.grid)->capture_default_str();
    calibrate->add_option("--pmin", c.calibration.p_min)->capture_default_str();
    calibrate->add_option("--rmin", c.calibration.r_min)->capture_default_str();
    calibrate->add_option("--mode", mode)->check(CLI::IsMember({"trials", "analytic"}))->capture_default_str();
    calibrate->add_option("--seed", c.calibration.seed)->capture_default_str();
    calibrate->add_option("--parallelism", c.calibration.parallelism)->capture_default_str();
    calibrate->add_option("--out", report, "Report path (default <data>/calibration/report.json)");

    auto* filter = app.add_subcommand("filter", "Partition scored images with the threshold");
    filter->add_option("--threshold", c.threshold, "Number in [0,1] or auto")->capture_default_str();
    filter->add_option("--report", report, "Calibration report used by --threshold auto");

    auto* serve = app.add_subcommand("serve", "Run the annotation service");
    serve->add_option("--host", c.host)->capture_default_str();
    serve->add_option("--port", c.port)->capture_default_str();
    serve->add_option("--lease-ttl", c.lease_ttl_s, "Lease lifetime in seconds")->capture_default_str();
    std::string tutorial, static_dir;
    serve->add_option("--tutorial", tutorial, "Tutorial document (JSON)");
    serve->add_option("--static-dir", static_dir, "Built web client to serve at /");

    auto* exp = app.add_subcommand("export", "Export annotations");
    std::string export_out;
    exp->add_option("--format", c.export_format)->capture_default_str();
    exp->add_option("--out", export_out, "Output file (default <data>/export/coco.json)");

    auto* stats = app.add_subcommand("stats", "Per-label image and box counts");
    stats->add_flag("--json", stats_json, "Print JSON instead of the table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitConfig;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
        if (!config_file.empty()) merge_config(app, sub, config_file);
        if (verbose) spdlog::set_level(spdlog::level::debug);
        if (quiet) spdlog::set_level(spdlog::level::warn);

        if (!labels.empty()) c.labels = labels;
        if (!manifest.empty()) c.manifest = manifest;
        if (!provider_url.empty()) c.provider_url = provider_url;
        if (!fixture_dir.empty()) c.fixture_dir = fixture_dir;
        if (!endpoint.empty()) c.endpoint = endpoint;
        if (!sidecar_dir.empty()) c.sidecar_dir = sidecar_dir;
        if (!food.empty()) c.food_pool = food;
        if (!nonfood.empty()) c.nonfood_pool = nonfood;
        if (!report.empty()) c.report = report;
        if (!tutorial.empty()) c.tutorial = tutorial;
        if (!static_dir.empty()) c.static_dir = static_dir;
        if (!export_out.empty()) c.export_out = export_out;
        c.calibration.mode = foodcrowd::calibration::parse_mode(mode);

        namespace p = foodcrowd::pipeline;
        p::StageResult result;
        if (sub == collect) {
            result = p::run_collect(c);
        } else if (sub == score) {
            result = p::run_score(c);
        } else if (sub == calibrate) {
            result = p::run_calibrate(c);
        } else if (sub == filter) {
            result = p::run_filter(c);
        } else if (sub == serve) {
            return run_serve(c);
        } else if (sub == exp) {
            result = p::run_export(c);
        } else {
            result = p::run_stats(c, stats_json);
        }
        for (const auto& line : result.lines) std::cout << line << "\n";
        return 0;
    } catch (const foodcrowd::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStage;
    }
}
