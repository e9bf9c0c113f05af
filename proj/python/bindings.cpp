#include "foodcrowd/annoserve.hpp"
#include "foodcrowd/annostore.hpp"
#include "foodcrowd/calibration.hpp"
#include "foodcrowd/crawler.hpp"
#include "foodcrowd/error.hpp"
#include "foodcrowd/scorer.hpp"
#include "foodcrowd/util.hpp"

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace foodcrowd;
using nlohmann::json;
namespace cal = foodcrowd::calibration;
namespace as = foodcrowd::annostore;

namespace {

// Values cross the boundary as plain Python containers via the json module.
py::object to_py(const nlohmann::ordered_json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& o) {
    return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

std::vector<cal::LabeledScore> labeled(const std::vector<std::pair<double, bool>>& in) {
    std::vector<cal::LabeledScore> out;
    out.reserve(in.size());
    for (const auto& [s, f] : in) out.push_back({s, f});
    return out;
}

py::dict point_dict(const cal::PRPoint& p) {
    py::dict d;
    d["threshold"] = p.threshold;
    d["precision"] = p.precision;
    d["recall"] = p.recall;
    d["tp"] = p.counts.tp;
    d["fp"] = p.counts.fp;
    d["fn"] = p.counts.fn;
    d["tn"] = p.counts.tn;
    return d;
}

py::list curve_list(const std::vector<cal::PRPoint>& curve) {
    py::list out;
    for (const auto& p : curve) out.append(point_dict(p));
    return out;
}

std::vector<cal::PRPoint> curve_from(const py::list& points) {
    std::vector<cal::PRPoint> out;
    for (const auto& h : points) {
        auto d = h.cast<py::dict>();
        cal::PRPoint p;
        p.threshold = d["threshold"].cast<double>();
        p.precision = d["precision"].cast<double>();
        p.recall = d["recall"].cast<double>();
        out.push_back(p);
    }
    return out;
}

py::object range_obj(const cal::AcceptableRange& r) {
    if (r.empty) return py::none();
    return py::make_tuple(r.lower, r.upper);
}

cal::CalibrationConfig config_from(const py::dict& d) {
    cal::CalibrationConfig c;
    if (d.contains("fractions")) c.fractions = d["fractions"].cast<std::vector<double>>();
    if (d.contains("trials")) c.trials = d["trials"].cast<std::size_t>();
    if (d.contains("sample_size")) c.sample_size = d["sample_size"].cast<std::size_t>();
    if (d.contains("grid")) c.grid = d["grid"].cast<double>();
    if (d.contains("pmin")) c.p_min = d["pmin"].cast<double>();
    if (d.contains("rmin")) c.r_min = d["rmin"].cast<double>();
    if (d.contains("mode")) c.mode = cal::parse_mode(d["mode"].cast<std::string>());
    if (d.contains("seed")) c.seed = d["seed"].cast<std::uint64_t>();
    if (d.contains("parallelism")) c.parallelism = d["parallelism"].cast<std::size_t>();
    return c;
}

std::vector<ImageRecord> records_from(const py::handle& o) { return from_py(o).get<std::vector<ImageRecord>>(); }

std::optional<NoisyReason> reason_from(const std::optional<std::string>& s) {
    if (!s) return std::nullopt;
    return parse_noisy_reason(*s);
}

json lease_json(const as::TaskLease& l) {
    return {{"image_id", l.image_id},
            {"worker_id", l.worker_id},
            {"issued_at", format_rfc3339(l.issued_at)},
            {"expires_at", format_rfc3339(l.expires_at)}};
}

json box_json(const as::BoxAnnotation& b) {
    return {{"box_id", b.box_id},
            {"image_id", b.image_id},
            {"box", {{"x", b.box.x}, {"y", b.box.y}, {"w", b.box.w}, {"h", b.box.h}}},
            {"label_id", b.label_id},
            {"worker_id", b.worker_id},
            {"created_at", format_rfc3339(b.created_at)}};
}

std::vector<SearchLabel> labels_from(const std::vector<std::pair<std::string, std::string>>& in) {
    std::vector<SearchLabel> out;
    for (const auto& [id, text] : in) out.push_back({id, text});
    return out;
}

// Owns the store and optional image directory behind a running server.
class Service {
public:
    Service(std::shared_ptr<as::Store> store, std::optional<std::filesystem::path> images_dir,
            std::optional<std::filesystem::path> tutorial)
        : store_(std::move(store)) {
        if (images_dir) images_ = std::make_unique<crawler::ImageStore>(*images_dir);
        annoserve::ServerOptions opts;
        opts.tutorial = std::move(tutorial);
        server_ = std::make_unique<annoserve::Server>(*store_, images_.get(), opts);
    }
    int start(const std::string& host, int port) { return server_->start(host, port); }
    void stop() { server_->stop(); }
    std::string base_url() const { return server_->base_url(); }

private:
    std::shared_ptr<as::Store> store_;
    std::unique_ptr<crawler::ImageStore> images_;
    std::unique_ptr<annoserve::Server> server_;
};

}  // namespace

PYBIND11_MODULE(_foodcrowd, m) {
    m.doc() = "Native core of the foodcrowd dataset pipeline";

    auto base = py::register_exception<Error>(m, "Error");
    auto validation = py::register_exception<ValidationError>(m, "ValidationError", base);
    py::register_exception<ConfigError>(m, "ConfigError", validation);
    py::register_exception<NotFound>(m, "NotFound", base);
    py::register_exception<LeaseConflict>(m, "LeaseConflict", base);
    py::register_exception<IllegalTransition>(m, "IllegalTransition", base);
    py::register_exception<MissingScore>(m, "MissingScore", base);
    py::register_exception<PoolTooSmall>(m, "PoolTooSmall", base);

    m.def("sha256_hex", [](const py::bytes& b) { return sha256_hex(std::string_view(b)); });
    m.def("image_id_for", &crawler::image_id_for);

    // calibration
    m.def("threshold_grid", &cal::threshold_grid, py::arg("step") = 0.01);
    m.def(
        "sweep_pr",
        [](const std::vector<std::pair<double, bool>>& scores, double grid) {
            return curve_list(cal::sweep_pr(labeled(scores), grid));
        },
        py::arg("scores"), py::arg("grid") = 0.01);
    m.def(
        "analytic_pr",
        [](const std::vector<double>& food, const std::vector<double>& nonfood, double fraction, double grid) {
            return curve_list(cal::analytic_pr(food, nonfood, fraction, grid));
        },
        py::arg("food"), py::arg("nonfood"), py::arg("food_fraction"), py::arg("grid") = 0.01);
    m.def(
        "acceptable_range",
        [](const py::list& curve, double p_min, double r_min) {
            auto pts = curve_from(curve);
            return range_obj(cal::acceptable_range(pts, p_min, r_min));
        },
        py::arg("curve"), py::arg("pmin") = 0.8, py::arg("rmin") = 0.8);
    m.def("intersect_ranges", [](const std::vector<std::pair<double, double>>& ranges) {
        std::vector<cal::AcceptableRange> rs;
        for (const auto& [lo, hi] : ranges) rs.push_back({std::nullopt, lo, hi, false, false});
        return range_obj(cal::intersect_ranges(rs));
    });
    m.def("range_midpoint", [](double lo, double hi) {
        return cal::range_midpoint({std::nullopt, lo, hi, false, false});
    });
    m.def(
        "synthetic_pools",
        [](std::uint64_t seed) {
            auto p = cal::synthetic_pools(seed);
            return py::make_tuple(p.food, p.nonfood);
        },
        py::arg("seed") = cal::kSyntheticSeed);
    m.def(
        "calibrate",
        [](const std::vector<double>& food, const std::vector<double>& nonfood, const py::dict& config) {
            cal::ScorePools pools{food, nonfood};
            auto cfg = config_from(config);
            cal::CalibrationReport report;
            {
                py::gil_scoped_release release;
                report = cal::calibrate(pools, cfg);
            }
            return to_py(cal::report_to_json(report));
        },
        py::arg("food"), py::arg("nonfood"), py::arg("config") = py::dict());

    // scorer
    m.def("aggregate_foodness", [](const std::vector<double>& objectness) {
        std::vector<scorer::Detection> ds;
        for (double o : objectness) ds.push_back({NormBox{0, 0, 1, 1}, o});
        return scorer::aggregate_foodness(ds);
    });
    m.def("filter_partition", [](const py::list& records, double threshold) {
        auto p = scorer::filter_partition(records_from(records), threshold);
        return py::make_tuple(to_py(json(p.kept)), to_py(json(p.rejected)));
    });

    // crawler
    m.def("dedup", [](const std::vector<std::pair<std::string, py::bytes>>& items) {
        std::vector<crawler::Candidate> cs;
        for (const auto& [url, b] : items) {
            std::string_view v(b);
            cs.push_back({url, Bytes(v.begin(), v.end())});
        }
        std::vector<std::string> urls;
        for (const auto& c : crawler::dedup(std::move(cs))) urls.push_back(c.url);
        return urls;
    });
    m.def("make_fixture_corpus",
          [](const std::filesystem::path& dir, const std::vector<std::tuple<std::string, int, int, int>>& queries,
             std::uint64_t seed) {
              std::vector<crawler::FixtureQuery> qs;
              for (const auto& [id, u, d, miss] : queries) qs.push_back({id, u, d, miss});
              crawler::make_fixture_corpus(dir, qs, seed);
          },
          py::arg("dir"), py::arg("queries"), py::arg("seed") = 1);
    m.def(
        "crawl_fixture",
        [](const std::filesystem::path& fixture_dir, const std::filesystem::path& images_dir,
           const std::vector<std::pair<std::string, std::string>>& labels, std::size_t max_count, double rate) {
            std::vector<ImageRecord> all;
            {
                py::gil_scoped_release release;
                crawler::FixtureServer server(fixture_dir);
                auto limiter = std::make_shared<crawler::HostRateLimiter>(rate);
                crawler::HttpFetcher fetcher(limiter);
                crawler::ImageStore store(images_dir);
                crawler::FixtureProvider provider(server.base_url(), fetcher);
                crawler::Crawler c(fetcher, store);
                for (const auto& l : labels_from(labels)) {
                    auto r = c.crawl(l, provider, {max_count, 4});
                    all.insert(all.end(), r.begin(), r.end());
                }
            }
            return to_py(json(all));
        },
        py::arg("fixture_dir"), py::arg("images_dir"), py::arg("labels"), py::arg("max_count") = 100,
        py::arg("rate") = 1.0);

    // annotation store
    py::class_<as::Store, std::shared_ptr<as::Store>>(m, "Store")
        .def(py::init([](const std::filesystem::path& dir, const std::vector<std::pair<std::string, std::string>>& labels,
                         double lease_ttl_s, std::uint64_t snapshot_every) {
                 as::StoreOptions o;
                 o.dir = dir;
                 o.food_list = labels_from(labels);
                 o.lease_ttl = std::chrono::milliseconds(static_cast<std::int64_t>(lease_ttl_s * 1000));
                 o.snapshot_every = snapshot_every;
                 return std::make_shared<as::Store>(std::move(o));
             }),
             py::arg("dir"), py::arg("labels"), py::arg("lease_ttl_s") = 600.0, py::arg("snapshot_every") = 1000)
        .def("ingest", [](as::Store& s, const py::list& records) { return s.ingest(records_from(records)); })
        .def("apply_threshold",
             [](as::Store& s, const std::string& id, double t) { return std::string(to_string(s.apply_threshold(id, t))); })
        .def("lease",
             [](as::Store& s, const std::string& worker) -> py::object {
                 auto l = s.lease(worker);
                 return l ? to_py(lease_json(*l)) : py::none();
             })
        .def("verdict",
             [](as::Store& s, const std::string& id, const std::string& worker, const std::string& decision,
                std::optional<std::string> reason, std::int64_t elapsed_ms) {
                 s.verdict(id, worker, as::parse_decision(decision), reason_from(reason), elapsed_ms);
             },
             py::arg("image_id"), py::arg("worker_id"), py::arg("decision"), py::arg("noisy_reason") = py::none(),
             py::arg("elapsed_ms") = 0)
        .def("create_box",
             [](as::Store& s, const std::string& id, const std::string& worker, std::tuple<double, double, double, double> b,
                std::optional<std::string> label) {
                 auto [x, y, w, h] = b;
                 return to_py(box_json(s.create_box(id, worker, {x, y, w, h}, std::move(label))));
             },
             py::arg("image_id"), py::arg("worker_id"), py::arg("box"), py::arg("label_id") = py::none())
        .def("delete_box", &as::Store::delete_box)
        .def("done", &as::Store::done)
        .def("image",
             [](as::Store& s, const std::string& id) -> py::object {
                 auto r = s.image(id);
                 return r ? to_py(json(*r)) : py::none();
             })
        .def("stats", [](as::Store& s) { return to_py(as::stats_to_json(s.stats())); })
        .def("stats_table", [](as::Store& s) { return as::format_stats_table(s.stats()); })
        .def("event_count", [](as::Store& s) { return s.events().size(); })
        .def("snapshot", &as::Store::write_snapshot)
        .def("export_coco",
             [](as::Store& s) { return annoserve::export_text(annoserve::export_coco(s.state(), s.food_list())); })
        .def("import_coco", [](as::Store& s, const std::string& text) {
            return annoserve::import_coco(s, json::parse(text));
        });

    py::class_<Service>(m, "Server")
        .def(py::init<std::shared_ptr<as::Store>, std::optional<std::filesystem::path>,
                      std::optional<std::filesystem::path>>(),
             py::arg("store"), py::arg("images_dir") = py::none(), py::arg("tutorial") = py::none())
        .def("start", &Service::start, py::arg("host") = "127.0.0.1", py::arg("port") = 0)
        .def("stop", &Service::stop, py::call_guard<py::gil_scoped_release>())
        .def_property_readonly("base_url", &Service::base_url);
}
