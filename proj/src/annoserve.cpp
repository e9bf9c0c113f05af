#include "foodcrowd/annoserve.hpp"

#include "foodcrowd/error.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <tuple>

namespace foodcrowd::annoserve {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using annostore::BoxAnnotation;
using annostore::State;

namespace {

std::string file_name_for(const ImageRecord& r, const crawler::ImageStore* images) {
    if (images) {
        if (auto p = images->find(r.content_hash)) return p->filename().string();
    }
    return r.content_hash;
}

ordered_json pixel_json(const PixelBox& p) { return ordered_json::array({p.x, p.y, p.w, p.h}); }

}  // namespace

ordered_json export_coco(const State& state, const std::vector<SearchLabel>& food_list,
                         const crawler::ImageStore* images) {
    ordered_json out;
    out["info"] = {{"description", "food image annotations"}, {"format", "coco"}};
    out["categories"] = ordered_json::array();
    std::map<std::string, std::int64_t> category_of;
    for (std::size_t i = 0; i < food_list.size(); ++i) {
        auto id = static_cast<std::int64_t>(i + 1);
        category_of[food_list[i].id] = id;
        out["categories"].push_back(
            {{"id", id}, {"name", food_list[i].text}, {"label_id", food_list[i].id}, {"supercategory", "food"}});
    }

    struct Row {
        PixelBox px;
        NormBox box;
        std::string label_id;
    };
    out["images"] = ordered_json::array();
    out["annotations"] = ordered_json::array();
    std::int64_t image_seq = 0;
    std::int64_t ann_seq = 0;
    // state.images is keyed by image_id, which fixes the image order.
    for (const auto& [id, r] : state.images) {
        if (r.status != ImageStatus::Annotated) continue;
        ++image_seq;
        out["images"].push_back({{"id", image_seq},
                                 {"file_name", file_name_for(r, images)},
                                 {"width", r.width_px},
                                 {"height", r.height_px},
                                 {"image_id", r.image_id},
                                 {"label_id", r.label_id},
                                 {"content_hash", r.content_hash},
                                 {"source_url", r.source_url},
                                 {"rank", r.rank},
                                 {"foodness", r.foodness ? json(*r.foodness) : json(nullptr)}});
        std::vector<Row> rows;
        for (const auto& b : state.live_boxes(id)) rows.push_back({to_pixels(b.box, r.width_px, r.height_px), b.box, b.label_id});
        std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
            return std::tie(a.px.x, a.px.y, a.px.w, a.px.h, a.label_id, a.box.x, a.box.y, a.box.w, a.box.h) <
                   std::tie(b.px.x, b.px.y, b.px.w, b.px.h, b.label_id, b.box.x, b.box.y, b.box.w, b.box.h);
        });
        for (const auto& row : rows) {
            auto cat = category_of.find(row.label_id);
            out["annotations"].push_back({{"id", ++ann_seq},
                                          {"image_id", image_seq},
                                          {"category_id", cat == category_of.end() ? 0 : cat->second},
                                          {"label_id", row.label_id},
                                          {"bbox", pixel_json(row.px)},
                                          {"bbox_normalized", {row.box.x, row.box.y, row.box.w, row.box.h}},
                                          {"area", row.px.w * row.px.h},
                                          {"iscrowd", 0}});
        }
    }
    return out;
}

std::string export_text(const ordered_json& manifest) { return manifest.dump(2) + "\n"; }

std::size_t import_coco(annostore::Store& store, const json& manifest, const std::string& worker_id) {
    struct Pending {
        ImageRecord record;
        std::vector<std::pair<NormBox, std::string>> boxes;
    };
    std::map<std::int64_t, Pending> by_num;
    std::vector<std::int64_t> order;
    try {
        for (const auto& im : manifest.at("images")) {
            Pending p;
            auto& r = p.record;
            r.image_id = im.at("image_id").get<std::string>();
            r.label_id = im.at("label_id").get<std::string>();
            r.source_url = im.at("source_url").get<std::string>();
            r.rank = im.at("rank").get<std::int64_t>();
            r.content_hash = im.at("content_hash").get<std::string>();
            r.width_px = im.at("width").get<std::int64_t>();
            r.height_px = im.at("height").get<std::int64_t>();
            if (!im.contains("foodness") || im.at("foodness").is_null()) {
                throw ValidationError("image " + r.image_id + " has no foodness score");
            }
            r.foodness = im.at("foodness").get<double>();
            r.status = ImageStatus::PendingReview;
            validate_record(r);
            auto num = im.at("id").get<std::int64_t>();
            if (!by_num.emplace(num, std::move(p)).second) {
                throw ValidationError("duplicate image id " + std::to_string(num));
            }
            order.push_back(num);
        }
        for (const auto& an : manifest.at("annotations")) {
            auto num = an.at("image_id").get<std::int64_t>();
            auto it = by_num.find(num);
            if (it == by_num.end()) throw ValidationError("annotation references unknown image " + std::to_string(num));
            const auto& bbox = an.at("bbox");
            if (!bbox.is_array() || bbox.size() != 4) throw ValidationError("bbox must have four components");
            const auto& r = it->second.record;
            NormBox nb;
            if (an.contains("bbox_normalized")) {
                const auto& n = an.at("bbox_normalized");
                if (!n.is_array() || n.size() != 4) throw ValidationError("bbox_normalized must have four components");
                nb = {n[0].get<double>(), n[1].get<double>(), n[2].get<double>(), n[3].get<double>()};
            } else {
                auto W = static_cast<double>(r.width_px);
                auto H = static_cast<double>(r.height_px);
                nb = {bbox[0].get<double>() / W, bbox[1].get<double>() / H, bbox[2].get<double>() / W,
                      bbox[3].get<double>() / H};
            }
            it->second.boxes.emplace_back(nb, an.at("label_id").get<std::string>());
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed manifest: ") + e.what());
    }

    for (auto num : order) {
        const auto& p = by_num.at(num);
        if (store.image(p.record.image_id)) throw ValidationError("image " + p.record.image_id + " already in store");
    }
    for (auto num : order) {
        const auto& p = by_num.at(num);
        const auto& id = p.record.image_id;
        store.ingest({p.record});
        store.lease_image(id, worker_id);
        store.verdict(id, worker_id, annostore::Decision::Keep, std::nullopt, 0);
        for (const auto& [box, label] : p.boxes) store.create_box(id, worker_id, box, label);
        store.done(id, worker_id);
    }
    return order.size();
}

// ---------------------------------------------------------------------------

namespace {

Tutorial make_tutorial(ordered_json doc) {
    Tutorial t;
    t.content_hash = sha256_hex(doc.dump());
    t.document = std::move(doc);
    return t;
}

}  // namespace

Tutorial builtin_tutorial() {
    ordered_json doc;
    doc["title"] = "Reviewing food images";
    doc["criteria"] = ordered_json::array({
        {{"reason", "KEEP"}, {"text", "The image shows the requested food as a real dish or ingredient."}},
        {{"reason", "IRRELEVANT"},
         {"text", "Reject images whose main content is not the food: logos, menus, people, packaging, drawings."}},
        {{"reason", "AESTHETIC"},
         {"text", "Reject staged or heavily edited shots that do not look like food as people eat it."}},
    });
    doc["pairs"] = ordered_json::array({
        {{"reason", "IRRELEVANT"},
         {"keep", {{"image_url", "/static/tutorial/irrelevant-keep.jpg"}, {"caption", "A plate of doughnuts"}}},
         {"reject", {{"image_url", "/static/tutorial/irrelevant-reject.jpg"}, {"caption", "A doughnut shop sign"}}}},
        {{"reason", "AESTHETIC"},
         {"keep", {{"image_url", "/static/tutorial/aesthetic-keep.jpg"}, {"caption", "Ramen served at a table"}}},
         {"reject",
          {{"image_url", "/static/tutorial/aesthetic-reject.jpg"}, {"caption", "Studio render of a ramen bowl"}}}},
    });
    doc["placeholder"] = true;
    return make_tutorial(std::move(doc));
}

Tutorial load_tutorial(const std::optional<fs::path>& path) {
    std::error_code ec;
    if (!path || !fs::is_regular_file(*path, ec)) {
        if (path) spdlog::warn("tutorial {} not found, serving the built-in placeholder", path->string());
        return builtin_tutorial();
    }
    try {
        return make_tutorial(ordered_json::parse(read_text(*path)));
    } catch (const json::exception& e) {
        throw ValidationError("malformed tutorial " + path->string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

namespace {

ordered_json label_json(const SearchLabel& l) { return {{"id", l.id}, {"text", l.text}}; }

ordered_json box_view(const BoxAnnotation& b, const ImageRecord& r) {
    return {{"box_id", b.box_id},
            {"image_id", b.image_id},
            {"box", {{"x", b.box.x}, {"y", b.box.y}, {"w", b.box.w}, {"h", b.box.h}}},
            {"label_id", b.label_id},
            {"worker_id", b.worker_id},
            {"created_at", format_rfc3339(b.created_at)},
            {"crop", pixel_json(to_pixels(b.box, r.width_px, r.height_px))}};
}

}  // namespace

ordered_json task_view(const State& state, const std::vector<SearchLabel>& food_list,
                       const annostore::TaskLease& lease) {
    const auto& r = state.images.at(lease.image_id);
    ordered_json v;
    v["image_id"] = r.image_id;
    v["image_url"] = "/images/" + r.content_hash;
    auto ref = std::find_if(food_list.begin(), food_list.end(), [&](const auto& l) { return l.id == r.label_id; });
    v["reference_label"] = ref == food_list.end() ? label_json({r.label_id, r.label_id}) : label_json(*ref);
    v["food_list"] = ordered_json::array();
    for (const auto& l : food_list) v["food_list"].push_back(label_json(l));
    v["existing_boxes"] = ordered_json::array();
    for (const auto& b : state.live_boxes(r.image_id)) v["existing_boxes"].push_back(box_view(b, r));
    v["phase"] = r.status == ImageStatus::PendingReview ? "REVIEW" : "ANNOTATE";
    v["width_px"] = r.width_px;
    v["height_px"] = r.height_px;
    v["lease"] = {{"worker_id", lease.worker_id},
                  {"issued_at", format_rfc3339(lease.issued_at)},
                  {"expires_at", format_rfc3339(lease.expires_at)}};
    return v;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kPlaceholderPage = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>foodcrowd</title></head>
<body><h1>foodcrowd annotation service</h1>
<p>The web client is not installed. The JSON API is available under /api/.</p></body></html>
)";

void send_json(httplib::Response& res, int status, const ordered_json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
    send_json(res, status, {{"error", kind}, {"message", message}});
}

// Runs a handler body and maps typed errors onto HTTP statuses.
template <typename F>
void guarded(httplib::Response& res, F&& body) {
    try {
        body();
    } catch (const NotFound& e) {
        send_error(res, 404, "not_found", e.what());
    } catch (const LeaseConflict& e) {
        send_error(res, 409, "lease_conflict", e.what());
    } catch (const IllegalTransition& e) {
        send_error(res, 409, "illegal_transition", e.what());
    } catch (const ValidationError& e) {
        send_error(res, 422, "validation", e.what());
    } catch (const json::exception& e) {
        send_error(res, 400, "bad_request", e.what());
    } catch (const std::exception& e) {
        spdlog::error("request failed: {}", e.what());
        send_error(res, 500, "internal", e.what());
    }
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    auto j = json::parse(req.body);
    if (!j.is_object()) throw json::type_error::create(302, "request body must be an object", nullptr);
    return j;
}

// The worker id comes from ?worker=, the body's worker_id, or X-Worker-Id.
std::string worker_of(const httplib::Request& req, const json& body) {
    if (req.has_param("worker")) return req.get_param_value("worker");
    if (body.contains("worker_id") && body.at("worker_id").is_string()) return body.at("worker_id").get<std::string>();
    return req.get_header_value("X-Worker-Id");
}

std::string content_type_for(const fs::path& p) {
    auto ext = p.extension().string();
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".gif") return "image/gif";
    if (ext == ".bmp") return "image/bmp";
    if (ext == ".webp") return "image/webp";
    return "application/octet-stream";
}

}  // namespace

Server::Server(annostore::Store& store, const crawler::ImageStore* images, ServerOptions options)
    : store_(store),
      images_(images),
      options_(std::move(options)),
      tutorial_(load_tutorial(options_.tutorial)),
      http_(std::make_unique<httplib::Server>()) {
    routes();
}

Server::~Server() { stop(); }

void Server::routes() {
    auto& http = *http_;

    http.Get("/api/tasks/next", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto worker = req.get_param_value("worker");
            if (worker.empty()) return send_error(res, 400, "bad_request", "worker parameter is required");
            auto lease = store_.lease(worker);
            if (!lease) {
                res.status = 204;
                return;
            }
            send_json(res, 200, task_view(store_.state(), store_.food_list(), *lease));
        });
    });

    http.Post(R"(/api/images/([^/]+)/verdict)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::string id = req.matches[1];
            auto body = parse_body(req);
            auto worker = worker_of(req, body);
            if (worker.empty()) return send_error(res, 400, "bad_request", "worker id is required");
            if (!store_.image(id)) throw NotFound("unknown image " + id);
            if (!body.contains("decision") || !body.at("decision").is_string()) {
                throw ValidationError("decision is required");
            }
            auto decision = annostore::parse_decision(body.at("decision").get<std::string>());
            std::optional<NoisyReason> reason;
            if (body.contains("noisy_reason") && !body.at("noisy_reason").is_null()) {
                if (!body.at("noisy_reason").is_string()) throw ValidationError("noisy_reason must be a string");
                reason = parse_noisy_reason(body.at("noisy_reason").get<std::string>());
            }
            std::int64_t elapsed = 0;
            if (body.contains("elapsed_ms")) {
                if (!body.at("elapsed_ms").is_number_integer()) throw ValidationError("elapsed_ms must be an integer");
                elapsed = body.at("elapsed_ms").get<std::int64_t>();
            }
            store_.verdict(id, worker, decision, reason, elapsed);
            auto r = *store_.image(id);
            send_json(res, 200, {{"image_id", id}, {"status", to_string(r.status)},
                                 {"phase", r.status == ImageStatus::Confirmed ? json("ANNOTATE") : json(nullptr)}});
        });
    });

    http.Post(R"(/api/images/([^/]+)/boxes)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::string id = req.matches[1];
            auto body = parse_body(req);
            auto worker = worker_of(req, body);
            if (worker.empty()) return send_error(res, 400, "bad_request", "worker id is required");
            auto num = [&](const char* k) {
                if (!body.contains(k) || !body.at(k).is_number()) {
                    throw ValidationError(std::string("box field '") + k + "' must be a number");
                }
                return body.at(k).get<double>();
            };
            NormBox box{num("x"), num("y"), num("w"), num("h")};
            std::optional<std::string> label;
            if (body.contains("label_id") && !body.at("label_id").is_null()) {
                if (!body.at("label_id").is_string()) throw ValidationError("label_id must be a string");
                label = body.at("label_id").get<std::string>();
            }
            auto b = store_.create_box(id, worker, box, label);
            send_json(res, 201, box_view(b, *store_.image(id)));
        });
    });

    http.Delete(R"(/api/boxes/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::string id = req.matches[1];
            auto body = parse_body(req);
            auto worker = worker_of(req, body);
            if (worker.empty()) return send_error(res, 400, "bad_request", "worker id is required");
            store_.delete_box(id, worker);
            send_json(res, 200, {{"box_id", id}, {"deleted", true}});
        });
    });

    http.Post(R"(/api/images/([^/]+)/done)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::string id = req.matches[1];
            auto body = parse_body(req);
            auto worker = worker_of(req, body);
            if (worker.empty()) return send_error(res, 400, "bad_request", "worker id is required");
            store_.done(id, worker);
            send_json(res, 200, {{"image_id", id},
                                 {"status", to_string(ImageStatus::Annotated)},
                                 {"box_count", store_.live_boxes(id).size()}});
        });
    });

    http.Get("/api/stats", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] {
            auto stats = store_.stats();
            auto j = annostore::stats_to_json(stats);
            j["table"] = annostore::format_stats_table(stats);
            send_json(res, 200, j);
        });
    });

    http.Get("/api/export", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto format = req.has_param("format") ? req.get_param_value("format") : std::string("coco");
            if (format != "coco") throw ValidationError("unknown export format '" + format + "'");
            res.status = 200;
            res.set_content(export_text(export_coco(store_.state(), store_.food_list(), images_)),
                            "application/json");
        });
    });

    http.Get("/api/tutorial", [this](const httplib::Request&, httplib::Response& res) {
        ordered_json j = tutorial_.document;
        j["content_hash"] = tutorial_.content_hash;
        res.set_header("ETag", "\"" + tutorial_.content_hash + "\"");
        send_json(res, 200, j);
    });

    http.Get(R"(/images/([0-9a-f]{64}))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::optional<fs::path> path;
            if (images_) path = images_->find(req.matches[1]);
            if (!path) throw NotFound("no image with hash " + std::string(req.matches[1]));
            auto bytes = read_file(*path);
            res.set_content(std::string(bytes.begin(), bytes.end()), content_type_for(*path));
        });
    });

    std::error_code ec;
    if (options_.static_dir && fs::is_directory(*options_.static_dir, ec)) {
        http.set_mount_point("/", options_.static_dir->string());
    } else {
        http.Get("/", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(kPlaceholderPage, "text/html; charset=utf-8");
        });
    }
}

int Server::start(const std::string& host, int port) {
    host_ = host;
    if (port == 0) {
        port_ = http_->bind_to_any_port(host);
    } else {
        port_ = http_->bind_to_port(host, port) ? port : -1;
    }
    if (port_ <= 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { http_->listen_after_bind(); });
    http_->wait_until_ready();
    spdlog::info("annotation service listening on {}", base_url());
    return port_;
}

void Server::wait() {
    if (thread_.joinable()) thread_.join();
}

void Server::stop() {
    if (http_) http_->stop();
    if (thread_.joinable()) thread_.join();
}

std::string Server::base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

}  // namespace foodcrowd::annoserve
