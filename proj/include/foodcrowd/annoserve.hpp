#pragma once

#include "foodcrowd/annostore.hpp"
#include "foodcrowd/crawler.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace foodcrowd::annoserve {

// COCO-style manifest of ANNOTATED images and their live boxes. Images are
// ordered by image_id, annotations by image then pixel geometry then label.
// Numeric ids are positions in that order, so the document depends only on
// the annotation content. `images` resolves file names; without it the
// content hash is used.
nlohmann::ordered_json export_coco(const annostore::State& state, const std::vector<SearchLabel>& food_list,
                                   const crawler::ImageStore* images = nullptr);

// Serialized form used by the CLI and the HTTP endpoint.
std::string export_text(const nlohmann::ordered_json& manifest);

// Replays a manifest into the store as IMAGE_ADDED, LEASED, VERDICT(KEEP),
// BOX_CREATED and ANNOTATION_DONE events under `worker_id`. Boxes come from
// bbox_normalized when present, otherwise from bbox divided by the image
// dimensions. Returns the number of images imported.
std::size_t import_coco(annostore::Store& store, const nlohmann::json& manifest,
                        const std::string& worker_id = "import");

struct Tutorial {
    nlohmann::ordered_json document;
    std::string content_hash;  // sha256 of the compact serialization
};

Tutorial builtin_tutorial();
// Missing path or missing file yields the built-in placeholder.
Tutorial load_tutorial(const std::optional<std::filesystem::path>& path);

// The worker-facing task document for a leased image.
nlohmann::ordered_json task_view(const annostore::State& state, const std::vector<SearchLabel>& food_list,
                                 const annostore::TaskLease& lease);

struct ServerOptions {
    std::optional<std::filesystem::path> tutorial;
    std::optional<std::filesystem::path> static_dir;
};

// HTTP front end over a Store. Handlers hold no state of their own; every
// mutating request maps to one store call and therefore one event.
class Server {
public:
    Server(annostore::Store& store, const crawler::ImageStore* images, ServerOptions options = {});
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    // Binds (port 0 picks a free port) and serves on a background thread.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    // Blocks until stop() is called from another thread or a signal handler.
    void wait();
    void stop();

    int port() const noexcept { return port_; }
    std::string base_url() const;
    const Tutorial& tutorial() const noexcept { return tutorial_; }

private:
    void routes();

    annostore::Store& store_;
    const crawler::ImageStore* images_;
    ServerOptions options_;
    Tutorial tutorial_;
    std::unique_ptr<httplib::Server> http_;
    std::thread thread_;
    std::string host_;
    int port_ = 0;
};

}  // namespace foodcrowd::annoserve
