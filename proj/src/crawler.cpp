#include "foodcrowd/crawler.hpp"

#include "foodcrowd/error.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace foodcrowd::crawler {

namespace fs = std::filesystem;
using steady = std::chrono::steady_clock;

// ---------------------------------------------------------------------------

HostRateLimiter::HostRateLimiter(double requests_per_second) {
    if (!(requests_per_second > 0) || !std::isfinite(requests_per_second)) {
        throw ValidationError("rate must be a positive number of requests per second");
    }
    interval_ = std::chrono::nanoseconds(static_cast<std::int64_t>(std::ceil(1e9 / requests_per_second)));
}

HostRateLimiter::Slot& HostRateLimiter::slot_for(const std::string& host) {
    std::lock_guard lock(map_mu_);
    auto& slot = slots_[host];
    if (!slot) slot = std::make_unique<Slot>();
    return *slot;
}

HostRateLimiter::Permit HostRateLimiter::acquire(const std::string& host) {
    Slot& slot = slot_for(host);
    slot.busy.lock();
    std::this_thread::sleep_until(slot.next_allowed);
    return Permit(this, &slot);
}

HostRateLimiter::Permit::Permit(const HostRateLimiter* owner, Slot* slot) : owner_(owner), slot_(slot) {}

HostRateLimiter::Permit::Permit(Permit&& other) noexcept : owner_(other.owner_), slot_(other.slot_) {
    other.slot_ = nullptr;
}

HostRateLimiter::Permit::~Permit() {
    if (!slot_) return;
    slot_->next_allowed = steady::now() + owner_->interval_;
    slot_->busy.unlock();
}

// ---------------------------------------------------------------------------

std::string ParsedUrl::origin() const { return scheme + "://" + host + ":" + std::to_string(port); }
std::string ParsedUrl::host_key() const { return host + ":" + std::to_string(port); }

ParsedUrl parse_url(const std::string& url) {
    auto bad = [&] { return FetchError(FetchError::Kind::BadUrl, url, "malformed url: " + url); };
    ParsedUrl out;
    auto sep = url.find("://");
    if (sep == std::string::npos) throw bad();
    out.scheme = url.substr(0, sep);
    std::transform(out.scheme.begin(), out.scheme.end(), out.scheme.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (out.scheme != "http" && out.scheme != "https") throw bad();
    auto rest = url.substr(sep + 3);
    auto slash = rest.find_first_of("/?");
    auto authority = rest.substr(0, slash);
    out.path_and_query = slash == std::string::npos ? "/" : rest.substr(slash);
    if (out.path_and_query[0] == '?') out.path_and_query.insert(0, "/");
    if (authority.empty() || authority.find('@') != std::string::npos) throw bad();
    auto colon = authority.rfind(':');
    if (colon != std::string::npos && authority.find(']') == std::string::npos) {
        out.host = authority.substr(0, colon);
        auto port_str = authority.substr(colon + 1);
        if (port_str.empty() || port_str.size() > 5 ||
            !std::all_of(port_str.begin(), port_str.end(), [](unsigned char c) { return std::isdigit(c); })) {
            throw bad();
        }
        out.port = std::stoi(port_str);
        if (out.port < 1 || out.port > 65535) throw bad();
    } else {
        out.host = authority;
        out.port = out.scheme == "https" ? 443 : 80;
    }
    if (out.host.empty()) throw bad();
    for (char c : out.host) {
        if (std::isspace(static_cast<unsigned char>(c))) throw bad();
    }
    return out;
}

// ---------------------------------------------------------------------------

HttpFetcher::HttpFetcher(std::shared_ptr<HostRateLimiter> limiter, FetchOptions options)
    : limiter_(std::move(limiter)), options_(std::move(options)) {}

Bytes HttpFetcher::fetch(const std::string& url) {
    const ParsedUrl u = parse_url(url);
    if (u.scheme == "https") {
        throw FetchError(FetchError::Kind::Connection, url, "https is not supported by this build: " + url);
    }

    FetchLogEntry entry{url, u.host_key(), {}, {}, false};
    auto record = [&](bool ok) {
        entry.finished = steady::now();
        entry.ok = ok;
        std::lock_guard lock(log_mu_);
        log_.push_back(entry);
    };

    auto permit = limiter_->acquire(u.host_key());
    entry.started = steady::now();

    httplib::Client client(u.host, u.port);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_keep_alive(false);

    Bytes body;
    bool oversize = false;
    int status = 0;
    httplib::Headers headers{{"User-Agent", options_.user_agent}};
    auto result = client.Get(
        u.path_and_query, headers,
        [&](const httplib::Response& res) {
            status = res.status;
            if (res.has_header("Content-Length")) {
                auto declared = std::strtoull(res.get_header_value("Content-Length").c_str(), nullptr, 10);
                if (declared > options_.max_bytes) {
                    oversize = true;
                    return false;
                }
            }
            return true;
        },
        [&](const char* data, std::size_t len) {
            if (body.size() + len > options_.max_bytes) {
                oversize = true;
                return false;
            }
            body.insert(body.end(), data, data + len);
            return true;
        });

    if (oversize) {
        record(false);
        throw FetchError(FetchError::Kind::Oversize, url,
                         "body exceeds " + std::to_string(options_.max_bytes) + " bytes: " + url);
    }
    if (!result) {
        record(false);
        auto err = result.error();
        auto elapsed = steady::now() - entry.started;
        bool timed_out = err == httplib::Error::ConnectionTimeout ||
                         (err == httplib::Error::Read && elapsed >= options_.timeout);
        throw FetchError(timed_out ? FetchError::Kind::Timeout : FetchError::Kind::Connection, url,
                         "request failed (" + httplib::to_string(err) + "): " + url);
    }
    status = result->status;
    if (status < 200 || status >= 300) {
        record(false);
        throw FetchError(FetchError::Kind::HttpStatus, url,
                         "HTTP " + std::to_string(status) + " from " + url, status);
    }
    record(true);
    return body;
}

std::vector<FetchLogEntry> HttpFetcher::log() const {
    std::lock_guard lock(log_mu_);
    return log_;
}

// ---------------------------------------------------------------------------

FixtureProvider::FixtureProvider(std::string base_url, Fetcher& fetcher, int page_size)
    : base_url_(std::move(base_url)), fetcher_(fetcher), page_size_(page_size) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
    if (page_size_ < 1) throw ValidationError("page size must be positive");
}

ProviderPage FixtureProvider::search(const SearchLabel& label, const std::optional<std::string>& cursor) {
    std::string url = base_url_ + "/search?q=" + httplib::detail::encode_query_param(label.id) +
                      "&limit=" + std::to_string(page_size_);
    if (cursor) url += "&cursor=" + httplib::detail::encode_query_param(*cursor);
    Bytes body;
    try {
        body = fetcher_.fetch(url);
    } catch (const FetchError& e) {
        throw ProviderUnreachable(std::string("search provider unreachable: ") + e.what());
    }
    ProviderPage page;
    try {
        auto j = nlohmann::json::parse(body.begin(), body.end());
        for (const auto& r : j.at("results")) {
            page.results.push_back({r.at("url").get<std::string>(), r.at("rank").get<std::int64_t>()});
        }
        const auto& next = j.at("next_cursor");
        if (!next.is_null()) page.next_cursor = next.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ProviderUnreachable(std::string("malformed provider page: ") + e.what());
    }
    return page;
}

ProviderPage LiveProvider::search(const SearchLabel& label, const std::optional<std::string>&) {
    throw ProviderUnreachable("live image search is not configured (query '" + label.text + "')");
}

// ---------------------------------------------------------------------------

struct FixtureServer::Impl {
    fs::path dir;
    nlohmann::json ranking;
    httplib::Server server;
    std::thread thread;
    mutable std::mutex mu;
    std::vector<Arrival> arrivals;
};

FixtureServer::FixtureServer(fs::path dir, std::string bind_host)
    : impl_(std::make_unique<Impl>()), bind_host_(std::move(bind_host)) {
    impl_->dir = std::move(dir);
    impl_->ranking = nlohmann::json::parse(read_text(impl_->dir / "ranking.json"));
    Impl* impl = impl_.get();

    impl->server.set_pre_routing_handler([impl](const httplib::Request& req, httplib::Response&) {
        std::lock_guard lock(impl->mu);
        impl->arrivals.push_back({req.path, req.remote_addr, steady::now()});
        return httplib::Server::HandlerResponse::Unhandled;
    });

    impl->server.Get("/search", [impl](const httplib::Request& req, httplib::Response& res) {
        auto q = req.get_param_value("q");
        std::size_t offset = req.has_param("cursor") ? std::stoul(req.get_param_value("cursor")) : 0;
        std::size_t limit = req.has_param("limit") ? std::stoul(req.get_param_value("limit")) : 25;
        nlohmann::json names = impl->ranking.contains(q) ? impl->ranking.at(q) : nlohmann::json::array();
        std::string host = req.get_header_value("Host");
        nlohmann::json out{{"results", nlohmann::json::array()}, {"next_cursor", nullptr}};
        std::size_t end = std::min(names.size(), offset + limit);
        for (std::size_t i = offset; i < end; ++i) {
            out["results"].push_back({{"url", "http://" + host + "/files/" + names[i].get<std::string>()},
                                      {"rank", static_cast<std::int64_t>(i + 1)}});
        }
        if (end < names.size()) out["next_cursor"] = std::to_string(end);
        res.set_content(out.dump(), "application/json");
    });

    impl->server.Get(R"(/files/([A-Za-z0-9_.\-]+))", [impl](const httplib::Request& req, httplib::Response& res) {
        auto path = impl->dir / std::string(req.matches[1]);
        std::error_code ec;
        if (!fs::is_regular_file(path, ec)) {
            res.status = 404;
            return;
        }
        auto bytes = read_file(path);
        res.set_content(std::string(bytes.begin(), bytes.end()), "application/octet-stream");
    });

    port_ = impl->server.bind_to_any_port(bind_host_);
    if (port_ <= 0) throw Error("fixture server could not bind " + bind_host_);
    impl->thread = std::thread([impl] { impl->server.listen_after_bind(); });
    impl->server.wait_until_ready();
}

FixtureServer::~FixtureServer() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::string FixtureServer::base_url() const { return "http://" + bind_host_ + ":" + std::to_string(port_); }

std::vector<FixtureServer::Arrival> FixtureServer::arrivals() const {
    std::lock_guard lock(impl_->mu);
    return impl_->arrivals;
}

// ---------------------------------------------------------------------------

namespace {

void put_be32(Bytes& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(Bytes& out, const char type[4], const Bytes& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    Bytes typed(type, type + 4);
    typed.insert(typed.end(), data.begin(), data.end());
    out.insert(out.end(), typed.begin(), typed.end());
    put_be32(out, static_cast<std::uint32_t>(crc32(0L, typed.data(), static_cast<uInt>(typed.size()))));
}

}  // namespace

Bytes encode_png(std::uint32_t width, std::uint32_t height, std::uint64_t pixel_seed) {
    if (width == 0 || height == 0) throw ValidationError("png dimensions must be positive");
    std::mt19937_64 rng(pixel_seed);
    Bytes raw;
    raw.reserve(static_cast<std::size_t>(height) * (1 + width * 3));
    for (std::uint32_t y = 0; y < height; ++y) {
        raw.push_back(0);
        for (std::uint32_t x = 0; x < width * 3; ++x) raw.push_back(static_cast<std::uint8_t>(rng()));
    }
    uLongf cap = compressBound(static_cast<uLong>(raw.size()));
    Bytes compressed(cap);
    if (compress2(compressed.data(), &cap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw Error("zlib compression failed");
    }
    compressed.resize(cap);

    Bytes out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    Bytes ihdr;
    put_be32(ihdr, width);
    put_be32(ihdr, height);
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", compressed);
    put_chunk(out, "IEND", {});
    return out;
}

void make_fixture_corpus(const fs::path& dir, const std::vector<FixtureQuery>& queries, std::uint64_t seed) {
    fs::create_directories(dir);
    std::mt19937_64 rng(seed);
    nlohmann::json ranking = nlohmann::json::object();
    for (const auto& q : queries) {
        std::vector<std::string> order;
        for (int i = 0; i < q.unique_images; ++i) {
            auto name = q.label_id + "_" + std::to_string(i) + ".png";
            auto w = static_cast<std::uint32_t>(8 + uniform_below(rng, 57));
            auto h = static_cast<std::uint32_t>(8 + uniform_below(rng, 57));
            write_file(dir / name, encode_png(w, h, rng()));
            order.push_back(name);
        }
        for (int d = 0; d < q.duplicates && q.unique_images > 0; ++d) {
            auto src = static_cast<std::size_t>(uniform_below(rng, static_cast<std::uint64_t>(q.unique_images)));
            auto original = q.label_id + "_" + std::to_string(src) + ".png";
            auto name = q.label_id + "_dup" + std::to_string(d) + ".png";
            fs::copy_file(dir / original, dir / name, fs::copy_options::overwrite_existing);
            auto src_pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), original) - order.begin());
            auto pos = src_pos + 1 + uniform_below(rng, order.size() - src_pos);
            order.insert(order.begin() + static_cast<std::ptrdiff_t>(pos), name);
        }
        for (int m = 0; m < q.missing; ++m) {
            auto name = q.label_id + "_missing" + std::to_string(m) + ".png";
            auto pos = uniform_below(rng, order.size() + 1);
            order.insert(order.begin() + static_cast<std::ptrdiff_t>(pos), name);
        }
        ranking[q.label_id] = order;
    }
    write_text_atomic(dir / "ranking.json", ranking.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

ImageStore::ImageStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

fs::path ImageStore::put(std::span<const std::uint8_t> bytes, const std::string& content_hash, ImageFormat format) {
    auto path = dir_ / (content_hash + "." + std::string(extension_for(format)));
    std::error_code ec;
    if (!fs::exists(path, ec)) {
        auto tmp = path;
        tmp += ".part";
        write_file(tmp, bytes);
        fs::rename(tmp, path);
    }
    return path;
}

std::optional<fs::path> ImageStore::find(const std::string& content_hash) const {
    for (auto fmt : {ImageFormat::Png, ImageFormat::Jpeg, ImageFormat::Gif, ImageFormat::Bmp, ImageFormat::Webp}) {
        auto path = dir_ / (content_hash + "." + std::string(extension_for(fmt)));
        std::error_code ec;
        if (fs::is_regular_file(path, ec)) return path;
    }
    return std::nullopt;
}

Bytes ImageStore::read(const std::string& content_hash) const {
    auto p = find(content_hash);
    if (!p) throw NotFound("no stored image with hash " + content_hash);
    return read_file(*p);
}

std::vector<Candidate> dedup(std::vector<Candidate> candidates) {
    std::unordered_set<std::string> seen;
    std::vector<Candidate> out;
    out.reserve(candidates.size());
    for (auto& c : candidates) {
        if (seen.insert(sha256_hex(c.bytes)).second) out.push_back(std::move(c));
    }
    return out;
}

std::string image_id_for(const std::string& content_hash) { return "img-" + content_hash.substr(0, 16); }

Crawler::Crawler(Fetcher& fetcher, ImageStore& store) : fetcher_(fetcher), store_(store) {}

void Crawler::seed_known_hashes(const std::vector<std::string>& hashes) {
    known_.insert(hashes.begin(), hashes.end());
}

std::vector<ImageRecord> Crawler::crawl(const SearchLabel& label, SearchProvider& provider,
                                        const CrawlOptions& options) {
    if (options.max_count < 1) throw ValidationError("max_count must be at least 1");
    stats_ = {};
    std::vector<ImageRecord> kept;
    std::unordered_set<std::string> fetched_urls;
    std::optional<std::string> cursor;
    std::int64_t last_rank = 0;
    bool first = true;

    while (kept.size() < options.max_count && (first || cursor)) {
        first = false;
        ProviderPage page = provider.search(label, cursor);
        ++stats_.pages;
        cursor = page.next_cursor;

        std::vector<std::string> queue;
        for (const auto& r : page.results) {
            if (r.provider_rank <= last_rank) {
                throw ProviderUnreachable("provider ranks must increase (got " + std::to_string(r.provider_rank) +
                                          " after " + std::to_string(last_rank) + ")");
            }
            last_rank = r.provider_rank;
            if (fetched_urls.insert(r.source_url).second) queue.push_back(r.source_url);
        }
        if (page.results.empty()) break;

        std::size_t next = 0;
        while (next < queue.size() && kept.size() < options.max_count) {
            // Never download more than could still be kept.
            std::size_t batch = std::min(queue.size() - next, options.max_count - kept.size());
            std::vector<std::optional<Bytes>> bodies(batch);
            std::atomic<std::size_t> cursor_idx{0};
            auto worker = [&] {
                for (std::size_t i; (i = cursor_idx.fetch_add(1)) < batch;) {
                    const auto& url = queue[next + i];
                    try {
                        bodies[i] = fetcher_.fetch(url);
                    } catch (const FetchError& e) {
                        spdlog::warn("skipping {}: {}", url, e.what());
                    }
                }
            };
            {
                std::vector<std::jthread> pool;
                std::size_t threads = std::max<std::size_t>(1, std::min(options.concurrency, batch));
                for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
            }
            stats_.downloads += batch;

            for (std::size_t i = 0; i < batch; ++i) {
                const auto& url = queue[next + i];
                if (!bodies[i]) {
                    ++stats_.failed;
                    continue;
                }
                const Bytes& bytes = *bodies[i];
                auto info = probe_image(bytes);
                if (!info) {
                    spdlog::warn("discarding undecodable image {}", url);
                    ++stats_.undecodable;
                    continue;
                }
                auto hash = sha256_hex(bytes);
                if (!known_.insert(hash).second) {
                    ++stats_.duplicates;
                    continue;
                }
                store_.put(bytes, hash, info->format);
                ImageRecord rec;
                rec.image_id = image_id_for(hash);
                rec.label_id = label.id;
                rec.source_url = url;
                rec.rank = static_cast<std::int64_t>(kept.size()) + 1;
                rec.content_hash = hash;
                rec.width_px = info->width;
                rec.height_px = info->height;
                kept.push_back(std::move(rec));
                if (kept.size() == options.max_count) break;
            }
            next += batch;
        }
    }
    return kept;
}

// ---------------------------------------------------------------------------

std::string manifest_line(const ImageRecord& r) {
    nlohmann::ordered_json j;
    j["image_id"] = r.image_id;
    j["label_id"] = r.label_id;
    j["source_url"] = r.source_url;
    j["rank"] = r.rank;
    j["content_hash"] = r.content_hash;
    j["width_px"] = r.width_px;
    j["height_px"] = r.height_px;
    j["status"] = to_string(r.status);
    j["foodness"] = r.foodness ? nlohmann::ordered_json(*r.foodness) : nlohmann::ordered_json(nullptr);
    j["noisy_reason"] =
        r.noisy_reason ? nlohmann::ordered_json(to_string(*r.noisy_reason)) : nlohmann::ordered_json(nullptr);
    return j.dump();
}

void write_manifest(const fs::path& path, const std::vector<ImageRecord>& records) {
    std::string text;
    for (const auto& r : records) {
        text += manifest_line(r);
        text += '\n';
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text_atomic(path, text);
}

std::vector<ImageRecord> read_manifest(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::vector<ImageRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(nlohmann::json::parse(line).get<ImageRecord>());
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        validate_record(out.back());
    }
    return out;
}

}  // namespace foodcrowd::crawler
