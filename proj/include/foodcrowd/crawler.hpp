#pragma once

#include "foodcrowd/types.hpp"
#include "foodcrowd/util.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

namespace foodcrowd::crawler {

// ---------------------------------------------------------------------------
// Politeness

// Per-host token bucket of capacity one. A request to a host waits for the
// host's token; the token refills `1 / rate` seconds after the holding request
// finishes, so consecutive completed requests to one host are at least one
// interval apart. Different hosts never block each other.
class HostRateLimiter {
    struct Slot {
        std::mutex busy;
        std::chrono::steady_clock::time_point next_allowed{};
    };

public:
    explicit HostRateLimiter(double requests_per_second);

    class Permit {
    public:
        Permit(Permit&& other) noexcept;
        Permit& operator=(Permit&&) = delete;
        Permit(const Permit&) = delete;
        ~Permit();

    private:
        friend class HostRateLimiter;
        Permit(const HostRateLimiter* owner, Slot* slot);
        const HostRateLimiter* owner_;
        Slot* slot_;
    };

    // Blocks until `host` may be contacted. Holding the permit serializes
    // other requests to the same host; dropping it starts the refill.
    Permit acquire(const std::string& host);

    std::chrono::nanoseconds interval() const noexcept { return interval_; }

private:
    Slot& slot_for(const std::string& host);

    std::chrono::nanoseconds interval_;
    std::mutex map_mu_;
    std::map<std::string, std::unique_ptr<Slot>> slots_;
};

struct ParsedUrl {
    std::string scheme;
    std::string host;
    int port = 0;
    std::string path_and_query;

    std::string origin() const;  // scheme://host:port
    std::string host_key() const;  // host:port, the limiter scope
};

// Throws FetchError(BadUrl) unless the url is http(s)://host[:port][/...].
ParsedUrl parse_url(const std::string& url);

struct FetchLogEntry {
    std::string url;
    std::string host;
    std::chrono::steady_clock::time_point started;
    std::chrono::steady_clock::time_point finished;
    bool ok = false;
};

class Fetcher {
public:
    virtual ~Fetcher() = default;
    virtual Bytes fetch(const std::string& url) = 0;
};

struct FetchOptions {
    std::chrono::milliseconds timeout{10000};
    std::size_t max_bytes = 20u * 1024u * 1024u;
    std::string user_agent = "foodcrowd-crawler/1.0";
};

// HTTP GET through a shared HostRateLimiter. Thread-safe.
class HttpFetcher final : public Fetcher {
public:
    HttpFetcher(std::shared_ptr<HostRateLimiter> limiter, FetchOptions options = {});

    // Returns the response body verbatim. Throws FetchError on a malformed
    // url, connection failure, timeout, non-2xx status or a body over the cap.
    Bytes fetch(const std::string& url) override;

    std::vector<FetchLogEntry> log() const;

private:
    std::shared_ptr<HostRateLimiter> limiter_;
    FetchOptions options_;
    mutable std::mutex log_mu_;
    std::vector<FetchLogEntry> log_;
};

// ---------------------------------------------------------------------------
// Search providers

struct ProviderResult {
    std::string source_url;
    std::int64_t provider_rank = 0;
};

struct ProviderPage {
    std::vector<ProviderResult> results;
    std::optional<std::string> next_cursor;
};

class SearchProvider {
public:
    virtual ~SearchProvider() = default;
    // Throws ProviderUnreachable when the provider cannot be queried.
    virtual ProviderPage search(const SearchLabel& label, const std::optional<std::string>& cursor) = 0;
};

// Queries a fixture server's /search endpoint through the given fetcher, so
// pagination requests count against the same politeness budget as downloads.
class FixtureProvider final : public SearchProvider {
public:
    FixtureProvider(std::string base_url, Fetcher& fetcher, int page_size = 25);
    ProviderPage search(const SearchLabel& label, const std::optional<std::string>& cursor) override;

private:
    std::string base_url_;
    Fetcher& fetcher_;
    int page_size_;
};

// Placeholder for a live image-search adapter. Scraping a commercial search
// site is not shipped; every query reports the provider as unreachable.
class LiveProvider final : public SearchProvider {
public:
    ProviderPage search(const SearchLabel& label, const std::optional<std::string>& cursor) override;
};

// Serves a fixture directory over local HTTP:
//   GET /search?q=<label_id>&cursor=<offset>&limit=<n>  ranked results page
//   GET /files/<name>                                   raw file bytes
// The ranking comes from `ranking.json` in the directory: an object mapping
// label ids to ordered file-name lists.
class FixtureServer {
public:
    explicit FixtureServer(std::filesystem::path dir, std::string bind_host = "127.0.0.1");
    ~FixtureServer();
    FixtureServer(const FixtureServer&) = delete;
    FixtureServer& operator=(const FixtureServer&) = delete;

    int port() const noexcept { return port_; }
    std::string base_url() const;

    struct Arrival {
        std::string path;
        std::string remote_addr;
        std::chrono::steady_clock::time_point at;
    };
    std::vector<Arrival> arrivals() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
    std::string bind_host_;
};

struct FixtureQuery {
    std::string label_id;
    int unique_images = 0;
    int duplicates = 0;  // extra byte-identical copies of earlier images
    int missing = 0;     // ranked names with no file behind them (404s)
};

// Writes a deterministic corpus of small PNGs plus ranking.json into `dir`.
// Duplicates are placed after their originals at seeded positions.
void make_fixture_corpus(const std::filesystem::path& dir, const std::vector<FixtureQuery>& queries,
                         std::uint64_t seed);

// Minimal valid RGB PNG, used by the fixture generator and by tests.
Bytes encode_png(std::uint32_t width, std::uint32_t height, std::uint64_t pixel_seed);

// ---------------------------------------------------------------------------
// Storage, dedup, crawl

// Content-addressed files named `<content_hash>.<ext>`.
class ImageStore {
public:
    explicit ImageStore(std::filesystem::path dir);

    std::filesystem::path put(std::span<const std::uint8_t> bytes, const std::string& content_hash,
                              ImageFormat format);
    std::optional<std::filesystem::path> find(const std::string& content_hash) const;
    Bytes read(const std::string& content_hash) const;
    const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    std::filesystem::path dir_;
};

struct Candidate {
    std::string url;
    Bytes bytes;
};

// Stable filter keeping the first occurrence of each content hash.
std::vector<Candidate> dedup(std::vector<Candidate> candidates);

struct CrawlOptions {
    std::size_t max_count = 100;
    std::size_t concurrency = 4;
};

struct CrawlStats {
    std::size_t downloads = 0;
    std::size_t failed = 0;
    std::size_t undecodable = 0;
    std::size_t duplicates = 0;
    std::size_t pages = 0;
};

class Crawler {
public:
    Crawler(Fetcher& fetcher, ImageStore& store);

    // Hashes already present in the corpus; later crawls skip them so hashes
    // stay unique across labels.
    void seed_known_hashes(const std::vector<std::string>& hashes);

    // Returns up to max_count FETCHED records ranked 1..n in provider order
    // after dedup. Per-image download or decode failures are logged and
    // skipped; ProviderUnreachable propagates.
    std::vector<ImageRecord> crawl(const SearchLabel& label, SearchProvider& provider,
                                   const CrawlOptions& options);

    const CrawlStats& last_stats() const noexcept { return stats_; }

private:
    Fetcher& fetcher_;
    ImageStore& store_;
    std::unordered_set<std::string> known_;
    CrawlStats stats_;
};

std::string image_id_for(const std::string& content_hash);

// ---------------------------------------------------------------------------
// Manifest: JSON Lines, one ImageRecord per line.

std::string manifest_line(const ImageRecord& r);
void write_manifest(const std::filesystem::path& path, const std::vector<ImageRecord>& records);
std::vector<ImageRecord> read_manifest(const std::filesystem::path& path);

}  // namespace foodcrowd::crawler
