#pragma once

#include "foodcrowd/types.hpp"
#include "foodcrowd/util.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

// System of record for the annotation workflow. Every mutation is an event in
// an append-only JSON Lines log; state is the fold of the log, optionally
// resumed from a snapshot.
namespace foodcrowd::annostore {

enum class EventKind {
    ImageAdded,
    Scored,
    AutoRejected,
    ReviewQueued,
    Leased,
    Verdict,
    BoxCreated,
    BoxDeleted,
    AnnotationDone,
};

std::string_view to_string(EventKind k);
EventKind parse_event_kind(std::string_view s);

struct Event {
    std::uint64_t seq = 0;
    TimePoint at{};
    EventKind kind = EventKind::ImageAdded;
    nlohmann::json payload;

    friend bool operator==(const Event&, const Event&) = default;
};

std::string event_line(const Event& e);
Event parse_event_line(std::string_view line);

enum class Decision { Keep, Noisy };
std::string_view to_string(Decision d);
Decision parse_decision(std::string_view s);

struct BoxAnnotation {
    std::string box_id;
    std::string image_id;
    NormBox box;
    std::string label_id;
    std::string worker_id;
    TimePoint created_at{};
    bool deleted = false;

    friend bool operator==(const BoxAnnotation&, const BoxAnnotation&) = default;
};

struct Verdict {
    std::string image_id;
    Decision decision = Decision::Keep;
    std::optional<NoisyReason> noisy_reason;
    std::string worker_id;
    std::int64_t elapsed_ms = 0;
    TimePoint at{};

    friend bool operator==(const Verdict&, const Verdict&) = default;
};

struct TaskLease {
    std::string image_id;
    std::string worker_id;
    TimePoint issued_at{};
    TimePoint expires_at{};

    // A lease is live through expires_at inclusive.
    bool live_at(TimePoint now) const noexcept { return now <= expires_at; }
    friend bool operator==(const TaskLease&, const TaskLease&) = default;
};

struct State {
    std::uint64_t last_seq = 0;
    std::map<std::string, ImageRecord> images;
    std::map<std::string, std::string> image_by_hash;
    std::map<std::string, BoxAnnotation> boxes;  // includes tombstoned boxes
    std::map<std::string, TaskLease> leases;     // most recent lease per image, possibly expired
    std::vector<Verdict> verdicts;

    const TaskLease* live_lease(const std::string& image_id, TimePoint now) const;
    std::vector<BoxAnnotation> live_boxes(const std::string& image_id) const;

    friend bool operator==(const State&, const State&) = default;
};

nlohmann::json state_to_json(const State& s);
State state_from_json(const nlohmann::json& j);

// Validates an event against the lifecycle graph and applies it. On any error
// the state is left untouched:
//   IMAGE_ADDED    new image, status FETCHED | SCORED | AUTO_REJECTED | PENDING_REVIEW
//   SCORED         FETCHED -> SCORED
//   AUTO_REJECTED  SCORED -> AUTO_REJECTED   (foodness < threshold)
//   REVIEW_QUEUED  SCORED -> PENDING_REVIEW  (foodness >= threshold)
//   LEASED         PENDING_REVIEW | CONFIRMED with no other live lease
//   VERDICT        PENDING_REVIEW -> CONFIRMED | NOISY_REJECTED, leaseholder only
//   BOX_CREATED    CONFIRMED | ANNOTATED, leaseholder only, label in food list
//   BOX_DELETED    live box, leaseholder only
//   ANNOTATION_DONE CONFIRMED -> ANNOTATED, leaseholder only
// Throws DuplicateSeq, IllegalTransition, NotFound, LeaseConflict or
// ValidationError.
class StateMachine {
public:
    explicit StateMachine(std::vector<SearchLabel> food_list, State initial = {});

    void apply(const Event& e);
    // Validates e and returns the mutation that applies it. The closure must
    // run before any other call on this machine.
    std::function<void()> prepare(const Event& e);
    const State& state() const noexcept { return state_; }
    const std::vector<SearchLabel>& food_list() const noexcept { return food_list_; }
    bool has_label(const std::string& id) const;

private:
    std::vector<SearchLabel> food_list_;
    State state_;
};

State replay(std::span<const Event> events, const std::vector<SearchLabel>& food_list, State initial = {});

// ---------------------------------------------------------------------------

struct LabelStats {
    std::string label_id;
    std::string label_text;
    std::uint64_t food_image_count = 0;
    std::uint64_t bounding_box_count = 0;

    friend bool operator==(const LabelStats&, const LabelStats&) = default;
};

struct Stats {
    std::vector<LabelStats> rows;  // descending image count, then food-list order
    std::uint64_t total_images = 0;
    std::uint64_t total_boxes = 0;
    std::uint64_t verdicts = 0;
    std::uint64_t noisy_verdicts = 0;
    double mean_noisy_elapsed_ms = 0;

    friend bool operator==(const Stats&, const Stats&) = default;
};

// Images uploaded for review (PENDING_REVIEW, NOISY_REJECTED, CONFIRMED,
// ANNOTATED) per crawl label, and live boxes per box label.
Stats compute_stats(const State& state, const std::vector<SearchLabel>& food_list);

// "Food Label, Food Image Count, Bounding Box Count" header, one row per label,
// then a Total row.
std::string format_stats_table(const Stats& stats);
nlohmann::ordered_json stats_to_json(const Stats& stats);

// ---------------------------------------------------------------------------

struct StoreOptions {
    std::filesystem::path dir;
    std::vector<SearchLabel> food_list;
    std::chrono::milliseconds lease_ttl = std::chrono::minutes(10);
    std::uint64_t snapshot_every = 1000;  // 0 disables automatic snapshots
    std::function<TimePoint()> clock = now_ms;
};

// Thread-safe facade: callers may be concurrent, mutations are linearised
// under one writer lock, and each event is flushed to the log before the
// state changes and the call returns.
class Store {
public:
    explicit Store(StoreOptions options);
    ~Store();
    Store(const Store&) = delete;
    Store& operator=(const Store&) = delete;

    // Adds records not yet known (by image_id); returns how many were added.
    std::size_t ingest(const std::vector<ImageRecord>& records);
    void score(const std::string& image_id, double foodness);
    // Emits REVIEW_QUEUED or AUTO_REJECTED for a SCORED image.
    ImageStatus apply_threshold(const std::string& image_id, double threshold);

    // The worker's own live lease if it has one, else a new lease on the
    // lowest-ranked PENDING_REVIEW or CONFIRMED image without a live lease.
    std::optional<TaskLease> lease(const std::string& worker_id);
    // Leases one specific image. Throws LeaseConflict when another worker
    // holds it, IllegalTransition when it is not leasable.
    TaskLease lease_image(const std::string& image_id, const std::string& worker_id);

    void verdict(const std::string& image_id, const std::string& worker_id, Decision decision,
                 std::optional<NoisyReason> reason, std::int64_t elapsed_ms);
    BoxAnnotation create_box(const std::string& image_id, const std::string& worker_id, const NormBox& box,
                             std::optional<std::string> label_id);
    void delete_box(const std::string& box_id, const std::string& worker_id);
    void done(const std::string& image_id, const std::string& worker_id);

    void write_snapshot();

    State state() const;
    std::optional<ImageRecord> image(const std::string& image_id) const;
    std::optional<BoxAnnotation> box(const std::string& box_id) const;
    std::vector<BoxAnnotation> live_boxes(const std::string& image_id) const;
    std::optional<TaskLease> live_lease(const std::string& image_id) const;
    Stats stats() const;
    std::vector<Event> events() const;

    const std::vector<SearchLabel>& food_list() const noexcept { return options_.food_list; }
    TimePoint now() const { return options_.clock(); }
    std::chrono::milliseconds lease_ttl() const noexcept { return options_.lease_ttl; }

    std::filesystem::path log_path() const { return options_.dir / "events.jsonl"; }

private:
    void commit(EventKind kind, nlohmann::json payload, TimePoint at);

    StoreOptions options_;
    mutable std::shared_mutex mu_;
    StateMachine machine_;
    std::vector<Event> log_;
    std::ofstream out_;
};

std::filesystem::path snapshot_path(const std::filesystem::path& dir, std::uint64_t seq);
std::vector<Event> read_event_log(const std::filesystem::path& path);

}  // namespace foodcrowd::annostore
