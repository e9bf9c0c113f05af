#include "foodcrowd/annostore.hpp"

#include "foodcrowd/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <mutex>
#include <sstream>

namespace foodcrowd::annostore {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(EventKind k) {
    switch (k) {
        case EventKind::ImageAdded: return "IMAGE_ADDED";
        case EventKind::Scored: return "SCORED";
        case EventKind::AutoRejected: return "AUTO_REJECTED";
        case EventKind::ReviewQueued: return "REVIEW_QUEUED";
        case EventKind::Leased: return "LEASED";
        case EventKind::Verdict: return "VERDICT";
        case EventKind::BoxCreated: return "BOX_CREATED";
        case EventKind::BoxDeleted: return "BOX_DELETED";
        case EventKind::AnnotationDone: return "ANNOTATION_DONE";
    }
    return "?";
}

EventKind parse_event_kind(std::string_view s) {
    for (auto k : {EventKind::ImageAdded, EventKind::Scored, EventKind::AutoRejected, EventKind::ReviewQueued,
                   EventKind::Leased, EventKind::Verdict, EventKind::BoxCreated, EventKind::BoxDeleted,
                   EventKind::AnnotationDone}) {
        if (to_string(k) == s) return k;
    }
    throw ValidationError("unknown event kind '" + std::string(s) + "'");
}

std::string_view to_string(Decision d) { return d == Decision::Keep ? "KEEP" : "NOISY"; }

Decision parse_decision(std::string_view s) {
    if (s == "KEEP") return Decision::Keep;
    if (s == "NOISY") return Decision::Noisy;
    throw ValidationError("unknown decision '" + std::string(s) + "'");
}

std::string event_line(const Event& e) {
    nlohmann::ordered_json j;
    j["seq"] = e.seq;
    j["at"] = format_rfc3339(e.at);
    j["kind"] = to_string(e.kind);
    j["payload"] = e.payload;
    return j.dump();
}

Event parse_event_line(std::string_view line) {
    try {
        auto j = json::parse(line);
        Event e;
        e.seq = j.at("seq").get<std::uint64_t>();
        e.at = parse_rfc3339(j.at("at").get<std::string>());
        e.kind = parse_event_kind(j.at("kind").get<std::string>());
        e.payload = j.at("payload");
        return e;
    } catch (const json::exception& ex) {
        throw ValidationError(std::string("malformed event: ") + ex.what());
    }
}

// ---------------------------------------------------------------------------

const TaskLease* State::live_lease(const std::string& image_id, TimePoint now) const {
    auto it = leases.find(image_id);
    if (it == leases.end() || !it->second.live_at(now)) return nullptr;
    return &it->second;
}

std::vector<BoxAnnotation> State::live_boxes(const std::string& image_id) const {
    std::vector<BoxAnnotation> out;
    for (const auto& [id, b] : boxes) {
        if (b.image_id == image_id && !b.deleted) out.push_back(b);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.created_at < b.created_at ||
                                                                               (a.created_at == b.created_at &&
                                                                                a.box_id < b.box_id); });
    return out;
}

namespace {

json box_json(const NormBox& b) { return {{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}}; }

NormBox box_from(const json& j) {
    return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(), j.at("h").get<double>()};
}

json annotation_json(const BoxAnnotation& b) {
    return {{"box_id", b.box_id},       {"image_id", b.image_id},   {"box", box_json(b.box)},
            {"label_id", b.label_id},   {"worker_id", b.worker_id}, {"created_at", format_rfc3339(b.created_at)},
            {"deleted", b.deleted}};
}

BoxAnnotation annotation_from(const json& j) {
    BoxAnnotation b;
    b.box_id = j.at("box_id").get<std::string>();
    b.image_id = j.at("image_id").get<std::string>();
    b.box = box_from(j.at("box"));
    b.label_id = j.at("label_id").get<std::string>();
    b.worker_id = j.at("worker_id").get<std::string>();
    b.created_at = parse_rfc3339(j.at("created_at").get<std::string>());
    b.deleted = j.value("deleted", false);
    return b;
}

json lease_json(const TaskLease& l) {
    return {{"image_id", l.image_id},
            {"worker_id", l.worker_id},
            {"issued_at", format_rfc3339(l.issued_at)},
            {"expires_at", format_rfc3339(l.expires_at)}};
}

TaskLease lease_from(const json& j) {
    return {j.at("image_id").get<std::string>(), j.at("worker_id").get<std::string>(),
            parse_rfc3339(j.at("issued_at").get<std::string>()), parse_rfc3339(j.at("expires_at").get<std::string>())};
}

json verdict_json(const Verdict& v) {
    return {{"image_id", v.image_id},
            {"decision", to_string(v.decision)},
            {"noisy_reason", v.noisy_reason ? json(to_string(*v.noisy_reason)) : json(nullptr)},
            {"worker_id", v.worker_id},
            {"elapsed_ms", v.elapsed_ms},
            {"at", format_rfc3339(v.at)}};
}

Verdict verdict_from(const json& j) {
    Verdict v;
    v.image_id = j.at("image_id").get<std::string>();
    v.decision = parse_decision(j.at("decision").get<std::string>());
    if (j.contains("noisy_reason") && !j.at("noisy_reason").is_null()) {
        v.noisy_reason = parse_noisy_reason(j.at("noisy_reason").get<std::string>());
    }
    v.worker_id = j.at("worker_id").get<std::string>();
    v.elapsed_ms = j.at("elapsed_ms").get<std::int64_t>();
    if (j.contains("at")) v.at = parse_rfc3339(j.at("at").get<std::string>());
    return v;
}

}  // namespace

json state_to_json(const State& s) {
    json j;
    j["last_seq"] = s.last_seq;
    j["images"] = json::array();
    for (const auto& [id, r] : s.images) j["images"].push_back(r);
    j["boxes"] = json::array();
    for (const auto& [id, b] : s.boxes) j["boxes"].push_back(annotation_json(b));
    j["leases"] = json::array();
    for (const auto& [id, l] : s.leases) j["leases"].push_back(lease_json(l));
    j["verdicts"] = json::array();
    for (const auto& v : s.verdicts) j["verdicts"].push_back(verdict_json(v));
    return j;
}

State state_from_json(const json& j) {
    State s;
    try {
        s.last_seq = j.at("last_seq").get<std::uint64_t>();
        for (const auto& r : j.at("images")) {
            auto rec = r.get<ImageRecord>();
            s.image_by_hash[rec.content_hash] = rec.image_id;
            s.images.emplace(rec.image_id, std::move(rec));
        }
        for (const auto& b : j.at("boxes")) {
            auto box = annotation_from(b);
            s.boxes.emplace(box.box_id, std::move(box));
        }
        for (const auto& l : j.at("leases")) {
            auto lease = lease_from(l);
            s.leases.emplace(lease.image_id, std::move(lease));
        }
        for (const auto& v : j.at("verdicts")) s.verdicts.push_back(verdict_from(v));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed snapshot: ") + e.what());
    }
    return s;
}

// ---------------------------------------------------------------------------

StateMachine::StateMachine(std::vector<SearchLabel> food_list, State initial)
    : food_list_(std::move(food_list)), state_(std::move(initial)) {
    validate_labels(food_list_);
}

bool StateMachine::has_label(const std::string& id) const {
    return std::any_of(food_list_.begin(), food_list_.end(), [&](const auto& l) { return l.id == id; });
}

namespace {

std::string str_field(const json& p, const char* key) {
    if (!p.contains(key) || !p.at(key).is_string()) {
        throw ValidationError(std::string("event payload is missing string field '") + key + "'");
    }
    return p.at(key).get<std::string>();
}

double num_field(const json& p, const char* key) {
    if (!p.contains(key) || !p.at(key).is_number()) {
        throw ValidationError(std::string("event payload is missing numeric field '") + key + "'");
    }
    return p.at(key).get<double>();
}

IllegalTransition illegal(EventKind kind, ImageStatus status, const std::string& image_id) {
    return IllegalTransition(std::string(to_string(kind)) + " is not allowed for image " + image_id + " in status " +
                             std::string(to_string(status)));
}

}  // namespace

void StateMachine::apply(const Event& e) { prepare(e)(); }

std::function<void()> StateMachine::prepare(const Event& e) {
    if (e.seq != state_.last_seq + 1) {
        throw DuplicateSeq("event seq " + std::to_string(e.seq) + " does not follow " +
                           std::to_string(state_.last_seq));
    }
    const json& p = e.payload;
    const std::uint64_t seq = e.seq;

    auto image_for = [&](const std::string& id) -> ImageRecord& {
        auto it = state_.images.find(id);
        if (it == state_.images.end()) throw NotFound("unknown image " + id);
        return it->second;
    };
    auto require_leaseholder = [&](const std::string& image_id, const std::string& worker) {
        const TaskLease* l = state_.live_lease(image_id, e.at);
        if (!l || l->worker_id != worker) {
            throw LeaseConflict("worker '" + worker + "' does not hold the lease on image " + image_id);
        }
    };

    switch (e.kind) {
        case EventKind::ImageAdded: {
            ImageRecord rec;
            try {
                rec = p.at("record").get<ImageRecord>();
            } catch (const json::exception& ex) {
                throw ValidationError(std::string("malformed IMAGE_ADDED record: ") + ex.what());
            }
            validate_record(rec);
            if (state_.images.count(rec.image_id)) throw ValidationError("image " + rec.image_id + " already exists");
            if (state_.image_by_hash.count(rec.content_hash)) {
                throw ValidationError("content hash of " + rec.image_id + " duplicates image " +
                                      state_.image_by_hash.at(rec.content_hash));
            }
            if (rec.status != ImageStatus::Fetched && rec.status != ImageStatus::Scored &&
                rec.status != ImageStatus::AutoRejected && rec.status != ImageStatus::PendingReview) {
                throw illegal(e.kind, rec.status, rec.image_id);
            }
            if (!has_label(rec.label_id)) {
                throw ValidationError("image label '" + rec.label_id + "' is not in the food list");
            }
            return [this, seq, rec = std::move(rec)]() mutable {
                state_.image_by_hash[rec.content_hash] = rec.image_id;
                state_.images.emplace(rec.image_id, std::move(rec));
                state_.last_seq = seq;
            };
        }
        case EventKind::Scored: {
            auto& img = image_for(str_field(p, "image_id"));
            double f = num_field(p, "foodness");
            if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("foodness outside [0,1]");
            if (img.status != ImageStatus::Fetched) throw illegal(e.kind, img.status, img.image_id);
            return [this, seq, &img, f] {
                img.foodness = f;
                img.status = ImageStatus::Scored;
                state_.last_seq = seq;
            };
        }
        case EventKind::AutoRejected:
        case EventKind::ReviewQueued: {
            auto& img = image_for(str_field(p, "image_id"));
            double t = num_field(p, "threshold");
            if (img.status != ImageStatus::Scored) throw illegal(e.kind, img.status, img.image_id);
            bool kept = *img.foodness >= t;
            if (kept != (e.kind == EventKind::ReviewQueued)) {
                throw ValidationError(std::string(to_string(e.kind)) + " contradicts foodness " +
                                      std::to_string(*img.foodness) + " at threshold " + std::to_string(t));
            }
            return [this, seq, &img, kept] {
                img.status = kept ? ImageStatus::PendingReview : ImageStatus::AutoRejected;
                state_.last_seq = seq;
            };
        }
        case EventKind::Leased: {
            TaskLease lease;
            try {
                lease = lease_from(p);
            } catch (const json::exception& ex) {
                throw ValidationError(std::string("malformed lease: ") + ex.what());
            }
            auto& img = image_for(lease.image_id);
            if (img.status != ImageStatus::PendingReview && img.status != ImageStatus::Confirmed) {
                throw illegal(e.kind, img.status, img.image_id);
            }
            if (lease.worker_id.empty()) throw ValidationError("lease needs a worker id");
            if (lease.issued_at != e.at || lease.expires_at <= lease.issued_at) {
                throw ValidationError("lease must be issued at the event time and expire after it");
            }
            if (const TaskLease* cur = state_.live_lease(lease.image_id, e.at);
                cur && cur->worker_id != lease.worker_id) {
                throw LeaseConflict("image " + lease.image_id + " is leased to '" + cur->worker_id + "'");
            }
            return [this, seq, lease = std::move(lease)]() mutable {
                auto id = lease.image_id;
                state_.leases[id] = std::move(lease);
                state_.last_seq = seq;
            };
        }
        case EventKind::Verdict: {
            Verdict v;
            try {
                v = verdict_from(p);
            } catch (const json::exception& ex) {
                throw ValidationError(std::string("malformed verdict: ") + ex.what());
            }
            v.at = e.at;
            auto& img = image_for(v.image_id);
            if ((v.decision == Decision::Noisy) != v.noisy_reason.has_value()) {
                throw ValidationError("noisy_reason is required for NOISY and forbidden for KEEP");
            }
            if (v.elapsed_ms < 0) throw ValidationError("elapsed_ms must be non-negative");
            require_leaseholder(v.image_id, v.worker_id);
            if (img.status != ImageStatus::PendingReview) throw illegal(e.kind, img.status, img.image_id);
            return [this, seq, &img, v = std::move(v)]() mutable {
                if (v.decision == Decision::Keep) {
                    img.status = ImageStatus::Confirmed;
                } else {
                    img.status = ImageStatus::NoisyRejected;
                    img.noisy_reason = v.noisy_reason;
                    state_.leases.erase(v.image_id);
                }
                state_.verdicts.push_back(std::move(v));
                state_.last_seq = seq;
            };
        }
        case EventKind::BoxCreated: {
            BoxAnnotation b;
            try {
                b = annotation_from(p.at("box"));
            } catch (const json::exception& ex) {
                throw ValidationError(std::string("malformed box: ") + ex.what());
            }
            auto& img = image_for(b.image_id);
            if (!valid_geometry(b.box)) throw ValidationError("box geometry outside the unit square or degenerate");
            if (!has_label(b.label_id)) throw ValidationError("label '" + b.label_id + "' is not in the food list");
            if (b.deleted || state_.boxes.count(b.box_id)) throw ValidationError("box id " + b.box_id + " reused");
            require_leaseholder(b.image_id, b.worker_id);
            if (img.status != ImageStatus::Confirmed && img.status != ImageStatus::Annotated) {
                throw illegal(e.kind, img.status, img.image_id);
            }
            return [this, seq, b = std::move(b)]() mutable {
                auto id = b.box_id;
                state_.boxes.emplace(id, std::move(b));
                state_.last_seq = seq;
            };
        }
        case EventKind::BoxDeleted: {
            auto box_id = str_field(p, "box_id");
            auto worker = str_field(p, "worker_id");
            auto it = state_.boxes.find(box_id);
            if (it == state_.boxes.end() || it->second.deleted) throw NotFound("unknown box " + box_id);
            auto& img = image_for(it->second.image_id);
            require_leaseholder(img.image_id, worker);
            if (img.status != ImageStatus::Confirmed && img.status != ImageStatus::Annotated) {
                throw illegal(e.kind, img.status, img.image_id);
            }
            return [this, seq, &box = it->second] {
                box.deleted = true;
                state_.last_seq = seq;
            };
        }
        case EventKind::AnnotationDone: {
            auto& img = image_for(str_field(p, "image_id"));
            auto worker = str_field(p, "worker_id");
            require_leaseholder(img.image_id, worker);
            if (img.status != ImageStatus::Confirmed) throw illegal(e.kind, img.status, img.image_id);
            return [this, seq, &img] {
                img.status = ImageStatus::Annotated;
                state_.leases.erase(img.image_id);
                state_.last_seq = seq;
            };
        }
    }
    throw ValidationError("unhandled event kind");
}

State replay(std::span<const Event> events, const std::vector<SearchLabel>& food_list, State initial) {
    StateMachine m(food_list, std::move(initial));
    for (const auto& e : events) {
        if (e.seq <= m.state().last_seq) continue;
        m.apply(e);
    }
    return m.state();
}

// ---------------------------------------------------------------------------

Stats compute_stats(const State& state, const std::vector<SearchLabel>& food_list) {
    std::map<std::string, LabelStats> by_label;
    std::vector<std::string> order;
    for (const auto& l : food_list) {
        by_label[l.id] = {l.id, l.text, 0, 0};
        order.push_back(l.id);
    }
    auto row = [&](const std::string& id) -> LabelStats& {
        auto it = by_label.find(id);
        if (it == by_label.end()) {
            order.push_back(id);
            it = by_label.emplace(id, LabelStats{id, id, 0, 0}).first;
        }
        return it->second;
    };
    Stats s;
    for (const auto& [id, img] : state.images) {
        switch (img.status) {
            case ImageStatus::PendingReview:
            case ImageStatus::NoisyRejected:
            case ImageStatus::Confirmed:
            case ImageStatus::Annotated:
                ++row(img.label_id).food_image_count;
                ++s.total_images;
                break;
            default: break;
        }
    }
    for (const auto& [id, b] : state.boxes) {
        if (b.deleted) continue;
        ++row(b.label_id).bounding_box_count;
        ++s.total_boxes;
    }
    for (std::size_t i = 0; i < order.size(); ++i) s.rows.push_back(by_label.at(order[i]));
    std::stable_sort(s.rows.begin(), s.rows.end(),
                     [](const auto& a, const auto& b) { return a.food_image_count > b.food_image_count; });

    double noisy_ms = 0;
    for (const auto& v : state.verdicts) {
        ++s.verdicts;
        if (v.decision == Decision::Noisy) {
            ++s.noisy_verdicts;
            noisy_ms += static_cast<double>(v.elapsed_ms);
        }
    }
    if (s.noisy_verdicts) s.mean_noisy_elapsed_ms = noisy_ms / static_cast<double>(s.noisy_verdicts);
    return s;
}

std::string format_stats_table(const Stats& stats) {
    std::string out = "Food Label, Food Image Count, Bounding Box Count\n";
    for (const auto& r : stats.rows) {
        out += r.label_text + ", " + std::to_string(r.food_image_count) + ", " +
               std::to_string(r.bounding_box_count) + "\n";
    }
    out += "Total, " + std::to_string(stats.total_images) + ", " + std::to_string(stats.total_boxes) + "\n";
    return out;
}

nlohmann::ordered_json stats_to_json(const Stats& stats) {
    nlohmann::ordered_json j;
    j["labels"] = nlohmann::ordered_json::array();
    for (const auto& r : stats.rows) {
        j["labels"].push_back({{"label_id", r.label_id},
                               {"label", r.label_text},
                               {"food_image_count", r.food_image_count},
                               {"bounding_box_count", r.bounding_box_count}});
    }
    j["totals"] = {{"food_image_count", stats.total_images}, {"bounding_box_count", stats.total_boxes}};
    j["review"] = {{"verdicts", stats.verdicts},
                   {"noisy_verdicts", stats.noisy_verdicts},
                   {"mean_noisy_elapsed_ms", stats.mean_noisy_elapsed_ms}};
    return j;
}

// ---------------------------------------------------------------------------

fs::path snapshot_path(const fs::path& dir, std::uint64_t seq) {
    char name[64];
    std::snprintf(name, sizeof name, "snapshot-%012llu.json", static_cast<unsigned long long>(seq));
    return dir / name;
}

std::vector<Event> read_event_log(const fs::path& path) {
    std::vector<Event> events;
    std::error_code ec;
    if (!fs::exists(path, ec)) return events;
    std::istringstream in(read_text(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        events.push_back(parse_event_line(line));
    }
    return events;
}

namespace {

std::optional<std::pair<std::uint64_t, fs::path>> latest_snapshot(const fs::path& dir, std::uint64_t max_seq) {
    std::optional<std::pair<std::uint64_t, fs::path>> best;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
        auto name = entry.path().filename().string();
        if (name.rfind("snapshot-", 0) != 0 || entry.path().extension() != ".json") continue;
        auto digits = name.substr(9, name.size() - 9 - 5);
        if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit)) continue;
        auto seq = std::stoull(digits);
        if (seq <= max_seq && (!best || seq > best->first)) best = {seq, entry.path()};
    }
    return best;
}

}  // namespace

Store::Store(StoreOptions options) : options_(std::move(options)), machine_(options_.food_list) {
    if (options_.lease_ttl <= std::chrono::milliseconds::zero()) throw ValidationError("lease ttl must be positive");
    log_ = read_event_log(log_path());
    for (std::size_t i = 0; i < log_.size(); ++i) {
        if (log_[i].seq != i + 1) throw DuplicateSeq("event log is not gap-free at line " + std::to_string(i + 1));
    }
    State initial;
    if (auto snap = latest_snapshot(options_.dir, log_.size())) {
        auto j = json::parse(read_text(snap->second));
        initial = state_from_json(j.at("state"));
        if (initial.last_seq != snap->first) throw ValidationError("snapshot " + snap->second.string() + " is inconsistent");
    }
    machine_ = StateMachine(options_.food_list, replay(log_, options_.food_list, std::move(initial)));
}

Store::~Store() = default;

void Store::commit(EventKind kind, json payload, TimePoint at) {
    Event e{machine_.state().last_seq + 1, at, kind, std::move(payload)};
    auto mutate = machine_.prepare(e);
    if (!out_.is_open()) {
        fs::create_directories(options_.dir);
        out_.open(log_path(), std::ios::binary | std::ios::app);
        if (!out_) throw Error("cannot open event log " + log_path().string());
    }
    out_ << event_line(e) << '\n';
    out_.flush();
    if (!out_) throw Error("failed to append to event log");
    mutate();
    log_.push_back(std::move(e));
    if (options_.snapshot_every && machine_.state().last_seq % options_.snapshot_every == 0) {
        auto j = json{{"last_seq", machine_.state().last_seq}, {"state", state_to_json(machine_.state())}};
        write_text_atomic(snapshot_path(options_.dir, machine_.state().last_seq), j.dump());
    }
}

std::size_t Store::ingest(const std::vector<ImageRecord>& records) {
    std::unique_lock lock(mu_);
    std::size_t added = 0;
    for (const auto& r : records) {
        if (machine_.state().images.count(r.image_id)) continue;
        commit(EventKind::ImageAdded, json{{"record", r}}, options_.clock());
        ++added;
    }
    return added;
}

void Store::score(const std::string& image_id, double foodness) {
    std::unique_lock lock(mu_);
    commit(EventKind::Scored, json{{"image_id", image_id}, {"foodness", foodness}}, options_.clock());
}

ImageStatus Store::apply_threshold(const std::string& image_id, double threshold) {
    std::unique_lock lock(mu_);
    auto it = machine_.state().images.find(image_id);
    if (it == machine_.state().images.end()) throw NotFound("unknown image " + image_id);
    if (!it->second.foodness) throw MissingScore(image_id);
    bool kept = *it->second.foodness >= threshold;
    commit(kept ? EventKind::ReviewQueued : EventKind::AutoRejected,
           json{{"image_id", image_id}, {"threshold", threshold}}, options_.clock());
    return kept ? ImageStatus::PendingReview : ImageStatus::AutoRejected;
}

std::optional<TaskLease> Store::lease(const std::string& worker_id) {
    if (worker_id.empty()) throw ValidationError("worker id must be non-empty");
    std::unique_lock lock(mu_);
    const TimePoint now = options_.clock();
    const State& s = machine_.state();
    const ImageRecord* best = nullptr;
    for (const auto& [id, img] : s.images) {
        if (img.status != ImageStatus::PendingReview && img.status != ImageStatus::Confirmed) continue;
        const TaskLease* l = s.live_lease(id, now);
        if (l) {
            if (l->worker_id == worker_id) return *l;
            continue;
        }
        if (!best || std::tie(img.rank, img.label_id, img.image_id) < std::tie(best->rank, best->label_id, best->image_id)) {
            best = &img;
        }
    }
    if (!best) return std::nullopt;
    TaskLease lease{best->image_id, worker_id, now, now + options_.lease_ttl};
    commit(EventKind::Leased, lease_json(lease), now);
    return lease;
}

TaskLease Store::lease_image(const std::string& image_id, const std::string& worker_id) {
    if (worker_id.empty()) throw ValidationError("worker id must be non-empty");
    std::unique_lock lock(mu_);
    const TimePoint now = options_.clock();
    if (const TaskLease* l = machine_.state().live_lease(image_id, now); l && l->worker_id == worker_id) return *l;
    TaskLease lease{image_id, worker_id, now, now + options_.lease_ttl};
    commit(EventKind::Leased, lease_json(lease), now);
    return lease;
}

void Store::verdict(const std::string& image_id, const std::string& worker_id, Decision decision,
                    std::optional<NoisyReason> reason, std::int64_t elapsed_ms) {
    std::unique_lock lock(mu_);
    Verdict v{image_id, decision, reason, worker_id, elapsed_ms, {}};
    auto j = verdict_json(v);
    j.erase("at");
    commit(EventKind::Verdict, std::move(j), options_.clock());
}

BoxAnnotation Store::create_box(const std::string& image_id, const std::string& worker_id, const NormBox& box,
                                std::optional<std::string> label_id) {
    std::unique_lock lock(mu_);
    auto it = machine_.state().images.find(image_id);
    if (it == machine_.state().images.end()) throw NotFound("unknown image " + image_id);
    BoxAnnotation b;
    b.box_id = "box-" + std::to_string(machine_.state().last_seq + 1);
    b.image_id = image_id;
    b.box = box;
    b.label_id = label_id.value_or(it->second.label_id);
    b.worker_id = worker_id;
    b.created_at = options_.clock();
    auto j = annotation_json(b);
    j.erase("deleted");
    commit(EventKind::BoxCreated, json{{"box", std::move(j)}}, b.created_at);
    return b;
}

void Store::delete_box(const std::string& box_id, const std::string& worker_id) {
    std::unique_lock lock(mu_);
    commit(EventKind::BoxDeleted, json{{"box_id", box_id}, {"worker_id", worker_id}}, options_.clock());
}

void Store::done(const std::string& image_id, const std::string& worker_id) {
    std::unique_lock lock(mu_);
    commit(EventKind::AnnotationDone, json{{"image_id", image_id}, {"worker_id", worker_id}}, options_.clock());
}

void Store::write_snapshot() {
    std::shared_lock lock(mu_);
    fs::create_directories(options_.dir);
    auto j = json{{"last_seq", machine_.state().last_seq}, {"state", state_to_json(machine_.state())}};
    write_text_atomic(snapshot_path(options_.dir, machine_.state().last_seq), j.dump());
}

State Store::state() const {
    std::shared_lock lock(mu_);
    return machine_.state();
}

std::optional<ImageRecord> Store::image(const std::string& image_id) const {
    std::shared_lock lock(mu_);
    auto it = machine_.state().images.find(image_id);
    if (it == machine_.state().images.end()) return std::nullopt;
    return it->second;
}

std::optional<BoxAnnotation> Store::box(const std::string& box_id) const {
    std::shared_lock lock(mu_);
    auto it = machine_.state().boxes.find(box_id);
    if (it == machine_.state().boxes.end()) return std::nullopt;
    return it->second;
}

std::vector<BoxAnnotation> Store::live_boxes(const std::string& image_id) const {
    std::shared_lock lock(mu_);
    return machine_.state().live_boxes(image_id);
}

std::optional<TaskLease> Store::live_lease(const std::string& image_id) const {
    std::shared_lock lock(mu_);
    const TaskLease* l = machine_.state().live_lease(image_id, options_.clock());
    if (!l) return std::nullopt;
    return *l;
}

Stats Store::stats() const {
    std::shared_lock lock(mu_);
    return compute_stats(machine_.state(), options_.food_list);
}

std::vector<Event> Store::events() const {
    std::shared_lock lock(mu_);
    return log_;
}

}  // namespace foodcrowd::annostore
