#pragma once

// Independent reference implementations used by the unit and acceptance
// suites. They recount from first principles and share no code with the
// library beyond its plain data types.

#include "foodcrowd/annostore.hpp"
#include "foodcrowd/calibration.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace oracle {

struct Counts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts count_at(const std::vector<foodcrowd::calibration::LabeledScore>& scores, double t) {
    Counts c;
    for (const auto& s : scores) {
        bool predicted = s.score >= t;
        if (predicted && s.is_food) ++c.tp;
        else if (predicted) ++c.fp;
        else if (s.is_food) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline double precision(const Counts& c) {
    return c.tp + c.fp == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

inline double recall(const Counts& c) {
    return c.tp + c.fn == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

// Grid {0, 0.01, ..., 1.00} written out by integer hundredths.
inline std::vector<double> hundredths() {
    std::vector<double> g;
    for (int i = 0; i <= 100; ++i) g.push_back(i / 100.0);
    return g;
}

struct Range {
    bool empty = true;
    double lower = 0, upper = 0;
};

// Widest contiguous run of qualifying grid points, earliest run on ties.
inline Range widest_run(const std::vector<double>& grid, const std::vector<bool>& ok) {
    Range best;
    std::size_t best_len = 0;
    std::size_t i = 0;
    while (i < grid.size()) {
        if (!ok[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < grid.size() && ok[j + 1]) ++j;
        if (j - i + 1 > best_len) {
            best_len = j - i + 1;
            best = {false, grid[i], grid[j]};
        }
        i = j + 1;
    }
    return best;
}

// Class-weighted precision and pool recall at each grid point, computed from
// raw rates rather than counts.
inline Range analytic_range(const std::vector<double>& food, const std::vector<double>& nonfood, double fraction,
                            double p_min = 0.8, double r_min = 0.8) {
    auto grid = hundredths();
    std::vector<bool> ok;
    for (double t : grid) {
        double tpr = static_cast<double>(std::count_if(food.begin(), food.end(), [&](double s) { return s >= t; })) /
                     static_cast<double>(food.size());
        double fpr =
            static_cast<double>(std::count_if(nonfood.begin(), nonfood.end(), [&](double s) { return s >= t; })) /
            static_cast<double>(nonfood.size());
        double pos = fraction * tpr + (1 - fraction) * fpr;
        double p = pos == 0 ? 1.0 : fraction * tpr / pos;
        ok.push_back(p >= p_min - 1e-9 && tpr >= r_min - 1e-9);
    }
    return widest_run(grid, ok);
}

// ---------------------------------------------------------------------------
// Event-log audit

struct LeaseAudit {
    std::size_t leases = 0;
    std::size_t overlaps = 0;
    std::vector<std::string> problems;
};

// Walks the log keeping, per image, the holder and expiry of the current
// lease; a lease is released by a NOISY verdict or ANNOTATION_DONE. A LEASED
// event for another worker while the current lease is unexpired is an overlap.
inline LeaseAudit audit_leases(const std::vector<foodcrowd::annostore::Event>& log) {
    using foodcrowd::annostore::EventKind;
    struct Held {
        std::string worker;
        foodcrowd::TimePoint expires;
    };
    std::map<std::string, Held> held;
    LeaseAudit a;
    for (const auto& e : log) {
        if (e.kind == EventKind::Leased) {
            ++a.leases;
            auto id = e.payload.at("image_id").get<std::string>();
            auto worker = e.payload.at("worker_id").get<std::string>();
            auto it = held.find(id);
            if (it != held.end() && it->second.worker != worker && e.at <= it->second.expires) {
                ++a.overlaps;
                a.problems.push_back("seq " + std::to_string(e.seq) + ": " + id + " leased to " + worker +
                                     " while held by " + it->second.worker);
            }
            held[id] = {worker, foodcrowd::parse_rfc3339(e.payload.at("expires_at").get<std::string>())};
        } else if (e.kind == EventKind::AnnotationDone ||
                   (e.kind == EventKind::Verdict && e.payload.at("decision") == "NOISY")) {
            held.erase(e.payload.at("image_id").get<std::string>());
        }
    }
    return a;
}

struct Recount {
    std::map<std::string, std::uint64_t> images;  // by crawl label
    std::map<std::string, std::uint64_t> boxes;   // by box label
    std::map<std::string, std::string> status;    // by image id
    std::uint64_t total_images = 0;
    std::uint64_t total_boxes = 0;
};

// Derives per-label counts straight from event payloads.
inline Recount recount(const std::vector<foodcrowd::annostore::Event>& log) {
    using foodcrowd::annostore::EventKind;
    Recount r;
    std::map<std::string, std::string> label_of;
    std::map<std::string, std::string> box_label;
    for (const auto& e : log) {
        const auto& p = e.payload;
        switch (e.kind) {
            case EventKind::ImageAdded:
                label_of[p.at("record").at("image_id")] = p.at("record").at("label_id");
                r.status[p.at("record").at("image_id")] = p.at("record").at("status");
                break;
            case EventKind::Scored: r.status[p.at("image_id")] = "SCORED"; break;
            case EventKind::AutoRejected: r.status[p.at("image_id")] = "AUTO_REJECTED"; break;
            case EventKind::ReviewQueued: r.status[p.at("image_id")] = "PENDING_REVIEW"; break;
            case EventKind::Verdict:
                r.status[p.at("image_id")] = p.at("decision") == "KEEP" ? "CONFIRMED" : "NOISY_REJECTED";
                break;
            case EventKind::AnnotationDone: r.status[p.at("image_id")] = "ANNOTATED"; break;
            case EventKind::BoxCreated: box_label[p.at("box").at("box_id")] = p.at("box").at("label_id"); break;
            case EventKind::BoxDeleted: box_label.erase(p.at("box_id").get<std::string>()); break;
            case EventKind::Leased: break;
        }
    }
    static const std::set<std::string> uploaded{"PENDING_REVIEW", "NOISY_REJECTED", "CONFIRMED", "ANNOTATED"};
    for (const auto& [id, st] : r.status) {
        if (uploaded.count(st)) {
            ++r.images[label_of.at(id)];
            ++r.total_images;
        }
    }
    for (const auto& [id, label] : box_label) {
        ++r.boxes[label];
        ++r.total_boxes;
    }
    return r;
}

}  // namespace oracle
