#include "foodcrowd/calibration.hpp"

#include "foodcrowd/error.hpp"
#include "foodcrowd/util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <thread>

namespace foodcrowd::calibration {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ (index * 0xD1B54A32D192ED03ULL + 1));
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double round4(double v) { return std::clamp(std::round(v * 10000.0) / 10000.0, 0.0, 1.0); }

bool meets(double value, double floor) { return value >= floor - kFloorTolerance; }

std::uint64_t count_at_least(const std::vector<double>& sorted, double t) {
    return static_cast<std::uint64_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
}

std::size_t MixtureSpec::food_count() const {
    return static_cast<std::size_t>(std::llround(food_fraction * static_cast<double>(sample_size)));
}

std::vector<double> threshold_grid(double step) {
    if (!(step > 0.0 && step <= 1.0)) throw ValidationError("grid step must lie in (0, 1]");
    std::vector<double> grid;
    const double inv = 1.0 / step;
    const double n = std::round(inv);
    if (std::abs(n * step - 1.0) < 1e-9) {
        const auto steps = static_cast<std::size_t>(n);
        grid.reserve(steps + 1);
        for (std::size_t i = 0; i <= steps; ++i) grid.push_back(static_cast<double>(i) / n);
    } else {
        for (std::size_t i = 0;; ++i) {
            double t = static_cast<double>(i) * step;
            if (t > 1.0) break;
            grid.push_back(t);
        }
        if (grid.back() < 1.0) grid.push_back(1.0);
    }
    return grid;
}

ConfusionCounts confusion_at(std::span<const LabeledScore> scores, double threshold) {
    ConfusionCounts c;
    for (const auto& s : scores) {
        const bool positive = s.score >= threshold;
        if (s.is_food) {
            (positive ? c.tp : c.fn) += 1;
        } else {
            (positive ? c.fp : c.tn) += 1;
        }
    }
    return c;
}

PrecisionRecall pr_from_counts(const ConfusionCounts& c) {
    PrecisionRecall pr;
    if (c.tp + c.fp > 0) pr.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    if (c.tp + c.fn > 0) pr.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    return pr;
}

std::vector<PRPoint> sweep_pr(std::span<const LabeledScore> scores, double grid_step) {
    const auto grid = threshold_grid(grid_step);
    std::vector<double> food, nonfood;
    for (const auto& s : scores) (s.is_food ? food : nonfood).push_back(s.score);
    std::sort(food.begin(), food.end());
    std::sort(nonfood.begin(), nonfood.end());

    std::vector<PRPoint> out;
    out.reserve(grid.size());
    for (double t : grid) {
        ConfusionCounts c;
        c.tp = count_at_least(food, t);
        c.fn = food.size() - c.tp;
        c.fp = count_at_least(nonfood, t);
        c.tn = nonfood.size() - c.fp;
        auto pr = pr_from_counts(c);
        out.push_back({t, pr.precision, pr.recall, c});
    }
    return out;
}

std::vector<Trial> stratified_trials(std::span<const double> food_pool, std::span<const double> nonfood_pool,
                                     const MixtureSpec& spec) {
    if (!(spec.food_fraction > 0.0 && spec.food_fraction <= 1.0)) {
        throw ValidationError("food_fraction must lie in (0, 1]");
    }
    if (spec.sample_size < 1 || spec.trial_count < 1) {
        throw ValidationError("sample_size and trial_count must be positive");
    }
    const std::size_t n_food = spec.food_count();
    const std::size_t n_nonfood = spec.nonfood_count();
    if (n_food > food_pool.size() || n_nonfood > nonfood_pool.size()) {
        throw PoolTooSmall("mixture needs " + std::to_string(n_food) + " food and " + std::to_string(n_nonfood) +
                           " non-food items per trial; pools hold " + std::to_string(food_pool.size()) + " and " +
                           std::to_string(nonfood_pool.size()));
    }

    auto draw = [](std::mt19937_64& rng, std::span<const double> pool, std::size_t k, bool is_food, Trial& out) {
        std::vector<double> work(pool.begin(), pool.end());
        for (std::size_t i = 0; i < k; ++i) {
            auto j = i + static_cast<std::size_t>(uniform_below(rng, work.size() - i));
            std::swap(work[i], work[j]);
            out.push_back({work[i], is_food});
        }
    };

    std::vector<Trial> trials(spec.trial_count);
    for (std::size_t k = 0; k < spec.trial_count; ++k) {
        std::mt19937_64 rng(derive_seed(spec.seed, k));
        Trial& t = trials[k];
        t.reserve(spec.sample_size);
        draw(rng, food_pool, n_food, true, t);
        draw(rng, nonfood_pool, n_nonfood, false, t);
    }
    return trials;
}

std::vector<PRPoint> mean_pr_over_trials(std::span<const Trial> trials, double grid_step, std::size_t parallelism) {
    if (trials.empty()) throw ValidationError("mean_pr_over_trials needs at least one trial");
    std::vector<std::vector<PRPoint>> curves(trials.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k; (k = next.fetch_add(1)) < trials.size();) curves[k] = sweep_pr(trials[k], grid_step);
    };
    {
        std::vector<std::jthread> pool;
        std::size_t n = std::max<std::size_t>(1, std::min(parallelism, trials.size()));
        for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    }

    std::vector<PRPoint> mean = curves[0];
    for (auto& p : mean) {
        p.precision = 0;
        p.recall = 0;
        p.counts = {};
    }
    for (const auto& curve : curves) {
        for (std::size_t i = 0; i < mean.size(); ++i) {
            mean[i].precision += curve[i].precision;
            mean[i].recall += curve[i].recall;
            mean[i].counts += curve[i].counts;
        }
    }
    const auto n = static_cast<double>(curves.size());
    for (auto& p : mean) {
        p.precision /= n;
        p.recall /= n;
    }
    return mean;
}

std::vector<PRPoint> analytic_pr(std::span<const double> food_pool, std::span<const double> nonfood_pool,
                                 double food_fraction, double grid_step) {
    if (food_pool.empty() || nonfood_pool.empty()) throw ValidationError("analytic_pr needs non-empty pools");
    if (!(food_fraction > 0.0 && food_fraction <= 1.0)) throw ValidationError("food_fraction must lie in (0, 1]");
    std::vector<double> food(food_pool.begin(), food_pool.end());
    std::vector<double> nonfood(nonfood_pool.begin(), nonfood_pool.end());
    std::sort(food.begin(), food.end());
    std::sort(nonfood.begin(), nonfood.end());
    const auto nf = static_cast<double>(food.size());
    const auto nn = static_cast<double>(nonfood.size());
    // Precision written as 1 / (1 + odds * pn / pf) so that it is monotone in
    // food_fraction under floating-point rounding, not only mathematically.
    const double odds = (1.0 - food_fraction) / food_fraction;

    std::vector<PRPoint> out;
    for (double t : threshold_grid(grid_step)) {
        ConfusionCounts c;
        c.tp = count_at_least(food, t);
        c.fn = food.size() - c.tp;
        c.fp = count_at_least(nonfood, t);
        c.tn = nonfood.size() - c.fp;
        PRPoint p{t, 1.0, static_cast<double>(c.tp) / nf, c};
        if (c.tp == 0) {
            p.precision = (c.fp == 0 || odds == 0.0) ? 1.0 : 0.0;
        } else if (c.fp > 0) {
            const double pf = static_cast<double>(c.tp) / nf;
            const double pn = static_cast<double>(c.fp) / nn;
            p.precision = 1.0 / (1.0 + odds * (pn / pf));
        }
        out.push_back(p);
    }
    return out;
}

AcceptableRange acceptable_range(std::span<const PRPoint> points, double p_min, double r_min,
                                 std::optional<double> food_fraction) {
    AcceptableRange best;
    best.food_fraction = food_fraction;
    std::size_t best_len = 0;
    std::size_t runs = 0;
    for (std::size_t i = 0; i < points.size();) {
        auto ok = [&](std::size_t k) { return meets(points[k].precision, p_min) && meets(points[k].recall, r_min); };
        if (!ok(i)) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < points.size() && ok(j + 1)) ++j;
        ++runs;
        if (j - i + 1 > best_len) {
            best_len = j - i + 1;
            best.lower = points[i].threshold;
            best.upper = points[j].threshold;
            best.empty = false;
        }
        i = j + 1;
    }
    best.multimodal = runs > 1;
    return best;
}

AcceptableRange intersect_ranges(std::span<const AcceptableRange> ranges) {
    if (ranges.empty()) throw ValidationError("intersect_ranges needs at least one range");
    AcceptableRange out;
    out.empty = false;
    out.lower = ranges[0].lower;
    out.upper = ranges[0].upper;
    for (const auto& r : ranges) {
        if (r.empty) {
            out.empty = true;
        }
        out.lower = std::max(out.lower, r.lower);
        out.upper = std::min(out.upper, r.upper);
    }
    if (out.lower > out.upper) out.empty = true;
    if (out.empty) {
        out.lower = 0;
        out.upper = 0;
    }
    if (ranges.size() == 1) out.food_fraction = ranges[0].food_fraction;
    return out;
}

std::optional<double> range_midpoint(const AcceptableRange& range) {
    if (range.empty) return std::nullopt;
    return std::round((range.lower + range.upper) / 2.0 * 1e6) / 1e6;
}

// ---------------------------------------------------------------------------

std::vector<LabeledScore> read_score_file(const std::filesystem::path& path) {
    std::istringstream in(read_text(path));
    std::vector<LabeledScore> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = nlohmann::json::parse(line);
            LabeledScore s{j.at("score").get<double>(), j.at("is_food").get<bool>()};
            if (!(s.score >= 0.0 && s.score <= 1.0)) throw ValidationError("score outside [0,1]");
            out.push_back(s);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_score_file(const std::filesystem::path& path, std::span<const LabeledScore> scores) {
    std::string text;
    for (const auto& s : scores) {
        nlohmann::ordered_json j;
        j["score"] = s.score;
        j["is_food"] = s.is_food;
        text += j.dump();
        text += '\n';
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_text_atomic(path, text);
}

ScorePools load_pools(const std::filesystem::path& food_file, const std::filesystem::path& nonfood_file) {
    ScorePools pools;
    for (const auto& s : read_score_file(food_file)) {
        if (!s.is_food) throw ValidationError(food_file.string() + " contains a non-food entry");
        pools.food.push_back(s.score);
    }
    for (const auto& s : read_score_file(nonfood_file)) {
        if (s.is_food) throw ValidationError(nonfood_file.string() + " contains a food entry");
        pools.nonfood.push_back(s.score);
    }
    return pools;
}

ScorePools synthetic_pools(std::uint64_t seed, std::size_t food_count, std::size_t nonfood_count) {
    std::mt19937_64 rng(seed);
    ScorePools pools;
    pools.food.reserve(food_count);
    pools.nonfood.reserve(nonfood_count);
    for (std::size_t i = 0; i < food_count; ++i) {
        const double pick = uniform01(rng);
        const double u = uniform01(rng);
        // Most food images score high; the rest are hard positives spread low.
        pools.food.push_back(round4(pick < 0.82 ? 0.77 + 0.23 * std::pow(u, 0.7) : 0.05 + 0.72 * u));
    }
    for (std::size_t i = 0; i < nonfood_count; ++i) {
        pools.nonfood.push_back(round4(0.95 * std::pow(uniform01(rng), 2.5)));
    }
    return pools;
}

// ---------------------------------------------------------------------------

void validate_config(const CalibrationConfig& c) {
    if (c.fractions.empty()) throw ValidationError("at least one food fraction is required");
    for (double f : c.fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ValidationError("food fractions must lie in (0, 1]");
    }
    if (c.trials < 1) throw ValidationError("trials must be positive");
    if (c.sample_size < 1) throw ValidationError("sample size must be positive");
    if (!(c.grid > 0.0 && c.grid <= 1.0)) throw ValidationError("grid step must lie in (0, 1]");
    if (!(c.p_min >= 0.0 && c.p_min <= 1.0) || !(c.r_min >= 0.0 && c.r_min <= 1.0)) {
        throw ValidationError("floors must lie in [0, 1]");
    }
}

CalibrationReport calibrate(const ScorePools& pools, const CalibrationConfig& config) {
    validate_config(config);
    CalibrationReport report;
    report.config = config;
    std::vector<AcceptableRange> ranges;
    for (std::size_t k = 0; k < config.fractions.size(); ++k) {
        const double f = config.fractions[k];
        FractionResult fr;
        fr.food_fraction = f;
        if (config.mode == Mode::Analytic) {
            fr.curve = analytic_pr(pools.food, pools.nonfood, f, config.grid);
        } else {
            MixtureSpec spec{f, config.sample_size, config.trials, derive_seed(config.seed, k)};
            auto trials = stratified_trials(pools.food, pools.nonfood, spec);
            fr.curve = mean_pr_over_trials(trials, config.grid, config.parallelism);
        }
        fr.range = acceptable_range(fr.curve, config.p_min, config.r_min, f);
        ranges.push_back(fr.range);
        report.fractions.push_back(std::move(fr));
    }
    report.intersection = intersect_ranges(ranges);
    report.intersection.food_fraction.reset();
    report.default_threshold = range_midpoint(report.intersection);
    return report;
}

namespace {

nlohmann::ordered_json range_json(const AcceptableRange& r) {
    nlohmann::ordered_json j;
    j["food_fraction"] = r.food_fraction ? nlohmann::ordered_json(*r.food_fraction) : nlohmann::ordered_json(nullptr);
    j["lower"] = r.empty ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.lower);
    j["upper"] = r.empty ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.upper);
    j["empty"] = r.empty;
    j["multimodal"] = r.multimodal;
    return j;
}

AcceptableRange range_from(const nlohmann::json& j) {
    AcceptableRange r;
    if (!j.at("food_fraction").is_null()) r.food_fraction = j.at("food_fraction").get<double>();
    r.empty = j.at("empty").get<bool>();
    if (!r.empty) {
        r.lower = j.at("lower").get<double>();
        r.upper = j.at("upper").get<double>();
    }
    r.multimodal = j.value("multimodal", false);
    return r;
}

}  // namespace

std::string_view to_string(Mode mode) { return mode == Mode::Analytic ? "analytic" : "trials"; }

Mode parse_mode(std::string_view s) {
    if (s == "analytic") return Mode::Analytic;
    if (s == "trials") return Mode::Trials;
    throw ValidationError("unknown calibration mode '" + std::string(s) + "'");
}

nlohmann::ordered_json report_to_json(const CalibrationReport& report) {
    const auto& c = report.config;
    nlohmann::ordered_json j;
    j["config"] = {{"fractions", c.fractions}, {"trials", c.trials},   {"sample_size", c.sample_size},
                   {"grid", c.grid},           {"pmin", c.p_min},      {"rmin", c.r_min},
                   {"mode", to_string(c.mode)}, {"seed", c.seed}};
    j["fractions"] = nlohmann::ordered_json::array();
    for (const auto& fr : report.fractions) {
        nlohmann::ordered_json f;
        f["food_fraction"] = fr.food_fraction;
        f["range"] = range_json(fr.range);
        f["curve"] = nlohmann::ordered_json::array();
        for (const auto& p : fr.curve) {
            f["curve"].push_back({{"threshold", p.threshold},
                                  {"precision", p.precision},
                                  {"recall", p.recall},
                                  {"tp", p.counts.tp},
                                  {"fp", p.counts.fp},
                                  {"fn", p.counts.fn},
                                  {"tn", p.counts.tn}});
        }
        j["fractions"].push_back(std::move(f));
    }
    j["intersection"] = range_json(report.intersection);
    j["default_threshold"] = report.default_threshold ? nlohmann::ordered_json(*report.default_threshold)
                                                      : nlohmann::ordered_json(nullptr);
    return j;
}

CalibrationReport report_from_json(const nlohmann::json& j) {
    CalibrationReport r;
    try {
        const auto& c = j.at("config");
        r.config.fractions = c.at("fractions").get<std::vector<double>>();
        r.config.trials = c.at("trials").get<std::size_t>();
        r.config.sample_size = c.at("sample_size").get<std::size_t>();
        r.config.grid = c.at("grid").get<double>();
        r.config.p_min = c.at("pmin").get<double>();
        r.config.r_min = c.at("rmin").get<double>();
        r.config.mode = parse_mode(c.at("mode").get<std::string>());
        r.config.seed = c.at("seed").get<std::uint64_t>();
        for (const auto& f : j.at("fractions")) {
            FractionResult fr;
            fr.food_fraction = f.at("food_fraction").get<double>();
            fr.range = range_from(f.at("range"));
            for (const auto& p : f.at("curve")) {
                fr.curve.push_back({p.at("threshold").get<double>(),
                                    p.at("precision").get<double>(),
                                    p.at("recall").get<double>(),
                                    {p.at("tp").get<std::uint64_t>(), p.at("fp").get<std::uint64_t>(),
                                     p.at("fn").get<std::uint64_t>(), p.at("tn").get<std::uint64_t>()}});
            }
            r.fractions.push_back(std::move(fr));
        }
        r.intersection = range_from(j.at("intersection"));
        if (!j.at("default_threshold").is_null()) r.default_threshold = j.at("default_threshold").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed calibration report: ") + e.what());
    }
    return r;
}

std::string report_csv(const CalibrationReport& report) {
    std::string out = "fraction,threshold,precision,recall,tp,fp,fn,tn\n";
    char buf[160];
    for (const auto& fr : report.fractions) {
        for (const auto& p : fr.curve) {
            std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.6f,%.6f,%llu,%llu,%llu,%llu\n", fr.food_fraction, p.threshold,
                          p.precision, p.recall, static_cast<unsigned long long>(p.counts.tp),
                          static_cast<unsigned long long>(p.counts.fp), static_cast<unsigned long long>(p.counts.fn),
                          static_cast<unsigned long long>(p.counts.tn));
            out += buf;
        }
    }
    return out;
}

std::string format_range(const AcceptableRange& range) {
    if (range.empty) return "empty";
    char buf[64];
    std::snprintf(buf, sizeof buf, "[%.2f, %.2f]", range.lower, range.upper);
    return buf;
}

}  // namespace foodcrowd::calibration
