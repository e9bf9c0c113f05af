#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Threshold calibration for the foodness filter: stratified food/non-food
// mixtures, precision-recall sweeps over a threshold grid, the acceptable
// threshold interval under precision and recall floors, and the intersection of
// those intervals across mixture ratios.
//
// A score is predicted "food" when score >= threshold, the same tie rule the
// scorer's filter applies.
namespace foodcrowd::calibration {

struct LabeledScore {
    double score = 0;
    bool is_food = false;

    friend bool operator==(const LabeledScore&, const LabeledScore&) = default;
};

using Trial = std::vector<LabeledScore>;

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept;
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct PrecisionRecall {
    double precision = 1.0;
    double recall = 1.0;
};

struct PRPoint {
    double threshold = 0;
    double precision = 1.0;
    double recall = 1.0;
    ConfusionCounts counts;

    friend bool operator==(const PRPoint&, const PRPoint&) = default;
};

struct MixtureSpec {
    double food_fraction = 0.5;
    std::size_t sample_size = 200;
    std::size_t trial_count = 1000;
    std::uint64_t seed = 0;

    std::size_t food_count() const;  // round(food_fraction * sample_size)
    std::size_t nonfood_count() const { return sample_size - food_count(); }
};

struct AcceptableRange {
    std::optional<double> food_fraction;  // absent for an intersection
    double lower = 0;
    double upper = 0;
    bool empty = true;
    // The qualifying thresholds formed more than one contiguous run; lower and
    // upper describe the widest one.
    bool multimodal = false;

    friend bool operator==(const AcceptableRange&, const AcceptableRange&) = default;
};

// Floors are compared with this slack so that a ratio equal to the floor up to
// floating-point rounding still qualifies.
inline constexpr double kFloorTolerance = 1e-9;

// Thresholds {0, step, 2 step, ..., 1}. When 1/step is an integer N the points
// are computed as i/N, so 0.01 yields exactly the doubles 0.00, 0.01, ... 1.00.
std::vector<double> threshold_grid(double step);

ConfusionCounts confusion_at(std::span<const LabeledScore> scores, double threshold);

// Degenerate denominators yield 1.0.
PrecisionRecall pr_from_counts(const ConfusionCounts& counts);

std::vector<PRPoint> sweep_pr(std::span<const LabeledScore> scores, double grid_step);

// Each trial draws food_count() items from food_pool and nonfood_count() from
// nonfood_pool, without replacement inside a trial and independently across
// trials. Trial k uses its own generator derived from (seed, k), so the result
// does not depend on how trials are scheduled. Throws PoolTooSmall.
std::vector<Trial> stratified_trials(std::span<const double> food_pool, std::span<const double> nonfood_pool,
                                     const MixtureSpec& spec);

// Per-threshold arithmetic mean of each trial's precision and recall; counts
// are summed. Curves are evaluated on up to `parallelism` threads and reduced
// in trial order.
std::vector<PRPoint> mean_pr_over_trials(std::span<const Trial> trials, double grid_step,
                                         std::size_t parallelism = 1);

// Deterministic reweighting of the full pools with class weights food_fraction
// and 1 - food_fraction. Recall depends only on food_pool. The counts field
// holds the unweighted pool counts at each threshold.
std::vector<PRPoint> analytic_pr(std::span<const double> food_pool, std::span<const double> nonfood_pool,
                                 double food_fraction, double grid_step);

AcceptableRange acceptable_range(std::span<const PRPoint> points, double p_min = 0.8, double r_min = 0.8,
                                 std::optional<double> food_fraction = std::nullopt);

AcceptableRange intersect_ranges(std::span<const AcceptableRange> ranges);

// Midpoint of a non-empty range, rounded to 6 decimals so that e.g.
// [0.57, 0.77] gives exactly 0.67.
std::optional<double> range_midpoint(const AcceptableRange& range);

// ---------------------------------------------------------------------------
// Score pools and reports

struct ScorePools {
    std::vector<double> food;
    std::vector<double> nonfood;
};

// JSON Lines, one {"score": <real>, "is_food": <bool>} per line.
std::vector<LabeledScore> read_score_file(const std::filesystem::path& path);
void write_score_file(const std::filesystem::path& path, std::span<const LabeledScore> scores);

// Loads a food file and a non-food file; every line must carry the is_food
// value matching its file.
ScorePools load_pools(const std::filesystem::path& food_file, const std::filesystem::path& nonfood_file);

// Seeded synthetic pools: food scores concentrated high with a low tail of hard
// positives, non-food scores decaying from 0. Values are rounded to 4 decimals.
inline constexpr std::uint64_t kSyntheticSeed = 2018;
ScorePools synthetic_pools(std::uint64_t seed, std::size_t food_count = 1000, std::size_t nonfood_count = 1000);

enum class Mode { Trials, Analytic };

struct CalibrationConfig {
    std::vector<double> fractions{0.5, 0.6, 0.7, 0.8, 0.9};
    std::size_t trials = 1000;
    std::size_t sample_size = 200;
    double grid = 0.01;
    double p_min = 0.8;
    double r_min = 0.8;
    Mode mode = Mode::Trials;
    std::uint64_t seed = 0;
    std::size_t parallelism = 1;
};

void validate_config(const CalibrationConfig& config);

struct FractionResult {
    double food_fraction = 0;
    std::vector<PRPoint> curve;
    AcceptableRange range;
};

struct CalibrationReport {
    CalibrationConfig config;
    std::vector<FractionResult> fractions;
    AcceptableRange intersection;
    std::optional<double> default_threshold;
};

// Trial seeds for fraction index k are derived from config.seed and k.
CalibrationReport calibrate(const ScorePools& pools, const CalibrationConfig& config);

nlohmann::ordered_json report_to_json(const CalibrationReport& report);
CalibrationReport report_from_json(const nlohmann::json& j);
// fraction,threshold,precision,recall,tp,fp,fn,tn
std::string report_csv(const CalibrationReport& report);

std::string format_range(const AcceptableRange& range);  // "[0.57, 0.77]" or "empty"

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view s);

}  // namespace foodcrowd::calibration
