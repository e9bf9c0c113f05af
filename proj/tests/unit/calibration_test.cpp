#include "foodcrowd/calibration.hpp"
#include "foodcrowd/error.hpp"

#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

#include <doctest.h>

#include <random>
#include <set>

using namespace foodcrowd;
using namespace foodcrowd::calibration;

namespace {

std::vector<LabeledScore> random_scores(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0, 1);
    std::bernoulli_distribution coin(0.5);
    std::vector<LabeledScore> out;
    for (std::size_t i = 0; i < n; ++i) {
        // Half the values sit exactly on grid points to exercise the tie rule.
        double s = coin(rng) ? std::floor(u(rng) * 101) / 100.0 : u(rng);
        out.push_back({std::min(s, 1.0), coin(rng)});
    }
    return out;
}

AcceptableRange range(double f, double lo, double hi) {
    AcceptableRange r;
    r.food_fraction = f;
    r.lower = lo;
    r.upper = hi;
    r.empty = false;
    return r;
}

}  // namespace

TEST_SUITE("calibration") {

TEST_CASE("threshold grid is exact in hundredths") {
    auto g = threshold_grid(0.01);
    REQUIRE(g.size() == 101);
    auto expect = oracle::hundredths();
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == expect[i]);
    CHECK(g[57] == 0.57);
    CHECK(g[77] == 0.77);
    CHECK(threshold_grid(0.25) == std::vector<double>{0, 0.25, 0.5, 0.75, 1.0});
    CHECK_THROWS_AS(threshold_grid(0), ValidationError);
    CHECK_THROWS_AS(threshold_grid(1.5), ValidationError);
}

TEST_CASE("score equal to the threshold counts as predicted food") {
    std::vector<LabeledScore> s{{0.5, true}, {0.5, false}, {0.49, true}};
    auto c = confusion_at(s, 0.5);
    CHECK(c.tp == 1);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
    CHECK(c.tn == 0);
}

TEST_CASE("degenerate precision and recall are one") {
    auto pr = pr_from_counts({});
    CHECK(pr.precision == 1.0);
    CHECK(pr.recall == 1.0);
    pr = pr_from_counts({0, 0, 3, 2});
    CHECK(pr.precision == 1.0);
    CHECK(pr.recall == 0.0);
}

TEST_CASE("sweep matches brute-force counting") {
    std::mt19937_64 rng(11);
    for (int inst = 0; inst < 50; ++inst) {
        auto scores = random_scores(rng, 1 + rng() % 200);
        auto curve = sweep_pr(scores, 0.01);
        auto grid = oracle::hundredths();
        REQUIRE(curve.size() == grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            auto c = oracle::count_at(scores, grid[i]);
            CHECK(curve[i].threshold == grid[i]);
            CHECK(curve[i].counts.tp == c.tp);
            CHECK(curve[i].counts.fp == c.fp);
            CHECK(curve[i].counts.fn == c.fn);
            CHECK(curve[i].counts.tn == c.tn);
            CHECK(curve[i].precision == oracle::precision(c));
            CHECK(curve[i].recall == oracle::recall(c));
        }
    }
}

TEST_CASE("empty score list sweeps to all-ones") {
    auto curve = sweep_pr({}, 0.5);
    REQUIRE(curve.size() == 3);
    for (const auto& p : curve) {
        CHECK(p.precision == 1.0);
        CHECK(p.recall == 1.0);
    }
}

TEST_CASE("reference ranges intersect to [0.57, 0.77]") {
    std::vector<AcceptableRange> rows{range(0.5, 0.57, 0.77), range(0.6, 0.45, 0.77), range(0.7, 0.32, 0.77),
                                       range(0.8, 0.05, 0.77), range(0.9, 0.00, 0.77)};
    auto r = intersect_ranges(rows);
    CHECK_FALSE(r.empty);
    CHECK(r.lower == 0.57);
    CHECK(r.upper == 0.77);
    CHECK_FALSE(r.food_fraction.has_value());
    CHECK(format_range(r) == "[0.57, 0.77]");
    CHECK(range_midpoint(r) == 0.67);
}

TEST_CASE("intersection edge cases") {
    CHECK_THROWS_AS(intersect_ranges({}), ValidationError);
    std::vector<AcceptableRange> disjoint{range(0.5, 0.1, 0.2), range(0.6, 0.3, 0.4)};
    auto r = intersect_ranges(disjoint);
    CHECK(r.empty);
    CHECK(format_range(r) == "empty");
    CHECK_FALSE(range_midpoint(r).has_value());
    std::vector<AcceptableRange> with_empty{range(0.5, 0.1, 0.9), AcceptableRange{}};
    CHECK(intersect_ranges(with_empty).empty);
    std::vector<AcceptableRange> touching{range(0.5, 0.1, 0.3), range(0.6, 0.3, 0.5)};
    auto t = intersect_ranges(touching);
    CHECK_FALSE(t.empty);
    CHECK(t.lower == 0.3);
    CHECK(t.upper == 0.3);
}

TEST_CASE("acceptable range picks the widest run and flags multimodal curves") {
    auto grid = oracle::hundredths();
    std::vector<PRPoint> pts;
    for (double t : grid) {
        bool ok = (t >= 0.1 && t <= 0.2) || (t >= 0.5 && t <= 0.8);
        pts.push_back({t, ok ? 0.9 : 0.5, ok ? 0.9 : 0.5, {}});
    }
    auto r = acceptable_range(pts, 0.8, 0.8, 0.5);
    CHECK_FALSE(r.empty);
    CHECK(r.multimodal);
    CHECK(r.lower == 0.5);
    CHECK(r.upper == 0.8);
    CHECK(r.food_fraction == 0.5);

    for (auto& p : pts) p.precision = 0.1;
    CHECK(acceptable_range(pts).empty);
}

TEST_CASE("acceptable range ties go to the lowest run") {
    std::vector<PRPoint> pts;
    for (double t : oracle::hundredths()) {
        bool ok = (t >= 0.1 && t <= 0.2) || (t >= 0.5 && t <= 0.6);
        pts.push_back({t, ok ? 0.9 : 0.0, 0.9, {}});
    }
    auto r = acceptable_range(pts);
    CHECK(r.lower == 0.1);
    CHECK(r.upper == 0.2);
}

TEST_CASE("floors admit values equal up to rounding") {
    // 4/5 computed in floating point is exactly 0.8.
    std::vector<PRPoint> pts{{0.0, 4.0 / 5.0, 0.8 - 1e-12, {}}};
    auto r = acceptable_range(pts, 0.8, 0.8);
    CHECK_FALSE(r.empty);
}

TEST_CASE("acceptable range agrees with the run oracle on random curves") {
    std::mt19937_64 rng(5);
    auto grid = oracle::hundredths();
    for (int k = 0; k < 200; ++k) {
        std::vector<PRPoint> pts;
        std::vector<bool> ok;
        for (double t : grid) {
            double p = (rng() % 4) ? 0.9 : 0.7;
            double r = (rng() % 5) ? 0.95 : 0.1;
            pts.push_back({t, p, r, {}});
            ok.push_back(p >= 0.8 && r >= 0.8);
        }
        auto got = acceptable_range(pts);
        auto want = oracle::widest_run(grid, ok);
        REQUIRE(got.empty == want.empty);
        if (!want.empty) {
            CHECK(got.lower == want.lower);
            CHECK(got.upper == want.upper);
        }
    }
}

TEST_CASE("stratified trials draw the requested class counts without replacement") {
    std::vector<double> food, nonfood;
    for (int i = 0; i < 300; ++i) food.push_back(0.5 + i / 1000.0);
    for (int i = 0; i < 300; ++i) nonfood.push_back(i / 1000.0);
    MixtureSpec spec{0.7, 200, 20, 9};
    CHECK(spec.food_count() == 140);
    CHECK(spec.nonfood_count() == 60);
    auto trials = stratified_trials(food, nonfood, spec);
    REQUIRE(trials.size() == 20);
    for (const auto& t : trials) {
        REQUIRE(t.size() == 200);
        std::set<double> seen_food, seen_non;
        for (const auto& s : t) (s.is_food ? seen_food : seen_non).insert(s.score);
        CHECK(seen_food.size() == 140);  // values in each pool are distinct
        CHECK(seen_non.size() == 60);
    }
    CHECK(trials[0] != trials[1]);
    CHECK(stratified_trials(food, nonfood, spec) == trials);
}

TEST_CASE("pools smaller than the draw are rejected") {
    std::vector<double> food(10, 0.9), nonfood(10, 0.1);
    CHECK_THROWS_AS(stratified_trials(food, nonfood, {0.5, 200, 1, 0}), PoolTooSmall);
}

TEST_CASE("mean curve is the average of per-trial curves regardless of parallelism") {
    auto pools = synthetic_pools(3, 400, 400);
    MixtureSpec spec{0.6, 100, 30, 17};
    auto trials = stratified_trials(pools.food, pools.nonfood, spec);
    auto serial = mean_pr_over_trials(trials, 0.01, 1);
    auto parallel = mean_pr_over_trials(trials, 0.01, 4);
    CHECK(serial == parallel);

    auto grid = oracle::hundredths();
    for (std::size_t i = 0; i < grid.size(); i += 7) {
        double p = 0, r = 0;
        for (const auto& t : trials) {
            auto c = oracle::count_at(t, grid[i]);
            p += oracle::precision(c);
            r += oracle::recall(c);
        }
        CHECK(serial[i].precision == doctest::Approx(p / trials.size()).epsilon(1e-12));
        CHECK(serial[i].recall == doctest::Approx(r / trials.size()).epsilon(1e-12));
    }
}

TEST_CASE("analytic recall does not depend on the mixture") {
    auto pools = synthetic_pools(kSyntheticSeed);
    auto a = analytic_pr(pools.food, pools.nonfood, 0.5, 0.01);
    auto b = analytic_pr(pools.food, pools.nonfood, 0.9, 0.01);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].recall == b[i].recall);
        CHECK(a[i].precision <= b[i].precision);
    }
}

TEST_CASE("analytic ranges agree with the rate oracle") {
    auto pools = synthetic_pools(kSyntheticSeed);
    for (double f : {0.5, 0.6, 0.7, 0.8, 0.9}) {
        auto got = acceptable_range(analytic_pr(pools.food, pools.nonfood, f, 0.01), 0.8, 0.8, f);
        auto want = oracle::analytic_range(pools.food, pools.nonfood, f);
        REQUIRE(got.empty == want.empty);
        CHECK(got.lower == want.lower);
        CHECK(got.upper == want.upper);
    }
}

TEST_CASE("calibrate report round-trips through JSON") {
    auto pools = synthetic_pools(1, 300, 300);
    CalibrationConfig cfg;
    cfg.trials = 10;
    cfg.sample_size = 100;
    auto rep = calibrate(pools, cfg);
    REQUIRE(rep.fractions.size() == 5);
    auto back = report_from_json(report_to_json(rep));
    CHECK(back.intersection == rep.intersection);
    CHECK(back.default_threshold == rep.default_threshold);
    REQUIRE(back.fractions.size() == rep.fractions.size());
    for (std::size_t i = 0; i < back.fractions.size(); ++i) {
        CHECK(back.fractions[i].range == rep.fractions[i].range);
        CHECK(back.fractions[i].curve == rep.fractions[i].curve);
    }
    auto csv = report_csv(rep);
    CHECK(csv.rfind("fraction,threshold,precision,recall,tp,fp,fn,tn\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 5 * 101);
}

TEST_CASE("calibrate is deterministic and seed-sensitive") {
    auto pools = synthetic_pools(2, 300, 300);
    CalibrationConfig cfg;
    cfg.trials = 20;
    cfg.sample_size = 100;
    cfg.parallelism = 3;
    auto a = report_to_json(calibrate(pools, cfg)).dump();
    CHECK(report_to_json(calibrate(pools, cfg)).dump() == a);
    cfg.seed = 99;
    CHECK(report_to_json(calibrate(pools, cfg)).dump() != a);
}

TEST_CASE("config validation") {
    CalibrationConfig cfg;
    CHECK_NOTHROW(validate_config(cfg));
    cfg.fractions = {0.0};
    CHECK_THROWS_AS(validate_config(cfg), ValidationError);
    cfg.fractions = {1.2};
    CHECK_THROWS_AS(validate_config(cfg), ValidationError);
    cfg.fractions = {1.0};
    CHECK_NOTHROW(validate_config(cfg));
    cfg.trials = 0;
    CHECK_THROWS_AS(validate_config(cfg), ValidationError);
    cfg = {};
    cfg.p_min = 1.5;
    CHECK_THROWS_AS(validate_config(cfg), ValidationError);
    CHECK(parse_mode("analytic") == Mode::Analytic);
    CHECK_THROWS_AS(parse_mode("bogus"), ValidationError);
}

TEST_CASE("score files round-trip and class labels are checked") {
    testing::TempDir dir;
    std::vector<LabeledScore> food{{0.9, true}, {0.75, true}};
    std::vector<LabeledScore> non{{0.1, false}};
    write_score_file(dir / "f.jsonl", food);
    write_score_file(dir / "n.jsonl", non);
    CHECK(read_score_file(dir / "f.jsonl") == food);
    auto pools = load_pools(dir / "f.jsonl", dir / "n.jsonl");
    CHECK(pools.food == std::vector<double>{0.9, 0.75});
    CHECK(pools.nonfood == std::vector<double>{0.1});
    CHECK_THROWS_AS(load_pools(dir / "n.jsonl", dir / "f.jsonl"), ValidationError);
    write_text_atomic(dir / "bad.jsonl", "{\"score\": 2.0, \"is_food\": true}\n");
    CHECK_THROWS_AS(read_score_file(dir / "bad.jsonl"), ValidationError);
}

TEST_CASE("bundled pools are the seeded synthetic pools") {
    auto pools = load_pools(FOODCROWD_DATA_DIR "/pools/food.jsonl", FOODCROWD_DATA_DIR "/pools/nonfood.jsonl");
    auto expect = synthetic_pools(kSyntheticSeed);
    CHECK(pools.food == expect.food);
    CHECK(pools.nonfood == expect.nonfood);
}

}  // TEST_SUITE
