#include "foodcrowd/error.hpp"
#include "foodcrowd/types.hpp"

#include "../support/fixtures.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace foodcrowd;

TEST_SUITE("types") {

TEST_CASE("label validation") {
    CHECK_NOTHROW(validate_labels({{"doughnut", "Doughnut"}, {"red-wine", "Red Wine"}}));
    CHECK_THROWS_AS(validate_labels({{"doughnut", ""}}), ValidationError);
    CHECK_THROWS_AS(validate_labels({{"Doughnut", "Doughnut"}}), ValidationError);
    CHECK_THROWS_AS(validate_labels({{"a", "A"}, {"a", "B"}}), ValidationError);
}

TEST_CASE("labels load from JSON and from plain text") {
    testing::TempDir dir;
    write_text_atomic(dir / "l.json", R"([{"id":"red-wine","text":"Red Wine"}, "Cheese Burger"])");
    auto j = load_labels(dir / "l.json");
    REQUIRE(j.size() == 2);
    CHECK(j[0] == SearchLabel{"red-wine", "Red Wine"});
    CHECK(j[1] == SearchLabel{"cheese_burger", "Cheese Burger"});

    write_text_atomic(dir / "l.txt", "# food\nDoughnut\n\n  Cupcake  \n");
    auto t = load_labels(dir / "l.txt");
    REQUIRE(t.size() == 2);
    CHECK(t[0] == SearchLabel{"doughnut", "Doughnut"});
    CHECK(t[1] == SearchLabel{"cupcake", "Cupcake"});

    write_text_atomic(dir / "dup.txt", "Doughnut\ndoughnut\n");
    CHECK_THROWS_AS(load_labels(dir / "dup.txt"), ValidationError);
}

TEST_CASE("bundled label list is valid") {
    auto labels = load_labels(FOODCROWD_DATA_DIR "/labels.json");
    CHECK(labels == testing::table_labels());
}

TEST_CASE("status and reason strings") {
    for (auto s : {ImageStatus::Fetched, ImageStatus::Scored, ImageStatus::AutoRejected, ImageStatus::PendingReview,
                   ImageStatus::NoisyRejected, ImageStatus::Confirmed, ImageStatus::Annotated}) {
        CHECK(parse_status(to_string(s)) == s);
    }
    CHECK(to_string(ImageStatus::PendingReview) == "PENDING_REVIEW");
    CHECK(parse_noisy_reason("AESTHETIC") == NoisyReason::Aesthetic);
    CHECK_THROWS_AS(parse_status("DONE"), ValidationError);
    CHECK_THROWS_AS(parse_noisy_reason("ugly"), ValidationError);
}

TEST_CASE("record invariants") {
    auto r = testing::scored_record("doughnut", 1, 0.5);
    CHECK_NOTHROW(validate_record(r));

    auto fetched = r;
    fetched.status = ImageStatus::Fetched;
    CHECK_THROWS_AS(validate_record(fetched), ValidationError);
    fetched.foodness.reset();
    CHECK_NOTHROW(validate_record(fetched));

    auto noisy = r;
    noisy.status = ImageStatus::NoisyRejected;
    CHECK_THROWS_AS(validate_record(noisy), ValidationError);
    noisy.noisy_reason = NoisyReason::Irrelevant;
    CHECK_NOTHROW(validate_record(noisy));

    auto bad = r;
    bad.rank = 0;
    CHECK_THROWS_AS(validate_record(bad), ValidationError);
    bad = r;
    bad.width_px = 0;
    CHECK_THROWS_AS(validate_record(bad), ValidationError);
    bad = r;
    bad.foodness = 1.5;
    CHECK_THROWS_AS(validate_record(bad), ValidationError);
    bad = r;
    bad.content_hash = "abc";
    CHECK_THROWS_AS(validate_record(bad), ValidationError);
}

TEST_CASE("record JSON round trip keeps nulls") {
    auto r = testing::scored_record("cupcake", 3, 0.25);
    r.status = ImageStatus::Fetched;
    r.foodness.reset();
    nlohmann::json j = r;
    CHECK(j.at("foodness").is_null());
    CHECK(j.at("noisy_reason").is_null());
    CHECK(j.get<ImageRecord>() == r);
    r.status = ImageStatus::NoisyRejected;
    r.foodness = 0.9;
    r.noisy_reason = NoisyReason::Aesthetic;
    j = r;
    CHECK(j.at("noisy_reason") == "AESTHETIC");
    CHECK(j.get<ImageRecord>() == r);
}

TEST_CASE("box geometry") {
    CHECK(valid_geometry({0.125, 0.0833, 0.25, 0.3333}));
    CHECK(valid_geometry({0, 0, 1, 1}));
    CHECK(valid_geometry({0.5, 0.5, 0.5, 0.5}));
    CHECK_FALSE(valid_geometry({0.9, 0.9, 0.2, 0.2}));
    CHECK_FALSE(valid_geometry({0.1, 0.1, 0, 0.2}));
    CHECK_FALSE(valid_geometry({0.1, 0.1, 0.2, -0.1}));
    CHECK_FALSE(valid_geometry({-0.01, 0.1, 0.2, 0.2}));
    CHECK_FALSE(valid_geometry({std::nan(""), 0.1, 0.2, 0.2}));
    CHECK_FALSE(valid_geometry({0.1, 0.1, std::numeric_limits<double>::infinity(), 0.2}));
    CHECK(valid_geometry({0.5, 0.5, 1e-9, 1e-9}));
}

TEST_CASE("pixel conversion rounds half up") {
    CHECK(to_pixels({0.125, 0.0833, 0.25, 0.3333}, 1600, 1200) == PixelBox{200, 100, 400, 400});
    CHECK(to_pixels({0.25, 0.25, 0.5, 0.5}, 3, 3) == PixelBox{1, 1, 2, 2});
    CHECK(to_pixels({0.1, 0.3, 0.5, 0.7}, 5, 5) == PixelBox{1, 2, 3, 4});
}

}  // TEST_SUITE
