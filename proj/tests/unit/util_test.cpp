#include "foodcrowd/crawler.hpp"
#include "foodcrowd/error.hpp"
#include "foodcrowd/util.hpp"

#include "../support/fixtures.hpp"

#include <doctest.h>

#include <map>

using namespace foodcrowd;

TEST_SUITE("util") {

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex(std::string_view("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    Bytes b{'a', 'b', 'c'};
    CHECK(sha256_hex(b) == sha256_hex(std::string_view("abc")));
}

TEST_CASE("rfc3339 formatting and parsing") {
    auto t = parse_rfc3339("2024-03-01T12:00:00.250Z");
    CHECK(format_rfc3339(t) == "2024-03-01T12:00:00.250Z");
    CHECK(parse_rfc3339("2024-03-01T12:00:00Z") + std::chrono::milliseconds(250) == t);
    CHECK(parse_rfc3339("2024-03-01T14:00:00.250+02:00") == t);
    CHECK(format_rfc3339(TimePoint{}) == "1970-01-01T00:00:00.000Z");
    CHECK_THROWS_AS(parse_rfc3339("yesterday"), ValidationError);
    auto now = now_ms();
    CHECK(parse_rfc3339(format_rfc3339(now)) == now);
}

TEST_CASE("probe reads png dimensions") {
    auto png = crawler::encode_png(17, 9, 3);
    auto info = probe_image(png);
    REQUIRE(info);
    CHECK(info->format == ImageFormat::Png);
    CHECK(info->width == 17);
    CHECK(info->height == 9);
    CHECK(extension_for(ImageFormat::Png) == "png");
}

TEST_CASE("probe rejects garbage and truncated headers") {
    Bytes junk{'n', 'o', 't', ' ', 'a', 'n', ' ', 'i', 'm', 'a', 'g', 'e'};
    CHECK_FALSE(probe_image(junk));
    auto png = crawler::encode_png(4, 4, 1);
    png.resize(20);
    CHECK_FALSE(probe_image(png));
    CHECK_FALSE(probe_image({}));
}

TEST_CASE("probe reads gif and bmp headers") {
    Bytes gif{'G', 'I', 'F', '8', '9', 'a', 0x20, 0x00, 0x10, 0x00, 0, 0, 0};
    auto g = probe_image(gif);
    REQUIRE(g);
    CHECK(g->format == ImageFormat::Gif);
    CHECK(g->width == 32);
    CHECK(g->height == 16);
    Bytes zero{'G', 'I', 'F', '8', '9', 'a', 0x00, 0x00, 0x10, 0x00, 0, 0, 0};
    CHECK_FALSE(probe_image(zero));
}

TEST_CASE("uniform_below stays in range and covers it") {
    std::mt19937_64 rng(1);
    std::map<std::uint64_t, int> seen;
    for (int i = 0; i < 7000; ++i) {
        auto v = uniform_below(rng, 7);
        REQUIRE(v < 7);
        ++seen[v];
    }
    CHECK(seen.size() == 7);
    for (auto& [v, n] : seen) CHECK(n > 800);
    CHECK(uniform_below(rng, 1) == 0);
}

TEST_CASE("uniform_below sequence is fixed for a seed") {
    std::mt19937_64 a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(uniform_below(a, 1000) == uniform_below(b, 1000));
}

TEST_CASE("slugs") {
    CHECK(is_valid_slug("red-wine"));
    CHECK(is_valid_slug("a_1"));
    CHECK_FALSE(is_valid_slug(""));
    CHECK_FALSE(is_valid_slug("Red"));
    CHECK_FALSE(is_valid_slug("a b"));
    CHECK(slugify("Red Wine") == "red_wine");
    CHECK(slugify("  Cheese  Burger ") == "cheese_burger");
    CHECK(is_valid_slug(slugify("Crème Brûlée!")));
}

TEST_CASE("atomic text write replaces the file") {
    testing::TempDir dir;
    write_text_atomic(dir / "a.txt", "one");
    write_text_atomic(dir / "a.txt", "two");
    CHECK(read_text(dir / "a.txt") == "two");
    CHECK(std::distance(std::filesystem::directory_iterator(dir.path()), std::filesystem::directory_iterator()) == 1);
}

}  // TEST_SUITE
