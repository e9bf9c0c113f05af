#include "foodcrowd/error.hpp"
#include "foodcrowd/scorer.hpp"

#include "../support/fixtures.hpp"

#include <doctest.h>
#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <thread>

using namespace foodcrowd;
using namespace foodcrowd::scorer;

namespace {

Detection det(double objectness) { return {NormBox{0.1, 0.1, 0.2, 0.2}, objectness}; }

struct Stocked {
    testing::TempDir dir{"score"};
    crawler::ImageStore store{dir / "images"};
    std::vector<ImageRecord> records;

    explicit Stocked(int n) {
        for (int i = 0; i < n; ++i) {
            auto png = crawler::encode_png(8 + i % 5, 8 + i % 3, static_cast<std::uint64_t>(i));
            ImageRecord r;
            r.content_hash = sha256_hex(png);
            r.image_id = crawler::image_id_for(r.content_hash);
            r.label_id = "doughnut";
            r.source_url = "http://x/" + std::to_string(i);
            r.rank = i + 1;
            r.width_px = 8 + i % 5;
            r.height_px = 8 + i % 3;
            store.put(png, r.content_hash, ImageFormat::Png);
            records.push_back(r);
        }
    }
};

struct DetectServer {
    httplib::Server server;
    std::jthread thread;
    int port = 0;
    std::atomic<int> active{0}, peak{0};

    explicit DetectServer(std::string body, int status = 200) {
        server.Post("/v1/detect", [this, body, status](const httplib::Request& req, httplib::Response& res) {
            int now = ++active;
            int p = peak.load();
            while (now > p && !peak.compare_exchange_weak(p, now)) {}
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
            --active;
            if (req.body.empty()) {
                res.status = 400;
                return;
            }
            res.status = status;
            res.set_content(body, "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::jthread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~DetectServer() { server.stop(); }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

}  // namespace

TEST_SUITE("scorer") {

TEST_CASE("aggregation takes the strongest region") {
    CHECK(aggregate_foodness({}) == 0.0);
    std::vector<Detection> two{det(0.3), det(0.9)};
    CHECK(aggregate_foodness(two) == doctest::Approx(0.9));
    std::vector<Detection> one{det(0.42)};
    CHECK(aggregate_foodness(one) == doctest::Approx(0.42));
}

TEST_CASE("aggregation stays in the unit interval") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        std::vector<Detection> ds;
        for (int i = 0, n = static_cast<int>(rng() % 6); i < n; ++i) ds.push_back(det(u(rng)));
        double f = aggregate_foodness(ds);
        CHECK(f >= 0.0);
        CHECK(f <= 1.0);
        for (const auto& d : ds) CHECK(f >= d.objectness);
    }
}

TEST_CASE("detection validity") {
    CHECK(valid_detection(det(0)));
    CHECK(valid_detection(det(1)));
    CHECK_FALSE(valid_detection(det(1.01)));
    CHECK_FALSE(valid_detection(det(-0.1)));
    CHECK_FALSE(valid_detection({NormBox{0.9, 0.1, 0.2, 0.2}, 0.5}));
}

TEST_CASE("fixed mock backend") {
    MockBackend mock(std::vector<Detection>{det(0.3), det(0.9)});
    auto png = crawler::encode_png(4, 4, 1);
    auto r = score_image("img", png, mock);
    CHECK(r.image_id == "img");
    CHECK(r.detections.size() == 2);
    CHECK(r.foodness == doctest::Approx(0.9));
    CHECK_THROWS_AS(MockBackend(std::vector<Detection>{det(2)}), ValidationError);
}

TEST_CASE("keyed mock backend is deterministic and valid") {
    MockBackend a("k1"), b("k1"), c("k2");
    int differ = 0;
    for (int i = 0; i < 50; ++i) {
        auto h = testing::fake_hash(static_cast<std::uint64_t>(i));
        auto da = a.detect({}, h);
        CHECK(da == b.detect({}, h));
        for (const auto& d : da) CHECK(valid_detection(d));
        if (da != c.detect({}, h)) ++differ;
    }
    CHECK(differ > 25);
}

TEST_CASE("sidecar backend") {
    testing::TempDir dir;
    auto png = crawler::encode_png(4, 4, 9);
    auto hash = sha256_hex(png);
    SidecarBackend sidecar(dir.path());
    CHECK_THROWS_AS(score_image("a", png, sidecar), BackendUnavailable);
    write_text_atomic(dir / (hash + ".score"), "0.77\n");
    CHECK(score_image("a", png, sidecar).foodness == doctest::Approx(0.77));
    write_text_atomic(dir / (hash + ".score"), "1.5");
    CHECK_THROWS_AS(score_image("a", png, sidecar), ValidationError);
    write_text_atomic(dir / (hash + ".score"), "abc");
    CHECK_THROWS_AS(score_image("a", png, sidecar), ValidationError);
}

TEST_CASE("undecodable bytes are a decode error") {
    MockBackend mock;
    Bytes junk{'x', 'y', 'z'};
    CHECK_THROWS_AS(score_image("a", junk, mock), DecodeError);
}

TEST_CASE("filter partitions at the threshold") {
    std::vector<ImageRecord> rs;
    double values[] = {0.0, 0.5, 0.67, 0.6699999, 0.9, 1.0};
    for (int i = 0; i < 6; ++i) rs.push_back(testing::scored_record("doughnut", i + 1, values[i]));

    auto p = filter_partition(rs, 0.67);
    CHECK(p.kept.size() == 3);
    CHECK(p.rejected.size() == 3);
    for (const auto& r : p.kept) {
        CHECK(r.status == ImageStatus::PendingReview);
        CHECK(*r.foodness >= 0.67);
    }
    for (const auto& r : p.rejected) {
        CHECK(r.status == ImageStatus::AutoRejected);
        CHECK(*r.foodness < 0.67);
    }

    CHECK(filter_partition(rs, 0.0).kept.size() == 6);
    auto top = filter_partition(rs, 1.0);
    REQUIRE(top.kept.size() == 1);
    CHECK(*top.kept[0].foodness == 1.0);
}

TEST_CASE("filter names the first unscored record") {
    std::vector<ImageRecord> rs{testing::scored_record("doughnut", 1, 0.5), testing::scored_record("doughnut", 2, 0.5)};
    rs[1].foodness.reset();
    rs[1].status = ImageStatus::Fetched;
    try {
        filter_partition(rs, 0.5);
        FAIL("expected MissingScore");
    } catch (const MissingScore& e) {
        CHECK(e.image_id() == rs[1].image_id);
    }
}

TEST_CASE("filter is a partition for any threshold") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ImageRecord> rs;
    for (int i = 0; i < 300; ++i) rs.push_back(testing::scored_record("cookie", i + 1, u(rng)));
    for (int t = 0; t <= 100; ++t) {
        double th = t / 100.0;
        auto p = filter_partition(rs, th);
        auto expect = std::count_if(rs.begin(), rs.end(), [&](const ImageRecord& r) { return *r.foodness >= th; });
        CHECK(p.kept.size() == static_cast<std::size_t>(expect));
        CHECK(p.kept.size() + p.rejected.size() == rs.size());
    }
}

TEST_CASE("parse_detections") {
    auto ds = parse_detections(R"({"detections":[{"x":0.1,"y":0.2,"w":0.3,"h":0.4,"objectness":0.8}]})");
    REQUIRE(ds.size() == 1);
    CHECK(ds[0].box.h == doctest::Approx(0.4));
    CHECK(parse_detections(R"({"detections":[]})").empty());
    CHECK_THROWS_AS(parse_detections("nope"), ValidationError);
    CHECK_THROWS_AS(parse_detections(R"({"boxes":[]})"), ValidationError);
    CHECK_THROWS_AS(parse_detections(R"({"detections":[{"x":0.9,"y":0.2,"w":0.3,"h":0.4,"objectness":0.8}]})"),
                    ValidationError);
}

TEST_CASE("remote backend posts image bytes") {
    DetectServer srv(R"({"detections":[{"x":0,"y":0,"w":0.5,"h":0.5,"objectness":0.3},
                                       {"x":0.5,"y":0.5,"w":0.5,"h":0.5,"objectness":0.61}]})");
    RemoteBackend remote(srv.endpoint(), 2);
    auto png = crawler::encode_png(4, 4, 2);
    CHECK(score_image("a", png, remote).foodness == doctest::Approx(0.61));
}

TEST_CASE("remote backend bounds in-flight requests") {
    DetectServer srv(R"({"detections":[]})");
    RemoteBackend remote(srv.endpoint(), 2);
    Stocked s(12);
    auto out = score_records(s.records, s.store, remote, 6);
    for (const auto& r : out) CHECK(*r.foodness == 0.0);
    CHECK(srv.peak.load() <= 2);
}

TEST_CASE("remote backend failures are unavailability") {
    DetectServer srv("{}", 503);
    RemoteBackend remote(srv.endpoint());
    auto png = crawler::encode_png(4, 4, 2);
    CHECK_THROWS_AS(score_image("a", png, remote), BackendUnavailable);
    RemoteBackend nowhere("http://127.0.0.1:1", 1, std::chrono::milliseconds(500));
    CHECK_THROWS_AS(score_image("a", png, nowhere), BackendUnavailable);
}

TEST_CASE("score_records is independent of parallelism") {
    Stocked s(40);
    MockBackend mock("det");
    auto one = score_records(s.records, s.store, mock, 1);
    auto many = score_records(s.records, s.store, mock, 8);
    CHECK(one == many);
    for (std::size_t i = 0; i < one.size(); ++i) {
        CHECK(one[i].status == ImageStatus::Scored);
        CHECK(one[i].image_id == s.records[i].image_id);
        auto expect = aggregate_foodness(mock.detect({}, one[i].content_hash));
        CHECK(*one[i].foodness == expect);
    }
}

TEST_CASE("score_records leaves later statuses alone and surfaces errors") {
    Stocked s(3);
    s.records[1].status = ImageStatus::AutoRejected;
    s.records[1].foodness = 0.1;
    MockBackend mock(std::vector<Detection>{det(0.9)});
    auto out = score_records(s.records, s.store, mock);
    CHECK(out[1].status == ImageStatus::AutoRejected);
    CHECK(*out[1].foodness == 0.1);
    CHECK(*out[0].foodness == doctest::Approx(0.9));

    SidecarBackend empty(s.dir / "nothing");
    CHECK_THROWS_AS(score_records(s.records, s.store, empty), BackendUnavailable);
}

}  // TEST_SUITE
