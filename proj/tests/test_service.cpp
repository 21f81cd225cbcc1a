#include <doctest.h>
#include <httplib.h>

#include <thread>

#include "cyclevol/errors.hpp"
#include "cyclevol/png.hpp"
#include "cyclevol/rle.hpp"
#include "cyclevol/service.hpp"
#include "test_support.hpp"

using namespace cyclevol;
using namespace cyclevol::service;
using nlohmann::json;

namespace {

Dataset small_dataset() { return make_synthetic_dataset(51, 1, 2, {10, 32, 32}, 0.02); }

json body(const ApiResponse& r) { return json::parse(r.body); }

std::string create(Service& svc, const std::string& volume, int label, const std::string& mode, int seed = 1) {
    const auto r = svc.create_session(json{{"volume_id", volume}, {"label", label}, {"mode", mode}, {"seed", seed}}.dump());
    REQUIRE(r.status == 200);
    return body(r).at("session_id").get<std::string>();
}

json click(int slice, int y, int x, const std::string& polarity = "foreground") {
    return {{"slice_idx", slice}, {"polyline", {{y, x}}}, {"polarity", polarity}, {"brush_radius", 0}};
}

// Runs the service on an ephemeral port for the lifetime of the object.
struct LiveServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    explicit LiveServer(Service& svc) {
        svc.install(server);
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~LiveServer() {
        server.stop();
        thread.join();
    }
};

}  // namespace

TEST_CASE("RLE round trip") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const int h = 1 + static_cast<int>(rng.uniform() * 12), w = 1 + static_cast<int>(rng.uniform() * 12);
        const Mask2D m = testing::random_mask(rng, h, w, rng.uniform());
        REQUIRE(rle_decode(rle_encode(m), h, w) == m);
        REQUIRE(mask_from_rle_json(json::parse(rle_json(m).dump())) == m);
    }
    Mask2D m(2, 3);
    m.at(0, 0) = 1;
    m.at(1, 2) = 1;
    CHECK(rle_encode(m) == std::vector<std::uint32_t>{0, 1, 4, 1});
    CHECK(rle_encode(Mask2D(2, 2)) == std::vector<std::uint32_t>{4});
    CHECK(rle_json(m).dump() == R"({"dims":[2,3],"rle":[0,1,4,1]})");
    CHECK_THROWS_AS(rle_decode({1, 2}, 2, 3), ValidationError);
}

TEST_CASE("PNG encoding") {
    const std::vector<float> px{0.0f, 0.5f, 1.0f, 0.25f};
    const std::string png = encode_png({px, 2, 2});
    REQUIRE(png.size() > 8);
    CHECK(png.substr(0, 8) == std::string("\x89PNG\r\n\x1a\n", 8));
}

TEST_CASE("handlers: create, scribble, propagate, masks, suggest, metrics, delete") {
    const auto dir = testing::fresh_dir("service_handlers");
    Service svc(small_dataset(), propnet::NetParams::initialize(51), dir);
    const auto& sample = svc.dataset().test[0];
    const std::string vid = sample.volume.id();

    const auto vols = body(svc.list_volumes());
    CHECK(vols.at("volumes").size() == 3);
    CHECK(vols.at("label_names").at("1").is_string());

    const std::string sid = create(svc, vid, 1, "click");
    CHECK(sid == "s000001");
    CHECK(svc.session_count() == 1);
    CHECK(svc.propagate(sid).status == 409);
    CHECK(svc.suggest(sid).status == 409);

    const int t = inference::select_memory_slice(sample.mask, 1).index;
    const auto sc = svc.post_scribble(sid, click(t, 16, 16).dump());
    REQUIRE(sc.status == 200);
    const auto sc_mask = mask_from_rle_json(body(sc));
    CHECK(sc_mask.at(16, 16) == 1);
    CHECK(body(sc).at("slice_idx") == t);

    // The handler output equals the session operation it wraps.
    interact::Session direct(sample.volume, &sample.mask, 1, interact::Mode::click, svc.network(), 1);
    CHECK(direct.add_scribble(t, {{{16, 16}}, interact::Polarity::foreground, 0}).threshold() == sc_mask);

    const auto pr = svc.propagate(sid);
    REQUIRE(pr.status == 200);
    const auto pj = body(pr);
    CHECK(pj.at("round") == 1);
    REQUIRE(pj.at("per_slice_dsc").size() == 10);
    CHECK(pj.at("per_slice_dsc")[t].is_null());
    const auto& run = direct.propagate();
    const auto report = metrics::score_run(run, sample.mask);
    CHECK(pj.at("dsc").get<double>() == report.per_volume.DSC);

    for (int i = 0; i < 10; ++i) {
        const auto m = svc.get_mask(sid, i);
        REQUIRE(m.status == 200);
        const auto mj = body(m);
        CHECK(mj.at("round") == 2);
        CHECK(mask_from_rle_json(mj) == run.masks[i].threshold());
    }
    CHECK(svc.get_mask(sid, 10).status == 404);
    CHECK(svc.get_mask(sid, -1).status == 404);

    CHECK(body(svc.suggest(sid)).at("slice_idx") ==
          interact::select_worst_slice(run, sample.mask, direct.refined_slices()).index);
    CHECK(body(svc.metrics(sid)) == metrics::to_json(report));

    CHECK(body(svc.delete_session(sid)).at("deleted") == sid);
    CHECK(svc.session_count() == 0);
    CHECK(svc.get_mask(sid, 0).status == 404);
    CHECK(svc.delete_session(sid).status == 404);
    CHECK(!std::filesystem::exists(dir / "sessions" / (sid + ".json")));
}

TEST_CASE("handler error statuses") {
    const auto dir = testing::fresh_dir("service_errors");
    Service svc(small_dataset(), propnet::NetParams::initialize(52), dir);
    const std::string vid = svc.dataset().test[0].volume.id();

    CHECK(svc.create_session("{").status == 400);
    CHECK(svc.create_session("[1]").status == 400);
    CHECK(svc.create_session(R"({"volume_id":"nope","label":1,"mode":"click"})").status == 404);
    CHECK(svc.create_session(json{{"volume_id", vid}, {"label", 99}, {"mode", "click"}}.dump()).status == 400);
    CHECK(svc.create_session(json{{"volume_id", vid}, {"label", 1}, {"mode", "lasso"}}.dump()).status == 400);
    CHECK(svc.create_session(json{{"volume_id", vid}, {"mode", "click"}}.dump()).status == 400);
    CHECK(svc.slice_png("nope", 0).status == 404);
    CHECK(svc.slice_png(vid, 10).status == 404);
    CHECK(svc.slice_png(vid, 3).content_type == "image/png");
    CHECK(svc.suggest("s999999").status == 404);
    CHECK(svc.metrics("s999999").status == 404);
    CHECK(svc.post_scribble("s999999", click(0, 1, 1).dump()).status == 404);

    const std::string sid = create(svc, vid, 1, "scribble");
    CHECK(svc.post_scribble(sid, click(10, 1, 1).dump()).status == 400);
    CHECK(svc.post_scribble(sid, click(0, 40, 1).dump()).status == 400);
    CHECK(svc.post_scribble(sid, R"({"slice_idx":0,"polyline":[],"polarity":"foreground"})").status == 400);
    CHECK(svc.post_scribble(sid, R"({"slice_idx":0})").status == 400);
    CHECK(svc.post_scribble(sid, click(0, 1, 1, "background").dump()).status == 409);
    CHECK(svc.metrics(sid).status == 409);

    const std::string oracle = create(svc, vid, 1, "oracle");
    CHECK(svc.post_scribble(oracle, click(0, 1, 1).dump()).status == 409);

    CHECK(error_response(NotFoundError("x")).status == 404);
    CHECK(error_response(ShapeError("x")).status == 400);
    CHECK(error_response(ExhaustedError("x")).status == 409);
    CHECK(error_response(StateError("x")).status == 409);
    CHECK(error_response(std::runtime_error("x")).status == 500);
    CHECK(body(error_response(NotFoundError("gone"))).at("error") == "gone");
}

TEST_CASE("oracle sessions propagate from ground truth seeds") {
    const auto dir = testing::fresh_dir("service_oracle");
    Service svc(small_dataset(), propnet::NetParams::initialize(53), dir);
    const auto& sample = svc.dataset().test[1];
    const std::string sid = create(svc, sample.volume.id(), 2, "oracle");

    interact::Session direct(sample.volume, &sample.mask, 2, interact::Mode::oracle, svc.network(), 1);
    for (int round = 1; round <= 3; ++round) {
        const auto pj = body(svc.propagate(sid));
        const auto& run = direct.simulate_round();
        CHECK(pj.at("round") == round);
        CHECK(pj.at("dsc").get<double>() == *direct.history().back().dsc);
        for (int i = 0; i < 10; ++i) CHECK(mask_from_rle_json(body(svc.get_mask(sid, i))) == run.masks[i].threshold());
    }
}

TEST_CASE("sessions survive a restart and continue identically") {
    const auto dir = testing::fresh_dir("service_restart");
    const auto copy = testing::fresh_dir("service_restart_copy");
    const auto params = propnet::NetParams::initialize(54);
    Service running(small_dataset(), params, dir, 9);
    const auto& sample = running.dataset().test[0];
    const int t = inference::select_memory_slice(sample.mask, 1).index;
    const std::string sid = create(running, sample.volume.id(), 1, "click");
    REQUIRE(running.post_scribble(sid, click(t, 15, 15).dump()).status == 200);
    REQUIRE(running.propagate(sid).status == 200);
    std::filesystem::copy(dir, copy, std::filesystem::copy_options::recursive);

    Service restarted(small_dataset(), params, copy, 9);
    CHECK(restarted.session_count() == 1);
    auto continue_round = [&](Service& svc) {
        const int next = body(svc.suggest(sid)).at("slice_idx").get<int>();
        REQUIRE(svc.post_scribble(sid, click(next, 10, 10).dump()).status == 200);
        json out = body(svc.propagate(sid));
        for (int i = 0; i < 10; ++i) out["masks"].push_back(body(svc.get_mask(sid, i)));
        return out;
    };
    CHECK(continue_round(restarted) == continue_round(running));

    // Ids keep increasing after a reload.
    CHECK(create(restarted, sample.volume.id(), 2, "click") == "s000002");
}

TEST_CASE("session seeds are derived from the service seed unless given") {
    const auto dir = testing::fresh_dir("service_seeds");
    Service svc(small_dataset(), propnet::NetParams::initialize(55), dir, 77);
    const std::string vid = svc.dataset().test[0].volume.id();
    const auto a = body(svc.create_session(json{{"volume_id", vid}, {"label", 1}, {"mode", "click"}}.dump()));
    const auto b = body(svc.create_session(json{{"volume_id", vid}, {"label", 1}, {"mode", "click"}}.dump()));
    CHECK(a.at("seed") != b.at("seed"));
    const auto dir2 = testing::fresh_dir("service_seeds2");
    Service again(small_dataset(), propnet::NetParams::initialize(55), dir2, 77);
    CHECK(body(again.create_session(json{{"volume_id", vid}, {"label", 1}, {"mode", "click"}}.dump())).at("seed") ==
          a.at("seed"));
    CHECK(body(svc.create_session(json{{"volume_id", vid}, {"label", 1}, {"mode", "click"}, {"seed", 5}}.dump()))
              .at("seed") == 5);
}

TEST_CASE("HTTP routes over a live server") {
    const auto dir = testing::fresh_dir("service_http");
    Service svc(small_dataset(), propnet::NetParams::initialize(56), dir);
    LiveServer live(svc);
    httplib::Client cli("127.0.0.1", live.port);
    const auto& sample = svc.dataset().test[0];
    const std::string vid = sample.volume.id();

    auto vols = cli.Get("/volumes");
    REQUIRE(vols);
    CHECK(vols->status == 200);
    CHECK(json::parse(vols->body).at("volumes").size() == 3);

    auto png = cli.Get("/volumes/" + vid + "/slices/2");
    REQUIRE(png);
    CHECK(png->status == 200);
    CHECK(png->get_header_value("Content-Type") == "image/png");
    CHECK(png->body.substr(1, 3) == "PNG");
    CHECK(cli.Get("/volumes/" + vid + "/slices/99999999999")->status == 404);

    auto created = cli.Post("/sessions", json{{"volume_id", vid}, {"label", 1}, {"mode", "click"}}.dump(),
                            "application/json");
    REQUIRE(created);
    REQUIRE(created->status == 200);
    const std::string sid = json::parse(created->body).at("session_id");

    CHECK(cli.Post("/sessions/" + sid + "/propagate", "", "application/json")->status == 409);
    CHECK(cli.Post("/sessions/" + sid + "/scribbles", "not json", "application/json")->status == 400);
    CHECK(cli.Get("/sessions/nope/masks/0")->status == 404);
    CHECK(json::parse(cli.Get("/sessions/nope/suggest")->body).contains("error"));

    const int t = inference::select_memory_slice(sample.mask, 1).index;
    auto sc = cli.Post("/sessions/" + sid + "/scribbles", click(t, 16, 16).dump(), "application/json");
    REQUIRE(sc->status == 200);
    auto pr = cli.Post("/sessions/" + sid + "/propagate", "", "application/json");
    REQUIRE(pr->status == 200);
    CHECK(json::parse(pr->body).at("per_slice_dsc").size() == 10);
    for (int i = 0; i < 10; ++i) {
        auto m = cli.Get("/sessions/" + sid + "/masks/" + std::to_string(i));
        REQUIRE(m->status == 200);
        CHECK(mask_from_rle_json(json::parse(m->body)).height == 32);
    }
    CHECK(cli.Get("/sessions/" + sid + "/masks/10")->status == 404);
    CHECK(json::parse(cli.Get("/sessions/" + sid + "/suggest")->body) == json::parse(svc.suggest(sid).body));
    CHECK(json::parse(cli.Get("/sessions/" + sid + "/metrics")->body).at("per_volume").contains("JF"));
    CHECK(cli.Delete("/sessions/" + sid)->status == 200);
    CHECK(cli.Delete("/sessions/" + sid)->status == 404);
}

TEST_CASE("concurrent requests on one session are serialized") {
    const auto dir = testing::fresh_dir("service_concurrent");
    Service svc(small_dataset(), propnet::NetParams::initialize(57), dir);
    const auto& sample = svc.dataset().test[0];
    const std::string sid = create(svc, sample.volume.id(), 1, "click");
    const std::string other = create(svc, sample.volume.id(), 2, "click");
    std::vector<std::thread> threads;
    for (int k = 0; k < 4; ++k)
        threads.emplace_back([&, k] {
            for (int i = 0; i < 5; ++i) {
                CHECK(svc.post_scribble(sid, click(2, 4 + k, 4 + i).dump()).status == 200);
                CHECK(svc.post_scribble(other, click(3, 4 + k, 4 + i).dump()).status == 200);
            }
        });
    for (auto& t : threads) t.join();
    svc.with_session(sid, [](interact::Session& s) { CHECK(s.interactions().at(2).size() == 20); });
    svc.with_session(other, [](interact::Session& s) { CHECK(s.interactions().at(3).size() == 20); });
}
