#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "cyclevol/errors.hpp"
#include "cyclevol/metrics.hpp"
#include "test_support.hpp"

using namespace cyclevol;
using namespace cyclevol::metrics;

namespace {

using Pixels = std::vector<std::pair<int, int>>;

Pixels pixels_of(const Mask2D& m) {
    Pixels out;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(y, x)) out.emplace_back(y, x);
    return out;
}

Mask2D from_pixels(int h, int w, const Pixels& px) {
    Mask2D m(h, w);
    for (auto [y, x] : px) m.at(y, x) = 1;
    return m;
}

// Set-arithmetic oracles over explicit pixel lists.
double oracle_jaccard(const Pixels& a, const Pixels& b) {
    Pixels inter, uni;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
    return uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

double oracle_dice(const Pixels& a, const Pixels& b) {
    Pixels inter;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    return a.empty() && b.empty() ? 1.0 : 2.0 * static_cast<double>(inter.size()) / static_cast<double>(a.size() + b.size());
}

Pixels oracle_boundary(const Mask2D& m) {
    Pixels out;
    for (auto [y, x] : pixels_of(m)) {
        bool edge = false;
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
            const int yy = y + dy[k], xx = x + dx[k];
            if (yy < 0 || xx < 0 || yy >= m.height || xx >= m.width || !m.at(yy, xx)) edge = true;
        }
        if (edge) out.emplace_back(y, x);
    }
    return out;
}

// Exhaustive pairwise Chebyshev distances between boundary sets.
double oracle_boundary_f(const Mask2D& pred, const Mask2D& gt, int tol) {
    const Pixels pb = oracle_boundary(pred), gb = oracle_boundary(gt);
    if (pb.empty() && gb.empty()) return 1.0;
    auto matched = [tol](const Pixels& from, const Pixels& to) {
        if (from.empty()) return 0.0;
        int hit = 0;
        for (auto [y, x] : from) {
            int best = 1 << 30;
            for (auto [v, u] : to) best = std::min(best, std::max(std::abs(y - v), std::abs(x - u)));
            hit += best <= tol;
        }
        return static_cast<double>(hit) / static_cast<double>(from.size());
    };
    const double p = matched(pb, gb), r = matched(gb, pb);
    return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

Mask2D shifted(const Mask2D& m, int dy, int dx) {
    Mask2D out(m.height, m.width);
    for (auto [y, x] : pixels_of(m))
        if (y + dy >= 0 && y + dy < m.height && x + dx >= 0 && x + dx < m.width) out.at(y + dy, x + dx) = 1;
    return out;
}

MetricsReport report(const std::string& vol, int label, double J, double F) {
    MetricsReport r;
    r.volume_id = vol;
    r.label = label;
    r.per_volume = {J, F, 0.5 * (J + F), 0.0};
    return r;
}

}  // namespace

TEST_CASE("two-pixel example: J = 1/3, DSC = 1/2") {
    const Mask2D pred = from_pixels(2, 2, {{0, 0}, {0, 1}});
    const Mask2D gt = from_pixels(2, 2, {{0, 1}, {1, 1}});
    CHECK(jaccard(pred, gt) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(dice(pred, gt) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("identity, disjointness and empty masks") {
    const Mask2D a = testing::square(10, 10, 2, 2, 4);
    const Mask2D b = testing::square(10, 10, 7, 7, 2);
    const Mask2D empty(10, 10);
    CHECK(jaccard(a, a) == 1.0);
    CHECK(dice(a, a) == 1.0);
    CHECK(boundary_f(a, a, 0) == 1.0);
    CHECK(jaccard(a, b) == 0.0);
    CHECK(dice(a, b) == 0.0);
    CHECK(jaccard(empty, empty) == 1.0);
    CHECK(dice(empty, empty) == 1.0);
    CHECK(boundary_f(empty, empty, 2) == 1.0);
    CHECK(jaccard(a, empty) == 0.0);
    CHECK(dice(empty, a) == 0.0);
    CHECK(boundary_f(a, empty, 3) == 0.0);
}

TEST_CASE("dim mismatch and negative tolerance") {
    const Mask2D a(4, 4), b(4, 5);
    CHECK_THROWS_AS(jaccard(a, b), ShapeError);
    CHECK_THROWS_AS(dice(a, b), ShapeError);
    CHECK_THROWS_AS(boundary_f(a, b, 1), ShapeError);
    CHECK_THROWS_AS(boundary_f(a, a, -1), SpecError);
}

TEST_CASE("boundary F on shifted squares") {
    const Mask2D sq = testing::square(20, 20, 5, 5, 10);
    CHECK(boundary_f(shifted(sq, 1, 0), sq, 1) == 1.0);
    CHECK(boundary_f(shifted(sq, 0, 1), sq, 1) == 1.0);

    const Mask2D moved = shifted(sq, 0, 3);
    const double f = boundary_f(moved, sq, 1);
    CHECK(f == doctest::Approx(oracle_boundary_f(moved, sq, 1)).epsilon(1e-15));
    // Each top/bottom edge matches on 8 of 10 pixels and each inner side edge
    // only at its two corners: 18 of 36 in each direction.
    CHECK(f == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(f < 1.0);
}

TEST_CASE("boundary pixels are 4-connected edges including the image border") {
    const Mask2D full(5, 5, 1);
    const Mask2D b = boundary(full);
    CHECK(b.count() == 16);
    CHECK(b.at(2, 2) == 0);
    CHECK(pixels_of(boundary(testing::square(8, 8, 1, 1, 5))) == oracle_boundary(testing::square(8, 8, 1, 1, 5)));
}

TEST_CASE("metrics equal brute-force oracles on 1000 random 8x8 pairs") {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const double pa = rng.uniform(), pb = rng.uniform();
        const Mask2D a = testing::random_mask(rng, 8, 8, pa);
        const Mask2D b = testing::random_mask(rng, 8, 8, pb);
        const int tol = static_cast<int>(rng.uniform() * 4);
        const Pixels px = pixels_of(a), py = pixels_of(b);
        CAPTURE(trial);
        REQUIRE(jaccard(a, b) == oracle_jaccard(px, py));
        REQUIRE(dice(a, b) == oracle_dice(px, py));
        REQUIRE(pixels_of(boundary(a)) == oracle_boundary(a));
        REQUIRE(boundary_f(a, b, tol) == oracle_boundary_f(a, b, tol));
    }
}

TEST_CASE("symmetry, Dice-Jaccard identity and monotone tolerance") {
    Rng rng(77);
    for (int trial = 0; trial < 300; ++trial) {
        const int h = 4 + static_cast<int>(rng.uniform() * 20), w = 4 + static_cast<int>(rng.uniform() * 20);
        const Mask2D a = testing::random_mask(rng, h, w, rng.uniform());
        const Mask2D b = testing::random_mask(rng, h, w, rng.uniform());
        CAPTURE(trial);
        REQUIRE(jaccard(a, b) == jaccard(b, a));
        REQUIRE(dice(a, b) == dice(b, a));
        const double J = jaccard(a, b);
        REQUIRE(std::abs(dice(a, b) - 2 * J / (1 + J)) <= 1e-9);
        double prev = -1;
        for (int tol = 0; tol <= 6; ++tol) {
            const double f = boundary_f(a, b, tol);
            REQUIRE(f == boundary_f(b, a, tol));
            REQUIRE(f >= prev);
            REQUIRE(f >= 0.0);
            REQUIRE(f <= 1.0);
            prev = f;
        }
    }
}

TEST_CASE("default boundary tolerance") {
    CHECK(default_boundary_tolerance(64, 64) == 1);
    CHECK(default_boundary_tolerance(512, 512) == 6);
    CHECK(default_boundary_tolerance(1, 1) == 1);
}

TEST_CASE("score_run excludes the memory slice and averages the rest") {
    const Dims d{4, 8, 8};
    std::vector<std::uint8_t> labels(d.voxel_count(), 0);
    for (int t = 0; t < 4; ++t)
        for (int i = 0; i < 16; ++i) labels[t * 64 + i] = 1;
    const MaskVolume gt(d, labels, {{1, "organ"}});

    PropagationRun run;
    run.volume_id = "v";
    run.label = 1;
    run.memory_slice = {"v", 1};
    for (int t = 0; t < 4; ++t) run.masks.push_back(ProbMap::from_mask(gt.binary_slice(t, 1)));
    run.provenance.assign(4, propnet::MaskProvenance::predicted);

    auto r = score_run(run, gt);
    REQUIRE(r.per_slice.size() == 3);
    CHECK(r.per_slice[0].slice_idx == 0);
    CHECK(r.per_slice[1].slice_idx == 2);
    CHECK(r.per_volume.J == 1.0);
    CHECK(r.per_volume.F == 1.0);
    CHECK(r.per_volume.DSC == 1.0);

    // Emptying slice 3 and breaking the memory slice only moves slice 3.
    run.masks[3] = ProbMap::from_mask(Mask2D(8, 8));
    run.masks[1] = ProbMap::from_mask(Mask2D(8, 8));
    r = score_run(run, gt);
    CHECK(r.per_slice[2].DSC == 0.0);
    CHECK(r.per_volume.DSC == doctest::Approx(2.0 / 3.0));
    CHECK(std::abs(r.per_volume.JF - 0.5 * (r.per_volume.J + r.per_volume.F)) <= 1e-9);

    // Soft probabilities are thresholded at the given level.
    run.masks[3].probs.assign(64, 0.4f);
    for (int i = 0; i < 16; ++i) run.masks[3].probs[i] = 0.6f;
    CHECK(score_run(run, gt).per_slice[2].DSC == 1.0);
    CHECK(score_run(run, gt, 0.7).per_slice[2].DSC == 0.0);

    run.masks.pop_back();
    CHECK_THROWS_AS(score_run(run, gt), ShapeError);
}

TEST_CASE("report JSON round trip") {
    MetricsReport r = report("vol7", 3, 0.25, 0.5);
    r.per_slice = {{0, 0.1, 0.2, 0.3}, {2, 0.4, 0.5, 0.6}};
    const auto back = report_from_json(to_json(r));
    CHECK(to_json(back) == to_json(r));
    CHECK_THROWS_AS(report_from_json(nlohmann::json{{"label", 1}}), FormatError);
}

TEST_CASE("relative improvement") {
    const auto a = std::vector{report("v0", 1, 0.747, 0.747)};
    const auto b = std::vector{report("v0", 1, 0.769, 0.769)};
    const auto table = relative_improvement(a, b);
    REQUIRE(table.rows.size() == 1);
    CHECK(table.rows[0].relative == doctest::Approx((0.769 - 0.747) / 0.747).epsilon(1e-12));
    CHECK(100 * table.rows[0].relative == doctest::Approx(2.945).epsilon(1e-3));
    CHECK(table.improved == 1);

    const auto same = relative_improvement(a, a);
    CHECK(same.rows[0].relative == 0.0);
    CHECK(same.improved == 0);

    // Per-label means over volumes.
    const std::vector<MetricsReport> a2{report("v0", 1, 0.4, 0.4), report("v1", 1, 0.6, 0.6), report("v0", 2, 0.5, 0.5)};
    const std::vector<MetricsReport> b2{report("v1", 1, 0.9, 0.9), report("v0", 1, 0.6, 0.6), report("v0", 2, 0.4, 0.4)};
    const auto t2 = relative_improvement(a2, b2);
    REQUIRE(t2.rows.size() == 2);
    CHECK(t2.rows[0].jf_a == doctest::Approx(0.5));
    CHECK(t2.rows[0].jf_b == doctest::Approx(0.75));
    CHECK(t2.rows[0].relative == doctest::Approx(0.5));
    CHECK(t2.rows[1].relative == doctest::Approx(-0.2));
    CHECK(t2.improved == 1);

    CHECK_THROWS_AS(relative_improvement(a2, b), KeyError);
    CHECK_THROWS_AS(relative_improvement(a, std::vector{report("v9", 1, 0.5, 0.5)}), KeyError);
    CHECK_THROWS_AS(relative_improvement(std::vector{report("v0", 1, 0, 0)}, b), ValidationError);
}

TEST_CASE("CSV layouts") {
    std::vector<MetricsReport> reports{report("v0", 1, 0.5, 0.75), report("v1", 6, 0.25, 0.25)};
    reports[0].per_volume.DSC = 0.6;
    reports[0].per_slice = {{0, 0.5, 0.75, 0.6}};
    const LabelNames names{{1, "liver"}};

    const std::string runs = per_run_csv(reports, names);
    CHECK(runs == "volume_id,label,name,J,F,JF,DSC\n"
                  "v0,1,liver,50.00,75.00,62.50,60.00\n"
                  "v1,6,label6,25.00,25.00,25.00,0.00\n");
    CHECK(per_slice_csv(reports) == "volume_id,label,slice_idx,J,F,DSC\nv0,1,0,0.5,0.75,0.6\n");
    reports[0].per_slice[0].DSC = 1.0 / 3.0;
    const std::string csv = per_slice_csv(reports);
    CHECK(std::strtod(csv.substr(csv.rfind(',') + 1).c_str(), nullptr) == 1.0 / 3.0);

    const auto blocks = summarize(reports, {6});
    REQUIRE(blocks.size() == 2);
    CHECK(blocks[0].runs == 1);
    CHECK(blocks[1].runs == 1);
    CHECK(summary_csv(blocks) == "block,runs,J,F,JF,DSC\nseen,1,50.00,75.00,62.50,60.00\nunseen,1,25.00,25.00,25.00,0.00\n");

    const auto table = relative_improvement(std::vector{report("v0", 1, 0.747, 0.747)},
                                            std::vector{report("v0", 1, 0.769, 0.769)});
    CHECK(improvement_csv(table, names) == "label,name,JF_A,JF_B,relative_improvement_pct\n1,liver,74.70,76.90,2.945\n");
}
