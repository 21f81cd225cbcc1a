#include <doctest.h>

#include <fstream>
#include <set>

#include "cyclevol/dataset.hpp"
#include "cyclevol/errors.hpp"
#include "test_support.hpp"

using namespace cyclevol;

namespace {

SyntheticSpec three_organ_spec(std::uint64_t seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.n_volumes = 2;
    spec.dims = {32, 64, 64};
    const auto seen = seen_organs();
    spec.organ_set = {seen[0], seen[1], seen[2]};
    return spec;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("generate_synthetic: every organ present as its own label") {
    const auto samples = generate_synthetic(three_organ_spec(7));
    REQUIRE(samples.size() == 2);
    for (const auto& s : samples) {
        CHECK(s.mask.present_labels() == std::vector<int>{1, 2, 3});
        CHECK(s.volume.dims() == Dims{32, 64, 64});
    }
}

TEST_CASE("generate_synthetic is a pure function of the spec") {
    const auto a = generate_synthetic(three_organ_spec(7));
    const auto b = generate_synthetic(three_organ_spec(7));
    const auto c = generate_synthetic(three_organ_spec(8));
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(encode_vseg(a[i].volume, a[i].mask) == encode_vseg(b[i].volume, b[i].mask));
        CHECK_FALSE(a[i].volume == c[i].volume);
    }
}

TEST_CASE("noise-free volumes are piecewise constant per shape") {
    SyntheticSpec spec = three_organ_spec(3);
    spec.organ_set = seen_organs();
    const auto samples = generate_synthetic(spec);
    std::set<float> expected{0.0f, kBodyIntensity};
    for (const auto& o : spec.organ_set) expected.insert(static_cast<float>(o.intensity));
    for (const auto& s : samples) {
        std::set<float> seen(s.volume.voxels().begin(), s.volume.voxels().end());
        CHECK(seen == expected);
        // Each organ voxel carries exactly its organ's intensity.
        for (std::size_t i = 0; i < s.mask.labels().size(); ++i) {
            const int label = s.mask.labels()[i];
            if (label == 0) continue;
            const auto& organ = spec.organ_set[label - 1];
            REQUIRE(s.volume.voxels()[i] == static_cast<float>(organ.intensity));
        }
    }
}

TEST_CASE("organ areas vary smoothly along the slice axis") {
    const auto samples = generate_synthetic(three_organ_spec(11));
    for (const auto& s : samples)
        for (int label : s.mask.present_labels()) {
            const auto areas = s.mask.label_areas(label);
            // A single contiguous run of non-empty slices.
            int runs = 0;
            for (std::size_t t = 0; t < areas.size(); ++t)
                if (areas[t] > 0 && (t == 0 || areas[t - 1] == 0)) ++runs;
            CHECK(runs == 1);
        }
}

TEST_CASE("mirror pair is left/right symmetric") {
    SyntheticSpec spec;
    spec.seed = 5;
    spec.n_volumes = 1;
    spec.dims = {16, 32, 32};
    spec.organ_set = seen_organs();
    const auto s = generate_synthetic(spec).front();
    for (int t = 0; t < 16; ++t) {
        const Mask2D l = s.mask.binary_slice(t, 4), r = s.mask.binary_slice(t, 5);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) REQUIRE(l.at(y, x) == r.at(y, 31 - x));
    }
}

TEST_CASE("generate_synthetic rejects invalid specs") {
    SyntheticSpec spec = three_organ_spec(1);
    spec.organ_set.clear();
    CHECK_THROWS_AS(generate_synthetic(spec), SpecError);
    spec = three_organ_spec(1);
    spec.dims.slices = 2;
    CHECK_THROWS_AS(generate_synthetic(spec), SpecError);
    spec = three_organ_spec(1);
    spec.noise_sigma = -1;
    CHECK_THROWS_AS(generate_synthetic(spec), SpecError);
}

TEST_CASE("VSEG1 save/load round trip is bit exact") {
    const auto dir = testing::fresh_dir("vseg");
    const auto s = testing::small_samples(2, 1, {8, 16, 16}, 0.05).front();
    save_volume(s.volume, s.mask, dir / "a.vseg");
    const auto [v, m] = load_volume(dir / "a.vseg");
    CHECK(v == s.volume);
    CHECK(m == s.mask);
    save_mask(s.mask, s.volume.id(), dir / "m.vseg");
    CHECK(load_mask(dir / "m.vseg") == s.mask);
}

TEST_CASE("VSEG1 truncated payload names the dims") {
    const auto s = testing::small_samples(2, 1, {8, 16, 16}).front();
    const std::string bytes = encode_vseg(s.volume, s.mask);
    // One voxel row short of the declared dims.
    const std::string cut = bytes.substr(0, bytes.size() - 16);
    try {
        decode_vseg(cut);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("dims") != std::string::npos);
    }
}

TEST_CASE("VSEG1 rejects bad magic and malformed headers") {
    const auto s = testing::small_samples(2, 1, {8, 16, 16}).front();
    std::string bytes = encode_vseg(s.volume, s.mask);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_vseg(bad), FormatError);
    CHECK_THROWS_AS(decode_vseg(bytes.substr(0, 7)), FormatError);
    CHECK_THROWS_AS(decode_vseg(bytes + "x"), FormatError);
}

TEST_CASE("MaskVolume rejects labels without a name") {
    std::vector<std::uint8_t> labels(3 * 4 * 4, 0);
    labels[5] = 9;
    CHECK_THROWS_AS(MaskVolume({3, 4, 4}, labels, {{1, "a"}}), ValidationError);
    CHECK_NOTHROW(MaskVolume({3, 4, 4}, labels, {{9, "b"}}));
}

TEST_CASE("Volume validates intensities and slice count") {
    CHECK_THROWS_AS(Volume("v", {2, 2, 2}, std::vector<float>(8, 0.5f)), ValidationError);
    std::vector<float> vox(12, 0.5f);
    vox[3] = 1.5f;
    CHECK_THROWS_AS(Volume("v", {3, 2, 2}, vox), ValidationError);
    vox[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(Volume("v", {3, 2, 2}, vox), ValidationError);
}

TEST_CASE("slice access and bounds") {
    const auto s = testing::small_samples(4, 1, {32, 64, 64}).front();
    const auto v0 = s.volume.slice(0);
    CHECK(v0.height == 64);
    CHECK(v0.width == 64);
    CHECK(v0.data.size() == 64u * 64u);
    CHECK_THROWS_AS(s.volume.slice(32), BoundsError);
    CHECK_THROWS_AS(s.mask.slice(-1), BoundsError);
    const auto present = s.mask.present_labels();
    for (int t = 0; t < 32; ++t)
        for (auto l : s.mask.slice(t).data)
            if (l) CHECK(std::find(present.begin(), present.end(), l) != present.end());
}

TEST_CASE("dataset write/read round trip and split contents") {
    const auto dir = testing::fresh_dir("dataset");
    const auto ds = make_synthetic_dataset(9, 3, 2, {8, 16, 16}, 0.02);
    write_dataset(ds, dir);
    CHECK(std::filesystem::exists(dir / "manifest.json"));
    CHECK(std::filesystem::exists(dir / "train" / "vol000.vseg"));
    CHECK(std::filesystem::exists(dir / "test" / "vol003.vseg"));
    const auto back = read_dataset(dir);
    REQUIRE(back.train.size() == 3);
    REQUIRE(back.test.size() == 2);
    CHECK(back.label_names == ds.label_names);
    CHECK(back.unseen_labels == ds.unseen_labels);
    for (std::size_t i = 0; i < 3; ++i) CHECK(back.train[i].volume == ds.train[i].volume);
    for (const auto& s : back.train)
        for (int u : back.unseen_labels)
            for (auto a : s.mask.label_areas(u)) CHECK(a == 0);
    for (const auto& s : back.test)
        for (int u : back.unseen_labels) {
            const auto areas = s.mask.label_areas(u);
            CHECK(std::accumulate(areas.begin(), areas.end(), std::size_t{0}) > 0);
        }
    CHECK_THROWS_AS(back.find("nope"), NotFoundError);
}
