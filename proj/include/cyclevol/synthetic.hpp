#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cyclevol/volume.hpp"

namespace cyclevol {

enum class ShapeFamily { ellipsoid, bent_tube, lobed_blob, arc };

std::string to_string(ShapeFamily f);
ShapeFamily shape_family_from_string(const std::string& s);

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

// One procedural organ. Positions are fractions of (T, H, W); sizes are
// fractions of T (along the slice axis) or of min(H, W) (in plane).
struct OrganSpec {
    int label = 1;
    std::string name;
    ShapeFamily family = ShapeFamily::ellipsoid;
    double intensity = 0.5;
    Range center_t{0.4, 0.6};
    Range center_y{0.4, 0.6};
    Range center_x{0.4, 0.6};
    Range half_extent_t{0.25, 0.4};
    Range radius{0.08, 0.12};
    // Mirror image (x -> W-1-x) of the organ with this label, sharing its
    // sampled parameters. The mirrored organ must precede this one.
    std::optional<int> mirror_of;
};

struct SyntheticSpec {
    std::uint64_t seed = 0;
    int n_volumes = 1;
    Dims dims{32, 64, 64};
    std::vector<OrganSpec> organ_set;
    double noise_sigma = 0.0;
    std::string id_prefix = "vol";
    int first_index = 0;
};

struct Sample {
    Volume volume;
    MaskVolume mask;
};

// Three seen families (ellipsoid, bent tube, lobed blob) plus a mirror pair of
// ellipsoids, labels 1..5.
std::vector<OrganSpec> seen_organs();
// Left/right arcs (labels 6, 7); a family never present in seen_organs().
std::vector<OrganSpec> unseen_organs();

inline constexpr float kBodyIntensity = 0.25f;

// Pure function of `spec`: equal specs give bit-identical samples.
std::vector<Sample> generate_synthetic(const SyntheticSpec& spec);

}  // namespace cyclevol
