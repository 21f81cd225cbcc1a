#include "cyclevol/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "cyclevol/errors.hpp"
#include "cyclevol/rng.hpp"

namespace cyclevol {

namespace {

constexpr double kPi = std::numbers::pi;

// Sampled parameters of one organ instance in voxel units.
struct Instance {
    ShapeFamily family{};
    double ct = 0, cy = 0, cx = 0;
    double half_t = 1;
    double radius = 1;
    double aspect = 1;   // ellipsoid y/x radius ratio
    double bend = 0;     // tube centerline amplitude
    double phase = 0;
    int lobes = 3;
    double lobe_depth = 0.25;
    double arc_span = 0.5;  // half angular span, radians
    double arc_width = 1;
    bool mirrored = false;
    int mirror_width = 0;
};

double sample(Rng& rng, const Range& r) { return rng.uniform(r.lo, r.hi); }

Instance draw(const OrganSpec& organ, const Dims& dims, Rng& rng) {
    const double size = std::min(dims.height, dims.width);
    Instance s;
    s.family = organ.family;
    s.ct = sample(rng, organ.center_t) * (dims.slices - 1);
    s.cy = sample(rng, organ.center_y) * (dims.height - 1);
    s.cx = sample(rng, organ.center_x) * (dims.width - 1);
    s.half_t = std::max(1.5, sample(rng, organ.half_extent_t) * dims.slices);
    s.radius = sample(rng, organ.radius) * size;
    s.aspect = rng.uniform(0.75, 1.25);
    s.bend = rng.uniform(0.03, 0.07) * size;
    s.phase = rng.uniform(0.0, 2.0 * kPi);
    s.lobes = rng.uniform_int(3, 5);
    s.lobe_depth = rng.uniform(0.15, 0.3);
    s.arc_span = rng.uniform(0.35, 0.55);
    s.arc_width = rng.uniform(0.018, 0.028) * size;
    return s;
}

bool inside(const Instance& s, double t, double y, double x) {
    if (s.mirrored) x = s.mirror_width - 1 - x;
    const double u = (t - s.ct) / s.half_t;
    if (std::abs(u) >= 1.0) return false;
    const double taper = std::sqrt(1.0 - u * u);
    switch (s.family) {
        case ShapeFamily::ellipsoid: {
            const double ry = s.radius * s.aspect, rx = s.radius / s.aspect;
            const double dy = (y - s.cy) / ry, dx = (x - s.cx) / rx;
            return dy * dy + dx * dx <= taper * taper;
        }
        case ShapeFamily::bent_tube: {
            const double yc = s.cy + s.bend * std::sin(2.5 * u + s.phase);
            const double xc = s.cx + 0.6 * s.bend * std::cos(2.0 * u + s.phase);
            const double r = s.radius * std::sqrt(taper);
            return (y - yc) * (y - yc) + (x - xc) * (x - xc) <= r * r;
        }
        case ShapeFamily::lobed_blob: {
            const double dy = y - s.cy, dx = x - s.cx;
            const double theta = std::atan2(dy, dx);
            const double r = s.radius * taper * (1.0 + s.lobe_depth * std::cos(s.lobes * theta + s.phase + 1.5 * u));
            return dy * dy + dx * dx <= r * r;
        }
        case ShapeFamily::arc: {
            // Band of a ring centered at (cy, cx), on the side facing -x.
            const double dy = y - s.cy, dx = x - s.cx;
            const double dist = std::sqrt(dy * dy + dx * dx);
            double off = std::atan2(dy, dx) - (kPi + 0.4 * u);
            off = std::remainder(off, 2.0 * kPi);
            const double w = s.arc_width * std::sqrt(taper) + 0.5;
            return std::abs(dist - s.radius) <= w && std::abs(off) <= s.arc_span;
        }
    }
    return false;
}

void validate(const SyntheticSpec& spec) {
    if (spec.n_volumes <= 0) throw SpecError("n_volumes must be positive");
    if (spec.dims.slices < 3 || spec.dims.height < 8 || spec.dims.width < 8)
        throw SpecError("dims must be at least (3, 8, 8)");
    if (spec.organ_set.empty()) throw SpecError("organ_set is empty");
    if (!(spec.noise_sigma >= 0.0)) throw SpecError("noise_sigma must be >= 0");
    std::set<int> labels;
    for (const auto& o : spec.organ_set) {
        if (o.label < 1 || o.label > 255) throw SpecError("organ label must be in [1,255]");
        if (!labels.insert(o.label).second) throw SpecError("duplicate organ label " + std::to_string(o.label));
        if (o.mirror_of && !labels.contains(*o.mirror_of))
            throw SpecError("organ " + std::to_string(o.label) + " mirrors a label that does not precede it");
        if (o.intensity < 0.0 || o.intensity > 1.0) throw SpecError("organ intensity outside [0,1]");
    }
}

}  // namespace

std::string to_string(ShapeFamily f) {
    switch (f) {
        case ShapeFamily::ellipsoid: return "ellipsoid";
        case ShapeFamily::bent_tube: return "bent_tube";
        case ShapeFamily::lobed_blob: return "lobed_blob";
        case ShapeFamily::arc: return "arc";
    }
    return "ellipsoid";
}

ShapeFamily shape_family_from_string(const std::string& s) {
    if (s == "ellipsoid") return ShapeFamily::ellipsoid;
    if (s == "bent_tube") return ShapeFamily::bent_tube;
    if (s == "lobed_blob") return ShapeFamily::lobed_blob;
    if (s == "arc") return ShapeFamily::arc;
    throw SpecError("unknown shape family '" + s + "'");
}

std::vector<OrganSpec> seen_organs() {
    std::vector<OrganSpec> organs(5);
    organs[0] = {1, "ellipsoid", ShapeFamily::ellipsoid, 0.55, {0.4, 0.6}, {0.30, 0.38}, {0.28, 0.33},
                 {0.30, 0.42}, {0.10, 0.13}, std::nullopt};
    organs[1] = {2, "tube", ShapeFamily::bent_tube, 0.85, {0.45, 0.55}, {0.56, 0.60}, {0.48, 0.52},
                 {0.38, 0.46}, {0.04, 0.055}, std::nullopt};
    organs[2] = {3, "lobed", ShapeFamily::lobed_blob, 0.68, {0.4, 0.6}, {0.30, 0.36}, {0.66, 0.70},
                 {0.25, 0.38}, {0.08, 0.10}, std::nullopt};
    organs[3] = {4, "pair_left", ShapeFamily::ellipsoid, 0.75, {0.35, 0.65}, {0.70, 0.75}, {0.29, 0.32},
                 {0.20, 0.30}, {0.06, 0.075}, std::nullopt};
    organs[4] = {5, "pair_right", ShapeFamily::ellipsoid, 0.75, {}, {}, {}, {}, {}, 4};
    return organs;
}

std::vector<OrganSpec> unseen_organs() {
    std::vector<OrganSpec> organs(2);
    organs[0] = {6, "arc_left", ShapeFamily::arc, 0.95, {0.4, 0.6}, {0.48, 0.52}, {0.49, 0.51},
                 {0.30, 0.40}, {0.41, 0.43}, std::nullopt};
    organs[1] = {7, "arc_right", ShapeFamily::arc, 0.95, {}, {}, {}, {}, {}, 6};
    return organs;
}

std::vector<Sample> generate_synthetic(const SyntheticSpec& spec) {
    validate(spec);
    const Dims d = spec.dims;
    LabelNames names;
    for (const auto& o : spec.organ_set) names[o.label] = o.name;

    Rng rng(spec.seed);
    std::vector<Sample> out;
    out.reserve(spec.n_volumes);
    for (int v = 0; v < spec.n_volumes; ++v) {
        std::vector<float> voxels(d.voxel_count());
        std::vector<std::uint8_t> labels(d.voxel_count());
        // Redraw until every organ is visible somewhere; overlaps can hide a small one.
        for (int attempt = 0;; ++attempt) {
            if (attempt == 100) throw SpecError("could not place every organ; check organ ranges");
            std::vector<Instance> instances;
            for (const auto& o : spec.organ_set) {
                if (o.mirror_of) {
                    const auto src = std::find_if(spec.organ_set.begin(), spec.organ_set.end(),
                                                  [&](const OrganSpec& s) { return s.label == *o.mirror_of; });
                    Instance m = instances[static_cast<std::size_t>(src - spec.organ_set.begin())];
                    m.mirrored = true;
                    m.mirror_width = d.width;
                    instances.push_back(m);
                } else {
                    instances.push_back(draw(o, d, rng));
                }
            }
            const double body_ry = 0.46 * d.height, body_rx = 0.47 * d.width;
            const double body_cy = 0.5 * (d.height - 1), body_cx = 0.5 * (d.width - 1);
            std::size_t i = 0;
            for (int t = 0; t < d.slices; ++t)
                for (int y = 0; y < d.height; ++y)
                    for (int x = 0; x < d.width; ++x, ++i) {
                        const double by = (y - body_cy) / body_ry, bx = (x - body_cx) / body_rx;
                        float intensity = by * by + bx * bx <= 1.0 ? kBodyIntensity : 0.0f;
                        std::uint8_t label = 0;
                        for (std::size_t k = 0; k < instances.size(); ++k)
                            if (inside(instances[k], t, y, x)) {
                                label = static_cast<std::uint8_t>(spec.organ_set[k].label);
                                intensity = static_cast<float>(spec.organ_set[k].intensity);
                            }
                        voxels[i] = intensity;
                        labels[i] = label;
                    }
            std::set<int> present(labels.begin(), labels.end());
            const bool all_present = std::all_of(spec.organ_set.begin(), spec.organ_set.end(),
                                                 [&](const OrganSpec& o) { return present.contains(o.label); });
            if (all_present) break;
        }
        if (spec.noise_sigma > 0.0)
            for (float& x : voxels)
                x = static_cast<float>(std::clamp(x + spec.noise_sigma * rng.normal(), 0.0, 1.0));

        char id[32];
        std::snprintf(id, sizeof id, "%s%03d", spec.id_prefix.c_str(), spec.first_index + v);
        out.push_back({Volume(id, d, std::move(voxels), {2.0, 1.0, 1.0}), MaskVolume(d, std::move(labels), names)});
    }
    return out;
}

}  // namespace cyclevol
