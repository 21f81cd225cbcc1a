#include "cyclevol/interact.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <queue>

#include "cyclevol/dataset.hpp"
#include "cyclevol/errors.hpp"

namespace cyclevol::interact {

using propnet::MaskProvenance;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t idx(int y, int x, int w) { return static_cast<std::size_t>(y) * w + x; }

// Squared 1D distance transform of a sampled function (Felzenszwalb & Huttenlocher).
void dt1d(const std::vector<double>& f, std::vector<double>& d) {
    const int n = static_cast<int>(f.size());
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        if (k < 0) {
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            k = 0;
            continue;
        }
        double s;
        while (true) {
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]));
            if (s > z[k]) break;
            --k;
            if (k < 0) break;
        }
        if (k < 0) {
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            k = 0;
            continue;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    d.assign(n, kInf);
    if (k < 0) return;
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        d[q] = (q - v[j]) * (q - v[j]) + f[v[j]];
    }
}

void stamp(std::vector<int>& out, int h, int w, Point c, int r, int value) {
    for (int y = std::max(0, c.y - r); y <= std::min(h - 1, c.y + r); ++y)
        for (int x = std::max(0, c.x - r); x <= std::min(w - 1, c.x + r); ++x)
            if ((y - c.y) * (y - c.y) + (x - c.x) * (x - c.x) <= r * r) out[idx(y, x, w)] = value;
}

std::vector<Point> line(Point a, Point b) {
    std::vector<Point> pts;
    const int dx = std::abs(b.x - a.x), dy = -std::abs(b.y - a.y);
    const int sx = a.x < b.x ? 1 : -1, sy = a.y < b.y ? 1 : -1;
    int err = dx + dy;
    for (Point p = a;;) {
        pts.push_back(p);
        if (p == b) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            p.x += sx;
        }
        if (e2 <= dx) {
            err += dx;
            p.y += sy;
        }
    }
    return pts;
}

Mask2D difference(const Mask2D& a, const Mask2D& b) {
    Mask2D out(a.height, a.width);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] && !b.data[i];
    return out;
}

// Uniformly chosen pixel among the maxima of `values` over `region`.
Point argmax_in(const Mask2D& region, const std::vector<double>& values, Rng& rng) {
    double best = -1.0;
    std::vector<std::size_t> ties;
    for (std::size_t i = 0; i < region.data.size(); ++i) {
        if (!region.data[i]) continue;
        if (values[i] > best) {
            best = values[i];
            ties.assign(1, i);
        } else if (values[i] == best) {
            ties.push_back(i);
        }
    }
    const std::size_t pick = ties.size() > 1 ? ties[rng.below(ties.size())] : ties.front();
    return {static_cast<int>(pick / region.width), static_cast<int>(pick % region.width)};
}

// Largest 4-connected component; the one containing the lowest pixel index wins ties.
Mask2D largest_component(const Mask2D& m) {
    const int h = m.height, w = m.width;
    std::vector<int> comp(m.data.size(), -1);
    std::vector<std::size_t> sizes;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < m.data.size(); ++s) {
        if (!m.data[s] || comp[s] >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        std::size_t n = 0;
        comp[s] = id;
        stack.assign(1, s);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            ++n;
            const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
            const int ny[4] = {y - 1, y + 1, y, y}, nx[4] = {x, x, x - 1, x + 1};
            for (int k = 0; k < 4; ++k) {
                if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
                const std::size_t j = idx(ny[k], nx[k], w);
                if (m.data[j] && comp[j] < 0) {
                    comp[j] = id;
                    stack.push_back(j);
                }
            }
        }
        sizes.push_back(n);
    }
    Mask2D out(h, w);
    if (sizes.empty()) return out;
    const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    for (std::size_t i = 0; i < comp.size(); ++i) out.data[i] = comp[i] == best;
    return out;
}

// Polylines along the principal axis of a component, through the pixel
// farthest from the boundary in each of a few bins. A polyline is split
// wherever the straight segment would leave the component.
std::vector<Scribble> skeleton_scribbles(const Mask2D& comp, Polarity polarity, Rng& rng) {
    const int w = comp.width;
    double my = 0, mx = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < comp.data.size(); ++i)
        if (comp.data[i]) {
            my += static_cast<double>(i / w);
            mx += static_cast<double>(i % w);
            ++n;
        }
    my /= n;
    mx /= n;
    double syy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < comp.data.size(); ++i)
        if (comp.data[i]) {
            const double dy = static_cast<double>(i / w) - my, dx = static_cast<double>(i % w) - mx;
            syy += dy * dy;
            sxx += dx * dx;
            sxy += dx * dy;
        }
    const double angle = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
    const double ax = std::cos(angle), ay = std::sin(angle);

    std::vector<double> proj(comp.data.size(), 0.0);
    double lo = kInf, hi = -kInf;
    for (std::size_t i = 0; i < comp.data.size(); ++i)
        if (comp.data[i]) {
            proj[i] = (static_cast<double>(i / w) - my) * ay + (static_cast<double>(i % w) - mx) * ax;
            lo = std::min(lo, proj[i]);
            hi = std::max(hi, proj[i]);
        }
    const int bins = std::clamp(static_cast<int>(std::lround((hi - lo) / 4.0)) + 1, 1, 8);
    const auto edt = distance_to_boundary(comp);
    std::vector<Point> points;
    for (int b = 0; b < bins; ++b) {
        Mask2D in_bin(comp.height, comp.width);
        bool any = false;
        for (std::size_t i = 0; i < comp.data.size(); ++i) {
            if (!comp.data[i]) continue;
            const int bin = std::min(bins - 1, static_cast<int>((proj[i] - lo) / (hi - lo + 1e-12) * bins));
            if (bin == b) in_bin.data[i] = any = 1;
        }
        if (any) points.push_back(argmax_in(in_bin, edt, rng));
    }

    std::vector<Scribble> out;
    Scribble cur{{points.front()}, polarity, 0};
    for (std::size_t k = 1; k < points.size(); ++k) {
        const auto seg = line(points[k - 1], points[k]);
        const bool inside = std::all_of(seg.begin(), seg.end(), [&](Point p) { return comp.at(p.y, p.x) != 0; });
        if (!inside) {
            out.push_back(cur);
            cur.polyline.clear();
        }
        cur.polyline.push_back(points[k]);
    }
    out.push_back(cur);
    return out;
}

std::vector<float> binomial_blur(SliceView<float> s) {
    static constexpr double k[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
    const int h = s.height, w = s.width;
    std::vector<double> tmp(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int t = -2; t <= 2; ++t) acc += k[t + 2] * s.at(y, std::clamp(x + t, 0, w - 1));
            tmp[idx(y, x, w)] = acc;
        }
    std::vector<float> out(tmp.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int t = -2; t <= 2; ++t) acc += k[t + 2] * tmp[idx(std::clamp(y + t, 0, h - 1), x, w)];
            out[idx(y, x, w)] = static_cast<float>(acc);
        }
    return out;
}

std::vector<double> geodesic(const std::vector<float>& img, int h, int w, const std::vector<int>& raster, int value) {
    std::vector<double> d(img.size(), kInf);
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    for (std::size_t i = 0; i < raster.size(); ++i)
        if (raster[i] == value) {
            d[i] = 0.0;
            pq.emplace(0.0, i);
        }
    while (!pq.empty()) {
        const auto [dist, i] = pq.top();
        pq.pop();
        if (dist > d[i]) continue;
        const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
        const int ny[4] = {y - 1, y + 1, y, y}, nx[4] = {x, x, x - 1, x + 1};
        for (int k = 0; k < 4; ++k) {
            if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
            const std::size_t j = idx(ny[k], nx[k], w);
            const double nd = dist + 1.0 + kGeodesicBeta * std::abs(static_cast<double>(img[i]) - img[j]);
            if (nd < d[j]) {
                d[j] = nd;
                pq.emplace(nd, j);
            }
        }
    }
    return d;
}

MaskVolume binary_volume(const std::vector<ProbMap>& maps, Dims dims) {
    std::vector<std::uint8_t> labels;
    labels.reserve(dims.voxel_count());
    for (const auto& m : maps)
        for (float p : m.probs) labels.push_back(p >= 0.5f ? 1 : 0);
    return MaskVolume(dims, std::move(labels), {{1, "foreground"}});
}

void save_maps(const std::vector<ProbMap>& maps, const std::string& id, Dims dims, const std::filesystem::path& path) {
    std::vector<float> probs;
    probs.reserve(dims.voxel_count());
    for (const auto& m : maps) probs.insert(probs.end(), m.probs.begin(), m.probs.end());
    save_volume(Volume(id, dims, std::move(probs)), binary_volume(maps, dims), path);
}

std::vector<ProbMap> load_maps(const std::filesystem::path& path, Dims expected) {
    const auto [vol, mask] = load_volume(path);
    if (!(vol.dims() == expected)) throw FormatError(path.string() + ": mask dims do not match the volume");
    std::vector<ProbMap> maps;
    for (int t = 0; t < expected.slices; ++t) {
        const auto s = vol.slice(t);
        maps.push_back({s.height, s.width, std::vector<float>(s.data.begin(), s.data.end())});
    }
    return maps;
}

}  // namespace

std::string to_string(Polarity p) { return p == Polarity::foreground ? "foreground" : "background"; }

Polarity polarity_from_string(const std::string& s) {
    if (s == "foreground") return Polarity::foreground;
    if (s == "background") return Polarity::background;
    throw ValidationError("unknown polarity '" + s + "'");
}

std::string to_string(Mode m) {
    switch (m) {
        case Mode::click: return "click";
        case Mode::scribble: return "scribble";
        case Mode::oracle: return "oracle";
    }
    return "?";
}

Mode mode_from_string(const std::string& s) {
    if (s == "click") return Mode::click;
    if (s == "scribble") return Mode::scribble;
    if (s == "oracle") return Mode::oracle;
    throw ValidationError("unknown mode '" + s + "'");
}

void Scribble::validate(int height, int width) const {
    if (polyline.empty()) throw ValidationError("scribble has no points");
    if (brush_radius < 0) throw ValidationError("brush_radius must be >= 0");
    for (const auto& p : polyline)
        if (p.y < 0 || p.y >= height || p.x < 0 || p.x >= width)
            throw BoundsError("scribble point (" + std::to_string(p.y) + "," + std::to_string(p.x) +
                              ") outside " + std::to_string(height) + "x" + std::to_string(width));
}

nlohmann::json to_json(const Scribble& s) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : s.polyline) pts.push_back({p.y, p.x});
    return {{"polyline", pts}, {"polarity", to_string(s.polarity)}, {"brush_radius", s.brush_radius}};
}

Scribble scribble_from_json(const nlohmann::json& j) {
    try {
        Scribble s;
        for (const auto& p : j.at("polyline")) {
            if (!p.is_array() || p.size() != 2) throw ValidationError("polyline points must be [y, x] pairs");
            s.polyline.push_back({p[0].get<int>(), p[1].get<int>()});
        }
        s.polarity = polarity_from_string(j.at("polarity").get<std::string>());
        s.brush_radius = j.value("brush_radius", 0);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed scribble: ") + e.what());
    }
}

std::vector<int> rasterize(const std::vector<Scribble>& scribbles, int height, int width) {
    std::vector<int> out(static_cast<std::size_t>(height) * width, -1);
    for (const auto& s : scribbles) {
        s.validate(height, width);
        const int value = s.polarity == Polarity::foreground ? 1 : 0;
        stamp(out, height, width, s.polyline.front(), s.brush_radius, value);
        for (std::size_t k = 1; k < s.polyline.size(); ++k)
            for (const auto& p : line(s.polyline[k - 1], s.polyline[k])) stamp(out, height, width, p, s.brush_radius, value);
    }
    return out;
}

std::vector<double> distance_to_boundary(const Mask2D& region) {
    // Padded by one background pixel on every side.
    const int h = region.height + 2, w = region.width + 2;
    std::vector<double> g(static_cast<std::size_t>(h) * w, 0.0);
    for (int y = 0; y < region.height; ++y)
        for (int x = 0; x < region.width; ++x)
            if (region.at(y, x)) g[idx(y + 1, x + 1, w)] = kInf;
    std::vector<double> f, d;
    for (int x = 0; x < w; ++x) {
        f.resize(h);
        for (int y = 0; y < h; ++y) f[y] = g[idx(y, x, w)];
        dt1d(f, d);
        for (int y = 0; y < h; ++y) g[idx(y, x, w)] = d[y];
    }
    for (int y = 0; y < h; ++y) {
        f.assign(g.begin() + idx(y, 0, w), g.begin() + idx(y, 0, w) + w);
        dt1d(f, d);
        std::copy(d.begin(), d.end(), g.begin() + idx(y, 0, w));
    }
    std::vector<double> out(region.data.size());
    for (int y = 0; y < region.height; ++y)
        for (int x = 0; x < region.width; ++x) out[idx(y, x, region.width)] = std::sqrt(g[idx(y + 1, x + 1, w)]);
    return out;
}

std::vector<Scribble> robot_interact(const Mask2D& gt, const Mask2D& pred, Mode mode, Rng& rng) {
    if (gt.height != pred.height || gt.width != pred.width)
        throw ShapeError("ground truth and prediction dims differ");
    if (mode == Mode::oracle) return {};
    const Mask2D fn = difference(gt, pred), fp = difference(pred, gt);
    std::vector<Scribble> out;
    for (const auto& [region, polarity] : {std::pair{&fn, Polarity::foreground}, std::pair{&fp, Polarity::background}}) {
        if (region->empty_foreground()) continue;
        if (mode == Mode::click) {
            out.push_back({{argmax_in(*region, distance_to_boundary(*region), rng)}, polarity, 0});
        } else {
            for (auto& s : skeleton_scribbles(largest_component(*region), polarity, rng)) out.push_back(std::move(s));
        }
    }
    return out;
}

ProbMap scribble_to_mask(SliceView<float> slice, const std::vector<Scribble>& scribbles, const ProbMap* prior) {
    const int h = slice.height, w = slice.width;
    if (prior && (prior->height != h || prior->width != w)) throw ShapeError("prior dims do not match the slice");
    const auto raster = rasterize(scribbles, h, w);
    const bool has_fg = std::find(raster.begin(), raster.end(), 1) != raster.end();
    const bool has_bg = std::find(raster.begin(), raster.end(), 0) != raster.end();
    if (!has_fg && !prior) throw InsufficientInputError("need a foreground scribble or a prior mask");

    const auto img = binomial_blur(slice);
    const auto d_fg = geodesic(img, h, w, raster, 1);
    const auto d_bg = geodesic(img, h, w, raster, 0);

    ProbMap out{h, w, std::vector<float>(raster.size())};
    for (std::size_t i = 0; i < raster.size(); ++i) {
        double p;
        if (raster[i] >= 0) {
            p = raster[i];
        } else {
            double geo = 0.0;
            if (has_fg) {
                const double bg = has_bg ? d_bg[i] : kImplicitBackgroundDistance;
                geo = bg / (d_fg[i] + bg);
            }
            if (prior) {
                const double c = std::exp(-std::min(d_fg[i], d_bg[i]) / kPriorBlendScale);
                p = c * geo + (1.0 - c) * prior->probs[i];
            } else {
                p = geo;
            }
        }
        out.probs[i] = static_cast<float>(p);
    }
    return out;
}

int select_worst_slice(const std::vector<metrics::SliceMetrics>& per_slice, const std::set<int>& excluded) {
    const metrics::SliceMetrics* best = nullptr;
    for (const auto& s : per_slice) {
        if (excluded.contains(s.slice_idx)) continue;
        if (!best || s.DSC < best->DSC || (s.DSC == best->DSC && s.slice_idx < best->slice_idx)) best = &s;
    }
    if (!best) throw ExhaustedError("every slice has already been refined");
    return best->slice_idx;
}

SliceRef select_worst_slice(const PropagationRun& run, const MaskVolume& gt, const std::set<int>& excluded) {
    auto ex = excluded;
    ex.insert(run.memory_slice.index);
    return {run.volume_id, select_worst_slice(metrics::score_run(run, gt).per_slice, ex)};
}

Session::Session(const Volume& volume, const MaskVolume* gt, int label, Mode mode, const propnet::Network& net,
                 std::uint64_t seed, int k_append)
    : volume_(&volume), gt_(gt), net_(&net), label_(label), mode_(mode), k_append_(k_append), rng_(seed) {
    const Dims& d = volume.dims();
    if (gt && !(gt->dims() == d)) throw ShapeError("ground truth dims do not match the volume");
    if (k_append < 1) throw SpecError("k_append must be >= 1");
    if (mode == Mode::oracle && !gt) throw SpecError("oracle mode needs ground truth");
    current_.assign(d.slices, ProbMap{d.height, d.width, std::vector<float>(d.slice_size(), 0.0f)});
}

const MaskVolume& Session::require_gt() const {
    if (!gt_) throw StateError("no ground truth loaded for " + volume_->id());
    return *gt_;
}

void Session::mark_refined(int slice) {
    if (std::find(refined_order_.begin(), refined_order_.end(), slice) == refined_order_.end())
        refined_order_.push_back(slice);
}

const ProbMap& Session::add_scribble(int slice, const Scribble& s) {
    if (mode_ == Mode::oracle) throw StateError("oracle sessions take no scribbles");
    check_slice_index(volume_->dims(), slice);
    s.validate(volume_->dims().height, volume_->dims().width);
    const auto existing = interactions_.find(slice);
    const bool has_prior = latest_.has_value() || existing != interactions_.end();
    const std::optional<ProbMap> prior = has_prior ? std::optional(current_[slice]) : std::nullopt;
    auto list = existing != interactions_.end() ? existing->second : std::vector<Scribble>{};
    list.push_back(s);
    auto mask = scribble_to_mask(volume_->slice(slice), list, prior ? &*prior : nullptr);
    interactions_[slice] = std::move(list);
    current_[slice] = std::move(mask);
    mark_refined(slice);
    return current_[slice];
}

const ProbMap& Session::seed_oracle(int slice) {
    if (mode_ != Mode::oracle) throw StateError("ground-truth seeding is only available in oracle sessions");
    check_slice_index(volume_->dims(), slice);
    current_[slice] = ProbMap::from_mask(require_gt().binary_slice(slice, label_));
    mark_refined(slice);
    return current_[slice];
}

const PropagationRun& Session::propagate() {
    if (refined_order_.empty()) throw InsufficientInputError("no seeded slice to propagate from");
    const auto provenance = mode_ == Mode::oracle ? MaskProvenance::ground_truth : MaskProvenance::interactive;
    std::vector<inference::Seed> seeds;
    for (int s : refined_order_) seeds.push_back({s, current_[s].threshold(0.5), provenance});
    PropagationRun run = inference::propagate_from_seeds(*volume_, label_, seeds, *net_, k_append_);
    current_ = run.masks;
    RoundRecord rec{round_, refined_order_.back(), std::nullopt};
    if (gt_) rec.dsc = metrics::score_run(run, *gt_).per_volume.DSC;
    history_.push_back(rec);
    latest_ = std::move(run);
    ++round_;
    return *latest_;
}

int Session::target_slice() const {
    if (!latest_) return inference::select_memory_slice(require_gt(), label_).index;
    return suggest();
}

int Session::suggest() const {
    if (!latest_) throw InsufficientInputError("nothing propagated yet");
    return select_worst_slice(*latest_, require_gt(), refined_slices()).index;
}

metrics::MetricsReport Session::metrics() const {
    if (!latest_) throw InsufficientInputError("nothing propagated yet");
    return metrics::score_run(*latest_, require_gt());
}

const PropagationRun& Session::simulate_round() {
    const int t = target_slice();
    if (mode_ == Mode::oracle) {
        seed_oracle(t);
    } else {
        const Mask2D truth = require_gt().binary_slice(t, label_);
        for (int i = 0; i < kMaxRobotInteractions; ++i) {
            const auto scribbles = robot_interact(truth, current_[t].threshold(0.5), mode_, rng_);
            if (scribbles.empty()) break;
            for (const auto& s : scribbles) add_scribble(t, s);
        }
        mark_refined(t);
    }
    return propagate();
}

nlohmann::json Session::state_json() const {
    nlohmann::json interactions = nlohmann::json::object();
    for (const auto& [slice, list] : interactions_) {
        auto arr = nlohmann::json::array();
        for (const auto& s : list) arr.push_back(to_json(s));
        interactions[std::to_string(slice)] = arr;
    }
    nlohmann::json history = nlohmann::json::array();
    for (const auto& r : history_) {
        nlohmann::json h = {{"round", r.round}, {"refined_slice", r.refined_slice}};
        h["dsc"] = r.dsc ? nlohmann::json(*r.dsc) : nlohmann::json(nullptr);
        history.push_back(h);
    }
    nlohmann::json j = {{"volume_id", volume_->id()},
                        {"label", label_},
                        {"mode", to_string(mode_)},
                        {"round", round_},
                        {"k_append", k_append_},
                        {"rng_state", rng_.state()},
                        {"refined_slices", refined_order_},
                        {"interactions", interactions},
                        {"history", history}};
    j["latest_run"] = latest_ ? sidecar_json(*latest_) : nlohmann::json(nullptr);
    return j;
}

void Session::save(const std::filesystem::path& dir, const std::string& name) const {
    std::filesystem::create_directories(dir);
    const Dims& d = volume_->dims();
    save_maps(current_, volume_->id(), d, dir / (name + ".current.vseg"));
    if (latest_) save_maps(latest_->masks, volume_->id(), d, dir / (name + ".run.vseg"));
    std::ofstream(dir / (name + ".json")) << state_json().dump(2) << '\n';
}

Session Session::load(const std::filesystem::path& dir, const std::string& name, const Volume& volume,
                      const MaskVolume* gt, const propnet::Network& net) {
    std::ifstream in(dir / (name + ".json"));
    if (!in) throw NotFoundError("no session state at " + (dir / (name + ".json")).string());
    try {
        const auto j = nlohmann::json::parse(in);
        if (j.at("volume_id").get<std::string>() != volume.id())
            throw FormatError("session " + name + " belongs to volume " + j.at("volume_id").get<std::string>());
        Session s(volume, gt, j.at("label").get<int>(), mode_from_string(j.at("mode").get<std::string>()), net, 0,
                  j.at("k_append").get<int>());
        s.rng_ = Rng::from_state(j.at("rng_state").get<std::string>());
        s.round_ = j.at("round").get<int>();
        s.refined_order_ = j.at("refined_slices").get<std::vector<int>>();
        for (const auto& [key, arr] : j.at("interactions").items())
            for (const auto& sj : arr) s.interactions_[std::stoi(key)].push_back(scribble_from_json(sj));
        for (const auto& h : j.at("history")) {
            RoundRecord r{h.at("round").get<int>(), h.at("refined_slice").get<int>(), std::nullopt};
            if (!h.at("dsc").is_null()) r.dsc = h.at("dsc").get<double>();
            s.history_.push_back(r);
        }
        s.current_ = load_maps(dir / (name + ".current.vseg"), volume.dims());
        if (!j.at("latest_run").is_null()) {
            const auto& r = j.at("latest_run");
            PropagationRun run;
            run.volume_id = volume.id();
            run.label = s.label_;
            run.memory_slice = {volume.id(), r.at("memory_slice").get<int>()};
            run.memory_mask_source = propnet::provenance_from_string(r.at("memory_mask_source").get<std::string>());
            run.k_append = r.at("k_append").get<int>();
            for (const auto& p : r.at("provenance")) run.provenance.push_back(propnet::provenance_from_string(p.get<std::string>()));
            run.seeded_slices = r.at("seeded_slices").get<std::vector<int>>();
            run.masks = load_maps(dir / (name + ".run.vseg"), volume.dims());
            s.latest_ = std::move(run);
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed session state " + name + ": " + e.what());
    }
}

InteractiveResult run_interactive(const std::vector<Sample>& samples, const std::vector<int>& labels,
                                  const propnet::Network& net, Mode mode, int n_rounds, std::uint64_t seed,
                                  int k_append) {
    if (n_rounds < 1) throw SpecError("n_rounds must be >= 1");
    InteractiveResult result;
    result.mode = mode;
    Rng seeds(seed);
    for (const auto& sample : samples) {
        for (int label : labels) {
            const std::uint64_t session_seed = seeds.next_u64();
            const auto areas = sample.mask.label_areas(label);
            if (std::all_of(areas.begin(), areas.end(), [](std::size_t a) { return a == 0; })) {
                result.skipped.emplace_back(sample.volume.id(), label);
                continue;
            }
            Session session(sample.volume, &sample.mask, label, mode, net, session_seed, k_append);
            double last = 0.0;
            for (int r = 1; r <= n_rounds; ++r) {
                try {
                    const auto& run = session.simulate_round();
                    if (r == 1) {
                        result.first_round_runs.push_back(run);
                        result.first_round_reports.push_back(metrics::score_run(run, sample.mask));
                    }
                    last = *session.history().back().dsc;
                    result.rows.push_back({sample.volume.id(), label, r, session.history().back().refined_slice, last});
                } catch (const ExhaustedError&) {
                    result.rows.push_back({sample.volume.id(), label, r, -1, last});
                }
            }
        }
    }
    return result;
}

std::string rounds_csv(const InteractiveResult& result) {
    std::map<int, std::pair<double, int>> acc;
    for (const auto& r : result.rows) {
        acc[r.round].first += r.dsc;
        ++acc[r.round].second;
    }
    std::string out = "mode,round,DSC\n";
    char buf[96];
    for (const auto& [round, a] : acc) {
        std::snprintf(buf, sizeof buf, "%s,%d,%.2f\n", to_string(result.mode).c_str(), round, 100.0 * a.first / a.second);
        out += buf;
    }
    return out;
}

std::string interactive_runs_csv(const InteractiveResult& result) {
    std::string out = "volume_id,label,round,refined_slice,DSC\n";
    char buf[160];
    for (const auto& r : result.rows) {
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%.6f\n", r.volume_id.c_str(), r.label, r.round, r.refined_slice, r.dsc);
        out += buf;
    }
    return out;
}

}  // namespace cyclevol::interact
