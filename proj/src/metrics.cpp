#include "cyclevol/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "cyclevol/errors.hpp"

namespace cyclevol::metrics {

namespace {

void check_same(const Mask2D& a, const Mask2D& b) {
    if (a.height != b.height || a.width != b.width || a.data.size() != b.data.size())
        throw ShapeError("mask dims differ: " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width));
}

struct Counts {
    std::size_t inter = 0, a = 0, b = 0;
};

Counts count(const Mask2D& a, const Mask2D& b) {
    check_same(a, b);
    Counts c;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool x = a.data[i] != 0, y = b.data[i] != 0;
        c.a += x;
        c.b += y;
        c.inter += x && y;
    }
    return c;
}

// Inclusive 2D prefix sums for O(1) window occupancy queries.
class WindowCounter {
public:
    explicit WindowCounter(const Mask2D& m) : h_(m.height), w_(m.width), sum_((h_ + 1) * (w_ + 1), 0) {
        for (int y = 0; y < h_; ++y)
            for (int x = 0; x < w_; ++x)
                at(y + 1, x + 1) = at(y, x + 1) + at(y + 1, x) - at(y, x) + (m.at(y, x) ? 1 : 0);
    }

    bool any(int y, int x, int r) const {
        const int y0 = std::max(0, y - r), y1 = std::min(h_ - 1, y + r);
        const int x0 = std::max(0, x - r), x1 = std::min(w_ - 1, x + r);
        return at(y1 + 1, x1 + 1) - at(y0, x1 + 1) - at(y1 + 1, x0) + at(y0, x0) > 0;
    }

private:
    int& at(int y, int x) { return sum_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }
    int at(int y, int x) const { return sum_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }
    int h_, w_;
    std::vector<int> sum_;
};

// Fraction of `from` boundary pixels with a `to` boundary pixel within r.
double matched_fraction(const Mask2D& from, const Mask2D& to, int r, std::size_t& n_from) {
    const WindowCounter counter(to);
    std::size_t hit = 0;
    n_from = 0;
    for (int y = 0; y < from.height; ++y)
        for (int x = 0; x < from.width; ++x)
            if (from.at(y, x)) {
                ++n_from;
                hit += counter.any(y, x, r);
            }
    return n_from ? static_cast<double>(hit) / static_cast<double>(n_from) : 0.0;
}

// Shortest text that parses back to the same double.
std::string exact(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string fmt100(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

std::string label_name(const LabelNames& names, int label) {
    auto it = names.find(label);
    return it == names.end() ? "label" + std::to_string(label) : it->second;
}

}  // namespace

double jaccard(const Mask2D& pred, const Mask2D& gt) {
    const Counts c = count(pred, gt);
    const std::size_t uni = c.a + c.b - c.inter;
    return uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(uni);
}

double dice(const Mask2D& pred, const Mask2D& gt) {
    const Counts c = count(pred, gt);
    return c.a + c.b == 0 ? 1.0 : 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.a + c.b);
}

Mask2D boundary(const Mask2D& mask) {
    Mask2D b(mask.height, mask.width);
    auto bg = [&](int y, int x) {
        return y < 0 || x < 0 || y >= mask.height || x >= mask.width || mask.at(y, x) == 0;
    };
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x) && (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1))) b.at(y, x) = 1;
    return b;
}

double boundary_f(const Mask2D& pred, const Mask2D& gt, int tolerance_px) {
    check_same(pred, gt);
    if (tolerance_px < 0) throw SpecError("boundary tolerance must be >= 0");
    const Mask2D pb = boundary(pred), gb = boundary(gt);
    std::size_t n_pred = 0, n_gt = 0;
    const double precision = matched_fraction(pb, gb, tolerance_px, n_pred);
    const double recall = matched_fraction(gb, pb, tolerance_px, n_gt);
    if (n_pred == 0 && n_gt == 0) return 1.0;
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

int default_boundary_tolerance(int height, int width) {
    const double diag = std::sqrt(static_cast<double>(height) * height + static_cast<double>(width) * width);
    return std::max(1, static_cast<int>(std::ceil(0.008 * diag)));
}

MetricsReport score_run(const PropagationRun& run, const MaskVolume& gt, double threshold, int tolerance_px) {
    const Dims& d = gt.dims();
    if (static_cast<int>(run.masks.size()) != d.slices)
        throw ShapeError("run has " + std::to_string(run.masks.size()) + " slices, ground truth " +
                         std::to_string(d.slices));
    const int tol = tolerance_px < 0 ? default_boundary_tolerance(d.height, d.width) : tolerance_px;
    MetricsReport r;
    r.volume_id = run.volume_id;
    r.label = run.label;
    for (int t = 0; t < d.slices; ++t) {
        if (t == run.memory_slice.index) continue;
        const Mask2D pred = run.masks[t].threshold(threshold);
        const Mask2D truth = gt.binary_slice(t, run.label);
        r.per_slice.push_back({t, jaccard(pred, truth), boundary_f(pred, truth, tol), dice(pred, truth)});
    }
    for (const auto& s : r.per_slice) {
        r.per_volume.J += s.J;
        r.per_volume.F += s.F;
        r.per_volume.DSC += s.DSC;
    }
    if (!r.per_slice.empty()) {
        const double n = static_cast<double>(r.per_slice.size());
        r.per_volume.J /= n;
        r.per_volume.F /= n;
        r.per_volume.DSC /= n;
    }
    r.per_volume.JF = 0.5 * (r.per_volume.J + r.per_volume.F);
    return r;
}

nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json slices = nlohmann::json::array();
    for (const auto& s : r.per_slice) slices.push_back({{"slice_idx", s.slice_idx}, {"J", s.J}, {"F", s.F}, {"DSC", s.DSC}});
    return {{"volume_id", r.volume_id},
            {"label", r.label},
            {"per_slice", slices},
            {"per_volume", {{"J", r.per_volume.J}, {"F", r.per_volume.F}, {"JF", r.per_volume.JF}, {"DSC", r.per_volume.DSC}}}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    try {
        r.volume_id = j.at("volume_id").get<std::string>();
        r.label = j.at("label").get<int>();
        for (const auto& s : j.at("per_slice"))
            r.per_slice.push_back({s.at("slice_idx").get<int>(), s.at("J").get<double>(), s.at("F").get<double>(),
                                   s.at("DSC").get<double>()});
        const auto& v = j.at("per_volume");
        r.per_volume = {v.at("J").get<double>(), v.at("F").get<double>(), v.at("JF").get<double>(),
                        v.at("DSC").get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed metrics report: ") + e.what());
    }
    return r;
}

std::vector<BlockSummary> summarize(const std::vector<MetricsReport>& reports, const std::vector<int>& unseen_labels) {
    const std::set<int> unseen(unseen_labels.begin(), unseen_labels.end());
    std::vector<BlockSummary> blocks{{"seen", {}, 0}, {"unseen", {}, 0}};
    for (const auto& r : reports) {
        auto& b = blocks[unseen.contains(r.label) ? 1 : 0];
        b.metrics.J += r.per_volume.J;
        b.metrics.F += r.per_volume.F;
        b.metrics.JF += r.per_volume.JF;
        b.metrics.DSC += r.per_volume.DSC;
        ++b.runs;
    }
    for (auto& b : blocks)
        if (b.runs) {
            b.metrics.J /= b.runs;
            b.metrics.F /= b.runs;
            b.metrics.JF /= b.runs;
            b.metrics.DSC /= b.runs;
        }
    return blocks;
}

ImprovementTable relative_improvement(const std::vector<MetricsReport>& a, const std::vector<MetricsReport>& b) {
    using Key = std::pair<std::string, int>;
    std::map<Key, double> jf_a, jf_b;
    for (const auto& r : a) jf_a[{r.volume_id, r.label}] = r.per_volume.JF;
    for (const auto& r : b) jf_b[{r.volume_id, r.label}] = r.per_volume.JF;
    for (const auto& [k, v] : jf_a)
        if (!jf_b.contains(k))
            throw KeyError("report set B lacks (" + k.first + ", " + std::to_string(k.second) + ")");
    for (const auto& [k, v] : jf_b)
        if (!jf_a.contains(k))
            throw KeyError("report set A lacks (" + k.first + ", " + std::to_string(k.second) + ")");

    std::map<int, std::pair<double, double>> sums;  // label -> (sum_a, sum_b)
    std::map<int, int> counts;
    for (const auto& [k, v] : jf_a) {
        sums[k.second].first += v;
        sums[k.second].second += jf_b[k];
        ++counts[k.second];
    }
    ImprovementTable table;
    for (const auto& [label, s] : sums) {
        const double mean_a = s.first / counts[label], mean_b = s.second / counts[label];
        if (!(mean_a > 0.0))
            throw ValidationError("relative improvement undefined for label " + std::to_string(label) +
                                  ": baseline J&F is 0");
        const double rel = (mean_b - mean_a) / mean_a;
        table.rows.push_back({label, mean_a, mean_b, rel});
        if (rel > 0.0) ++table.improved;
    }
    return table;
}

std::string per_run_csv(const std::vector<MetricsReport>& reports, const LabelNames& names) {
    std::ostringstream out;
    out << "volume_id,label,name,J,F,JF,DSC\n";
    for (const auto& r : reports)
        out << r.volume_id << ',' << r.label << ',' << label_name(names, r.label) << ',' << fmt100(r.per_volume.J)
            << ',' << fmt100(r.per_volume.F) << ',' << fmt100(r.per_volume.JF) << ',' << fmt100(r.per_volume.DSC)
            << '\n';
    return out.str();
}

std::string per_slice_csv(const std::vector<MetricsReport>& reports) {
    std::ostringstream out;
    out << "volume_id,label,slice_idx,J,F,DSC\n";
    for (const auto& r : reports)
        for (const auto& s : r.per_slice)
            out << r.volume_id << ',' << r.label << ',' << s.slice_idx << ',' << exact(s.J) << ',' << exact(s.F) << ','
                << exact(s.DSC) << '\n';
    return out.str();
}

std::string summary_csv(const std::vector<BlockSummary>& blocks) {
    std::ostringstream out;
    out << "block,runs,J,F,JF,DSC\n";
    for (const auto& b : blocks)
        out << b.block << ',' << b.runs << ',' << fmt100(b.metrics.J) << ',' << fmt100(b.metrics.F) << ','
            << fmt100(b.metrics.JF) << ',' << fmt100(b.metrics.DSC) << '\n';
    return out.str();
}

std::string improvement_csv(const ImprovementTable& table, const LabelNames& names) {
    std::ostringstream out;
    out << "label,name,JF_A,JF_B,relative_improvement_pct\n";
    for (const auto& r : table.rows) {
        char rel[32];
        std::snprintf(rel, sizeof rel, "%.3f", 100.0 * r.relative);
        out << r.label << ',' << label_name(names, r.label) << ',' << fmt100(r.jf_a) << ',' << fmt100(r.jf_b) << ','
            << rel << '\n';
    }
    return out.str();
}

}  // namespace cyclevol::metrics
