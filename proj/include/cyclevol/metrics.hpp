#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cyclevol/run.hpp"
#include "cyclevol/volume.hpp"

namespace cyclevol::metrics {

// Region similarity |A n B| / |A u B|; 1 when both are empty.
double jaccard(const Mask2D& pred, const Mask2D& gt);
// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(const Mask2D& pred, const Mask2D& gt);

// Foreground pixels with a 4-neighbour that is background or outside the image.
Mask2D boundary(const Mask2D& mask);

// F-measure of boundary pixels matched within `tolerance_px` (Chebyshev).
double boundary_f(const Mask2D& pred, const Mask2D& gt, int tolerance_px);

// ceil(0.8% of the image diagonal), at least 1.
int default_boundary_tolerance(int height, int width);

struct SliceMetrics {
    int slice_idx = 0;
    double J = 0.0;
    double F = 0.0;
    double DSC = 0.0;
};

struct VolumeMetrics {
    double J = 0.0;
    double F = 0.0;
    double JF = 0.0;
    double DSC = 0.0;
};

struct MetricsReport {
    std::string volume_id;
    int label = 0;
    std::vector<SliceMetrics> per_slice;
    VolumeMetrics per_volume;
};

// Per-slice metrics on thresholded predictions, memory slice excluded.
// tolerance_px < 0 selects default_boundary_tolerance().
MetricsReport score_run(const PropagationRun& run, const MaskVolume& gt, double threshold = 0.5,
                        int tolerance_px = -1);

nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

struct BlockSummary {
    std::string block;  // "seen" / "unseen"
    VolumeMetrics metrics;
    int runs = 0;
};

// Means over runs, split by whether the label is in `unseen_labels`.
std::vector<BlockSummary> summarize(const std::vector<MetricsReport>& reports, const std::vector<int>& unseen_labels);

struct ImprovementRow {
    int label = 0;
    double jf_a = 0.0;
    double jf_b = 0.0;
    double relative = 0.0;  // (jf_b - jf_a) / jf_a
};

struct ImprovementTable {
    std::vector<ImprovementRow> rows;
    int improved = 0;
};

// Per-label relative J&F change of B over A. Both sets must cover the same
// (volume, label) keys.
ImprovementTable relative_improvement(const std::vector<MetricsReport>& a, const std::vector<MetricsReport>& b);

// CSV writers. Values are multiplied by 100 for presentation, except
// per_slice_csv which keeps exact [0,1] values.
std::string per_run_csv(const std::vector<MetricsReport>& reports, const LabelNames& names);
std::string per_slice_csv(const std::vector<MetricsReport>& reports);
std::string summary_csv(const std::vector<BlockSummary>& blocks);
std::string improvement_csv(const ImprovementTable& table, const LabelNames& names);

}  // namespace cyclevol::metrics
