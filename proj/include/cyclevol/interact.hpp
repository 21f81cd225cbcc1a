#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cyclevol/inference.hpp"
#include "cyclevol/metrics.hpp"
#include "cyclevol/rng.hpp"
#include "cyclevol/run.hpp"
#include "cyclevol/synthetic.hpp"

namespace cyclevol::interact {

enum class Polarity { foreground, background };
enum class Mode { click, scribble, oracle };

std::string to_string(Polarity p);
Polarity polarity_from_string(const std::string& s);
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct Point {
    int y = 0;
    int x = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

// A click is a single-point scribble with brush_radius 0.
struct Scribble {
    std::vector<Point> polyline;
    Polarity polarity = Polarity::foreground;
    int brush_radius = 0;

    void validate(int height, int width) const;
    friend bool operator==(const Scribble&, const Scribble&) = default;
};

nlohmann::json to_json(const Scribble& s);
Scribble scribble_from_json(const nlohmann::json& j);

// Pixels covered by the scribbles: 1 foreground, 0 background, -1 untouched.
// Later scribbles overwrite earlier ones.
std::vector<int> rasterize(const std::vector<Scribble>& scribbles, int height, int width);

// Exact Euclidean distance from each region pixel to the nearest pixel outside
// the region; pixels outside the image count as outside. Zero off-region.
std::vector<double> distance_to_boundary(const Mask2D& region);

// Simulated user. Click mode: one foreground click at the false-negative pixel
// farthest from the region boundary, plus a background click placed the same
// way on false positives. Scribble mode: polylines through the largest
// false-negative and false-positive components. Oracle mode produces no
// scribbles. Empty result iff pred == gt (for click/scribble).
std::vector<Scribble> robot_interact(const Mask2D& gt, const Mask2D& pred, Mode mode, Rng& rng);

inline constexpr double kGeodesicBeta = 50.0;
// Geodesic distance assumed to unseen background when only foreground was marked.
inline constexpr double kImplicitBackgroundDistance = 30.0;
// Length scale of the scribble confidence used when blending with a prior.
inline constexpr double kPriorBlendScale = 10.0;

// Seeded geodesic segmenter on a lightly blurred slice with edge cost
// 1 + beta*|dI| over 4-neighbours. p = d_bg / (d_fg + d_bg); with a prior the
// result is c*p + (1-c)*prior where c = exp(-min(d_fg, d_bg) / scale).
// Scribbled pixels keep their polarity exactly.
ProbMap scribble_to_mask(SliceView<float> slice, const std::vector<Scribble>& scribbles,
                         const ProbMap* prior = nullptr);

// Smallest-DSC slice not in `excluded`; lowest index on ties.
int select_worst_slice(const std::vector<metrics::SliceMetrics>& per_slice, const std::set<int>& excluded);
SliceRef select_worst_slice(const PropagationRun& run, const MaskVolume& gt, const std::set<int>& excluded);

// Robot interactions allowed on one slice within a round.
inline constexpr int kMaxRobotInteractions = 3;

struct RoundRecord {
    int round = 0;
    int refined_slice = 0;
    std::optional<double> dsc;
};

// One interactive segmentation session over a (volume, label). The network
// and the volume must outlive the session.
class Session {
public:
    Session(const Volume& volume, const MaskVolume* gt, int label, Mode mode, const propnet::Network& net,
            std::uint64_t seed, int k_append = 5);

    const std::string& volume_id() const { return volume_->id(); }
    int label() const { return label_; }
    Mode mode() const { return mode_; }
    int round() const { return round_; }  // round in progress, starts at 1
    int k_append() const { return k_append_; }
    bool has_ground_truth() const { return gt_ != nullptr; }
    const std::vector<ProbMap>& current_masks() const { return current_; }
    const std::map<int, std::vector<Scribble>>& interactions() const { return interactions_; }
    const std::vector<int>& refined_order() const { return refined_order_; }
    std::set<int> refined_slices() const { return {refined_order_.begin(), refined_order_.end()}; }
    const std::optional<PropagationRun>& latest_run() const { return latest_; }
    const std::vector<RoundRecord>& history() const { return history_; }

    // Adds a scribble to `slice` and re-segments it; the slice becomes a seed.
    const ProbMap& add_scribble(int slice, const Scribble& s);
    // Seeds `slice` with its ground-truth mask.
    const ProbMap& seed_oracle(int slice);
    // Propagates from all seeded slices (first refined slice first) and
    // completes the round. Throws InsufficientInputError if nothing is seeded.
    const PropagationRun& propagate();

    // Largest-area slice before the first propagation, worst slice after.
    int target_slice() const;
    int suggest() const;
    metrics::MetricsReport metrics() const;

    // One simulated round: pick the target slice, refine it by robot or
    // oracle, then propagate.
    const PropagationRun& simulate_round();

    nlohmann::json state_json() const;
    void save(const std::filesystem::path& dir, const std::string& name) const;
    static Session load(const std::filesystem::path& dir, const std::string& name, const Volume& volume,
                        const MaskVolume* gt, const propnet::Network& net);

private:
    void mark_refined(int slice);
    const MaskVolume& require_gt() const;

    const Volume* volume_;
    const MaskVolume* gt_;
    const propnet::Network* net_;
    int label_;
    Mode mode_;
    int k_append_;
    Rng rng_;
    int round_ = 1;
    std::vector<ProbMap> current_;
    std::map<int, std::vector<Scribble>> interactions_;
    std::vector<int> refined_order_;
    std::optional<PropagationRun> latest_;
    std::vector<RoundRecord> history_;
};

struct InteractiveRow {
    std::string volume_id;
    int label = 0;
    int round = 0;
    int refined_slice = 0;
    double dsc = 0.0;
};

struct InteractiveResult {
    Mode mode = Mode::oracle;
    std::vector<InteractiveRow> rows;
    std::vector<PropagationRun> first_round_runs;
    std::vector<metrics::MetricsReport> first_round_reports;
    std::vector<std::pair<std::string, int>> skipped;
};

// Runs n_rounds of simulated interaction for every volume and present label.
// Round-1 oracle runs coincide with the one-round benchmark protocol.
InteractiveResult run_interactive(const std::vector<Sample>& samples, const std::vector<int>& labels,
                                  const propnet::Network& net, Mode mode, int n_rounds, std::uint64_t seed,
                                  int k_append = 5);

// mode,round,DSC with DSC as a mean over runs, x100.
std::string rounds_csv(const InteractiveResult& result);
// volume_id,label,round,refined_slice,DSC in [0,1].
std::string interactive_runs_csv(const InteractiveResult& result);

}  // namespace cyclevol::interact
