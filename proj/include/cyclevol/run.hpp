#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cyclevol/propnet.hpp"
#include "cyclevol/volume.hpp"

namespace cyclevol {

// Foreground probabilities of one slice, stored as float32 so that runs and
// sessions survive a save/load cycle exactly.
struct ProbMap {
    int height = 0;
    int width = 0;
    std::vector<float> probs;

    Mask2D threshold(double t = 0.5) const;
    static ProbMap from_mask(const Mask2D& mask);
    static ProbMap from_tensor(const Tensor& probs);  // (1,H,W)
    friend bool operator==(const ProbMap&, const ProbMap&) = default;
};

// One propagation over a whole volume for one label.
struct PropagationRun {
    std::string volume_id;
    int label = 0;
    SliceRef memory_slice;
    propnet::MaskProvenance memory_mask_source = propnet::MaskProvenance::ground_truth;
    int k_append = 5;
    std::vector<ProbMap> masks;                         // one per slice
    std::vector<propnet::MaskProvenance> provenance;    // one per slice
    std::vector<int> seeded_slices;                     // ascending; memory slice included

    MaskVolume to_mask_volume(const LabelNames& names, double threshold = 0.5) const;
    friend bool operator==(const PropagationRun&, const PropagationRun&) = default;
};

nlohmann::json sidecar_json(const PropagationRun& run);

// Writes `<stem>.vseg` (thresholded label volume) and `<stem>.json` sidecar.
void save_run(const PropagationRun& run, const LabelNames& names, const std::filesystem::path& stem);

}  // namespace cyclevol
