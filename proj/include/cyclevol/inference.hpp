#pragma once

#include <string>
#include <vector>

#include "cyclevol/dataset.hpp"
#include "cyclevol/metrics.hpp"
#include "cyclevol/propnet.hpp"
#include "cyclevol/run.hpp"

namespace cyclevol::inference {

// Slice with the largest area of `label`; smallest index on ties.
SliceRef select_memory_slice(const MaskVolume& mask, int label, const std::string& volume_id = {});

struct Seed {
    int index = 0;
    Mask2D mask;
    propnet::MaskProvenance provenance = propnet::MaskProvenance::ground_truth;
};

// Every seed enters every sweep's initial bank. Each unseeded slice is
// predicted by the sweep leaving its nearest seed (lower seed on ties); a
// sweep appends its 0.5-thresholded prediction at distance d from its seed
// when d % k_append == 0 and the prediction is non-empty. Seeded slices keep
// their masks exactly. The first seed is recorded as the memory slice.
PropagationRun propagate_from_seeds(const Volume& volume, int label, const std::vector<Seed>& seeds,
                                    const propnet::Network& net, int k_append);

// One-round propagation from a single memory slice: sweeps toward 0 and T-1.
PropagationRun propagate_volume(const Volume& volume, int label, int memory_slice, const Mask2D& memory_mask,
                                const propnet::Network& net, int k_append,
                                propnet::MaskProvenance source = propnet::MaskProvenance::ground_truth);

struct ProtocolConfig {
    int k_append = 5;
    double threshold = 0.5;
    int boundary_tolerance = -1;  // < 0: default_boundary_tolerance
};

struct BenchmarkEntry {
    PropagationRun run;
    metrics::MetricsReport report;
};

struct BenchmarkResult {
    std::vector<BenchmarkEntry> entries;
    std::vector<std::pair<std::string, int>> skipped;  // (volume_id, label) absent
};

// For every volume and label: largest-area memory slice seeded with ground
// truth, one round of propagation, scored with the memory slice excluded.
BenchmarkResult run_benchmark(const std::vector<Sample>& samples, const std::vector<int>& labels,
                              const propnet::Network& net, const ProtocolConfig& cfg = {});

// Mean DSC of re-segmenting the memory slice from each predicted slice that
// contains the label: net(m, [slice, thresholded prediction]) against the
// memory ground truth.
double backward_reconstruction_dsc(const PropagationRun& run, const Sample& sample, const propnet::Network& net,
                                   int max_distance = -1);

}  // namespace cyclevol::inference
