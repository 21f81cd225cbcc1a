#include "cyclevol/run.hpp"

#include <fstream>

#include "cyclevol/dataset.hpp"
#include "cyclevol/errors.hpp"

namespace cyclevol {

Mask2D ProbMap::threshold(double t) const {
    Mask2D m(height, width);
    for (std::size_t i = 0; i < probs.size(); ++i) m.data[i] = probs[i] > t ? 1 : 0;
    return m;
}

ProbMap ProbMap::from_mask(const Mask2D& mask) {
    ProbMap p{mask.height, mask.width, std::vector<float>(mask.data.size())};
    for (std::size_t i = 0; i < mask.data.size(); ++i) p.probs[i] = mask.data[i] ? 1.0f : 0.0f;
    return p;
}

ProbMap ProbMap::from_tensor(const Tensor& probs) {
    if (probs.rank() != 3 || probs.dim(0) != 1) throw ShapeError("expected (1,H,W) probabilities");
    ProbMap p{probs.dim(1), probs.dim(2), std::vector<float>(probs.size())};
    for (std::size_t i = 0; i < probs.size(); ++i) p.probs[i] = static_cast<float>(probs[i]);
    return p;
}

MaskVolume PropagationRun::to_mask_volume(const LabelNames& names, double threshold) const {
    if (masks.empty()) throw ShapeError("run has no masks");
    const Dims dims{static_cast<int>(masks.size()), masks[0].height, masks[0].width};
    std::vector<std::uint8_t> labels(dims.voxel_count(), 0);
    for (std::size_t t = 0; t < masks.size(); ++t)
        for (std::size_t i = 0; i < masks[t].probs.size(); ++i)
            if (masks[t].probs[i] > threshold) labels[t * dims.slice_size() + i] = static_cast<std::uint8_t>(label);
    LabelNames used;
    if (auto it = names.find(label); it != names.end()) used[label] = it->second;
    else used[label] = "label" + std::to_string(label);
    return MaskVolume(dims, std::move(labels), used);
}

nlohmann::json sidecar_json(const PropagationRun& run) {
    nlohmann::json prov = nlohmann::json::array();
    for (auto p : run.provenance) prov.push_back(propnet::to_string(p));
    return {{"volume_id", run.volume_id},
            {"label", run.label},
            {"memory_slice", run.memory_slice.index},
            {"memory_mask_source", propnet::to_string(run.memory_mask_source)},
            {"k_append", run.k_append},
            {"seeded_slices", run.seeded_slices},
            {"provenance", prov}};
}

void save_run(const PropagationRun& run, const LabelNames& names, const std::filesystem::path& stem) {
    save_mask(run.to_mask_volume(names), run.volume_id, std::filesystem::path(stem.string() + ".vseg"));
    std::ofstream(stem.string() + ".json") << sidecar_json(run).dump(2) << "\n";
}

}  // namespace cyclevol
