#include "cyclevol/inference.hpp"

#include <algorithm>
#include <map>
#include <optional>

#include "cyclevol/errors.hpp"

namespace cyclevol::inference {

using propnet::MaskProvenance;
using propnet::MemoryBank;
using propnet::Network;

SliceRef select_memory_slice(const MaskVolume& mask, int label, const std::string& volume_id) {
    const auto areas = mask.label_areas(label);
    const auto best = std::max_element(areas.begin(), areas.end());  // first maximum
    if (best == areas.end() || *best == 0) throw NotFoundError("label " + std::to_string(label) + " is absent");
    return {volume_id, static_cast<int>(best - areas.begin())};
}

PropagationRun propagate_from_seeds(const Volume& volume, int label, const std::vector<Seed>& seeds,
                                    const Network& net, int k_append) {
    if (seeds.empty()) throw EmptyMemoryError("propagation needs at least one seeded slice");
    if (k_append < 1) throw SpecError("k_append must be >= 1");
    const Dims& d = volume.dims();
    std::map<int, const Seed*> by_index;
    for (const auto& s : seeds) {
        check_slice_index(d, s.index);
        if (s.mask.height != d.height || s.mask.width != d.width)
            throw ShapeError("seed mask dims do not match the volume");
        if (!by_index.emplace(s.index, &s).second)
            throw SpecError("slice " + std::to_string(s.index) + " seeded twice");
    }

    PropagationRun run;
    run.volume_id = volume.id();
    run.label = label;
    run.memory_slice = {volume.id(), seeds.front().index};
    run.memory_mask_source = seeds.front().provenance;
    run.k_append = k_append;
    run.masks.resize(d.slices);
    run.provenance.assign(d.slices, MaskProvenance::predicted);

    // Images and key features are computed at most once per slice.
    std::vector<Tensor> images(d.slices);
    std::vector<std::optional<propnet::QueryFeatures>> features(d.slices);
    auto image = [&](int t) -> const Tensor& {
        if (images[t].empty()) images[t] = propnet::slice_tensor(volume.slice(t));
        return images[t];
    };
    auto feats = [&](int t) -> const propnet::QueryFeatures& {
        if (!features[t]) features[t] = propnet::encode_key(image(t), net);
        return *features[t];
    };

    MemoryBank base;
    for (const auto& [index, seed] : by_index) {
        base = propnet::append(base, feats(index), image(index), ag::Var::constant(propnet::mask_tensor(seed->mask)),
                               seed->provenance, {volume.id(), index}, net);
        run.masks[index] = ProbMap::from_mask(seed->mask);
        run.provenance[index] = seed->provenance;
        run.seeded_slices.push_back(index);
    }

    // Nearest seed owns each unseeded slice; ties go to the lower seed.
    std::vector<int> owner(d.slices, -1);
    for (int t = 0; t < d.slices; ++t) {
        int best = -1;
        for (const auto& [index, seed] : by_index)
            if (best < 0 || std::abs(index - t) < std::abs(best - t)) best = index;
        owner[t] = best;
    }

    for (const auto& [origin, seed] : by_index) {
        for (const int step : {-1, +1}) {
            MemoryBank bank = base;
            for (int t = origin + step, dist = 1; t >= 0 && t < d.slices && owner[t] == origin && !by_index.contains(t);
                 t += step, ++dist) {
                const auto mask = propnet::segment(feats(t), bank, net);
                run.masks[t] = ProbMap::from_tensor(mask.probs.value());
                const Mask2D hard = run.masks[t].threshold(0.5);
                if (dist % k_append == 0 && !hard.empty_foreground())
                    bank = propnet::append(bank, feats(t), image(t), ag::Var::constant(propnet::mask_tensor(hard)),
                                           MaskProvenance::predicted, {volume.id(), t}, net);
            }
        }
    }
    return run;
}

PropagationRun propagate_volume(const Volume& volume, int label, int memory_slice, const Mask2D& memory_mask,
                                const Network& net, int k_append, MaskProvenance source) {
    if (memory_mask.empty_foreground()) throw SpecError("memory mask is empty");
    return propagate_from_seeds(volume, label, {Seed{memory_slice, memory_mask, source}}, net, k_append);
}

BenchmarkResult run_benchmark(const std::vector<Sample>& samples, const std::vector<int>& labels, const Network& net,
                              const ProtocolConfig& cfg) {
    BenchmarkResult out;
    for (const auto& s : samples) {
        for (int label : labels) {
            SliceRef m;
            try {
                m = select_memory_slice(s.mask, label, s.volume.id());
            } catch (const NotFoundError&) {
                out.skipped.emplace_back(s.volume.id(), label);
                continue;
            }
            PropagationRun run =
                propagate_volume(s.volume, label, m.index, s.mask.binary_slice(m.index, label), net, cfg.k_append);
            auto report = metrics::score_run(run, s.mask, cfg.threshold, cfg.boundary_tolerance);
            out.entries.push_back({std::move(run), std::move(report)});
        }
    }
    return out;
}

double backward_reconstruction_dsc(const PropagationRun& run, const Sample& sample, const Network& net,
                                   int max_distance) {
    const int m = run.memory_slice.index;
    const Mask2D m_gt = sample.mask.binary_slice(m, run.label);
    const auto m_features = propnet::encode_key(propnet::slice_tensor(sample.volume.slice(m)), net);
    double total = 0.0;
    int n = 0;
    for (int t = 0; t < static_cast<int>(run.masks.size()); ++t) {
        if (t == m || (max_distance >= 0 && std::abs(t - m) > max_distance)) continue;
        if (sample.mask.binary_slice(t, run.label).empty_foreground()) continue;
        const Tensor image = propnet::slice_tensor(sample.volume.slice(t));
        const auto bank = propnet::append(MemoryBank{}, image,
                                          ag::Var::constant(propnet::mask_tensor(run.masks[t].threshold(0.5))),
                                          MaskProvenance::predicted, {run.volume_id, t}, net);
        const auto m_seg = propnet::segment(m_features, bank, net);
        total += metrics::dice(m_seg.threshold(0.5), m_gt);
        ++n;
    }
    return n ? total / n : 0.0;
}

}  // namespace cyclevol::inference
