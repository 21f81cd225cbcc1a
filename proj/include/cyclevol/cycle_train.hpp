#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cyclevol/propnet.hpp"
#include "cyclevol/rng.hpp"
#include "cyclevol/synthetic.hpp"

namespace cyclevol::train {

// Three slices of one volume with ground truths for one label. Indices live in
// the (possibly reversed) slice order the triplet was sampled in, so
// m.index < p.index < q.index always holds; volume_index() maps back.
struct TrainingTriplet {
    SliceRef m, p, q;
    int label = 0;
    int slice_count = 0;
    bool reversed = false;
    Tensor m_image, p_image, q_image;  // (1,H,W)
    Mask2D m_gt, p_gt, q_gt;

    int volume_index(const SliceRef& ref) const { return reversed ? slice_count - 1 - ref.index : ref.index; }
};

enum class BaseLoss { bootstrapped_cross_entropy, cross_entropy };
enum class BackwardSource { intermediate, query };

std::string to_string(BaseLoss b);
std::string to_string(BackwardSource b);
BaseLoss base_loss_from_string(const std::string& s);
BackwardSource backward_source_from_string(const std::string& s);

// Fraction of hardest pixels kept by the bootstrapped loss, annealed linearly
// from start_frac to end_frac over warmup_iters steps. A negative warmup means
// 20% of the run's iterations.
struct BootstrapSchedule {
    double start_frac = 1.0;
    double end_frac = 0.15;
    long warmup_iters = -1;

    double at(long step, long total_iterations) const;
};

struct CycleLossConfig {
    double lambda = 0.1;
    BaseLoss base_loss = BaseLoss::bootstrapped_cross_entropy;
    BootstrapSchedule bootstrap_top_fraction_schedule;
    // false: forward-only training, the backward path is never run.
    bool cycle = true;
    BackwardSource backward_source = BackwardSource::query;
    // Stop m_loss gradients at the stored intermediate/query mask.
    bool detach_backward_memory = false;

    void validate() const;
};

struct TrainConfig {
    long iterations = 10000;
    int batch_size = 1;
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;
    int max_slice_gap = 12;
    double reverse_prob = 0.5;

    void validate() const;
};

struct LossBreakdown {
    double p_loss = 0.0;
    double q_loss = 0.0;
    double m_loss = 0.0;
    double cycle_loss = 0.0;
};

// p_loss + q_loss + lambda * m_loss.
LossBreakdown compose_cycle_loss(double p_loss, double q_loss, double m_loss, double lambda);

// Mean per-pixel cross entropy over the ceil(top_fraction * H * W) highest-loss
// pixels. logits: (2,H,W).
ag::Var bootstrapped_ce(const ag::Var& logits, const Mask2D& gt, double top_fraction);
// Per-pixel cross entropy values, row-major.
std::vector<double> pixel_cross_entropy(const Tensor& logits, const Mask2D& gt);

TrainingTriplet sample_triplet(const Sample& sample, int label, Rng& rng, const TrainConfig& cfg);
TrainingTriplet sample_triplet(const Sample& sample, int label, Rng& rng, const TrainConfig& cfg, bool reversed);
// Triplet at explicit volume indices (m < p < q), no reversal.
TrainingTriplet make_triplet(const Sample& sample, int label, int m, int p, int q);

struct ForwardResult {
    propnet::SoftMask p_seg;
    propnet::SoftMask q_seg;
    propnet::QueryFeatures m_features, p_features, q_features;
};

// p_seg = net(p, [m, m_gt]); q_seg = net(q, [m, m_gt, p, p_seg]).
ForwardResult forward_paths(const TrainingTriplet& t, const propnet::Network& net);

// m_seg = net(m, [source, source_seg]) with source the intermediate or query slice.
propnet::SoftMask backward_path(const TrainingTriplet& t, const ForwardResult& fwd, const propnet::Network& net,
                                BackwardSource source = BackwardSource::query, bool detach_memory = false);

struct CycleLoss {
    LossBreakdown breakdown;
    ag::Var total;
};

CycleLoss cycle_loss(const propnet::SoftMask& p_seg, const propnet::SoftMask& q_seg, const propnet::SoftMask* m_seg,
                     const TrainingTriplet& t, const CycleLossConfig& cfg, double top_fraction);

// Full pass for one triplet: forward paths, backward path when cfg.cycle,
// and the loss graph.
CycleLoss cycle_pass(const TrainingTriplet& t, const propnet::Network& net, const CycleLossConfig& cfg,
                     double top_fraction);

struct TrainLogEntry {
    long step = 0;
    LossBreakdown loss;
    double lr = 0.0;
};

nlohmann::json to_json(const TrainLogEntry& e);

struct TrainResult {
    propnet::NetParams params;
    std::vector<TrainLogEntry> log;
};

using StepObserver = std::function<void(const TrainLogEntry&, const propnet::Network&)>;

// Adam, no schedule. Deterministic for a given cfg.seed.
TrainResult train(std::span<const Sample> dataset, const TrainConfig& cfg, const CycleLossConfig& loss_cfg,
                  const propnet::NetParams& init, const StepObserver& observer = {});

// JSON config with TrainConfig / CycleLossConfig field names; missing fields keep defaults.
void from_json(const nlohmann::json& j, TrainConfig& cfg);
void from_json(const nlohmann::json& j, CycleLossConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const CycleLossConfig& cfg);

}  // namespace cyclevol::train
