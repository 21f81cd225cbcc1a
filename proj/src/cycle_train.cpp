#include "cyclevol/cycle_train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cyclevol/errors.hpp"

namespace cyclevol::train {

using propnet::MaskProvenance;
using propnet::MemoryBank;
using propnet::Network;
using propnet::SoftMask;

std::string to_string(BaseLoss b) {
    return b == BaseLoss::cross_entropy ? "cross_entropy" : "bootstrapped_cross_entropy";
}

std::string to_string(BackwardSource b) { return b == BackwardSource::intermediate ? "intermediate" : "query"; }

BaseLoss base_loss_from_string(const std::string& s) {
    if (s == "cross_entropy") return BaseLoss::cross_entropy;
    if (s == "bootstrapped_cross_entropy") return BaseLoss::bootstrapped_cross_entropy;
    throw SpecError("unknown base_loss '" + s + "'");
}

BackwardSource backward_source_from_string(const std::string& s) {
    if (s == "intermediate") return BackwardSource::intermediate;
    if (s == "query") return BackwardSource::query;
    throw SpecError("unknown backward_source '" + s + "' (expected intermediate or query)");
}

double BootstrapSchedule::at(long step, long total_iterations) const {
    const long warmup =
        warmup_iters >= 0 ? warmup_iters : static_cast<long>(std::llround(0.2 * static_cast<double>(total_iterations)));
    if (warmup <= 0 || step >= warmup) return end_frac;
    return start_frac + (end_frac - start_frac) * static_cast<double>(step) / static_cast<double>(warmup);
}

void CycleLossConfig::validate() const {
    if (!(lambda >= 0.0)) throw SpecError("lambda must be >= 0");
    const auto& s = bootstrap_top_fraction_schedule;
    if (!(s.start_frac > 0.0 && s.start_frac <= 1.0 && s.end_frac > 0.0 && s.end_frac <= 1.0))
        throw SpecError("bootstrap fractions must lie in (0, 1]");
}

void TrainConfig::validate() const {
    if (iterations <= 0) throw SpecError("iterations must be positive");
    if (batch_size <= 0) throw SpecError("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw SpecError("learning_rate must be positive");
    if (max_slice_gap < 2) throw SpecError("max_slice_gap must be >= 2");
    if (!(reverse_prob >= 0.0 && reverse_prob <= 1.0)) throw SpecError("reverse_prob must lie in [0, 1]");
}

LossBreakdown compose_cycle_loss(double p_loss, double q_loss, double m_loss, double lambda) {
    return {p_loss, q_loss, m_loss, p_loss + q_loss + lambda * m_loss};
}

std::vector<double> pixel_cross_entropy(const Tensor& logits, const Mask2D& gt) {
    const std::size_t n = gt.data.size();
    std::vector<double> ce(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double l0 = logits[i], l1 = logits[n + i];
        const double hi = std::max(l0, l1);
        const double lse = hi + std::log(std::exp(l0 - hi) + std::exp(l1 - hi));
        ce[i] = lse - (gt.data[i] ? l1 : l0);
    }
    return ce;
}

ag::Var bootstrapped_ce(const ag::Var& logits, const Mask2D& gt, double top_fraction) {
    if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw SpecError("top_fraction must lie in (0, 1]");
    const Tensor& l = logits.value();
    if (gt.data.empty()) throw ShapeError("bootstrapped_ce: empty mask");
    if (l.rank() != 3 || l.dim(0) != 2 || l.dim(1) != gt.height || l.dim(2) != gt.width)
        throw ShapeError("bootstrapped_ce: logits " + l.shape_string() + " vs mask " + std::to_string(gt.height) +
                         "x" + std::to_string(gt.width));
    const std::vector<double> ce = pixel_cross_entropy(l, gt);
    const std::size_t n = ce.size();
    const auto k = std::min(n, static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(n) - 1e-9)));

    // Highest losses first, index order among ties; sum in index order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (k < n) {
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                         [&](std::size_t a, std::size_t b) { return ce[a] > ce[b] || (ce[a] == ce[b] && a < b); });
        order.resize(k);
        std::sort(order.begin(), order.end());
    }
    double sum = 0.0;
    for (std::size_t i : order) sum += ce[i];
    const double scale = 1.0 / static_cast<double>(k);

    auto selected = std::make_shared<std::vector<std::size_t>>(std::move(order));
    auto target = std::make_shared<std::vector<std::uint8_t>>(gt.data);
    return ag::make_result(Tensor({1}, {sum * scale}), {logits}, [selected, target, scale, n](ag::Node& self) {
        const Tensor& lv = self.parents[0]->value;
        Tensor& dl = self.parents[0]->grad_buffer();
        const double g = self.grad[0] * scale;
        for (std::size_t i : *selected) {
            const double d = lv[n + i] - lv[i];
            const double p1 = d >= 0.0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
            const double y = (*target)[i] ? 1.0 : 0.0;
            dl[n + i] += g * (p1 - y);
            dl[i] += g * ((1.0 - p1) - (1.0 - y));
        }
    });
}

namespace {

TrainingTriplet build(const Sample& sample, int label, int m, int p, int q, bool reversed) {
    const int t_count = sample.volume.dims().slices;
    TrainingTriplet t;
    t.label = label;
    t.slice_count = t_count;
    t.reversed = reversed;
    const std::string& id = sample.volume.id();
    t.m = {id, m};
    t.p = {id, p};
    t.q = {id, q};
    auto fill = [&](const SliceRef& ref, Tensor& image, Mask2D& gt) {
        const int v = t.volume_index(ref);
        image = propnet::slice_tensor(sample.volume.slice(v));
        gt = sample.mask.binary_slice(v, label);
    };
    fill(t.m, t.m_image, t.m_gt);
    fill(t.p, t.p_image, t.p_gt);
    fill(t.q, t.q_image, t.q_gt);
    return t;
}

}  // namespace

TrainingTriplet sample_triplet(const Sample& sample, int label, Rng& rng, const TrainConfig& cfg, bool reversed) {
    const auto areas = sample.mask.label_areas(label);
    const int t_count = static_cast<int>(areas.size());
    std::vector<int> present;  // positions in sampling order
    for (int i = 0; i < t_count; ++i) {
        const int v = reversed ? t_count - 1 - i : i;
        if (areas[v] > 0) present.push_back(i);
    }
    // Memory candidates need two later present slices within the gap.
    std::vector<std::pair<std::size_t, std::vector<int>>> candidates;
    for (std::size_t a = 0; a < present.size(); ++a) {
        std::vector<int> window;
        for (std::size_t b = a + 1; b < present.size() && present[b] - present[a] <= cfg.max_slice_gap; ++b)
            window.push_back(present[b]);
        if (window.size() >= 2) candidates.emplace_back(a, std::move(window));
    }
    if (candidates.empty())
        throw SamplingError("label " + std::to_string(label) + " of " + sample.volume.id() +
                            " has no three non-empty slices within the sampling window");
    const auto& [m_pos, window] = candidates[rng.below(candidates.size())];
    const std::size_t i = rng.below(window.size());
    std::size_t j = rng.below(window.size() - 1);
    if (j >= i) ++j;
    const int p = window[std::min(i, j)];
    const int q = window[std::max(i, j)];
    return build(sample, label, present[m_pos], p, q, reversed);
}

TrainingTriplet sample_triplet(const Sample& sample, int label, Rng& rng, const TrainConfig& cfg) {
    const bool reversed = rng.bernoulli(cfg.reverse_prob);
    return sample_triplet(sample, label, rng, cfg, reversed);
}

TrainingTriplet make_triplet(const Sample& sample, int label, int m, int p, int q) {
    const int t_count = sample.volume.dims().slices;
    if (!(0 <= m && m < p && p < q && q < t_count)) throw SamplingError("triplet indices must satisfy m < p < q");
    return build(sample, label, m, p, q, false);
}

ForwardResult forward_paths(const TrainingTriplet& t, const Network& net) {
    ForwardResult r;
    r.m_features = propnet::encode_key(t.m_image, net);
    r.p_features = propnet::encode_key(t.p_image, net);
    r.q_features = propnet::encode_key(t.q_image, net);
    const MemoryBank bank_m = propnet::append(MemoryBank{}, r.m_features, t.m_image,
                                              ag::Var::constant(propnet::mask_tensor(t.m_gt)),
                                              MaskProvenance::ground_truth, t.m, net);
    r.p_seg = propnet::segment(r.p_features, bank_m, net);
    const MemoryBank bank_mp =
        propnet::append(bank_m, r.p_features, t.p_image, r.p_seg.probs, MaskProvenance::predicted, t.p, net);
    r.q_seg = propnet::segment(r.q_features, bank_mp, net);
    return r;
}

SoftMask backward_path(const TrainingTriplet& t, const ForwardResult& fwd, const Network& net, BackwardSource source,
                       bool detach_memory) {
    const bool from_query = source == BackwardSource::query;
    const auto& features = from_query ? fwd.q_features : fwd.p_features;
    const auto& image = from_query ? t.q_image : t.p_image;
    const auto& seg = from_query ? fwd.q_seg : fwd.p_seg;
    const ag::Var probs = detach_memory ? ag::detach(seg.probs) : seg.probs;
    const MemoryBank bank = propnet::append(MemoryBank{}, features, image, probs, MaskProvenance::predicted,
                                            from_query ? t.q : t.p, net);
    return propnet::segment(fwd.m_features, bank, net);
}

CycleLoss cycle_loss(const SoftMask& p_seg, const SoftMask& q_seg, const SoftMask* m_seg, const TrainingTriplet& t,
                     const CycleLossConfig& cfg, double top_fraction) {
    const double frac = cfg.base_loss == BaseLoss::cross_entropy ? 1.0 : top_fraction;
    std::vector<ag::Var> terms{bootstrapped_ce(p_seg.logits, t.p_gt, frac), bootstrapped_ce(q_seg.logits, t.q_gt, frac)};
    std::vector<double> weights{1.0, 1.0};
    if (m_seg) {
        terms.push_back(bootstrapped_ce(m_seg->logits, t.m_gt, frac));
        weights.push_back(cfg.lambda);
    }
    CycleLoss out;
    out.total = ag::weighted_sum(terms, weights);
    out.breakdown =
        compose_cycle_loss(terms[0].value()[0], terms[1].value()[0], m_seg ? terms[2].value()[0] : 0.0, cfg.lambda);
    if (!m_seg) out.breakdown.cycle_loss = terms[0].value()[0] + terms[1].value()[0];
    return out;
}

CycleLoss cycle_pass(const TrainingTriplet& t, const Network& net, const CycleLossConfig& cfg, double top_fraction) {
    const ForwardResult fwd = forward_paths(t, net);
    if (!cfg.cycle) return cycle_loss(fwd.p_seg, fwd.q_seg, nullptr, t, cfg, top_fraction);
    const SoftMask m_seg = backward_path(t, fwd, net, cfg.backward_source, cfg.detach_backward_memory);
    return cycle_loss(fwd.p_seg, fwd.q_seg, &m_seg, t, cfg, top_fraction);
}

nlohmann::json to_json(const TrainLogEntry& e) {
    return {{"step", e.step},           {"p_loss", e.loss.p_loss},         {"q_loss", e.loss.q_loss},
            {"m_loss", e.loss.m_loss}, {"cycle_loss", e.loss.cycle_loss}, {"lr", e.lr}};
}

namespace {

class Adam {
public:
    Adam(const Network& net, double lr) : lr_(lr) {
        for (const auto& leaf : net.leaves()) {
            m_.emplace_back(leaf.value().size(), 0.0);
            v_.emplace_back(leaf.value().size(), 0.0);
        }
    }

    // Parameters stay float32-representable after every step.
    void step(const Network& net) {
        ++t_;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        const double step_size = lr_ * std::sqrt(c2) / c1;
        const auto leaves = net.leaves();
        for (std::size_t k = 0; k < leaves.size(); ++k) {
            ag::Node& node = *leaves[k].node();
            if (node.grad.size() != node.value.size()) continue;
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < node.value.size(); ++i) {
                const double g = node.grad[i];
                m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
                v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
                node.value[i] = static_cast<float>(node.value[i] - step_size * m[i] / (std::sqrt(v[i]) + kEps));
            }
        }
    }

private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;
    double lr_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace

TrainResult train(std::span<const Sample> dataset, const TrainConfig& cfg, const CycleLossConfig& loss_cfg,
                  const propnet::NetParams& init, const StepObserver& observer) {
    cfg.validate();
    loss_cfg.validate();
    if (dataset.empty()) throw SpecError("training dataset is empty");

    // (sample, label) pairs that admit at least one triplet in either order.
    std::vector<std::pair<std::size_t, int>> pool;
    {
        Rng probe(0);
        for (std::size_t s = 0; s < dataset.size(); ++s)
            for (int label : dataset[s].mask.present_labels()) {
                try {
                    sample_triplet(dataset[s], label, probe, cfg, false);
                    pool.emplace_back(s, label);
                } catch (const SamplingError&) {
                }
            }
    }
    if (pool.empty()) throw SpecError("no volume/label in the dataset admits a training triplet");

    Network net(init, true);
    Adam adam(net, cfg.learning_rate);
    Rng rng(cfg.seed);
    TrainResult result;
    result.log.reserve(static_cast<std::size_t>(cfg.iterations));
    const double inv_batch = 1.0 / cfg.batch_size;

    for (long step = 0; step < cfg.iterations; ++step) {
        const double top_fraction = loss_cfg.bootstrap_top_fraction_schedule.at(step, cfg.iterations);
        const bool reversed = rng.bernoulli(cfg.reverse_prob);
        LossBreakdown mean;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& [s, label] = pool[rng.below(pool.size())];
            const TrainingTriplet t = sample_triplet(dataset[s], label, rng, cfg, reversed);
            const CycleLoss loss = cycle_pass(t, net, loss_cfg, top_fraction);
            if (!std::isfinite(loss.breakdown.cycle_loss))
                throw TrainingError("non-finite loss at step " + std::to_string(step), step);
            ag::backward(loss.total, inv_batch);
            mean.p_loss += loss.breakdown.p_loss * inv_batch;
            mean.q_loss += loss.breakdown.q_loss * inv_batch;
            mean.m_loss += loss.breakdown.m_loss * inv_batch;
            mean.cycle_loss += loss.breakdown.cycle_loss * inv_batch;
        }
        adam.step(net);
        net.zero_grad();
        for (const auto& leaf : net.leaves())
            for (double v : leaf.value().values())
                if (!std::isfinite(v)) throw TrainingError("non-finite parameter after step " + std::to_string(step), step);

        TrainLogEntry entry{step, mean, cfg.learning_rate};
        if (observer) observer(entry, net);
        result.log.push_back(entry);
    }
    result.params = net.to_params();
    return result;
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
    cfg.iterations = j.value("iterations", cfg.iterations);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.max_slice_gap = j.value("max_slice_gap", cfg.max_slice_gap);
    cfg.reverse_prob = j.value("reverse_prob", cfg.reverse_prob);
}

void from_json(const nlohmann::json& j, CycleLossConfig& cfg) {
    cfg.lambda = j.value("lambda", cfg.lambda);
    if (j.contains("base_loss")) cfg.base_loss = base_loss_from_string(j["base_loss"].get<std::string>());
    if (j.contains("bootstrap_top_fraction_schedule")) {
        const auto& s = j["bootstrap_top_fraction_schedule"];
        auto& sched = cfg.bootstrap_top_fraction_schedule;
        sched.start_frac = s.value("start_frac", sched.start_frac);
        sched.end_frac = s.value("end_frac", sched.end_frac);
        sched.warmup_iters = s.value("warmup_iters", sched.warmup_iters);
    }
    cfg.cycle = j.value("cycle", cfg.cycle);
    if (j.contains("backward_source"))
        cfg.backward_source = backward_source_from_string(j["backward_source"].get<std::string>());
    cfg.detach_backward_memory = j.value("detach_backward_memory", cfg.detach_backward_memory);
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return {{"iterations", cfg.iterations},   {"batch_size", cfg.batch_size},       {"learning_rate", cfg.learning_rate},
            {"seed", cfg.seed},               {"max_slice_gap", cfg.max_slice_gap}, {"reverse_prob", cfg.reverse_prob}};
}

nlohmann::json to_json(const CycleLossConfig& cfg) {
    const auto& s = cfg.bootstrap_top_fraction_schedule;
    return {{"lambda", cfg.lambda},
            {"base_loss", to_string(cfg.base_loss)},
            {"bootstrap_top_fraction_schedule",
             {{"start_frac", s.start_frac}, {"end_frac", s.end_frac}, {"warmup_iters", s.warmup_iters}}},
            {"cycle", cfg.cycle},
            {"backward_source", to_string(cfg.backward_source)},
            {"detach_backward_memory", cfg.detach_backward_memory}};
}

}  // namespace cyclevol::train
