#include "cyclevol/propnet.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "cyclevol/errors.hpp"
#include "cyclevol/rng.hpp"

namespace cyclevol::propnet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

struct LayerSpec {
    const char* name;
    int out;
    int in;
    double gain;
};

// 3x3 convolutions throughout. The key projection starts small so that
// initial affinities are not already one-hot.
constexpr LayerSpec kLayers[] = {
    {"key.conv1", 16, 1, 1.0},   {"key.conv2", 32, 16, 1.0},      {"key.proj", kKeyChannels, 32, 0.25},
    {"value.conv1", 16, 2, 1.0}, {"value.conv2", 32, 16, 1.0},    {"value.proj", kValueChannels, 32, 1.0},
    {"decoder.fuse", 32, kValueChannels + 32, 1.0}, {"decoder.up1", 16, 32 + 16, 1.0}, {"decoder.pred", 2, 16, 1.0},
};

void check_divisible(const Tensor& slice) {
    if (slice.rank() != 3 || slice.dim(0) != 1)
        throw ShapeError("expected a (1,H,W) slice tensor, got " + slice.shape_string());
    if (slice.dim(1) % kStride != 0 || slice.dim(2) % kStride != 0 || slice.dim(1) == 0 || slice.dim(2) == 0)
        throw ShapeError("slice dims " + slice.shape_string() + " not divisible by stride " + std::to_string(kStride));
}

ag::Var conv(const ag::Var& x, const Network& net, const std::string& layer, int stride) {
    return ag::conv2d(x, net.param(layer + ".weight"), net.param(layer + ".bias"), stride, 1);
}

// Gathers per-entry (C, h, w) maps into one (C, N) matrix, entries side by side.
RowMatrix gather(const std::vector<MemoryEntry>& entries, bool keys) {
    const Tensor& first = keys ? entries[0].key_map.value() : entries[0].value_map.value();
    const int channels = first.dim(0);
    const int per = first.dim(1) * first.dim(2);
    RowMatrix out(channels, per * static_cast<int>(entries.size()));
    for (std::size_t e = 0; e < entries.size(); ++e) {
        const Tensor& t = keys ? entries[e].key_map.value() : entries[e].value_map.value();
        out.block(0, static_cast<int>(e) * per, channels, per) = ConstMap(t.data(), channels, per);
    }
    return out;
}

void check_bank(const Tensor& query_key, const MemoryBank& bank) {
    if (bank.empty()) throw EmptyMemoryError("memory bank is empty");
    if (query_key.rank() != 3) throw ShapeError("query key must be (Ck,h,w)");
    const auto& e0 = bank.entries().front();
    for (const auto& e : bank.entries()) {
        if (e.key_map.shape() != e0.key_map.shape() || e.value_map.shape() != e0.value_map.shape())
            throw ShapeError("memory entries disagree in shape");
        if (e.key_map.value().dim(1) != e.value_map.value().dim(1) ||
            e.key_map.value().dim(2) != e.value_map.value().dim(2))
            throw ShapeError("key and value maps of a memory entry differ spatially");
    }
    if (e0.key_map.value().dim(0) != query_key.dim(0))
        throw ShapeError("query key channels " + std::to_string(query_key.dim(0)) + " vs memory key channels " +
                         std::to_string(e0.key_map.value().dim(0)));
}

// Row-wise softmax over memory locations of -||q_i - k_j||^2, (Nq, Nm).
// The ||q_i||^2 term is constant along a row and cancels.
RowMatrix affinity_matrix(const Tensor& query_key, const RowMatrix& memory_keys) {
    const int ck = query_key.dim(0);
    const int nq = query_key.dim(1) * query_key.dim(2);
    ConstMap q(query_key.data(), ck, nq);
    RowMatrix logits = 2.0 * (q.transpose() * memory_keys);
    const Eigen::RowVectorXd key_norms = memory_keys.colwise().squaredNorm();
    logits.rowwise() -= key_norms;
    for (int i = 0; i < nq; ++i) {
        auto row = logits.row(i);
        const double m = row.maxCoeff();
        row = (row.array() - m).exp();
        row /= row.sum();
    }
    return logits;
}

}  // namespace

std::vector<std::pair<std::string, std::vector<int>>> architecture() {
    std::vector<std::pair<std::string, std::vector<int>>> out;
    for (const auto& l : kLayers) {
        out.emplace_back(std::string(l.name) + ".weight", std::vector<int>{l.out, l.in, 3, 3});
        out.emplace_back(std::string(l.name) + ".bias", std::vector<int>{l.out});
    }
    return out;
}

NetParams NetParams::zeros() {
    NetParams p;
    for (auto& [name, shape] : architecture()) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        p.tensors.push_back({name, shape, std::vector<double>(n, 0.0)});
    }
    return p;
}

NetParams NetParams::initialize(std::uint64_t seed) {
    NetParams p = zeros();
    Rng rng(seed);
    for (const auto& l : kLayers) {
        auto& w = p.get(std::string(l.name) + ".weight");
        const double std = l.gain * std::sqrt(2.0 / (l.in * 9.0));
        for (double& v : w.values) v = static_cast<float>(rng.normal() * std);
    }
    return p;
}

const ParamTensor& NetParams::get(std::string_view name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw KeyError("no parameter named '" + std::string(name) + "'");
}

ParamTensor& NetParams::get(std::string_view name) {
    return const_cast<ParamTensor&>(std::as_const(*this).get(name));
}

std::size_t NetParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.values.size();
    return n;
}

bool NetParams::all_finite() const {
    for (const auto& t : tensors)
        for (double v : t.values)
            if (!std::isfinite(v)) return false;
    return true;
}

Network::Network(const NetParams& params, bool requires_grad) : version_(params.version) {
    for (const auto& t : params.tensors) {
        names_.push_back(t.name);
        leaves_.push_back(ag::Var::leaf(Tensor(t.shape, t.values), requires_grad));
    }
    for (const auto& [name, shape] : architecture()) param(name);
}

const ag::Var& Network::param(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return leaves_[i];
    throw KeyError("network has no parameter '" + std::string(name) + "'");
}

NetParams Network::to_params() const {
    NetParams p;
    p.version = version_;
    for (std::size_t i = 0; i < names_.size(); ++i) {
        const Tensor& v = leaves_[i].value();
        p.tensors.push_back({names_[i], v.shape(), std::vector<double>(v.values().begin(), v.values().end())});
    }
    return p;
}

void Network::zero_grad() {
    for (auto& l : leaves_) l.zero_grad();
}

std::string to_string(MaskProvenance p) {
    switch (p) {
        case MaskProvenance::ground_truth: return "ground_truth";
        case MaskProvenance::predicted: return "predicted";
        case MaskProvenance::interactive: return "interactive";
    }
    return "predicted";
}

MaskProvenance provenance_from_string(std::string_view s) {
    if (s == "ground_truth") return MaskProvenance::ground_truth;
    if (s == "predicted") return MaskProvenance::predicted;
    if (s == "interactive") return MaskProvenance::interactive;
    throw FormatError("unknown mask provenance '" + std::string(s) + "'");
}

MemoryBank MemoryBank::appended(MemoryEntry entry) const {
    MemoryBank out = *this;
    out.entries_.push_back(std::move(entry));
    return out;
}

Mask2D SoftMask::threshold(double t) const {
    Mask2D m(height(), width());
    const Tensor& p = probs.value();
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = p[i] > t ? 1 : 0;
    return m;
}

SoftMask SoftMask::from_logits(ag::Var logits) {
    SoftMask m;
    m.probs = ag::softmax_foreground(logits);
    m.logits = std::move(logits);
    return m;
}

Tensor slice_tensor(SliceView<float> slice) {
    Tensor t({1, slice.height, slice.width});
    for (std::size_t i = 0; i < slice.data.size(); ++i) t[i] = slice.data[i];
    return t;
}

Tensor mask_tensor(const Mask2D& mask) {
    Tensor t({1, mask.height, mask.width});
    for (std::size_t i = 0; i < mask.data.size(); ++i) t[i] = mask.data[i] ? 1.0 : 0.0;
    return t;
}

QueryFeatures encode_key(const Tensor& slice, const Network& net) {
    check_divisible(slice);
    const auto x = ag::Var::constant(slice);
    QueryFeatures f;
    f.skip = ag::relu(conv(x, net, "key.conv1", 2));
    f.features = ag::relu(conv(f.skip, net, "key.conv2", 2));
    f.key = conv(f.features, net, "key.proj", 1);
    return f;
}

ag::Var encode_value(const Tensor& slice, const ag::Var& mask_probs, const Network& net) {
    check_divisible(slice);
    if (mask_probs.shape() != slice.shape())
        throw ShapeError("mask " + mask_probs.value().shape_string() + " does not match slice " +
                         slice.shape_string());
    const ag::Var parts[] = {ag::Var::constant(slice), mask_probs};
    const auto x = ag::concat_channels(parts);
    const auto h1 = ag::relu(conv(x, net, "value.conv1", 2));
    const auto h2 = ag::relu(conv(h1, net, "value.conv2", 2));
    return conv(h2, net, "value.proj", 1);
}

Tensor affinity(const Tensor& query_key, const MemoryBank& bank) {
    check_bank(query_key, bank);
    const RowMatrix a = affinity_matrix(query_key, gather(bank.entries(), true));
    return Tensor({static_cast<int>(a.rows()), static_cast<int>(a.cols())},
                  std::vector<double>(a.data(), a.data() + a.size()));
}

ag::Var read_memory(const ag::Var& query_key, const MemoryBank& bank) {
    check_bank(query_key.value(), bank);
    const auto& entries = bank.entries();
    const RowMatrix keys = gather(entries, true);
    const RowMatrix values = gather(entries, false);
    auto attn = std::make_shared<RowMatrix>(affinity_matrix(query_key.value(), keys));

    const int ck = query_key.value().dim(0);
    const int hq = query_key.value().dim(1), wq = query_key.value().dim(2);
    const int nq = hq * wq;
    const int cv = static_cast<int>(values.rows());
    const int per = entries[0].key_map.value().dim(1) * entries[0].key_map.value().dim(2);

    Tensor out({cv, hq, wq});
    Map(out.data(), cv, nq).noalias() = values * attn->transpose();

    std::vector<ag::Var> parents{query_key};
    for (const auto& e : entries) {
        parents.push_back(e.key_map);
        parents.push_back(e.value_map);
    }
    return ag::make_result(std::move(out), std::move(parents), [attn, ck, cv, nq, per](ag::Node& self) {
        const std::size_t n_entries = (self.parents.size() - 1) / 2;
        const int nm = per * static_cast<int>(n_entries);
        RowMatrix keys(ck, nm), values(cv, nm);
        for (std::size_t e = 0; e < n_entries; ++e) {
            keys.block(0, static_cast<int>(e) * per, ck, per) =
                ConstMap(self.parents[1 + 2 * e]->value.data(), ck, per);
            values.block(0, static_cast<int>(e) * per, cv, per) =
                ConstMap(self.parents[2 + 2 * e]->value.data(), cv, per);
        }
        ConstMap dout(self.grad.data(), cv, nq);
        const RowMatrix& p = *attn;

        const RowMatrix dvalues = dout * p;              // (Cv, Nm)
        const RowMatrix dp = dout.transpose() * values;  // (Nq, Nm)
        const Eigen::VectorXd row_dot = (p.array() * dp.array()).rowwise().sum();
        RowMatrix ds = p.array() * (dp.colwise() - row_dot).array();  // (Nq, Nm)

        ag::Node& qn = *self.parents[0];
        if (qn.requires_grad) {
            Map dq(qn.grad_buffer().data(), ck, nq);
            dq.noalias() += 2.0 * keys * ds.transpose();
        }
        // The -||k_j||^2 term contributes -2 k_j times the column sum of dS.
        const Eigen::RowVectorXd col_sum = ds.colwise().sum();
        RowMatrix dkeys = 2.0 * ConstMap(qn.value.data(), ck, nq) * ds;
        for (int j = 0; j < nm; ++j) dkeys.col(j) -= 2.0 * col_sum(j) * keys.col(j);

        for (std::size_t e = 0; e < n_entries; ++e) {
            ag::Node& kn = *self.parents[1 + 2 * e];
            ag::Node& vn = *self.parents[2 + 2 * e];
            if (kn.requires_grad)
                Map(kn.grad_buffer().data(), ck, per) += dkeys.block(0, static_cast<int>(e) * per, ck, per);
            if (vn.requires_grad)
                Map(vn.grad_buffer().data(), cv, per) += dvalues.block(0, static_cast<int>(e) * per, cv, per);
        }
    });
}

SoftMask decode(const ag::Var& readout, const QueryFeatures& query, const Network& net) {
    const Tensor& r = readout.value();
    const Tensor& f = query.features.value();
    if (r.rank() != 3 || f.rank() != 3 || r.dim(1) != f.dim(1) || r.dim(2) != f.dim(2))
        throw ShapeError("decode: readout " + r.shape_string() + " vs query features " + f.shape_string());
    const Tensor& s = query.skip.value();
    if (s.dim(1) != 2 * f.dim(1) || s.dim(2) != 2 * f.dim(2))
        throw ShapeError("decode: skip features " + s.shape_string() + " do not match " + f.shape_string());

    const ag::Var fuse_in[] = {readout, query.features};
    auto x = ag::relu(conv(ag::concat_channels(fuse_in), net, "decoder.fuse", 1));
    const ag::Var up_in[] = {ag::upsample_nearest2x(x), query.skip};
    x = ag::relu(conv(ag::concat_channels(up_in), net, "decoder.up1", 1));
    x = conv(ag::upsample_nearest2x(x), net, "decoder.pred", 1);
    return SoftMask::from_logits(std::move(x));
}

SoftMask segment(const QueryFeatures& query, const MemoryBank& bank, const Network& net) {
    return decode(read_memory(query.key, bank), query, net);
}

SoftMask segment(const Tensor& slice, const MemoryBank& bank, const Network& net) {
    if (bank.empty()) throw EmptyMemoryError("memory bank is empty");
    return segment(encode_key(slice, net), bank, net);
}

MemoryBank append(const MemoryBank& bank, const QueryFeatures& slice_features, const Tensor& slice,
                  const ag::Var& mask_probs, MaskProvenance provenance, SliceRef source, const Network& net) {
    MemoryEntry entry{slice_features.key, encode_value(slice, mask_probs, net), std::move(source), provenance};
    if (!bank.empty()) {
        const auto& e0 = bank.entries().front();
        if (e0.key_map.shape() != entry.key_map.shape() || e0.value_map.shape() != entry.value_map.shape())
            throw ShapeError("appended entry " + entry.key_map.value().shape_string() +
                             " does not match bank entries " + e0.key_map.value().shape_string());
    }
    return bank.appended(std::move(entry));
}

MemoryBank append(const MemoryBank& bank, const Tensor& slice, const ag::Var& mask_probs, MaskProvenance provenance,
                  SliceRef source, const Network& net) {
    return append(bank, encode_key(slice, net), slice, mask_probs, provenance, std::move(source), net);
}

}  // namespace cyclevol::propnet
