#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cyclevol/autograd.hpp"
#include "cyclevol/volume.hpp"

// Memory-bank propagation network: a key encoder for query and memory slices,
// a value encoder over (slice, mask) pairs, an L2-affinity memory readout and
// a small upsampling decoder.
namespace cyclevol::propnet {

inline constexpr int kStride = 4;
inline constexpr int kKeyChannels = 16;
inline constexpr int kValueChannels = 32;
inline constexpr int kArchitectureVersion = 1;

struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;

    friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

// Named parameter tensors in a fixed order. Values produced by initialize()
// and by the optimizer are always representable as float32, which is what
// the on-disk format stores.
struct NetParams {
    std::vector<ParamTensor> tensors;
    int version = kArchitectureVersion;

    // He-normal weights, zero biases.
    static NetParams initialize(std::uint64_t seed);
    static NetParams zeros();

    const ParamTensor& get(std::string_view name) const;
    ParamTensor& get(std::string_view name);
    std::size_t parameter_count() const;
    bool all_finite() const;

    friend bool operator==(const NetParams&, const NetParams&) = default;
};

// (name, shape) pairs of the architecture, in storage order.
std::vector<std::pair<std::string, std::vector<int>>> architecture();

// NetParams materialized as autograd leaves.
class Network {
public:
    explicit Network(const NetParams& params, bool requires_grad = false);

    const ag::Var& param(std::string_view name) const;
    std::span<const ag::Var> leaves() const noexcept { return leaves_; }
    const std::vector<std::string>& names() const noexcept { return names_; }
    int version() const noexcept { return version_; }

    // Copies current leaf values (and optionally gradients) back out.
    NetParams to_params() const;
    void zero_grad();

private:
    std::vector<std::string> names_;
    std::vector<ag::Var> leaves_;
    int version_;
};

enum class MaskProvenance { ground_truth, predicted, interactive };

std::string to_string(MaskProvenance p);
MaskProvenance provenance_from_string(std::string_view s);

// Key-encoder output for one slice. `key` is the key map; the two feature maps
// feed the decoder when the slice is used as a query.
struct QueryFeatures {
    ag::Var key;       // (Ck, H/4, W/4)
    ag::Var features;  // (32, H/4, W/4)
    ag::Var skip;      // (16, H/2, W/2)
};

struct MemoryEntry {
    ag::Var key_map;    // (Ck, h, w)
    ag::Var value_map;  // (Cv, h, w)
    SliceRef source;
    MaskProvenance provenance = MaskProvenance::predicted;
};

// Ordered memory bank with value semantics; entries share immutable nodes.
class MemoryBank {
public:
    MemoryBank() = default;

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::vector<MemoryEntry>& entries() const noexcept { return entries_; }

    // Returns a new bank; *this is unchanged.
    MemoryBank appended(MemoryEntry entry) const;

private:
    std::vector<MemoryEntry> entries_;
};

// Soft segmentation of one slice.
struct SoftMask {
    ag::Var logits;  // (2, H, W)
    ag::Var probs;   // (1, H, W), foreground channel of softmax(logits)

    int height() const { return probs.value().dim(1); }
    int width() const { return probs.value().dim(2); }
    double prob(int y, int x) const { return probs.value().at(0, y, x); }
    Mask2D threshold(double t = 0.5) const;

    static SoftMask from_logits(ag::Var logits);
};

// (1,H,W) network input for an intensity slice.
Tensor slice_tensor(SliceView<float> slice);
// (1,H,W) probability map of a binary mask.
Tensor mask_tensor(const Mask2D& mask);

QueryFeatures encode_key(const Tensor& slice, const Network& net);
ag::Var encode_value(const Tensor& slice, const ag::Var& mask_probs, const Network& net);

// Row i of the result is the softmax over all memory locations j of
// -||k_q(i) - k_m(j)||^2; shape (Nq, Nm) with memory locations concatenated in
// bank order.
Tensor affinity(const Tensor& query_key, const MemoryBank& bank);
ag::Var read_memory(const ag::Var& query_key, const MemoryBank& bank);

SoftMask decode(const ag::Var& readout, const QueryFeatures& query, const Network& net);

SoftMask segment(const Tensor& slice, const MemoryBank& bank, const Network& net);
SoftMask segment(const QueryFeatures& query, const MemoryBank& bank, const Network& net);

MemoryBank append(const MemoryBank& bank, const Tensor& slice, const ag::Var& mask_probs, MaskProvenance provenance,
                  SliceRef source, const Network& net);
// Reuses an already computed key for the slice.
MemoryBank append(const MemoryBank& bank, const QueryFeatures& slice_features, const Tensor& slice,
                  const ag::Var& mask_probs, MaskProvenance provenance, SliceRef source, const Network& net);

// VPAR1: magic, u32 LE manifest length, JSON manifest {version, params:[{name, shape}]},
// then little-endian float32 payloads in manifest order.
void save_params(const NetParams& params, const std::filesystem::path& path);
NetParams load_params(const std::filesystem::path& path);

}  // namespace cyclevol::propnet
