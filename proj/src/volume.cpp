#include "cyclevol/volume.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cyclevol/errors.hpp"

namespace cyclevol {

namespace {

void check_dims(const Dims& dims) {
    if (dims.slices < 3 || dims.height <= 0 || dims.width <= 0)
        throw ValidationError("dims must have T >= 3 and positive H, W; got (" + std::to_string(dims.slices) + "," +
                              std::to_string(dims.height) + "," + std::to_string(dims.width) + ")");
}

}  // namespace

std::size_t Mask2D::count() const {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

void check_slice_index(const Dims& dims, int index) {
    if (index < 0 || index >= dims.slices)
        throw BoundsError("slice index " + std::to_string(index) + " outside [0," + std::to_string(dims.slices - 1) +
                          "]");
}

Volume::Volume(std::string volume_id, Dims dims, std::vector<float> voxels, std::array<double, 3> spacing)
    : id_(std::move(volume_id)), dims_(dims), voxels_(std::move(voxels)), spacing_(spacing) {
    check_dims(dims_);
    if (voxels_.size() != dims_.voxel_count())
        throw ValidationError("voxel count " + std::to_string(voxels_.size()) + " does not match dims");
    for (float v : voxels_)
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw ValidationError("intensity outside [0,1]");
    for (double s : spacing_)
        if (!(s > 0.0)) throw ValidationError("spacing must be positive");
}

SliceView<float> Volume::slice(int index) const {
    check_slice_index(dims_, index);
    const std::size_t n = dims_.slice_size();
    return {std::span<const float>(voxels_).subspan(static_cast<std::size_t>(index) * n, n), dims_.height,
            dims_.width};
}

MaskVolume::MaskVolume(Dims dims, std::vector<std::uint8_t> labels, LabelNames label_names)
    : dims_(dims), labels_(std::move(labels)), label_names_(std::move(label_names)) {
    check_dims(dims_);
    if (labels_.size() != dims_.voxel_count())
        throw ValidationError("label count " + std::to_string(labels_.size()) + " does not match dims");
    std::set<int> seen(labels_.begin(), labels_.end());
    for (int l : seen)
        if (l != 0 && !label_names_.contains(l))
            throw ValidationError("label " + std::to_string(l) + " has no entry in label_names");
}

SliceView<std::uint8_t> MaskVolume::slice(int index) const {
    check_slice_index(dims_, index);
    const std::size_t n = dims_.slice_size();
    return {std::span<const std::uint8_t>(labels_).subspan(static_cast<std::size_t>(index) * n, n), dims_.height,
            dims_.width};
}

Mask2D MaskVolume::binary_slice(int index, int label) const {
    auto view = slice(index);
    Mask2D out(dims_.height, dims_.width);
    for (std::size_t i = 0; i < view.data.size(); ++i) out.data[i] = view.data[i] == label ? 1 : 0;
    return out;
}

std::vector<int> MaskVolume::present_labels() const {
    std::array<bool, 256> present{};
    for (auto l : labels_) present[l] = true;
    std::vector<int> out;
    for (int l = 1; l < 256; ++l)
        if (present[l]) out.push_back(l);
    return out;
}

std::vector<std::size_t> MaskVolume::label_areas(int label) const {
    std::vector<std::size_t> areas(dims_.slices, 0);
    const std::size_t n = dims_.slice_size();
    for (int t = 0; t < dims_.slices; ++t)
        areas[t] = static_cast<std::size_t>(
            std::count(labels_.begin() + static_cast<std::ptrdiff_t>(t * n),
                       labels_.begin() + static_cast<std::ptrdiff_t>((t + 1) * n), static_cast<std::uint8_t>(label)));
    return areas;
}

}  // namespace cyclevol
