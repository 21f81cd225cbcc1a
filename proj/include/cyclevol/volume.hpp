#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace cyclevol {

// Slice count along the propagation axis (axis 0), then in-plane size.
struct Dims {
    int slices = 0;
    int height = 0;
    int width = 0;

    std::size_t slice_size() const noexcept { return static_cast<std::size_t>(height) * width; }
    std::size_t voxel_count() const noexcept { return slice_size() * static_cast<std::size_t>(slices); }
    friend bool operator==(const Dims&, const Dims&) = default;
};

struct SliceRef {
    std::string volume_id;
    int index = 0;
    friend bool operator==(const SliceRef&, const SliceRef&) = default;
};

template <class T>
struct SliceView {
    std::span<const T> data;
    int height = 0;
    int width = 0;

    T at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

// Binary in-plane mask, one byte per pixel (0 or 1).
struct Mask2D {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    Mask2D() = default;
    Mask2D(int h, int w, std::uint8_t fill = 0) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count() const;
    bool empty_foreground() const { return count() == 0; }
    friend bool operator==(const Mask2D&, const Mask2D&) = default;
};

// Grayscale volume, intensities normalized to [0,1].
class Volume {
public:
    Volume() = default;
    Volume(std::string volume_id, Dims dims, std::vector<float> voxels,
           std::array<double, 3> spacing = {1.0, 1.0, 1.0});

    const std::string& id() const noexcept { return id_; }
    const Dims& dims() const noexcept { return dims_; }
    const std::array<double, 3>& spacing() const noexcept { return spacing_; }
    std::span<const float> voxels() const noexcept { return voxels_; }

    SliceView<float> slice(int index) const;

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    std::string id_;
    Dims dims_;
    std::vector<float> voxels_;
    std::array<double, 3> spacing_{1.0, 1.0, 1.0};
};

using LabelNames = std::map<int, std::string>;

class MaskVolume {
public:
    MaskVolume() = default;
    MaskVolume(Dims dims, std::vector<std::uint8_t> labels, LabelNames label_names);

    const Dims& dims() const noexcept { return dims_; }
    std::span<const std::uint8_t> labels() const noexcept { return labels_; }
    const LabelNames& label_names() const noexcept { return label_names_; }

    SliceView<std::uint8_t> slice(int index) const;
    Mask2D binary_slice(int index, int label) const;

    // Labels (non-zero) that occur in at least one voxel, ascending.
    std::vector<int> present_labels() const;
    // Per-slice pixel count of `label`.
    std::vector<std::size_t> label_areas(int label) const;

    friend bool operator==(const MaskVolume&, const MaskVolume&) = default;

private:
    Dims dims_;
    std::vector<std::uint8_t> labels_;
    LabelNames label_names_;
};

void check_slice_index(const Dims& dims, int index);

}  // namespace cyclevol
