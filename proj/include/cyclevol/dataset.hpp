#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cyclevol/synthetic.hpp"
#include "cyclevol/volume.hpp"

namespace cyclevol {

// VSEG1 container: "VSEG1", u32 LE header length, JSON header
// {dims, spacing, dtype, label_names, volume_id}, then raw little-endian
// voxels in (t, y, x) order. dtype "f32+u8" holds intensities followed by
// labels; dtype "u8" holds labels only.
std::string encode_vseg(const Volume& volume, const MaskVolume& mask);
std::string encode_vseg_mask(const MaskVolume& mask, const std::string& volume_id);
std::pair<Volume, MaskVolume> decode_vseg(std::string_view bytes);
std::pair<std::string, MaskVolume> decode_vseg_mask(std::string_view bytes);

void save_volume(const Volume& volume, const MaskVolume& mask, const std::filesystem::path& path);
std::pair<Volume, MaskVolume> load_volume(const std::filesystem::path& path);
void save_mask(const MaskVolume& mask, const std::string& volume_id, const std::filesystem::path& path);
MaskVolume load_mask(const std::filesystem::path& path);

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
    LabelNames label_names;
    std::vector<int> unseen_labels;

    const Sample& find(const std::string& volume_id) const;
};

// Layout: dir/{train,test}/volNNN.vseg plus dir/manifest.json.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

// Train volumes with seen organs only, test volumes with seen and unseen organs.
Dataset make_synthetic_dataset(std::uint64_t seed, int n_train, int n_test, Dims dims, double noise_sigma);

}  // namespace cyclevol
