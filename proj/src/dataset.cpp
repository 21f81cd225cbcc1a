#include "cyclevol/dataset.hpp"

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "cyclevol/errors.hpp"

namespace cyclevol {

namespace {

constexpr std::string_view kMagic = "VSEG1";
using nlohmann::json;

json header_json(const Dims& dims, const std::array<double, 3>& spacing, const char* dtype, const LabelNames& names,
                 const std::string& volume_id) {
    json j;
    j["dims"] = {dims.slices, dims.height, dims.width};
    j["spacing"] = spacing;
    j["dtype"] = dtype;
    json labels = json::object();
    for (const auto& [label, name] : names) labels[std::to_string(label)] = name;
    j["label_names"] = labels;
    j["volume_id"] = volume_id;
    return j;
}

struct Header {
    Dims dims;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::string dtype;
    LabelNames label_names;
    std::string volume_id;
};

Header parse_header(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed header: ") + e.what());
    }
    Header h;
    auto field = [&](const char* name) -> const json& {
        if (!j.contains(name)) throw FormatError(std::string("header field '") + name + "' missing");
        return j[name];
    };
    try {
        const auto dims = field("dims").get<std::vector<int>>();
        if (dims.size() != 3) throw FormatError("header field 'dims' must have 3 entries");
        h.dims = {dims[0], dims[1], dims[2]};
        h.spacing = field("spacing").get<std::array<double, 3>>();
        h.dtype = field("dtype").get<std::string>();
        for (const auto& [k, v] : field("label_names").items()) h.label_names[std::stoi(k)] = v.get<std::string>();
        h.volume_id = field("volume_id").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("header field has wrong type: ") + e.what());
    } catch (const std::invalid_argument&) {
        throw FormatError("header field 'label_names' has a non-integer key");
    }
    if (h.dims.slices <= 0 || h.dims.height <= 0 || h.dims.width <= 0)
        throw FormatError("header field 'dims' must be positive");
    return h;
}

void append_labels(std::string& out, std::span<const std::uint8_t> labels) {
    out.append(reinterpret_cast<const char*>(labels.data()), labels.size());
}

std::vector<std::uint8_t> read_labels(std::string_view payload, std::size_t offset, std::size_t n) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(payload.data() + offset);
    return {p, p + n};
}

void check_payload(std::string_view payload, std::size_t expected) {
    if (payload.size() < expected)
        throw FormatError("truncated payload: header 'dims' needs " + std::to_string(expected) + " bytes, found " +
                          std::to_string(payload.size()));
    if (payload.size() > expected)
        throw FormatError("payload longer than header 'dims' implies (" + std::to_string(payload.size()) + " > " +
                          std::to_string(expected) + " bytes)");
}

}  // namespace

std::string encode_vseg(const Volume& volume, const MaskVolume& mask) {
    if (!(volume.dims() == mask.dims())) throw ValidationError("volume and mask dims differ");
    std::string out = detail::pack(
        kMagic, header_json(volume.dims(), volume.spacing(), "f32+u8", mask.label_names(), volume.id()).dump());
    out.reserve(out.size() + volume.voxels().size() * 5);
    for (float v : volume.voxels()) detail::put_f32(out, v);
    append_labels(out, mask.labels());
    return out;
}

std::string encode_vseg_mask(const MaskVolume& mask, const std::string& volume_id) {
    std::string out =
        detail::pack(kMagic, header_json(mask.dims(), {1.0, 1.0, 1.0}, "u8", mask.label_names(), volume_id).dump());
    append_labels(out, mask.labels());
    return out;
}

std::pair<Volume, MaskVolume> decode_vseg(std::string_view bytes) {
    const auto c = detail::unpack(kMagic, bytes);
    const Header h = parse_header(c.header);
    if (h.dtype != "f32+u8") throw FormatError("header field 'dtype' is '" + h.dtype + "', expected 'f32+u8'");
    const std::size_t n = h.dims.voxel_count();
    check_payload(c.payload, 5 * n);
    std::vector<float> voxels(n);
    const auto* p = reinterpret_cast<const unsigned char*>(c.payload.data());
    for (std::size_t i = 0; i < n; ++i) voxels[i] = detail::get_f32(p + 4 * i);
    Volume v(h.volume_id, h.dims, std::move(voxels), h.spacing);
    MaskVolume m(h.dims, read_labels(c.payload, 4 * n, n), h.label_names);
    return {std::move(v), std::move(m)};
}

std::pair<std::string, MaskVolume> decode_vseg_mask(std::string_view bytes) {
    const auto c = detail::unpack(kMagic, bytes);
    const Header h = parse_header(c.header);
    if (h.dtype != "u8") throw FormatError("header field 'dtype' is '" + h.dtype + "', expected 'u8'");
    const std::size_t n = h.dims.voxel_count();
    check_payload(c.payload, n);
    return {h.volume_id, MaskVolume(h.dims, read_labels(c.payload, 0, n), h.label_names)};
}

void save_volume(const Volume& volume, const MaskVolume& mask, const std::filesystem::path& path) {
    detail::write_file(path, encode_vseg(volume, mask));
}

std::pair<Volume, MaskVolume> load_volume(const std::filesystem::path& path) {
    return decode_vseg(detail::read_file(path));
}

void save_mask(const MaskVolume& mask, const std::string& volume_id, const std::filesystem::path& path) {
    detail::write_file(path, encode_vseg_mask(mask, volume_id));
}

MaskVolume load_mask(const std::filesystem::path& path) { return decode_vseg_mask(detail::read_file(path)).second; }

const Sample& Dataset::find(const std::string& volume_id) const {
    for (const auto* split : {&train, &test})
        for (const auto& s : *split)
            if (s.volume.id() == volume_id) return s;
    throw NotFoundError("no volume '" + volume_id + "' in dataset");
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    json manifest;
    manifest["volumes"] = json::array();
    for (const auto& [split, samples] : {std::pair{"train", &dataset.train}, std::pair{"test", &dataset.test}}) {
        fs::create_directories(dir / split);
        for (const auto& s : *samples) {
            const std::string rel = std::string(split) + "/" + s.volume.id() + ".vseg";
            save_volume(s.volume, s.mask, dir / rel);
            manifest["volumes"].push_back({{"volume_id", s.volume.id()}, {"split", split}, {"path", rel}});
        }
    }
    json labels = json::object();
    for (const auto& [label, name] : dataset.label_names) labels[std::to_string(label)] = name;
    manifest["label_names"] = labels;
    manifest["unseen_labels"] = dataset.unseen_labels;
    detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
    json manifest;
    try {
        manifest = json::parse(detail::read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed manifest.json: ") + e.what());
    }
    Dataset d;
    try {
        for (const auto& [k, v] : manifest.at("label_names").items()) d.label_names[std::stoi(k)] = v.get<std::string>();
        d.unseen_labels = manifest.value("unseen_labels", std::vector<int>{});
        for (const auto& entry : manifest.at("volumes")) {
            auto [volume, mask] = load_volume(dir / entry.at("path").get<std::string>());
            const auto split = entry.at("split").get<std::string>();
            if (volume.id() != entry.at("volume_id").get<std::string>())
                throw FormatError("manifest volume_id does not match file header for " + volume.id());
            (split == "train" ? d.train : d.test).push_back({std::move(volume), std::move(mask)});
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed manifest.json: ") + e.what());
    }
    return d;
}

Dataset make_synthetic_dataset(std::uint64_t seed, int n_train, int n_test, Dims dims, double noise_sigma) {
    if (n_train < 0 || n_test < 0 || n_train + n_test == 0) throw SpecError("dataset needs at least one volume");
    Dataset d;
    SyntheticSpec train;
    train.seed = seed;
    train.n_volumes = n_train;
    train.dims = dims;
    train.organ_set = seen_organs();
    train.noise_sigma = noise_sigma;
    if (n_train > 0) d.train = generate_synthetic(train);

    SyntheticSpec test = train;
    test.seed = seed ^ 0x5DEECE66DULL;
    test.n_volumes = n_test;
    test.first_index = n_train;
    for (auto& o : unseen_organs()) {
        test.organ_set.push_back(o);
        d.unseen_labels.push_back(o.label);
    }
    if (n_test > 0) d.test = generate_synthetic(test);
    for (const auto& o : test.organ_set) d.label_names[o.label] = o.name;
    return d;
}

}  // namespace cyclevol
