#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "cyclevol/propnet.hpp"

namespace cyclevol::propnet {

namespace {
constexpr std::string_view kMagic = "VPAR1";
}

void save_params(const NetParams& params, const std::filesystem::path& path) {
    nlohmann::json manifest;
    manifest["version"] = params.version;
    manifest["params"] = nlohmann::json::array();
    for (const auto& t : params.tensors) manifest["params"].push_back({{"name", t.name}, {"shape", t.shape}});
    std::string bytes = detail::pack(kMagic, manifest.dump());
    for (const auto& t : params.tensors)
        for (double v : t.values) detail::put_f32(bytes, static_cast<float>(v));
    detail::write_file(path, bytes);
}

NetParams load_params(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file(path);
    const auto container = detail::unpack(kMagic, bytes);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(container.header);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed parameter manifest: ") + e.what());
    }
    if (!manifest.contains("version") || !manifest["version"].is_number_integer())
        throw FormatError("parameter manifest missing 'version'");
    const int version = manifest["version"].get<int>();
    if (version != kArchitectureVersion)
        throw VersionError("parameter file version " + std::to_string(version) + " but this build expects " +
                           std::to_string(kArchitectureVersion));
    if (!manifest.contains("params") || !manifest["params"].is_array())
        throw FormatError("parameter manifest missing 'params'");

    NetParams params;
    params.version = version;
    const auto* p = reinterpret_cast<const unsigned char*>(container.payload.data());
    std::size_t remaining = container.payload.size();
    for (const auto& entry : manifest["params"]) {
        ParamTensor t;
        try {
            t.name = entry.at("name").get<std::string>();
            t.shape = entry.at("shape").get<std::vector<int>>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("malformed parameter entry: ") + e.what());
        }
        std::size_t n = 1;
        for (int d : t.shape) {
            if (d <= 0) throw FormatError("parameter '" + t.name + "' has a non-positive dimension");
            n *= static_cast<std::size_t>(d);
        }
        if (remaining < 4 * n) throw FormatError("truncated payload for parameter '" + t.name + "'");
        t.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) t.values[i] = detail::get_f32(p + 4 * i);
        p += 4 * n;
        remaining -= 4 * n;
        params.tensors.push_back(std::move(t));
    }
    if (remaining != 0) throw FormatError("trailing bytes after parameter payload");

    for (const auto& [name, shape] : architecture()) {
        const auto it = std::find_if(params.tensors.begin(), params.tensors.end(),
                                     [&](const ParamTensor& t) { return t.name == name; });
        if (it == params.tensors.end()) throw FormatError("missing parameter '" + name + "'");
        if (it->shape != shape)
            throw FormatError("parameter '" + name + "' has shape " + shape_string(it->shape) + ", expected " +
                              shape_string(shape));
    }
    if (!params.all_finite()) throw FormatError("parameter file contains non-finite values");
    return params;
}

}  // namespace cyclevol::propnet
