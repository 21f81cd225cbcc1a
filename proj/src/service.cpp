#include "cyclevol/service.hpp"

#include <httplib.h>

#include <ctime>
#include <fstream>

#include "cyclevol/errors.hpp"
#include "cyclevol/png.hpp"
#include "cyclevol/rle.hpp"

namespace cyclevol::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ApiResponse ok(const json& j) { return {200, "application/json", j.dump()}; }

std::string now_utc() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json parse_body(const std::string& body) {
    try {
        auto j = json::parse(body);
        if (!j.is_object()) throw ValidationError("request body must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
    }
}

template <class T>
T field(const json& j, const char* name) {
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(std::string("missing or invalid field '") + name + "'");
    }
}

// Path indices too large for int are simply out of range.
int path_index(const std::string& s) {
    try {
        return std::stoi(s);
    } catch (const std::out_of_range&) {
        return -1;
    }
}

template <class F>
ApiResponse guarded(F&& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        return error_response(e);
    }
}

}  // namespace

ApiResponse error_response(const std::exception& e) {
    int status = 500;
    if (dynamic_cast<const NotFoundError*>(&e)) status = 404;
    else if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const BoundsError*>(&e) ||
             dynamic_cast<const ShapeError*>(&e) || dynamic_cast<const json::exception*>(&e))
        status = 400;
    else if (dynamic_cast<const InsufficientInputError*>(&e) || dynamic_cast<const StateError*>(&e) ||
             dynamic_cast<const ExhaustedError*>(&e))
        status = 409;
    return {status, "application/json", json{{"error", e.what()}}.dump()};
}

Service::Service(Dataset dataset, const propnet::NetParams& params, fs::path data_dir, std::uint64_t seed,
                 int k_append)
    : dataset_(std::move(dataset)), net_(params), data_dir_(std::move(data_dir)), k_append_(k_append), seed_(seed) {
    if (k_append < 1) throw SpecError("k_append must be >= 1");
    fs::create_directories(session_dir());
    reload();
}

Service::~Service() = default;

void Service::reload() {
    for (const auto& item : fs::directory_iterator(session_dir())) {
        const std::string file = item.path().filename().string();
        const std::string suffix = ".meta.json";
        if (file.size() <= suffix.size() || file.compare(file.size() - suffix.size(), suffix.size(), suffix) != 0)
            continue;
        std::ifstream in(item.path());
        const json meta = json::parse(in);
        const std::string sid = meta.at("session_id").get<std::string>();
        const Sample& sample = dataset_.find(meta.at("volume_id").get<std::string>());
        auto entry = std::make_shared<Entry>();
        entry->session = std::make_unique<interact::Session>(
            interact::Session::load(session_dir(), sid, sample.volume, &sample.mask, net_));
        entry->created_at = meta.at("created_at").get<std::string>();
        entry->last_modified = meta.at("last_modified").get<std::string>();
        entry->seed = meta.at("seed").get<std::uint64_t>();
        sessions_[sid] = entry;
        next_id_ = std::max<std::uint64_t>(next_id_, std::stoull(sid.substr(1)) + 1);
    }
}

std::shared_ptr<Service::Entry> Service::find(const std::string& sid) const {
    std::lock_guard lock(sessions_mutex_);
    const auto it = sessions_.find(sid);
    if (it == sessions_.end()) throw NotFoundError("unknown session '" + sid + "'");
    return it->second;
}

void Service::persist(const std::string& sid, Entry& entry) const {
    entry.last_modified = now_utc();
    entry.session->save(session_dir(), sid);
    std::ofstream(session_dir() / (sid + ".meta.json"))
        << json{{"session_id", sid},
                {"volume_id", entry.session->volume_id()},
                {"created_at", entry.created_at},
                {"last_modified", entry.last_modified},
                {"seed", entry.seed}}
               .dump(2)
        << '\n';
}

std::size_t Service::session_count() const {
    std::lock_guard lock(sessions_mutex_);
    return sessions_.size();
}

ApiResponse Service::create_session(const std::string& body) {
    return guarded([&] {
        const json j = parse_body(body);
        const auto volume_id = field<std::string>(j, "volume_id");
        const int label = field<int>(j, "label");
        const auto mode = interact::mode_from_string(field<std::string>(j, "mode"));
        if (!dataset_.label_names.contains(label)) throw ValidationError("unknown label " + std::to_string(label));
        const Sample& sample = dataset_.find(volume_id);

        std::string sid;
        std::uint64_t seed;
        {
            std::lock_guard lock(sessions_mutex_);
            const std::uint64_t n = next_id_++;
            char buf[32];
            std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(n));
            sid = buf;
            seed = j.contains("seed") ? field<std::uint64_t>(j, "seed")
                                      : Rng(seed_ ^ (0x9E3779B97F4A7C15ULL * n)).next_u64();
        }
        auto entry = std::make_shared<Entry>();
        entry->session =
            std::make_unique<interact::Session>(sample.volume, &sample.mask, label, mode, net_, seed, k_append_);
        entry->created_at = now_utc();
        entry->seed = seed;
        {
            std::lock_guard lock(entry->mutex);
            persist(sid, *entry);
        }
        {
            std::lock_guard lock(sessions_mutex_);
            sessions_[sid] = entry;
        }
        return ok({{"session_id", sid}, {"seed", seed}});
    });
}

ApiResponse Service::list_volumes() const {
    return guarded([&] {
        json volumes = json::array();
        for (const auto& [split, samples] : {std::pair{"train", &dataset_.train}, std::pair{"test", &dataset_.test}})
            for (const auto& s : *samples) {
                const Dims& d = s.volume.dims();
                volumes.push_back({{"volume_id", s.volume.id()},
                                   {"split", split},
                                   {"dims", {d.slices, d.height, d.width}},
                                   {"labels", s.mask.present_labels()}});
            }
        json names = json::object();
        for (const auto& [label, name] : dataset_.label_names) names[std::to_string(label)] = name;
        return ok({{"volumes", volumes}, {"label_names", names}, {"unseen_labels", dataset_.unseen_labels}});
    });
}

ApiResponse Service::slice_png(const std::string& volume_id, int slice_idx) const {
    return guarded([&] {
        const Volume& v = dataset_.find(volume_id).volume;
        if (slice_idx < 0 || slice_idx >= v.dims().slices)
            throw NotFoundError("slice " + std::to_string(slice_idx) + " out of range");
        return ApiResponse{200, "image/png", encode_png(v.slice(slice_idx))};
    });
}

ApiResponse Service::get_mask(const std::string& sid, int slice_idx) {
    return guarded([&] {
        return with_session(sid, [&](interact::Session& s) {
            if (slice_idx < 0 || slice_idx >= static_cast<int>(s.current_masks().size()))
                throw NotFoundError("slice " + std::to_string(slice_idx) + " out of range");
            json j = rle_json(s.current_masks()[slice_idx].threshold(0.5));
            j["slice_idx"] = slice_idx;
            j["round"] = s.round();
            return ok(j);
        });
    });
}

ApiResponse Service::post_scribble(const std::string& sid, const std::string& body) {
    return guarded([&] {
        auto entry = find(sid);
        const json j = parse_body(body);
        const int slice_idx = field<int>(j, "slice_idx");
        const auto scribble = interact::scribble_from_json(j);
        std::lock_guard lock(entry->mutex);
        auto& s = *entry->session;
        if (slice_idx < 0 || slice_idx >= static_cast<int>(s.current_masks().size()))
            throw ValidationError("slice_idx " + std::to_string(slice_idx) + " out of range");
        json out = rle_json(s.add_scribble(slice_idx, scribble).threshold(0.5));
        out["slice_idx"] = slice_idx;
        persist(sid, *entry);
        return ok(out);
    });
}

ApiResponse Service::propagate(const std::string& sid) {
    return guarded([&] {
        auto entry = find(sid);
        std::lock_guard lock(entry->mutex);
        auto& s = *entry->session;
        const int completed = s.round();
        // Oracle sessions seed their own target slice from ground truth.
        const auto& run = s.mode() == interact::Mode::oracle ? s.simulate_round() : s.propagate();
        json out = {{"round", completed}};
        if (s.has_ground_truth()) {
            const auto report = s.metrics();
            json per_slice(run.masks.size(), nullptr);
            for (const auto& m : report.per_slice) per_slice[m.slice_idx] = m.DSC;
            out["per_slice_dsc"] = per_slice;
            out["dsc"] = report.per_volume.DSC;
        }
        persist(sid, *entry);
        return ok(out);
    });
}

ApiResponse Service::suggest(const std::string& sid) {
    return guarded([&] { return with_session(sid, [](interact::Session& s) { return ok({{"slice_idx", s.suggest()}}); }); });
}

ApiResponse Service::metrics(const std::string& sid) {
    return guarded([&] { return with_session(sid, [](interact::Session& s) { return ok(metrics::to_json(s.metrics())); }); });
}

ApiResponse Service::delete_session(const std::string& sid) {
    return guarded([&] {
        std::shared_ptr<Entry> entry;
        {
            std::lock_guard lock(sessions_mutex_);
            const auto it = sessions_.find(sid);
            if (it == sessions_.end()) throw NotFoundError("unknown session '" + sid + "'");
            entry = it->second;
            sessions_.erase(it);
        }
        std::lock_guard lock(entry->mutex);
        for (const char* suffix : {".json", ".meta.json", ".current.vseg", ".run.vseg"})
            fs::remove(session_dir() / (sid + suffix));
        return ok({{"deleted", sid}});
    });
}

void Service::install(httplib::Server& server, const std::optional<fs::path>& static_dir) {
    auto send = [](httplib::Response& res, const ApiResponse& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    server.Post("/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, create_session(req.body));
    });
    server.Get("/volumes", [this, send](const httplib::Request&, httplib::Response& res) { send(res, list_volumes()); });
    server.Get(R"(/volumes/([^/]+)/slices/(-?\d+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, slice_png(req.matches[1], path_index(req.matches[2])));
    });
    server.Get(R"(/sessions/([^/]+)/masks/(-?\d+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, get_mask(req.matches[1], path_index(req.matches[2])));
    });
    server.Post(R"(/sessions/([^/]+)/scribbles)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, post_scribble(req.matches[1], req.body));
    });
    server.Post(R"(/sessions/([^/]+)/propagate)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, propagate(req.matches[1]));
    });
    server.Get(R"(/sessions/([^/]+)/suggest)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, suggest(req.matches[1]));
    });
    server.Get(R"(/sessions/([^/]+)/metrics)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, metrics(req.matches[1]));
    });
    server.Delete(R"(/sessions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, delete_session(req.matches[1]));
    });
    if (static_dir && !server.set_mount_point("/", static_dir->string()))
        throw NotFoundError("static directory " + static_dir->string() + " does not exist");
}

}  // namespace cyclevol::service
