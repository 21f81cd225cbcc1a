#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "cyclevol/dataset.hpp"
#include "cyclevol/interact.hpp"
#include "cyclevol/propnet.hpp"

namespace httplib {
class Server;
}

namespace cyclevol::service {

struct ApiResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

// HTTP session service over a dataset. Each handler is a thin adapter over an
// interact::Session; sessions persist under <data_dir>/sessions and are
// reloaded on construction.
class Service {
public:
    Service(Dataset dataset, const propnet::NetParams& params, std::filesystem::path data_dir,
            std::uint64_t seed = 0, int k_append = 5);
    ~Service();

    ApiResponse create_session(const std::string& body);
    ApiResponse list_volumes() const;
    ApiResponse slice_png(const std::string& volume_id, int slice_idx) const;
    ApiResponse get_mask(const std::string& sid, int slice_idx);
    ApiResponse post_scribble(const std::string& sid, const std::string& body);
    ApiResponse propagate(const std::string& sid);
    ApiResponse suggest(const std::string& sid);
    ApiResponse metrics(const std::string& sid);
    ApiResponse delete_session(const std::string& sid);

    // Registers every route; optionally serves a static directory at "/".
    void install(httplib::Server& server, const std::optional<std::filesystem::path>& static_dir = {});

    std::size_t session_count() const;
    const Dataset& dataset() const { return dataset_; }
    const propnet::Network& network() const { return net_; }

    // Runs f(session) under the session's lock; NotFoundError for unknown ids.
    template <class F>
    auto with_session(const std::string& sid, F&& f) {
        auto entry = find(sid);
        std::lock_guard lock(entry->mutex);
        return f(*entry->session);
    }

private:
    struct Entry {
        std::mutex mutex;
        std::unique_ptr<interact::Session> session;
        std::string created_at;
        std::string last_modified;
        std::uint64_t seed = 0;
    };

    std::shared_ptr<Entry> find(const std::string& sid) const;
    void persist(const std::string& sid, Entry& entry) const;
    void reload();
    std::filesystem::path session_dir() const { return data_dir_ / "sessions"; }

    Dataset dataset_;
    propnet::Network net_;
    std::filesystem::path data_dir_;
    int k_append_;
    mutable std::mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
    std::uint64_t seed_;
    std::uint64_t next_id_ = 1;
};

// Maps library errors to HTTP statuses: 404 unknown ids, 400 malformed
// input, 409 state conflicts, 500 otherwise.
ApiResponse error_response(const std::exception& e);

}  // namespace cyclevol::service
