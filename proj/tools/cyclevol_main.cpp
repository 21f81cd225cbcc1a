#include <CLI11.hpp>
#include <httplib.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "cyclevol/cycle_train.hpp"
#include "cyclevol/dataset.hpp"
#include "cyclevol/errors.hpp"
#include "cyclevol/inference.hpp"
#include "cyclevol/interact.hpp"
#include "cyclevol/metrics.hpp"
#include "cyclevol/service.hpp"

namespace fs = std::filesystem;
using namespace cyclevol;

namespace {

std::string env_data_dir() {
    const char* v = std::getenv("CYCLEVOL_DATA_DIR");
    return v ? v : "";
}

fs::path require_data_dir(const std::string& dir) {
    if (dir.empty()) throw CLI::RequiredError("--data-dir (or CYCLEVOL_DATA_DIR)");
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

propnet::NetParams params_or_init(const std::string& path, std::uint64_t seed) {
    return path.empty() ? propnet::NetParams::initialize(seed) : propnet::load_params(path);
}

std::vector<Sample> split_samples(const Dataset& ds, const std::string& split) {
    if (split == "train") return ds.train;
    if (split == "test") return ds.test;
    auto all = ds.train;
    all.insert(all.end(), ds.test.begin(), ds.test.end());
    return all;
}

std::vector<int> labels_or_all(const std::vector<int>& labels, const Dataset& ds) {
    if (!labels.empty()) return labels;
    std::vector<int> out;
    for (const auto& [label, name] : ds.label_names) out.push_back(label);
    return out;
}

std::vector<metrics::MetricsReport> read_reports(const fs::path& dir) {
    std::ifstream in(dir / "reports.json");
    if (!in) throw NotFoundError("no reports.json in " + dir.string());
    std::vector<metrics::MetricsReport> out;
    for (const auto& j : nlohmann::json::parse(in)) out.push_back(metrics::report_from_json(j));
    return out;
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cycle-consistent memory propagation for interactive volume segmentation"};
    app.require_subcommand(1);
    std::string data_dir = env_data_dir();
    std::function<void()> action;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    std::uint64_t gen_seed = 0;
    int n_train = 40, n_test = 20;
    Dims dims{32, 64, 64};
    double noise = 0.03;
    gen->add_option("--data-dir", data_dir, "Output dataset directory");
    gen->add_option("--seed", gen_seed);
    gen->add_option("--n-train", n_train)->check(CLI::NonNegativeNumber);
    gen->add_option("--n-test", n_test)->check(CLI::NonNegativeNumber);
    gen->add_option("--slices", dims.slices);
    gen->add_option("--height", dims.height);
    gen->add_option("--width", dims.width);
    gen->add_option("--noise", noise, "Gaussian noise sigma");
    gen->callback([&] {
        action = [&] {
            const auto dir = require_data_dir(data_dir);
            const auto ds = make_synthetic_dataset(gen_seed, n_train, n_test, dims, noise);
            write_dataset(ds, dir);
            std::cout << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test volumes to " << dir
                      << "\n";
        };
    });

    // train
    auto* tr = app.add_subcommand("train", "Train the propagation network");
    train::TrainConfig tcfg;
    train::CycleLossConfig lcfg;
    std::string config_path, out_params, init_params, log_path, backward_source;
    std::optional<bool> cycle_flag;
    std::optional<double> lambda;
    long log_every = 100;
    tr->add_option("--data-dir", data_dir);
    tr->add_option("--config", config_path, "JSON with training and loss fields")->check(CLI::ExistingFile);
    tr->add_option("--out", out_params, "Output parameter file")->required();
    tr->add_option("--init", init_params, "Initial parameters (default: random init from --seed)");
    tr->add_flag("--cycle,!--no-cycle", cycle_flag, "Enable or disable the backward path");
    tr->add_option("--lambda", lambda, "Weight of the backward loss");
    tr->add_option("--backward-source", backward_source)->check(CLI::IsMember({"query", "intermediate"}));
    auto* seed_opt = tr->add_option("--seed", tcfg.seed);
    auto* iters_opt = tr->add_option("--iters", tcfg.iterations);
    auto* batch_opt = tr->add_option("--batch-size", tcfg.batch_size);
    auto* lr_opt = tr->add_option("--lr", tcfg.learning_rate);
    tr->add_option("--log", log_path, "Write per-step JSON lines");
    tr->add_option("--log-every", log_every, "Progress line interval (0: silent)");
    tr->callback([&] {
        action = [&] {
            train::TrainConfig cfg;
            train::CycleLossConfig loss;
            if (!config_path.empty()) {
                std::ifstream in(config_path);
                const auto j = nlohmann::json::parse(in);
                train::from_json(j, cfg);
                train::from_json(j, loss);
            }
            if (*seed_opt) cfg.seed = tcfg.seed;
            if (*iters_opt) cfg.iterations = tcfg.iterations;
            if (*batch_opt) cfg.batch_size = tcfg.batch_size;
            if (*lr_opt) cfg.learning_rate = tcfg.learning_rate;
            if (cycle_flag) loss.cycle = *cycle_flag;
            if (lambda) loss.lambda = *lambda;
            if (!backward_source.empty()) loss.backward_source = train::backward_source_from_string(backward_source);
            cfg.validate();
            loss.validate();

            const auto ds = read_dataset(require_data_dir(data_dir));
            const auto init = params_or_init(init_params, cfg.seed);
            std::ofstream log;
            if (!log_path.empty()) log.open(log_path);
            const auto result = train::train(ds.train, cfg, loss, init, [&](const train::TrainLogEntry& e, const auto&) {
                if (log.is_open()) log << train::to_json(e).dump() << '\n';
                if (log_every > 0 && (e.step + 1) % log_every == 0)
                    std::cerr << "step " << e.step + 1 << "/" << cfg.iterations << " loss " << e.loss.cycle_loss << "\n";
            });
            propnet::save_params(result.params, out_params);
            std::cout << "saved " << out_params << "\n";
        };
    });

    // propagate
    auto* prop = app.add_subcommand("propagate", "One-round propagation from a ground-truth memory slice");
    std::string params_path, volume_id, out_stem;
    std::uint64_t seed = 0;
    int label = 0, memory_slice = -1, k_append = 5;
    prop->add_option("--data-dir", data_dir);
    prop->add_option("--params", params_path, "Parameter file (default: random init from --seed)");
    prop->add_option("--seed", seed);
    prop->add_option("--volume", volume_id)->required();
    prop->add_option("--label", label)->required();
    prop->add_option("--memory-slice", memory_slice, "Default: largest-area slice");
    prop->add_option("--k-append", k_append)->check(CLI::PositiveNumber);
    prop->add_option("--out", out_stem, "Output stem for .vseg/.json/.metrics.json")->required();
    prop->callback([&] {
        action = [&] {
            const auto ds = read_dataset(require_data_dir(data_dir));
            const propnet::Network net(params_or_init(params_path, seed));
            const Sample& s = ds.find(volume_id);
            const int m = memory_slice >= 0 ? memory_slice : inference::select_memory_slice(s.mask, label).index;
            const auto run = inference::propagate_volume(s.volume, label, m, s.mask.binary_slice(m, label), net, k_append);
            save_run(run, ds.label_names, out_stem);
            const auto report = metrics::score_run(run, s.mask);
            write_text(out_stem + ".metrics.json", metrics::to_json(report).dump(2) + "\n");
            std::cout << "J&F " << 100.0 * report.per_volume.JF << "  DSC " << 100.0 * report.per_volume.DSC << "\n";
        };
    });

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "One-round benchmark over a dataset split");
    std::string split = "test", out_dir;
    std::vector<int> labels;
    ev->add_option("--data-dir", data_dir);
    ev->add_option("--params", params_path, "Parameter file (default: random init from --seed)");
    ev->add_option("--seed", seed);
    ev->add_option("--split", split)->check(CLI::IsMember({"train", "test", "all"}));
    ev->add_option("--labels", labels, "Labels to evaluate (default: all)");
    ev->add_option("--k-append", k_append)->check(CLI::PositiveNumber);
    ev->add_option("--out", out_dir)->required();
    ev->callback([&] {
        action = [&] {
            const auto ds = read_dataset(require_data_dir(data_dir));
            const propnet::Network net(params_or_init(params_path, seed));
            inference::ProtocolConfig cfg;
            cfg.k_append = k_append;
            const auto result = inference::run_benchmark(split_samples(ds, split), labels_or_all(labels, ds), net, cfg);
            std::vector<metrics::MetricsReport> reports;
            nlohmann::json reports_json = nlohmann::json::array();
            for (const auto& e : result.entries) {
                reports.push_back(e.report);
                reports_json.push_back(metrics::to_json(e.report));
            }
            const fs::path dir = out_dir;
            const auto summary = metrics::summary_csv(metrics::summarize(reports, ds.unseen_labels));
            write_text(dir / "summary.csv", summary);
            write_text(dir / "per_run.csv", metrics::per_run_csv(reports, ds.label_names));
            write_text(dir / "per_slice.csv", metrics::per_slice_csv(reports));
            write_text(dir / "reports.json", reports_json.dump() + "\n");
            std::cout << summary;
        };
    });

    // interact-sim
    auto* sim = app.add_subcommand("interact-sim", "Simulated multi-round interactive segmentation");
    std::string mode = "oracle";
    int rounds = 5;
    sim->add_option("--data-dir", data_dir);
    sim->add_option("--params", params_path, "Parameter file (default: random init from --seed)");
    sim->add_option("--seed", seed);
    sim->add_option("--mode", mode)->check(CLI::IsMember({"click", "scribble", "oracle"}));
    sim->add_option("--rounds", rounds)->check(CLI::PositiveNumber);
    sim->add_option("--split", split)->check(CLI::IsMember({"train", "test", "all"}));
    sim->add_option("--labels", labels);
    sim->add_option("--k-append", k_append)->check(CLI::PositiveNumber);
    sim->add_option("--out", out_dir)->required();
    sim->callback([&] {
        action = [&] {
            const auto ds = read_dataset(require_data_dir(data_dir));
            const propnet::Network net(params_or_init(params_path, seed));
            const auto result = interact::run_interactive(split_samples(ds, split), labels_or_all(labels, ds), net,
                                                          interact::mode_from_string(mode), rounds, seed, k_append);
            const auto table = interact::rounds_csv(result);
            write_text(fs::path(out_dir) / "rounds.csv", table);
            write_text(fs::path(out_dir) / "runs.csv", interact::interactive_runs_csv(result));
            std::cout << table;
        };
    });

    // improve
    auto* imp = app.add_subcommand("improve", "Per-label relative J&F change between two evaluate outputs");
    std::string dir_a, dir_b, out_file;
    imp->add_option("--a", dir_a, "Baseline evaluate directory")->required()->check(CLI::ExistingDirectory);
    imp->add_option("--b", dir_b, "Compared evaluate directory")->required()->check(CLI::ExistingDirectory);
    imp->add_option("--data-dir", data_dir, "Dataset for label names");
    imp->add_option("--out", out_file, "CSV path (default: stdout)");
    imp->callback([&] {
        action = [&] {
            LabelNames names;
            if (!data_dir.empty()) names = read_dataset(data_dir).label_names;
            const auto table = metrics::relative_improvement(read_reports(dir_a), read_reports(dir_b));
            const auto csv = metrics::improvement_csv(table, names);
            if (out_file.empty()) std::cout << csv;
            else write_text(out_file, csv);
        };
    });

    // serve
    auto* srv = app.add_subcommand("serve", "HTTP session service");
    std::string host = "127.0.0.1", static_dir;
    int port = 8080;
    srv->add_option("--data-dir", data_dir, "Dataset directory; sessions persist under <data-dir>/sessions");
    srv->add_option("--params", params_path, "Parameter file (default: random init from --seed)");
    srv->add_option("--seed", seed);
    srv->add_option("--host", host);
    srv->add_option("--port", port)->check(CLI::Range(0, 65535));
    srv->add_option("--static", static_dir, "Directory served at /")->check(CLI::ExistingDirectory);
    srv->add_option("--k-append", k_append)->check(CLI::PositiveNumber);
    srv->callback([&] {
        action = [&] {
            const auto dir = require_data_dir(data_dir);
            service::Service service(read_dataset(dir), params_or_init(params_path, seed), dir, seed, k_append);
            httplib::Server server;
            service.install(server, static_dir.empty() ? std::nullopt : std::optional<fs::path>(static_dir));
            g_server = &server;
            std::signal(SIGINT, stop_server);
            std::signal(SIGTERM, stop_server);
            std::cerr << "listening on http://" << host << ":" << port << " (" << service.session_count()
                      << " sessions restored)\n";
            if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    try {
        action();
    } catch (const CLI::RequiredError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
