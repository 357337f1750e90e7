#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rcmlab/experiments.hpp"

using nlohmann::json;

namespace {

// Applies "a.b.c=value" to the config; the value is parsed as JSON when it
// is valid JSON, and taken as a string otherwise.
void apply_override(json& cfg, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
    std::string path = kv.substr(0, eq), raw = kv.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &cfg;
    std::size_t pos = 0;
    while (true) {
        auto dot = path.find('.', pos);
        std::string key = path.substr(pos, dot - pos);
        if (key.empty()) throw CLI::ValidationError("--set", "empty key segment in " + kv);
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        pos = dot + 1;
    }
}

int finish(const rcmlab::cli::RunResult& res) {
    for (const auto& e : res.errors) std::cerr << "error: " << e << "\n";
    if (res.status == 0)
        std::cout << "ok\n";
    else if (res.status == 1)
        std::cout << "checks failed\n";
    return res.status;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"rcmlab: numerical experiments on random conductance models"};
    app.require_subcommand(1);

    std::string config_path, out_dir, results_dir;
    std::vector<std::string> overrides;

    std::vector<CLI::App*> subs;
    for (const auto& name : rcmlab::cli::experiment_names()) {
        auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
        sub->add_option("--config", config_path, "JSON config file (or a manifest.json)")
            ->required();
        sub->add_option("--set", overrides, "dotted-path config override, key=value");
        sub->add_option("--out", out_dir, "output directory")->required();
        subs.push_back(sub);
    }
    auto* plot = app.add_subcommand("plot-data", "reshape results into plot-ready tables");
    plot->add_option("--results", results_dir, "directory holding manifest.json/results.csv")
        ->required();
    plot->add_option("--out", out_dir, "output directory (defaults to --results)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (plot->parsed()) return finish(rcmlab::cli::emit_plot_data(results_dir, out_dir));

        json cfg;
        {
            std::ifstream in(config_path);
            if (!in) {
                std::cerr << "error: cannot read config " << config_path << "\n";
                return 2;
            }
            try {
                in >> cfg;
            } catch (const json::parse_error& e) {
                std::cerr << "error: config parse: " << e.what() << "\n";
                return 2;
            }
        }
        // unwrap a manifest before overrides so --set addresses the config itself
        if (cfg.is_object() && cfg.value("tool", "") == "rcmlab" && cfg.contains("config"))
            cfg = cfg["config"];
        for (const auto& kv : overrides) apply_override(cfg, kv);
        // the chosen subcommand wins over whatever the file says
        for (std::size_t i = 0; i < subs.size(); ++i)
            if (subs[i]->parsed()) cfg["experiment"] = rcmlab::cli::experiment_names()[i];

        return finish(rcmlab::cli::run_experiment(cfg, out_dir));
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
