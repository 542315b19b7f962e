// metasel: command-line front end for data generation, experiment runs,
// ablations and reports.
//
// Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "metasel/errors.hpp"
#include "metasel/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) throw metasel::ConfigError("empty entry in list '" + s + "'");
        out.push_back(item.substr(b, e - b + 1));
    }
    if (out.empty()) throw metasel::ConfigError("empty list");
    return out;
}

std::vector<double> parse_budgets(const std::string& s) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) {
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw metasel::ConfigError("--budgets: '" + item + "' is not a number");
        out.push_back(v);
    }
    return out;
}

std::size_t parse_workers(const std::string& s, const char* what) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || v < 1) throw metasel::ConfigError(std::string(what) + ": expected a positive integer, got '" + s + "'");
    return static_cast<std::size_t>(v);
}

struct Options {
    std::string config;
    std::string out = "results";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> workers;
    std::optional<std::string> methods;
    std::optional<std::string> budgets;
    std::string results_dir;
};

metasel::ExperimentConfig resolve_config(const Options& o) {
    if (!std::filesystem::is_regular_file(o.config)) throw metasel::ConfigError("--config: no such file " + o.config);
    auto cfg = metasel::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.workers) {
        cfg.workers = parse_workers(*o.workers, "--workers");
    } else if (const char* env = std::getenv("MSEL_WORKERS"); env && *env) {
        cfg.workers = parse_workers(env, "MSEL_WORKERS");
    }
    if (o.methods) cfg.methods = split_list(*o.methods);
    if (o.budgets) cfg.budgets = parse_budgets(*o.budgets);
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config, "experiment config (JSON)")->required();
    cmd->add_option("--out", o.out, "output directory")->capture_default_str();
    cmd->add_option("--seed", o.seed, "override the config seed");
    cmd->add_option("--workers", o.workers, "worker threads (falls back to MSEL_WORKERS)");
    cmd->add_option("--methods", o.methods, "comma-separated method list");
    cmd->add_option("--budgets", o.budgets, "comma-separated budgets in percent");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"metasel: test input selection under distribution shift"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("gen-data", "generate source and shifted target datasets");
    add_common(gen, o);
    auto* run = app.add_subcommand("run", "run every method on every subject");
    add_common(run, o);
    auto* ablate = app.add_subcommand("ablate", "meta-model feature ablation");
    add_common(ablate, o);
    auto* report = app.add_subcommand("report", "aggregate a finished run");
    report->add_option("results", o.results_dir, "directory of a finished run (out/run)")->required();
    report->add_option("--out", o.out, "output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (report->parsed()) {
            const auto dir = metasel::cmd_report(o.results_dir, o.out);
            std::cout << "report written to " << dir.string() << "\n";
            return kExitOk;
        }
        const auto cfg = resolve_config(o);
        if (gen->parsed()) {
            const auto files = metasel::cmd_gen_data(cfg, o.out);
            std::cout << files.size() << " datasets written under " << (std::filesystem::path(o.out) / "data").string()
                      << "\n";
        } else if (run->parsed()) {
            const auto s = metasel::cmd_run(cfg, o.out);
            std::size_t rejected = 0;
            for (const auto& sub : s.subjects) rejected += sub.admissible ? 0 : 1;
            std::cout << s.subjects.size() << " subjects, " << rejected << " rejected; results in " << s.dir.string()
                      << "\n";
        } else if (ablate->parsed()) {
            const auto s = metasel::cmd_ablate(cfg, o.out);
            std::cout << s.subjects.size() << " subjects; results in " << s.dir.string() << "\n";
        }
    } catch (const metasel::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
