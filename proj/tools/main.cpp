#include <cstring>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "pathgt/error.hpp"

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kInvalidConfig = 2;

// Dotted `--section.key[=value]` overrides are pulled out before CLI11 sees
// the command line, so their values are never mistaken for positionals.
std::vector<std::string> split_overrides(int argc, char** argv, std::vector<std::string>& rest) {
    std::vector<std::string> overrides;
    rest.assign(argv, argv + 1);
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        const bool dotted = a.rfind("--", 0) == 0 && a.substr(2, a.find('=') - 2).find('.') != std::string::npos;
        if (!dotted) {
            rest.push_back(a);
            continue;
        }
        overrides.push_back(a);
        if (a.find('=') == std::string::npos && i + 1 < argc) overrides.emplace_back(argv[++i]);
    }
    return overrides;
}

void add_common(CLI::App* cmd, pathgt::cli::CommonOptions& o, bool out_required = true) {
    cmd->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    auto* out = cmd->add_option("--out", o.out, "Output directory");
    if (out_required) out->required();
    cmd->add_option("--seed-list", o.seed_list, "Comma-separated CV seeds, e.g. 42,123");
    cmd->add_option("--jobs", o.jobs, "Worker threads for fold runs")->check(CLI::PositiveNumber);
    cmd->add_flag("--force", o.force, "Replace a non-empty output directory");
    cmd->add_flag("--quiet", o.quiet, "Suppress JSON events on stderr");
}

} // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args;
    pathgt::cli::CommonOptions opt;
    opt.overrides = split_overrides(argc, argv, args);

    CLI::App app{"pathgt: pathway graph transformer for binary tumor phenotypes.\n"
                 "Config keys can be overridden with dotted flags, e.g. --train.lr 5e-4 or --model.layers=2."};
    app.name("pathgt");
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "Write a synthetic cohort (mut/cnv/labels TSV, GMT pathways)");
    add_common(synth, opt);
    auto* cv = app.add_subcommand("cv", "Repeated stratified cross-validation");
    add_common(cv, opt);
    auto* ablate = app.add_subcommand("ablate", "Full, mutation-only and CNV-only arms on shared folds");
    add_common(ablate, opt);

    std::filesystem::path run_dir;
    auto* explain = app.add_subcommand("explain", "Attributions, crosstalk, edges and hubs for a cv output");
    add_common(explain, opt);
    explain->add_option("--run", run_dir, "Directory written by `cv` (or one arm of `ablate`)")
        ->required()
        ->check(CLI::ExistingDirectory);

    std::vector<std::filesystem::path> dirs;
    auto* report = app.add_subcommand("report", "Aggregate metrics of several run directories");
    add_common(report, opt);
    report->add_option("dirs", dirs, "cv or ablate output directories")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kInvalidConfig;
    }

    try {
        if (*synth) return pathgt::cli::cmd_synth(opt);
        if (*cv) return pathgt::cli::cmd_cv(opt);
        if (*ablate) return pathgt::cli::cmd_ablate(opt);
        if (*explain) return pathgt::cli::cmd_explain(opt, run_dir);
        if (*report) return pathgt::cli::cmd_report(opt, dirs);
    } catch (const pathgt::Error& e) {
        std::cerr << nlohmann::json{{"event", "error"}, {"message", e.what()}}.dump() << "\n";
        return e.kind() == pathgt::ErrorKind::invalid_config ? kInvalidConfig : kRuntimeFailure;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << nlohmann::json{{"event", "error"}, {"message", e.what()}}.dump() << "\n";
        return kInvalidConfig;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"event", "error"}, {"message", e.what()}}.dump() << "\n";
        return kRuntimeFailure;
    }
    return kRuntimeFailure;
}
