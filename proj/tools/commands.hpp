#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pathgt::cli {

/// Flags shared by every subcommand.
struct CommonOptions {
    std::filesystem::path config;
    std::filesystem::path out;
    std::string seed_list;
    std::optional<std::size_t> jobs;
    bool force = false;
    bool quiet = false;
    std::vector<std::string> overrides;  // raw `--a.b value` tokens
};

int cmd_synth(const CommonOptions& opt);
int cmd_cv(const CommonOptions& opt);
int cmd_ablate(const CommonOptions& opt);
int cmd_explain(const CommonOptions& opt, const std::filesystem::path& run_dir);
int cmd_report(const CommonOptions& opt, const std::vector<std::filesystem::path>& dirs);

} // namespace pathgt::cli
