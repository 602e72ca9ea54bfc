#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathgt/cohort.hpp"
#include "pathgt/interpret.hpp"
#include "pathgt/model.hpp"
#include "pathgt/training.hpp"

namespace pathgt::cli {

struct CohortPaths {
    std::filesystem::path mut, cnv, labels, pathways;
};

struct CvSettings {
    std::vector<std::uint64_t> seeds{42, 123};
    int n_folds = 5;
    double val_fraction = 0.1;
    std::size_t jobs = 1;
};

/// Resolved configuration: exactly one of `data` / `synth` is set.
struct RunConfig {
    std::optional<CohortPaths> data;
    std::optional<SynthSpec> synth;
    PreprocessSpec preprocess;
    ModelConfig model;
    TrainSpec train;
    CvSettings cv;
    ExplainOptions interpret;

    nlohmann::json to_json() const;
};

/// Built-in defaults as JSON (synthetic cohort, default model and protocol).
nlohmann::json default_config_json();

/// `--a.b=value` / `--a.b value` pairs; values are parsed as JSON when
/// possible and kept as strings otherwise.
std::vector<std::pair<std::string, nlohmann::json>> parse_overrides(const std::vector<std::string>& args);

/// Layers file over defaults and overrides over both, rejecting unknown keys.
/// `base` replaces the built-in defaults when given.
nlohmann::json merge_config(const nlohmann::json& file, const std::vector<std::pair<std::string, nlohmann::json>>& overrides,
                            const nlohmann::json* base = nullptr);

RunConfig resolve_config(const nlohmann::json& merged);

nlohmann::json read_json_file(const std::filesystem::path& path);

/// Loads the cohort and pathway definitions named by the config.
std::pair<CohortMatrix, std::vector<GeneSet>> load_inputs(const RunConfig& cfg);

std::vector<std::uint64_t> parse_seed_list(const std::string& s);

} // namespace pathgt::cli
