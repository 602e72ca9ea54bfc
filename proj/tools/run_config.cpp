#include "run_config.hpp"

#include <fstream>
#include <sstream>

#include "pathgt/error.hpp"

namespace pathgt::cli {

namespace {

nlohmann::json cv_json(const CvSettings& c) {
    return {{"seeds", c.seeds}, {"n_folds", c.n_folds}, {"val_fraction", c.val_fraction}, {"jobs", c.jobs}};
}

nlohmann::json schema() {
    auto s = default_config_json();
    s["data"] = {{"mut", ""}, {"cnv", ""}, {"labels", ""}, {"pathways", ""}};
    return s;
}

// Every object key of `j` must exist in `ref`; arrays and scalars are leaves.
void check_keys(const nlohmann::json& j, const nlohmann::json& ref, const std::string& prefix) {
    if (!j.is_object()) return;
    if (!ref.is_object()) throw config_error("config key '" + prefix + "' is not a section");
    for (const auto& [k, v] : j.items()) {
        const std::string path = prefix.empty() ? k : prefix + "." + k;
        if (!ref.contains(k)) throw config_error("unknown config key '" + path + "'");
        if (v.is_object()) check_keys(v, ref.at(k), path);
    }
}

nlohmann::json::json_pointer pointer_of(const std::string& dotted) {
    std::string p;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw config_error("malformed override key '" + dotted + "'");
        p += "/" + part;
    }
    return nlohmann::json::json_pointer(p);
}

std::filesystem::path required_path(const nlohmann::json& data, const char* key) {
    const auto v = data.value(key, std::string());
    if (v.empty()) throw config_error(std::string("data.") + key + " is required when data paths are given");
    return v;
}

} // namespace

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    if (data) {
        j["data"] = {{"mut", data->mut.string()},
                     {"cnv", data->cnv.string()},
                     {"labels", data->labels.string()},
                     {"pathways", data->pathways.string()}};
    }
    if (synth) j["synth"] = pathgt::to_json(*synth);
    j["preprocess"] = pathgt::to_json(preprocess);
    j["model"] = pathgt::to_json(model);
    j["train"] = pathgt::to_json(train);
    j["cv"] = cv_json(cv);
    j["interpret"] = pathgt::to_json(interpret);
    return j;
}

nlohmann::json default_config_json() {
    return {{"synth", to_json(SynthSpec{})},
            {"preprocess", to_json(PreprocessSpec{})},
            {"model", to_json(ModelConfig{})},
            {"train", to_json(TrainSpec{})},
            {"cv", cv_json(CvSettings{})},
            {"interpret", to_json(ExplainOptions{})}};
}

std::vector<std::pair<std::string, nlohmann::json>> parse_overrides(const std::vector<std::string>& args) {
    std::vector<std::pair<std::string, nlohmann::json>> out;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a.rfind("--", 0) != 0 || a.size() < 3) throw config_error("unexpected argument '" + a + "'");
        std::string key = a.substr(2), value;
        if (const auto eq = key.find('='); eq != std::string::npos) {
            value = key.substr(eq + 1);
            key = key.substr(0, eq);
        } else {
            if (i + 1 >= args.size()) throw config_error("override --" + key + " has no value");
            value = args[++i];
        }
        if (key.find('.') == std::string::npos) throw config_error("unknown option --" + key);
        nlohmann::json v = nlohmann::json::parse(value, nullptr, false);
        if (v.is_discarded()) v = value;
        out.emplace_back(key, std::move(v));
    }
    return out;
}

nlohmann::json merge_config(const nlohmann::json& file, const std::vector<std::pair<std::string, nlohmann::json>>& overrides,
                            const nlohmann::json* base) {
    if (!file.is_null() && !file.is_object()) throw config_error("config file must hold a JSON object");
    const auto ref = schema();
    check_keys(file, ref, "");

    bool has_data = file.contains("data");
    bool has_synth = file.contains("synth");
    for (const auto& [k, v] : overrides) {
        has_data = has_data || k.rfind("data.", 0) == 0;
        has_synth = has_synth || k.rfind("synth.", 0) == 0;
    }
    nlohmann::json merged = base ? *base : default_config_json();
    if (has_data && has_synth) throw config_error("config gives both data paths and a synth spec; choose one");
    if (has_data) merged.erase("synth");
    if (has_synth) merged.erase("data");
    if (!file.is_null()) merged.merge_patch(file);

    for (const auto& [k, v] : overrides) {
        const auto ptr = pointer_of(k);
        if (!ref.contains(ptr)) throw config_error("unknown config key '" + k + "'");
        merged[ptr] = v;
    }
    return merged;
}

RunConfig resolve_config(const nlohmann::json& j) {
    RunConfig c;
    try {
        if (j.contains("data")) {
            const auto& d = j.at("data");
            c.data = CohortPaths{required_path(d, "mut"), required_path(d, "cnv"), required_path(d, "labels"),
                                 required_path(d, "pathways")};
        }
        if (j.contains("synth")) c.synth = synth_spec_from_json(j.at("synth"));
        if (c.data.has_value() == c.synth.has_value()) {
            throw config_error("config needs exactly one of 'data' and 'synth'");
        }
        if (c.synth) c.synth->validate();
        c.preprocess = preprocess_spec_from_json(j.value("preprocess", nlohmann::json::object()));
        c.model = model_config_from_json(j.value("model", nlohmann::json::object()));
        c.model.validate();
        c.train = train_spec_from_json(j.value("train", nlohmann::json::object()));
        c.train.validate();
        const auto cv = j.value("cv", nlohmann::json::object());
        c.cv.seeds = cv.value("seeds", c.cv.seeds);
        c.cv.n_folds = cv.value("n_folds", c.cv.n_folds);
        c.cv.val_fraction = cv.value("val_fraction", c.cv.val_fraction);
        c.cv.jobs = cv.value("jobs", c.cv.jobs);
        c.interpret = explain_options_from_json(j.value("interpret", nlohmann::json::object()));
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("config: ") + e.what());
    }
    if (c.cv.seeds.empty()) throw config_error("cv.seeds must not be empty");
    if (c.cv.n_folds < 2) throw config_error("cv.n_folds must be at least 2");
    if (!(c.cv.val_fraction > 0.0 && c.cv.val_fraction < 1.0)) throw config_error("cv.val_fraction must lie in (0, 1)");
    if (c.cv.jobs < 1) throw config_error("cv.jobs must be at least 1");
    if (c.preprocess.min_freq < 0.0 || c.preprocess.min_freq > 1.0) {
        throw config_error("preprocess.min_freq must lie in [0, 1]");
    }
    return c;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw config_error(path.string() + ": " + e.what());
    }
}

std::pair<CohortMatrix, std::vector<GeneSet>> load_inputs(const RunConfig& cfg) {
    if (cfg.synth) {
        auto syn = synth_cohort(*cfg.synth);
        return {std::move(syn.cohort), std::move(syn.pathways)};
    }
    const auto& d = *cfg.data;
    return {load_cohort(d.mut, d.cnv, d.labels), load_gmt(d.pathways)};
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.empty()) continue;
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(part, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != part.size() || part.front() == '-') throw config_error("--seed-list: '" + part + "' is not a seed");
        out.push_back(v);
    }
    if (out.empty()) throw config_error("--seed-list is empty");
    return out;
}

} // namespace pathgt::cli
