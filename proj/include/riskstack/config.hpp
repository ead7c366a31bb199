#ifndef RISKSTACK_CONFIG_HPP
#define RISKSTACK_CONFIG_HPP

#include "riskstack/core.hpp"
#include "riskstack/csv.hpp"
#include "riskstack/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace riskstack {

/// Flat `key = value` file. Lines starting with '#' or ';' are comments;
/// lists are comma separated. Later keys override earlier ones.
class Config {
public:
    Config() = default;

    static auto parse(std::istream& in, const std::string& origin = "<config>") -> Config
    {
        Config c;
        std::string line;
        int n = 0;
        while (std::getline(in, line)) {
            ++n;
            const auto t = csv::trim(line);
            if (t.empty() || t[0] == '#' || t[0] == ';') continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos) throw InvalidArgument(origin + ":" + std::to_string(n) + ": expected key = value");
            const auto key = lower(csv::trim(t.substr(0, eq)));
            if (key.empty()) throw InvalidArgument(origin + ":" + std::to_string(n) + ": empty key");
            c.values_[key] = csv::trim(t.substr(eq + 1));
        }
        return c;
    }

    static auto load(const std::string& path) -> Config
    {
        std::ifstream in(path);
        if (!in) throw Error("cannot open config '" + path + "'");
        return parse(in, path);
    }

    void set(const std::string& key, const std::string& value) { values_[lower(key)] = value; }
    [[nodiscard]] auto has(const std::string& key) const -> bool { return values_.count(key) > 0; }
    [[nodiscard]] auto values() const -> const std::map<std::string, std::string>& { return values_; }

    [[nodiscard]] auto get(const std::string& key) const -> std::optional<std::string>
    {
        auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] auto get_or(const std::string& key, const std::string& fallback) const -> std::string
    {
        return get(key).value_or(fallback);
    }

    [[nodiscard]] auto get_double(const std::string& key) const -> std::optional<double>
    {
        const auto v = get(key);
        if (!v) return std::nullopt;
        const auto d = csv::parse_real(*v);
        if (!d) throw InvalidArgument("config key '" + key + "' is empty");
        return d;
    }

    [[nodiscard]] auto get_int(const std::string& key) const -> std::optional<long long>
    {
        const auto v = get(key);
        if (!v) return std::nullopt;
        std::size_t pos = 0;
        long long out = 0;
        try {
            out = std::stoll(*v, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != v->size()) throw InvalidArgument("config key '" + key + "' must be an integer, got '" + *v + "'");
        return out;
    }

    [[nodiscard]] auto get_bool(const std::string& key) const -> std::optional<bool>
    {
        const auto v = get(key);
        if (!v) return std::nullopt;
        const auto s = lower(*v);
        if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
        if (s == "false" || s == "0" || s == "no" || s == "off") return false;
        throw InvalidArgument("config key '" + key + "' must be a boolean, got '" + *v + "'");
    }

    [[nodiscard]] auto get_list(const std::string& key) const -> std::optional<std::vector<std::string>>
    {
        const auto v = get(key);
        if (!v) return std::nullopt;
        std::vector<std::string> out;
        for (const auto& f : csv::split(*v)) {
            const auto t = csv::trim(f);
            if (!t.empty()) out.push_back(lower(t));
        }
        return out;
    }

    /// Throws on keys outside `known`, so typos do not silently fall back to defaults.
    void check_known(const std::set<std::string>& known) const
    {
        for (const auto& [k, v] : values_)
            if (!known.count(k)) throw InvalidArgument("unknown config key '" + k + "'");
    }

private:
    std::map<std::string, std::string> values_;
};

inline auto known_config_keys() -> std::set<std::string>
{
    return {"stage",          "modality",        "clinical_features", "biomarkers",       "clinical_csv",     "image_csv",
            "feature_length", "pca_components",  "whiten",            "mice_iterations",  "mice_ridge",       "gamma",
            "folds",          "seed",            "balance_negative",  "balance_positive", "candidates",       "forest_trees",
            "boosting_rounds", "meta_l2",        "nomogram_resamples", "nomogram_l2",     "bundle",           "output",
            "host",           "port",            "strict",            "history",          "static_dir",       "synth_n_low",
            "synth_n_high",   "synth_missing_rate", "synth_label_noise", "synth_image_separation", "synth_clinical_scale",
            "k_min",          "k_max"};
}

inline auto pipeline_from_config(const Config& c) -> PipelineConfig
{
    PipelineConfig p;
    if (auto v = c.get("stage")) p.stage = parse_stage(*v);
    if (auto v = c.get("modality")) p.modality = parse_modality(*v);
    if (auto v = c.get_list("clinical_features")) p.clinical_features = *v;
    if (auto v = c.get_int("pca_components")) p.pca_components = static_cast<int>(*v);
    if (auto v = c.get_bool("whiten")) p.whiten = *v;
    if (auto v = c.get_int("mice_iterations")) p.mice.iterations = static_cast<int>(*v);
    if (auto v = c.get_double("mice_ridge")) p.mice.ridge = *v;
    if (auto v = c.get_double("gamma")) p.gamma = GammaMap::constant(*v);
    if (auto v = c.get_int("folds")) p.folds = static_cast<int>(*v);
    if (auto v = c.get_int("seed")) p.seed = static_cast<std::uint64_t>(*v);
    p.mice.seed = derive_seed(p.seed, 11);
    if (c.has("balance_negative") || c.has("balance_positive")) {
        BalancePlan b = p.balance_plan();
        if (auto v = c.get_int("balance_negative")) b.negative = static_cast<int>(*v);
        if (auto v = c.get_int("balance_positive")) b.positive = static_cast<int>(*v);
        p.balance = b;
    }
    CandidateOverrides o;
    if (auto v = c.get_int("forest_trees")) o.forest_trees = static_cast<int>(*v);
    if (auto v = c.get_int("boosting_rounds")) o.boosting_rounds = static_cast<int>(*v);
    p.candidates = make_candidates(c.get_list("candidates").value_or(default_candidate_codes()), p.seed, o);
    if (auto v = c.get_double("meta_l2")) p.meta_l2 = *v;
    if (auto v = c.get_int("nomogram_resamples")) p.nomogram_resamples = static_cast<int>(*v);
    if (auto v = c.get_double("nomogram_l2")) p.nomogram_l2 = *v;
    require(p.folds >= 2, "config: folds must be at least 2");
    require(p.pca_components >= 1, "config: pca_components must be at least 1");
    return p;
}

// PORT in the environment wins over the config file.
inline auto resolve_port(const Config& c, int fallback = 8080) -> int
{
    if (const char* e = std::getenv("PORT"); e && *e) {
        Config tmp;
        tmp.set("port", e);
        return static_cast<int>(*tmp.get_int("port"));
    }
    return static_cast<int>(c.get_int("port").value_or(fallback));
}

} // namespace riskstack

#endif
