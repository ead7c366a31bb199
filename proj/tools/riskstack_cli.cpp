#include "riskstack/bundle.hpp"
#include "riskstack/config.hpp"
#include "riskstack/report.hpp"
#include "riskstack/service.hpp"
#include "riskstack/synth.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

using namespace riskstack;
namespace fs = std::filesystem;

namespace {

// Flags shared by every subcommand; anything given on the command line
// overrides the config file.
struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;

    auto load() const -> Config
    {
        Config c = config_path.empty() ? Config{} : Config::load(config_path);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + s + "'");
            c.set(std::string(csv::trim(s.substr(0, eq))), std::string(csv::trim(s.substr(eq + 1))));
        }
        for (const auto& [k, v] : flags)
            if (!v.empty()) c.set(k, v);
        c.check_known(known_config_keys());
        return c;
    }
};

void add_common(CLI::App* sub, Common& common)
{
    sub->add_option("-c,--config", common.config_path, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", common.sets, "override a config key (key=value), repeatable");
}

void add_flag(CLI::App* sub, Common& common, const std::string& flag, const std::string& key, const std::string& help)
{
    sub->add_option(flag, common.flags[key], help);
}

auto require_key(const Config& c, const std::string& key) -> std::string
{
    auto v = c.get(key);
    if (!v || v->empty()) throw InvalidArgument("missing required setting '" + key + "' (config key or flag)");
    return *v;
}

// Columns of the clinical CSV besides the demographic and label columns.
auto csv_schema(const std::string& path) -> std::vector<std::string>
{
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open clinical CSV '" + path + "'");
    std::string line;
    if (!csv::next_line(in, line)) throw InvalidArgument("clinical CSV '" + path + "' is empty");
    csv::strip_bom(line);
    const std::set<std::string> fixed{"id", "gender", "age", "risk_label", "outcome_label"};
    std::vector<std::string> out;
    for (const auto& h : csv::split(line)) {
        const auto name = std::string(csv::trim(h));
        if (!fixed.count(name)) out.push_back(name);
    }
    return out;
}

auto image_csv_width(const std::string& path) -> std::size_t
{
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open image feature CSV '" + path + "'");
    std::string line;
    if (!csv::next_line(in, line)) throw InvalidArgument("image feature CSV '" + path + "' is empty");
    const auto n = csv::split(line).size();
    if (n < 2) throw InvalidArgument("image feature CSV '" + path + "' has no feature columns");
    return n - 1;
}

auto load_cohort(const Config& c) -> Cohort
{
    const auto clinical = require_key(c, "clinical_csv");
    const auto schema = c.get_list("biomarkers").value_or(csv_schema(clinical));
    const auto image = c.get("image_csv");
    std::size_t length = 0;
    if (auto v = c.get_int("feature_length")) length = static_cast<std::size_t>(*v);
    else if (image && !image->empty()) length = image_csv_width(*image);
    auto cohort = load_clinical_csv(clinical, schema, length);
    if (image && !image->empty()) load_image_features_csv(*image, cohort);
    return cohort;
}

// Pipeline settings recorded in the bundle; file paths are left out so the
// fingerprint depends on the data and the settings only.
auto settings_json(const Config& c) -> Json
{
    static const std::set<std::string> paths{"clinical_csv", "image_csv", "bundle", "output", "host", "port", "history", "static_dir"};
    Json j = Json::object();
    for (const auto& [k, v] : c.values())
        if (!paths.count(k)) j[k] = v;
    return j;
}

class Output {
public:
    explicit Output(const std::optional<std::string>& path)
    {
        if (path && !path->empty() && *path != "-") {
            if (const auto dir = fs::path(*path).parent_path(); !dir.empty()) fs::create_directories(dir);
            file_.open(*path, std::ios::binary);
            if (!file_) throw Error("cannot write '" + *path + "'");
        }
    }
    auto stream() -> std::ostream& { return file_.is_open() ? file_ : std::cout; }

private:
    std::ofstream file_;
};

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << text;
}

// ---------------------------------------------------------------------------
// subcommands

auto cmd_synth(const Config& c, const std::string& out_dir) -> int
{
    SynthSpec s;
    s.seed = static_cast<std::uint64_t>(c.get_int("seed").value_or(7));
    if (auto v = c.get_int("synth_n_low")) s.n_low = static_cast<int>(*v);
    if (auto v = c.get_int("synth_n_high")) s.n_high = static_cast<int>(*v);
    if (auto v = c.get_double("synth_missing_rate")) s.missing_rate = *v;
    if (auto v = c.get_double("synth_label_noise")) s.label_noise = *v;
    if (auto v = c.get_double("synth_image_separation")) s.image_separation = *v;
    if (auto v = c.get_double("synth_clinical_scale")) s.clinical_scale = *v;
    if (auto v = c.get_int("feature_length")) s.feature_length = static_cast<std::size_t>(*v);
    const auto result = generate(s);
    fs::create_directories(out_dir);
    {
        std::ofstream out(fs::path(out_dir) / "clinical.csv", std::ios::binary);
        write_cohort_csv(out, result.cohort);
    }
    if (s.feature_length > 0) {
        std::ofstream out(fs::path(out_dir) / "image_features.csv", std::ios::binary);
        write_image_features_csv(out, result.cohort);
    }
    write_text(fs::path(out_dir) / "truth.json", truth_to_json(result.truth).dump(2) + "\n");
    std::cerr << "wrote " << result.cohort.size() << " synthetic patients to " << out_dir << "\n";
    return 0;
}

auto cmd_profile(const Config& c) -> int
{
    const auto cohort = load_cohort(c);
    const auto stage = parse_stage(c.get_or("stage", "risk"));
    const auto subset = stage == Stage::outcome ? cohort.high_risk_only() : cohort;
    Output out(c.get("output"));
    write_profile_csv(out.stream(), profile_cohort(subset, stage), stage);
    return 0;
}

auto cmd_train_risk(const Config& c) -> int
{
    const auto cohort = load_cohort(c);
    auto b = train_risk_stage(cohort, pipeline_from_config(c));
    b.metadata.config = settings_json(c);
    const auto path = c.has("output") ? *c.get("output") : require_key(c, "bundle");
    save_bundle(b, path);
    std::cout << bundle_fingerprint(b) << "\n";
    return 0;
}

auto cmd_train_outcome(const Config& c) -> int
{
    const auto in = require_key(c, "bundle");
    auto b = load_bundle(in);
    const auto cohort = load_cohort(c);
    train_outcome_stage(b, cohort, pipeline_from_config(c));
    const auto path = c.get("output").value_or(in);
    save_bundle(b, path);
    std::cout << bundle_fingerprint(b) << "\n";
    return 0;
}

auto cmd_sweep(const Config& c, const std::string& reference_code, const std::string& ranking_path, bool permutation) -> int
{
    auto cfg = pipeline_from_config(c);
    const auto cohort = load_cohort(c);
    const auto subset = cfg.stage == Stage::outcome ? cohort.high_risk_only() : cohort;
    ForestParams fp;
    fp.trees = static_cast<int>(c.get_int("forest_trees").value_or(100));
    const auto ranking = rank_cohort_features(subset, cfg.stage, fp, cfg.seed, cfg.mice,
                                              permutation ? ImportanceMethod::permutation : ImportanceMethod::gini);
    if (!ranking_path.empty()) {
        Output r(ranking_path);
        write_ranking_csv(r.stream(), ranking);
    }
    const int k_min = static_cast<int>(c.get_int("k_min").value_or(1));
    const int k_max = static_cast<int>(c.get_int("k_max").value_or(std::min<long long>(10, static_cast<long long>(ranking.features.size()))));
    CandidateOverrides o;
    if (auto v = c.get_int("forest_trees")) o.forest_trees = static_cast<int>(*v);
    if (auto v = c.get_int("boosting_rounds")) o.boosting_rounds = static_cast<int>(*v);
    const auto reference = candidate_from_code(reference_code, cfg.seed, o);
    const auto plan = plan_folds(subset, cfg.folds, cfg.stage, cfg.seed);
    const auto sweep = topk_sweep(subset, ranking, k_min, k_max, reference, cfg, plan);
    Output out(c.get("output"));
    write_sweep_csv(out.stream(), sweep);
    std::cerr << "best k = " << sweep.best_k << "\n";
    return 0;
}

auto cmd_evaluate(const Config& c, const std::string& modalities, const std::string& svg_dir) -> int
{
    auto cfg = pipeline_from_config(c);
    const auto cohort = load_cohort(c);
    const auto subset = cfg.stage == Stage::outcome ? cohort.high_risk_only() : cohort;
    std::vector<Modality> blocks;
    if (lower(modalities) == "all") blocks = {Modality::image, Modality::clinical, Modality::fused};
    else
        for (const auto& m : csv::split(modalities)) blocks.push_back(parse_modality(std::string(csv::trim(m))));
    const auto plan = plan_folds(subset, cfg.folds, cfg.stage, cfg.seed);
    std::vector<CrossValResult> results;
    for (auto m : blocks) {
        cfg.modality = m;
        auto cv = crossval_run(subset, cfg, plan);
        cv.verify();
        results.push_back(std::move(cv));
    }
    Output out(c.get("output"));
    write_crossval_csv(out.stream(), results);
    if (!svg_dir.empty()) {
        fs::create_directories(svg_dir);
        for (const auto& cv : results) {
            const auto tag = to_string(cv.modality);
            write_text(fs::path(svg_dir) / ("roc_" + tag + ".svg"), roc_svg(cv));
            write_text(fs::path(svg_dir) / ("calibration_" + tag + ".svg"), calibration_svg(cv));
            write_text(fs::path(svg_dir) / ("decision_" + tag + ".svg"), decision_svg(cv));
            std::ofstream roc(fs::path(svg_dir) / ("roc_" + tag + ".csv"), std::ios::binary);
            write_roc_csv(roc, cv);
            std::ofstream cal(fs::path(svg_dir) / ("calibration_" + tag + ".csv"), std::ios::binary);
            write_calibration_csv(cal, cv);
            std::ofstream dec(fs::path(svg_dir) / ("decision_" + tag + ".csv"), std::ios::binary);
            write_decision_csv(dec, cv);
        }
    }
    return 0;
}

auto cmd_nomogram(const Config& c, const std::string& format, const std::vector<double>& scores) -> int
{
    const auto bundle_path = c.get("bundle");
    NomogramModel m = published_death_nomogram();
    if (bundle_path && !bundle_path->empty()) {
        const auto b = load_bundle(*bundle_path);
        if (!b.nomogram) throw Error("bundle '" + *bundle_path + "' has no nomogram");
        m = *b.nomogram;
    }
    Output out(c.get("output"));
    if (!scores.empty()) {
        const auto pts = points_breakdown(m, scores);
        Json j{{"linear_predictor", linear_prediction(m, scores)},
               {"death_probability", death_probability(m, scores)},
               {"classification", to_string(classify(m, scores))},
               {"points", pts}};
        out.stream() << j.dump(2) << "\n";
        return 0;
    }
    if (format == "json") out.stream() << nomogram_to_json(m).dump(2) << "\n";
    else if (format == "axes") out.stream() << chart_to_json(m).dump(2) << "\n";
    else if (format == "svg") out.stream() << nomogram_svg(m);
    else throw InvalidArgument("--format must be json, axes or svg");
    return 0;
}

auto cmd_predict(const Config& c, const std::string& input) -> int
{
    const auto bundle = load_bundle(require_key(c, "bundle"));
    const Json req = Json::parse(input == "-" ? std::string(std::istreambuf_iterator<char>(std::cin), {}) : read_file(input));
    const Service svc(bundle, ServiceOptions{c.get_bool("strict").value_or(false)});
    Output out(c.get("output"));
    out.stream() << svc.evaluate(req).dump() << "\n";
    return 0;
}

auto cmd_serve(const Config& c) -> int
{
    const auto bundle = load_bundle(require_key(c, "bundle"));
    Service svc(bundle, ServiceOptions{c.get_bool("strict").value_or(false)}, c.get_or("history", ""));
    httplib::Server srv;
    install_routes(srv, svc, c.get_or("static_dir", ""));
    const auto host = c.get_or("host", "127.0.0.1");
    const int port = resolve_port(c);
    std::cerr << "serving bundle " << svc.fingerprint() << " on http://" << host << ":" << port << "\n";
    if (!srv.listen(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"riskstack: two-stage stacking risk model and death nomogram"};
    app.require_subcommand(1);
    app.set_version_flag("--version", library_version);

    Common common;
    std::string out_dir = ".";
    std::string reference = "gb";
    std::string ranking_path;
    bool permutation = false;
    std::string modalities = "all";
    std::string svg_dir;
    std::string format = "json";
    std::vector<double> scores;
    std::string input = "-";

    auto* synth = app.add_subcommand("synth", "write a synthetic cohort (clinical.csv, image_features.csv, truth.json)");
    add_common(synth, common);
    add_flag(synth, common, "--seed", "seed", "generator seed");
    add_flag(synth, common, "--n-low", "synth_n_low", "low-risk patients");
    add_flag(synth, common, "--n-high", "synth_n_high", "high-risk patients");
    add_flag(synth, common, "--feature-length", "feature_length", "image feature vector length (0 for none)");
    add_flag(synth, common, "--missing-rate", "synth_missing_rate", "MCAR rate per biomarker cell");
    synth->add_option("-o,--out-dir", out_dir, "output directory");

    auto data_flags = [&](CLI::App* sub) {
        add_common(sub, common);
        add_flag(sub, common, "--clinical", "clinical_csv", "clinical CSV");
        add_flag(sub, common, "--images", "image_csv", "image feature CSV");
        add_flag(sub, common, "--seed", "seed", "seed");
        add_flag(sub, common, "--stage", "stage", "risk or outcome");
    };

    auto* profile = app.add_subcommand("profile", "cohort statistics per class (CSV)");
    data_flags(profile);
    add_flag(profile, common, "-o,--output", "output", "output file (default stdout)");

    auto* train_risk = app.add_subcommand("train-risk", "fit preprocessing and the stage-1 stack, write a bundle");
    data_flags(train_risk);
    add_flag(train_risk, common, "--modality", "modality", "image, clinical or fused");
    add_flag(train_risk, common, "-b,--bundle", "bundle", "bundle path");
    add_flag(train_risk, common, "-o,--output", "output", "bundle path (overrides --bundle)");

    auto* train_outcome = app.add_subcommand("train-outcome", "add the stage-2 stack and nomogram to a bundle");
    data_flags(train_outcome);
    add_flag(train_outcome, common, "-b,--bundle", "bundle", "input bundle");
    add_flag(train_outcome, common, "-o,--output", "output", "output bundle (default: overwrite input)");

    auto* sweep = app.add_subcommand("sweep", "rank clinical variables and cross-validate the top k (CSV)");
    data_flags(sweep);
    add_flag(sweep, common, "--folds", "folds", "cross-validation folds");
    add_flag(sweep, common, "--k-min", "k_min", "smallest k");
    add_flag(sweep, common, "--k-max", "k_max", "largest k");
    add_flag(sweep, common, "-o,--output", "output", "output file (default stdout)");
    sweep->add_option("--reference", reference, "reference learner code")->capture_default_str();
    sweep->add_option("--ranking", ranking_path, "also write the importance ranking CSV");
    sweep->add_flag("--permutation", permutation, "permutation importance instead of Gini");

    auto* evaluate = app.add_subcommand("evaluate", "cross-validated report per modality (CSV) and curves (SVG)");
    data_flags(evaluate);
    add_flag(evaluate, common, "--folds", "folds", "cross-validation folds");
    add_flag(evaluate, common, "-o,--output", "output", "output file (default stdout)");
    evaluate->add_option("--modalities", modalities, "all, or a comma list of image/clinical/fused")->capture_default_str();
    evaluate->add_option("--svg-dir", svg_dir, "directory for ROC, calibration and decision curves");

    auto* nomogram = app.add_subcommand("nomogram", "print a nomogram (published one unless --bundle)");
    add_common(nomogram, common);
    add_flag(nomogram, common, "-b,--bundle", "bundle", "bundle holding a fitted nomogram");
    add_flag(nomogram, common, "-o,--output", "output", "output file (default stdout)");
    nomogram->add_option("--format", format, "json, axes or svg")->capture_default_str();
    nomogram->add_option("--scores", scores, "score the given base-learner probabilities instead")->delimiter(',');

    auto* predict_cmd = app.add_subcommand("predict", "score one JSON request against a bundle");
    add_common(predict_cmd, common);
    add_flag(predict_cmd, common, "-b,--bundle", "bundle", "bundle path");
    add_flag(predict_cmd, common, "--strict", "strict", "reject requests with missing biomarkers (true/false)");
    add_flag(predict_cmd, common, "-o,--output", "output", "output file (default stdout)");
    predict_cmd->add_option("-i,--input", input, "request JSON file, - for stdin")->capture_default_str();

    auto* serve = app.add_subcommand("serve", "serve the JSON API for a bundle");
    add_common(serve, common);
    add_flag(serve, common, "-b,--bundle", "bundle", "bundle path");
    add_flag(serve, common, "--host", "host", "bind address");
    add_flag(serve, common, "--port", "port", "port (the PORT environment variable wins)");
    add_flag(serve, common, "--strict", "strict", "reject requests with missing biomarkers (true/false)");
    add_flag(serve, common, "--history", "history", "history log path (JSON lines)");
    add_flag(serve, common, "--static-dir", "static_dir", "directory served at /");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto c = common.load();
        if (*synth) return cmd_synth(c, out_dir);
        if (*profile) return cmd_profile(c);
        if (*train_risk) return cmd_train_risk(c);
        if (*train_outcome) return cmd_train_outcome(c);
        if (*sweep) return cmd_sweep(c, reference, ranking_path, permutation);
        if (*evaluate) return cmd_evaluate(c, modalities, svg_dir);
        if (*nomogram) return cmd_nomogram(c, format, scores);
        if (*predict_cmd) return cmd_predict(c, input);
        if (*serve) return cmd_serve(c);
    } catch (const std::exception& e) {
        std::cerr << "riskstack: error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
