#ifndef RISKSTACK_BUNDLE_HPP
#define RISKSTACK_BUNDLE_HPP

#include "riskstack/core.hpp"
#include "riskstack/dataset.hpp"
#include "riskstack/learners.hpp"
#include "riskstack/nomogram.hpp"
#include "riskstack/pipeline.hpp"
#include "riskstack/preprocess.hpp"
#include "riskstack/stacking.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace riskstack {

inline constexpr int bundle_schema_version = 1;
inline constexpr const char* library_version = "1.0.0";

inline auto feature_unit(const std::string& name) -> std::string
{
    if (name == "age") return "years";
    if (name == "gender") return "male=1, female=0";
    if (name == "ldh") return "U/L";
    if (name == "o2_percentage") return "%";
    if (name == "wbc") return "10^9/L";
    if (name == "crp") return "mg/L";
    if (name == "ferritin") return "ng/mL";
    if (name == "d_dimer") return "mg/L FEU";
    return "";
}

struct TrainingMetadata {
    std::uint64_t seed = 0;
    std::string dataset_fingerprint;
    std::string created; // SOURCE_DATE_EPOCH or config value; empty keeps bundles reproducible
    Json config = Json::object();
};

struct ModelBundle {
    Preprocessor preprocessing;
    GammaMap gamma;
    std::size_t image_feature_length = 0;
    std::optional<StackingModel> risk;
    std::optional<StackingModel> outcome;
    std::optional<NomogramModel> nomogram;
    TrainingMetadata metadata;
};

// ---------------------------------------------------------------------------
// JSON encoding

namespace detail {
inline auto vec_json(const Vector& v) -> Json { return std::vector<double>(v.data(), v.data() + v.size()); }

inline auto json_vec(const Json& j) -> Vector
{
    const auto v = j.get<std::vector<double>>();
    Vector out(static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Index>(i)) = v[i];
    return out;
}

inline auto mat_json(const Matrix& m) -> Json
{
    Json rows = Json::array();
    for (Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
    return rows;
}

inline auto json_mat(const Json& j, Index cols) -> Matrix
{
    Matrix m(static_cast<Index>(j.size()), cols);
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto r = j[i].get<std::vector<double>>();
        require(static_cast<Index>(r.size()) == cols, "bundle: ragged matrix");
        for (Index c = 0; c < cols; ++c) m(static_cast<Index>(i), c) = r[static_cast<std::size_t>(c)];
    }
    return m;
}
} // namespace detail

inline auto imputation_to_json(const ImputationModel& m) -> Json
{
    return {{"columns", m.columns},
            {"fallback_mean", m.fallback_mean},
            {"intercept", m.intercept},
            {"weights", m.weights},
            {"residual_sd", m.residual_sd},
            {"iterations", m.options.iterations},
            {"ridge", m.options.ridge},
            {"stochastic", m.options.stochastic},
            {"seed", m.options.seed}};
}

inline auto imputation_from_json(const Json& j) -> ImputationModel
{
    ImputationModel m;
    m.columns = j.at("columns").get<std::vector<std::string>>();
    m.fallback_mean = j.at("fallback_mean").get<std::vector<double>>();
    m.intercept = j.at("intercept").get<std::vector<double>>();
    m.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    m.residual_sd = j.at("residual_sd").get<std::vector<double>>();
    m.options.iterations = j.at("iterations").get<int>();
    m.options.ridge = j.at("ridge").get<double>();
    m.options.stochastic = j.at("stochastic").get<bool>();
    m.options.seed = j.at("seed").get<std::uint64_t>();
    return m;
}

inline auto normalizer_to_json(const Normalizer& z) -> Json
{
    return {{"mean", z.mean}, {"sd", z.sd}, {"constant", z.constant}};
}

inline auto normalizer_from_json(const Json& j) -> Normalizer
{
    return {j.at("mean").get<std::vector<double>>(), j.at("sd").get<std::vector<double>>(), j.at("constant").get<std::vector<bool>>()};
}

inline auto pca_to_json(const PCAModel& m) -> Json
{
    return {{"input_dim", m.input_dim},
            {"mean", detail::vec_json(m.mean)},
            {"components", detail::mat_json(m.components)},
            {"eigenvalues", detail::vec_json(m.eigenvalues)},
            {"whiten", m.whiten},
            {"floor", m.floor},
            {"total_variance", m.total_variance}};
}

inline auto pca_from_json(const Json& j) -> PCAModel
{
    PCAModel m;
    m.input_dim = j.at("input_dim").get<Index>();
    m.mean = detail::json_vec(j.at("mean"));
    m.components = detail::json_mat(j.at("components"), m.input_dim);
    m.eigenvalues = detail::json_vec(j.at("eigenvalues"));
    m.whiten = j.at("whiten").get<bool>();
    m.floor = j.at("floor").get<double>();
    m.total_variance = j.at("total_variance").get<double>();
    return m;
}

inline auto gamma_to_json(const GammaMap& g) -> Json
{
    if (g.is_table()) return {{"table", g.entries()}};
    return {{"constant", g.constant_value()}};
}

inline auto gamma_from_json(const Json& j) -> GammaMap
{
    if (j.contains("table")) return GammaMap::table(j.at("table").get<std::vector<double>>());
    return GammaMap::constant(j.at("constant").get<double>());
}

inline auto stacking_to_json(const StackingModel& m) -> Json
{
    Json bases = Json::array();
    for (const auto& b : m.bases) bases.push_back(learner_to_json(b));
    Json sel = Json::array();
    for (const auto& c : m.selection) sel.push_back({{"index", c.index}, {"name", c.name}, {"f1", c.f1}, {"accuracy", c.accuracy}});
    return {{"bases", bases},
            {"meta", detail::vec_json(m.meta)},
            {"plan", {{"k", m.plan.k}, {"seed", m.plan.seed}, {"stratify_on", to_string(m.plan.stratify_on)}, {"ids", m.plan.ids}, {"fold", m.plan.fold}}},
            {"selection", sel}};
}

inline auto stacking_from_json(const Json& j) -> StackingModel
{
    StackingModel m;
    for (const auto& b : j.at("bases")) m.bases.push_back(learner_from_json(b));
    m.meta = detail::json_vec(j.at("meta"));
    require(m.meta.size() == static_cast<Index>(m.bases.size()) + 1, "bundle: meta-learner width does not match base learners");
    const auto& p = j.at("plan");
    m.plan.k = p.at("k").get<int>();
    m.plan.seed = p.at("seed").get<std::uint64_t>();
    m.plan.stratify_on = parse_stage(p.at("stratify_on").get<std::string>());
    m.plan.ids = p.at("ids").get<std::vector<std::string>>();
    m.plan.fold = p.at("fold").get<std::vector<int>>();
    for (const auto& c : j.at("selection"))
        m.selection.push_back({c.at("index").get<std::size_t>(), c.at("name").get<std::string>(), c.at("f1").get<double>(),
                               c.at("accuracy").get<double>()});
    return m;
}

inline auto bundle_to_json(const ModelBundle& b) -> Json
{
    const auto& pre = b.preprocessing;
    Json schema = Json::array();
    if (pre.uses_clinical())
        for (const auto& n : pre.clinical_features) schema.push_back({{"name", n}, {"unit", feature_unit(n)}});
    Json p;
    p["modality"] = to_string(pre.modality);
    p["clinical_features"] = pre.clinical_features;
    if (pre.imputation) p["imputation"] = imputation_to_json(*pre.imputation);
    if (pre.normalizer) p["normalizer"] = normalizer_to_json(*pre.normalizer);
    if (pre.pca) p["pca"] = pca_to_json(*pre.pca);
    p["gamma"] = gamma_to_json(b.gamma);

    Json j;
    j["schema_version"] = bundle_schema_version;
    j["preprocessing"] = p;
    j["feature_schema"] = {{"clinical", schema}, {"image_feature_length", b.image_feature_length}};
    if (b.risk) j["risk_stage"] = stacking_to_json(*b.risk);
    if (b.outcome) j["outcome_stage"] = stacking_to_json(*b.outcome);
    if (b.nomogram) j["nomogram"] = nomogram_to_json(*b.nomogram);
    j["metadata"] = {{"seed", b.metadata.seed},
                     {"dataset_fingerprint", b.metadata.dataset_fingerprint},
                     {"created", b.metadata.created},
                     {"config", b.metadata.config},
                     {"library_version", library_version}};
    return j;
}

inline auto bundle_from_json(const Json& j) -> ModelBundle
{
    if (!j.is_object() || !j.contains("schema_version")) throw InvalidArgument("bundle: not a model bundle (no schema_version)");
    const int v = j.at("schema_version").get<int>();
    if (v != bundle_schema_version)
        throw InvalidArgument("bundle: schema version " + std::to_string(v) + " is not supported (this build reads version " +
                              std::to_string(bundle_schema_version) + ")");
    ModelBundle b;
    const auto& p = j.at("preprocessing");
    b.preprocessing.modality = parse_modality(p.at("modality").get<std::string>());
    b.preprocessing.clinical_features = p.at("clinical_features").get<std::vector<std::string>>();
    if (p.contains("imputation")) b.preprocessing.imputation = imputation_from_json(p.at("imputation"));
    if (p.contains("normalizer")) b.preprocessing.normalizer = normalizer_from_json(p.at("normalizer"));
    if (p.contains("pca")) b.preprocessing.pca = pca_from_json(p.at("pca"));
    if (b.preprocessing.uses_clinical())
        require(b.preprocessing.imputation && b.preprocessing.normalizer, "bundle: clinical modality without imputation/normalizer");
    if (b.preprocessing.uses_image()) require(b.preprocessing.pca.has_value(), "bundle: image modality without PCA model");
    b.gamma = gamma_from_json(p.at("gamma"));
    b.image_feature_length = j.at("feature_schema").at("image_feature_length").get<std::size_t>();
    if (j.contains("risk_stage")) b.risk = stacking_from_json(j.at("risk_stage"));
    if (j.contains("outcome_stage")) b.outcome = stacking_from_json(j.at("outcome_stage"));
    if (j.contains("nomogram")) b.nomogram = nomogram_from_json(j.at("nomogram"));
    const auto& m = j.at("metadata");
    b.metadata.seed = m.at("seed").get<std::uint64_t>();
    b.metadata.dataset_fingerprint = m.at("dataset_fingerprint").get<std::string>();
    b.metadata.created = m.at("created").get<std::string>();
    b.metadata.config = m.at("config");
    return b;
}

/// Canonical bytes: sorted keys, compact, shortest round-trip numbers, trailing newline.
inline auto serialize_bundle(const ModelBundle& b) -> std::string { return bundle_to_json(b).dump() + "\n"; }

inline auto parse_bundle(const std::string& text) -> ModelBundle
{
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw InvalidArgument(std::string("bundle: malformed JSON: ") + e.what());
    }
    return bundle_from_json(j);
}

inline auto bundle_fingerprint(const ModelBundle& b) -> std::string { return hex64(fnv1a64(serialize_bundle(b))); }

inline void save_bundle(const ModelBundle& b, const std::string& path)
{
    if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty()) std::filesystem::create_directories(dir);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write bundle '" + path + "'");
    out << serialize_bundle(b);
    if (!out) throw Error("failed writing bundle '" + path + "'");
}

inline auto read_file(const std::string& path) -> std::string
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline auto load_bundle(const std::string& path) -> ModelBundle { return parse_bundle(read_file(path)); }

// ---------------------------------------------------------------------------
// training

inline auto cohort_fingerprint(const Cohort& c) -> std::string
{
    std::ostringstream ss;
    write_cohort_csv(ss, c);
    if (c.feature_length() > 0) {
        bool any = false;
        for (const auto& r : c.records()) any = any || r.image_features.has_value();
        if (any) write_image_features_csv(ss, c);
    }
    return hex64(fnv1a64(ss.str()));
}

inline auto default_created() -> std::string
{
    if (const char* e = std::getenv("SOURCE_DATE_EPOCH")) return e;
    return "";
}

/// Fits the shared preprocessing on the whole cohort and the stage-1 stack.
inline auto train_risk_stage(const Cohort& cohort, const PipelineConfig& cfg) -> ModelBundle
{
    PipelineConfig c = cfg;
    c.stage = Stage::risk;
    ModelBundle b;
    const auto rows = all_rows(cohort.size());
    b.preprocessing = fit_preprocessor(cohort, rows, c);
    b.gamma = c.gamma;
    b.image_feature_length = b.preprocessing.uses_image() ? cohort.feature_length() : 0;
    const Matrix x = b.preprocessing.transform(cohort, rows);
    const Labels y = cohort.labels(Stage::risk);
    const auto plan = plan_folds(cohort, c.folds, Stage::risk, c.seed);
    const auto sel = select_top3(c.candidates, x, y, plan, c.balance_plan());
    auto model = fit_stacking(sel.chosen, x, y, plan, {c.balance_plan(), c.meta_l2});
    model.selection = sel.ranking;
    b.risk = std::move(model);
    b.metadata.seed = c.seed;
    b.metadata.dataset_fingerprint = cohort_fingerprint(cohort);
    b.metadata.created = default_created();
    return b;
}

/// Adds the stage-2 stack and the death nomogram, trained on the high-risk
/// rows with the bundle's preprocessing. The nomogram is fitted on the
/// stage-2 out-of-fold base scores.
inline void train_outcome_stage(ModelBundle& b, const Cohort& cohort, const PipelineConfig& cfg)
{
    PipelineConfig c = cfg;
    c.stage = Stage::outcome;
    if (!c.balance) c.balance = BalancePlan::outcome_default();
    const Cohort high = cohort.high_risk_only();
    require(high.size() >= static_cast<std::size_t>(2 * c.folds), "train_outcome_stage: too few high-risk rows");
    const auto rows = all_rows(high.size());
    const Matrix x = b.preprocessing.transform(high, rows);
    const Labels y = high.labels(Stage::outcome);
    const auto plan = plan_folds(high, c.folds, Stage::outcome, derive_seed(c.seed, 2));
    const auto sel = select_top3(c.candidates, x, y, plan, c.balance_plan());
    auto model = fit_stacking(sel.chosen, x, y, plan, {c.balance_plan(), c.meta_l2});
    model.selection = sel.ranking;
    std::vector<std::string> names;
    for (const auto& s : sel.chosen) names.push_back(s.name);
    NomogramFitOptions nopt;
    nopt.resamples = c.nomogram_resamples;
    nopt.seed = derive_seed(c.seed, 3);
    nopt.l2 = c.nomogram_l2;
    b.nomogram = fit_nomogram(model.oof, y, names, nopt);
    b.outcome = std::move(model);
}

inline auto train_bundle(const Cohort& cohort, const PipelineConfig& cfg) -> ModelBundle
{
    auto b = train_risk_stage(cohort, cfg);
    train_outcome_stage(b, cohort, cfg);
    return b;
}

// ---------------------------------------------------------------------------
// fixtures

// A forest holding one leaf: predicts `p` for every row.
inline auto constant_learner(const std::string& name, double p, Index width) -> TrainedLearner
{
    DecisionTree t;
    t.nodes.push_back(TreeNode{-1, 0.0, 0, 0, p});
    auto spec = random_forest_spec(0, ForestParams{1, -1, 1, 0, false, 1});
    spec.name = name;
    return {spec, std::make_shared<ForestModel>(std::vector<DecisionTree>{t}, width), width};
}

/// Clinical-only bundle whose stage-1 probability is `risk_probability` for
/// every patient and whose stage-2 base scores are fixed, scored by the
/// published death nomogram.
inline auto fixture_bundle(double risk_probability, std::vector<double> death_scores = {0.9, 0.8, 0.7}) -> ModelBundle
{
    require(risk_probability > 0 && risk_probability < 1, "fixture_bundle: probability must lie in (0, 1)");
    ModelBundle b;
    auto& pre = b.preprocessing;
    pre.modality = Modality::clinical;
    pre.clinical_features = default_clinical_features();
    const auto d = static_cast<Index>(pre.clinical_features.size());
    // reference-cohort style means, unit regressions between columns
    ImputationModel imp;
    imp.columns = pre.clinical_features;
    imp.fallback_mean = {362.0, 92.0, 7.1, 64.6, 32.5};
    imp.intercept = imp.fallback_mean;
    imp.weights.assign(static_cast<std::size_t>(d), std::vector<double>(static_cast<std::size_t>(d), 0.0));
    imp.residual_sd.assign(static_cast<std::size_t>(d), 1.0);
    pre.imputation = imp;
    pre.normalizer = Normalizer{imp.fallback_mean, {210.0, 6.4, 3.8, 14.6, 59.0}, std::vector<bool>(static_cast<std::size_t>(d), false)};
    b.gamma = GammaMap::constant(1.0);

    StackingModel risk;
    for (const char* n : {"Stub A", "Stub B", "Stub C"}) risk.bases.push_back(constant_learner(n, 0.5, d));
    risk.meta = Vector::Zero(4);
    risk.meta(0) = std::log(risk_probability / (1 - risk_probability));
    risk.plan.k = 5;
    b.risk = risk;

    const auto nomo = published_death_nomogram();
    require(death_scores.size() == nomo.size(), "fixture_bundle: one death score per nomogram predictor");
    StackingModel outcome;
    for (std::size_t j = 0; j < nomo.size(); ++j) outcome.bases.push_back(constant_learner(nomo.names[j], death_scores[j], d));
    outcome.meta = Vector::Zero(4);
    outcome.plan.k = 5;
    b.outcome = outcome;
    b.nomogram = nomo;
    b.metadata.dataset_fingerprint = "fixture";
    return b;
}

} // namespace riskstack

#endif
