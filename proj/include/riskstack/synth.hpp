#ifndef RISKSTACK_SYNTH_HPP
#define RISKSTACK_SYNTH_HPP

#include "riskstack/core.hpp"
#include "riskstack/dataset.hpp"
#include "riskstack/learners.hpp"
#include "riskstack/rng.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

namespace riskstack {

// Class-conditional Gaussian for one informative clinical variable.
struct InformativeFeature {
    std::string name;
    double mean_low = 0.0;
    double mean_high = 0.0;
    double sd = 1.0;
    double outcome_weight = 0.0; // log-odds of death per SD above the high-risk mean
};

// Low/high-risk means and pooled SDs of the five top-ranked predictors in the reference cohort.
inline auto reference_informative_features() -> std::vector<InformativeFeature>
{
    return {{"ldh", 282.4, 442.4, 210.0, 0.8},
            {"o2_percentage", 95.4, 89.5, 6.4, -0.8},
            {"wbc", 6.08, 7.87, 3.8, 0.3},
            {"age", 60.3, 67.8, 14.6, 0.6},
            {"crp", 23.01, 39.5, 59.0, 0.5}};
}

struct SynthSpec {
    int n_low = 396;
    int n_high = 534;
    std::vector<InformativeFeature> informative = reference_informative_features();
    // multiplies every informative mean gap; 0 removes the clinical signal
    double clinical_scale = 1.0;
    // when set, every informative mean gap becomes this many SDs
    std::optional<double> clinical_gap_sd;
    int noise_features = 18;
    std::size_t feature_length = 1024;
    int latent_dim = 4;
    double latent_sd = 4.0;
    double image_noise = 1.0;
    // Mahalanobis distance between the class means of the image modality
    double image_separation = 1.5;
    double outcome_intercept = -1.0;
    double outcome_image_weight = 1.0;
    double missing_rate = 0.0; // MCAR, per biomarker cell
    double label_noise = 0.0;
    std::uint64_t seed = 0;

    void validate() const
    {
        require(n_low >= 0 && n_high >= 0 && n_low + n_high > 0, "synth: class sizes must be nonnegative and not both zero");
        require(missing_rate >= 0 && missing_rate <= 1, "synth: missing rate must be in [0, 1]");
        require(label_noise >= 0 && label_noise <= 1, "synth: label noise must be in [0, 1]");
        require(noise_features >= 0, "synth: noise feature count must be >= 0");
        require(latent_dim >= 1 && static_cast<std::size_t>(latent_dim) <= std::max<std::size_t>(1, feature_length),
                "synth: latent dimension must be in [1, feature_length]");
        require(latent_sd > 0 && image_noise >= 0 && image_separation >= 0 && clinical_scale >= 0,
                "synth: scales must be nonnegative (latent_sd positive)");
        for (const auto& f : informative) require(f.sd > 0, "synth: informative SD must be positive");
    }
};

struct GroundTruth {
    std::vector<std::string> ids;
    std::vector<double> risk_posterior;     // P(high | all features), including label noise
    std::vector<double> clinical_posterior; // P(high | clinical features)
    std::vector<double> image_posterior;    // P(high | image features)
    std::vector<std::optional<double>> outcome_posterior; // P(death | features), high-risk rows only
    std::vector<std::string> informative;
};

struct SynthResult {
    Cohort cohort;
    GroundTruth truth;
};

inline auto generate(const SynthSpec& spec) -> SynthResult
{
    spec.validate();
    Xoshiro256 label_rng(derive_seed(spec.seed, 1));
    Xoshiro256 clinical_rng(derive_seed(spec.seed, 2));
    Xoshiro256 image_rng(derive_seed(spec.seed, 3));
    Xoshiro256 mask_rng(derive_seed(spec.seed, 4));
    Xoshiro256 outcome_rng(derive_seed(spec.seed, 5));
    Xoshiro256 map_rng(derive_seed(spec.seed, 6));

    // biomarker schema: informative non-demographic variables, then noise variables
    std::vector<std::string> names;
    for (const auto& f : spec.informative)
        if (f.name != "age") names.push_back(f.name);
    const std::size_t informative_slots = names.size();
    int noise_named = 0;
    for (const auto& n : default_biomarker_names()) {
        if (noise_named >= spec.noise_features) break;
        if (std::find(names.begin(), names.end(), n) != names.end()) continue;
        names.push_back(n);
        ++noise_named;
    }
    for (int k = noise_named; k < spec.noise_features; ++k) names.push_back("noise_" + std::to_string(k + 1));

    auto gap = [&](const InformativeFeature& f) {
        if (spec.clinical_gap_sd) return (f.mean_high >= f.mean_low ? 1.0 : -1.0) * *spec.clinical_gap_sd * f.sd;
        return spec.clinical_scale * (f.mean_high - f.mean_low);
    };

    // orthonormal embedding of the latent image factors
    const auto d = static_cast<Index>(spec.feature_length);
    const Index l = spec.latent_dim;
    Matrix embed;
    if (d > 0) {
        Matrix g(d, l);
        for (Index i = 0; i < d; ++i)
            for (Index j = 0; j < l; ++j) g(i, j) = map_rng.normal();
        Eigen::HouseholderQR<Matrix> qr(g);
        embed = qr.householderQ() * Matrix::Identity(d, l);
    }
    // class means at -/+ half the separation, spread evenly over the latent axes
    const double image_var = spec.latent_sd * spec.latent_sd + spec.image_noise * spec.image_noise;
    const double per_axis_gap = spec.image_separation * std::sqrt(image_var) / std::sqrt(static_cast<double>(l));

    const int n = spec.n_low + spec.n_high;
    std::vector<int> true_class(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) true_class[static_cast<std::size_t>(i)] = i < spec.n_low ? 0 : 1;
    label_rng.shuffle(std::span<int>(true_class));

    Cohort cohort(names, spec.feature_length);
    GroundTruth truth;
    for (const auto& f : spec.informative) truth.informative.push_back(f.name);
    const double prior = std::log(static_cast<double>(std::max(1, spec.n_high)) / std::max(1, spec.n_low));

    for (int i = 0; i < n; ++i) {
        const int c = true_class[static_cast<std::size_t>(i)];
        PatientRecord r;
        char id[16];
        std::snprintf(id, sizeof id, "P%05d", i + 1);
        r.id = id;
        r.gender = clinical_rng.bernoulli(c == 1 ? 0.72 : 0.60) ? Gender::female : Gender::male;
        r.biomarkers.assign(names.size(), std::nullopt);

        double clinical_logit = 0.0;
        double outcome_logit = spec.outcome_intercept;
        for (const auto& f : spec.informative) {
            const double g = gap(f);
            const double mean = f.mean_low + c * g;
            const double v = clinical_rng.normal(mean, f.sd);
            clinical_logit += g / (f.sd * f.sd) * (v - (f.mean_low + g / 2.0));
            outcome_logit += f.outcome_weight * (v - (f.mean_low + g)) / f.sd;
            if (f.name == "age") r.age = std::max(0.0, v);
            else r.biomarkers[static_cast<std::size_t>(std::find(names.begin(), names.end(), f.name) - names.begin())] = v;
        }
        for (std::size_t k = informative_slots; k < names.size(); ++k) r.biomarkers[k] = clinical_rng.normal();

        double image_logit = 0.0;
        if (d > 0) {
            Vector z(l);
            for (Index j = 0; j < l; ++j) {
                const double mu = (c == 1 ? 0.5 : -0.5) * per_axis_gap;
                z(j) = image_rng.normal(mu, spec.latent_sd);
            }
            Vector x = embed * z;
            for (Index k = 0; k < d; ++k) x(k) += spec.image_noise * image_rng.normal();
            // sufficient statistic: projection onto the latent axes, noise variance latent_sd^2 + image_noise^2
            const Vector proj = embed.transpose() * x;
            image_logit = per_axis_gap / image_var * proj.sum();
            outcome_logit += spec.outcome_image_weight * (proj(0) - 0.5 * per_axis_gap) / std::sqrt(image_var);
            r.image_features = std::vector<double>(x.data(), x.data() + x.size());
        }

        for (auto& b : r.biomarkers)
            if (mask_rng.bernoulli(spec.missing_rate)) b.reset();

        int observed = c;
        if (label_rng.bernoulli(spec.label_noise)) observed = 1 - c;
        r.risk = observed == 1 ? RiskLabel::high : RiskLabel::low;

        auto noisy = [&](double p) { return (1 - spec.label_noise) * p + spec.label_noise * (1 - p); };
        truth.ids.push_back(r.id);
        truth.clinical_posterior.push_back(noisy(sigmoid(prior + clinical_logit)));
        truth.image_posterior.push_back(noisy(sigmoid(prior + image_logit)));
        truth.risk_posterior.push_back(noisy(sigmoid(prior + clinical_logit + image_logit)));

        if (observed == 1) {
            const double p = sigmoid(outcome_logit);
            r.outcome = outcome_rng.bernoulli(p) ? Outcome::death : Outcome::survived;
            truth.outcome_posterior.emplace_back(p);
        } else {
            truth.outcome_posterior.emplace_back(std::nullopt);
        }
        cohort.add(std::move(r));
    }
    return {std::move(cohort), std::move(truth)};
}

inline auto truth_to_json(const GroundTruth& t) -> Json
{
    Json rows = Json::array();
    for (std::size_t i = 0; i < t.ids.size(); ++i) {
        Json r{{"id", t.ids[i]},
               {"risk_posterior", t.risk_posterior[i]},
               {"clinical_posterior", t.clinical_posterior[i]},
               {"image_posterior", t.image_posterior[i]}};
        r["outcome_posterior"] = t.outcome_posterior[i] ? Json(*t.outcome_posterior[i]) : Json(nullptr);
        rows.push_back(r);
    }
    return {{"informative", t.informative}, {"rows", rows}};
}

} // namespace riskstack

#endif
