#ifndef RISKSTACK_DATASET_HPP
#define RISKSTACK_DATASET_HPP

#include "riskstack/core.hpp"
#include "riskstack/csv.hpp"
#include "riskstack/rng.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace riskstack {

enum class Gender { male, female, unknown };
enum class RiskLabel { low, high };
enum class Outcome { survived, death };

// which label a fold plan or experiment stratifies on
enum class Stage { risk, outcome };

inline auto to_string(Gender g) -> std::string
{
    switch (g) {
    case Gender::male: return "male";
    case Gender::female: return "female";
    default: return "unknown";
    }
}
inline auto to_string(RiskLabel r) -> std::string { return r == RiskLabel::high ? "high" : "low"; }
inline auto to_string(Outcome o) -> std::string { return o == Outcome::death ? "death" : "survived"; }
inline auto to_string(Stage s) -> std::string { return s == Stage::risk ? "risk" : "outcome"; }

inline auto lower(std::string_view s) -> std::string
{
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline auto parse_gender(std::string_view s) -> Gender
{
    const auto v = lower(csv::trim(s));
    if (v == "male" || v == "m") return Gender::male;
    if (v == "female" || v == "f") return Gender::female;
    if (v.empty() || v == "unknown") return Gender::unknown;
    throw InvalidArgument("unknown gender '" + std::string(s) + "'");
}

inline auto parse_risk(std::string_view s) -> std::optional<RiskLabel>
{
    const auto v = lower(csv::trim(s));
    if (v.empty()) return std::nullopt;
    if (v == "low") return RiskLabel::low;
    if (v == "high") return RiskLabel::high;
    throw InvalidArgument("unknown risk label '" + std::string(s) + "'");
}

inline auto parse_outcome(std::string_view s) -> std::optional<Outcome>
{
    const auto v = lower(csv::trim(s));
    if (v.empty()) return std::nullopt;
    if (v == "survived") return Outcome::survived;
    if (v == "death") return Outcome::death;
    throw InvalidArgument("unknown outcome label '" + std::string(s) + "'");
}

inline auto parse_stage(std::string_view s) -> Stage
{
    const auto v = lower(s);
    if (v == "risk") return Stage::risk;
    if (v == "outcome") return Stage::outcome;
    throw InvalidArgument("stage must be 'risk' or 'outcome', got '" + std::string(s) + "'");
}

// Sign/symptom, comorbidity and laboratory variables profiled for the cohort.
inline auto default_biomarker_names() -> std::vector<std::string>
{
    return {"body_temperature", "cough", "difficulty_breathing", "rbc", "wbc", "crp",
            "fibrinogen", "glucose", "ldh", "inr", "d_dimer", "o2_percentage",
            "pao2", "sao2", "paco2", "ph", "cardiovascular_disease", "heart_failure",
            "high_blood_pressure", "cancer", "chronic_kidney_disease", "respiratory_disease"};
}

// The five predictors the deployed model consumes. "age" is read from the demographics.
inline auto default_clinical_features() -> std::vector<std::string>
{
    return {"ldh", "o2_percentage", "wbc", "age", "crp"};
}

struct PatientRecord {
    std::string id;
    Gender gender = Gender::unknown;
    std::optional<double> age;
    // one slot per Cohort::biomarker_names entry; nullopt marks a missing value
    std::vector<std::optional<double>> biomarkers;
    std::optional<std::vector<double>> image_features;
    std::optional<RiskLabel> risk;
    std::optional<Outcome> outcome;

    auto operator==(const PatientRecord&) const -> bool = default;
};

class Cohort {
public:
    Cohort() = default;

    Cohort(std::vector<std::string> biomarker_names, std::size_t feature_length,
           std::vector<PatientRecord> records = {})
        : names_(std::move(biomarker_names)), feature_length_(feature_length)
    {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (!name_index_.emplace(names_[i], i).second)
                throw InvalidArgument("duplicate biomarker name '" + names_[i] + "'");
        }
        records_.reserve(records.size());
        for (auto& r : records) add(std::move(r));
    }

    void add(PatientRecord r)
    {
        if (r.biomarkers.size() != names_.size())
            throw InvalidArgument("record '" + r.id + "' has " + std::to_string(r.biomarkers.size()) +
                                  " biomarkers, cohort declares " + std::to_string(names_.size()));
        if (r.image_features && r.image_features->size() != feature_length_)
            throw InvalidArgument("record '" + r.id + "' image feature length " +
                                  std::to_string(r.image_features->size()) + " != " +
                                  std::to_string(feature_length_));
        if (r.outcome && r.risk != RiskLabel::high)
            throw InvalidArgument("record '" + r.id + "' has an outcome label but is not high-risk");
        if (r.age && *r.age < 0) throw InvalidArgument("record '" + r.id + "' has negative age");
        if (!id_index_.emplace(r.id, records_.size()).second)
            throw InvalidArgument("duplicate id '" + r.id + "'");
        records_.push_back(std::move(r));
    }

    [[nodiscard]] auto records() const -> const std::vector<PatientRecord>& { return records_; }
    [[nodiscard]] auto size() const -> std::size_t { return records_.size(); }
    [[nodiscard]] auto operator[](std::size_t i) const -> const PatientRecord& { return records_[i]; }
    [[nodiscard]] auto biomarker_names() const -> const std::vector<std::string>& { return names_; }
    [[nodiscard]] auto feature_length() const -> std::size_t { return feature_length_; }

    [[nodiscard]] auto find(const std::string& id) const -> std::optional<std::size_t>
    {
        auto it = id_index_.find(id);
        if (it == id_index_.end()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] auto biomarker_index(const std::string& name) const -> std::optional<std::size_t>
    {
        auto it = name_index_.find(name);
        if (it == name_index_.end()) return std::nullopt;
        return it->second;
    }

    void set_image_features(std::size_t i, std::vector<double> f)
    {
        if (f.size() != feature_length_)
            throw InvalidArgument("image feature length " + std::to_string(f.size()) + " != " +
                                  std::to_string(feature_length_));
        records_.at(i).image_features = std::move(f);
    }

    // Subset keeping record order.
    [[nodiscard]] auto filter(const auto& pred) const -> Cohort
    {
        Cohort out(names_, feature_length_);
        for (const auto& r : records_)
            if (pred(r)) out.add(r);
        return out;
    }

    [[nodiscard]] auto high_risk_only() const -> Cohort
    {
        return filter([](const PatientRecord& r) { return r.risk == RiskLabel::high; });
    }

    // Binary labels for the requested stage; throws if any record lacks one.
    [[nodiscard]] auto labels(Stage stage) const -> Labels
    {
        Labels y;
        y.reserve(records_.size());
        for (const auto& r : records_) {
            if (stage == Stage::risk) {
                if (!r.risk) throw InvalidArgument("record '" + r.id + "' has no risk label");
                y.push_back(*r.risk == RiskLabel::high ? 1 : 0);
            } else {
                if (!r.outcome) throw InvalidArgument("record '" + r.id + "' has no outcome label");
                y.push_back(*r.outcome == Outcome::death ? 1 : 0);
            }
        }
        return y;
    }

    auto operator==(const Cohort& o) const -> bool
    {
        return names_ == o.names_ && feature_length_ == o.feature_length_ && records_ == o.records_;
    }

private:
    std::vector<std::string> names_;
    std::size_t feature_length_ = 0;
    std::vector<PatientRecord> records_;
    std::unordered_map<std::string, std::size_t> id_index_;
    std::unordered_map<std::string, std::size_t> name_index_;
};

/// Value of a named clinical variable for one record: "age", "gender" (male = 1,
/// female = 0, unknown = missing) or any biomarker name.
inline auto clinical_value(const Cohort& cohort, const PatientRecord& r, const std::string& name)
    -> std::optional<double>
{
    if (name == "age") return r.age;
    if (name == "gender") {
        if (r.gender == Gender::unknown) return std::nullopt;
        return r.gender == Gender::male ? 1.0 : 0.0;
    }
    auto idx = cohort.biomarker_index(name);
    if (!idx) throw InvalidArgument("unknown clinical variable '" + name + "'");
    return r.biomarkers[*idx];
}

// ---------------------------------------------------------------------------
// CSV ingestion

inline auto read_cohort_csv(std::istream& in, const std::vector<std::string>& schema,
                            std::size_t feature_length = 1024) -> Cohort
{
    std::string line;
    if (!csv::next_line(in, line)) throw InvalidArgument("clinical CSV is empty (no header row)");
    csv::strip_bom(line);
    const auto header = csv::split(line);

    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const auto name = std::string(csv::trim(header[i]));
        if (!col.emplace(name, i).second) throw InvalidArgument("duplicate header column '" + name + "'");
    }
    std::vector<std::string> expected = {"id", "gender", "age"};
    expected.insert(expected.end(), schema.begin(), schema.end());
    expected.emplace_back("risk_label");
    expected.emplace_back("outcome_label");
    for (const auto& e : expected)
        if (!col.contains(e)) throw InvalidArgument("header is missing column '" + e + "'");
    if (col.size() != expected.size()) {
        for (const auto& [name, _] : col)
            if (std::find(expected.begin(), expected.end(), name) == expected.end())
                throw InvalidArgument("header has unexpected column '" + name + "'");
    }

    Cohort cohort(schema, feature_length);
    std::size_t row = 1;
    while (csv::next_line(in, line)) {
        ++row;
        const auto cells = csv::split(line);
        if (cells.size() != header.size())
            throw InvalidArgument("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                                  " cells, found " + std::to_string(cells.size()));
        auto cell = [&](const std::string& name) -> const std::string& { return cells[col.at(name)]; };
        auto fail = [&](const std::string& name, const std::exception& e) -> InvalidArgument {
            return InvalidArgument("row " + std::to_string(row) + ", column '" + name + "': " + e.what());
        };

        PatientRecord r;
        r.id = std::string(csv::trim(cell("id")));
        if (r.id.empty()) throw InvalidArgument("row " + std::to_string(row) + ", column 'id': empty id");
        std::string current;
        try {
            current = "gender";
            r.gender = parse_gender(cell(current));
            current = "age";
            r.age = csv::parse_real(cell(current));
            r.biomarkers.reserve(schema.size());
            for (const auto& name : schema) {
                current = name;
                r.biomarkers.push_back(csv::parse_real(cell(name)));
            }
            current = "risk_label";
            r.risk = parse_risk(cell(current));
            current = "outcome_label";
            r.outcome = parse_outcome(cell(current));
        } catch (const InvalidArgument& e) {
            throw fail(current, e);
        }
        try {
            cohort.add(std::move(r));
        } catch (const InvalidArgument& e) {
            throw InvalidArgument("row " + std::to_string(row) + ": " + e.what());
        }
    }
    return cohort;
}

inline auto load_clinical_csv(const std::string& path, const std::vector<std::string>& schema,
                              std::size_t feature_length = 1024) -> Cohort
{
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open clinical CSV '" + path + "'");
    return read_cohort_csv(in, schema, feature_length);
}

inline void write_cohort_csv(std::ostream& out, const Cohort& cohort)
{
    std::vector<std::string> header = {"id", "gender", "age"};
    header.insert(header.end(), cohort.biomarker_names().begin(), cohort.biomarker_names().end());
    header.emplace_back("risk_label");
    header.emplace_back("outcome_label");
    csv::write_row(out, header);
    auto opt = [](const std::optional<double>& v) { return v ? csv::format_real(*v) : std::string(); };
    for (const auto& r : cohort.records()) {
        std::vector<std::string> row = {r.id, to_string(r.gender), opt(r.age)};
        for (const auto& b : r.biomarkers) row.push_back(opt(b));
        row.push_back(r.risk ? to_string(*r.risk) : "");
        row.push_back(r.outcome ? to_string(*r.outcome) : "");
        csv::write_row(out, row);
    }
}

// Image features: header "id,f0,...,f{L-1}", one row per patient. Rows for ids
// absent from the cohort are an error.
inline void read_image_features_csv(std::istream& in, Cohort& cohort)
{
    std::string line;
    if (!csv::next_line(in, line)) throw InvalidArgument("image feature CSV is empty (no header row)");
    csv::strip_bom(line);
    const auto header = csv::split(line);
    if (header.empty() || csv::trim(header[0]) != "id")
        throw InvalidArgument("image feature CSV must start with an 'id' column");
    if (header.size() - 1 != cohort.feature_length())
        throw InvalidArgument("image feature CSV has " + std::to_string(header.size() - 1) +
                              " feature columns, cohort expects " + std::to_string(cohort.feature_length()));
    std::size_t row = 1;
    std::unordered_set<std::string> seen;
    while (csv::next_line(in, line)) {
        ++row;
        const auto cells = csv::split(line);
        if (cells.size() != header.size())
            throw InvalidArgument("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                                  " cells, found " + std::to_string(cells.size()));
        const auto id = std::string(csv::trim(cells[0]));
        auto idx = cohort.find(id);
        if (!idx) throw InvalidArgument("row " + std::to_string(row) + ": unknown id '" + id + "'");
        if (!seen.insert(id).second) throw InvalidArgument("row " + std::to_string(row) + ": duplicate id '" + id + "'");
        std::vector<double> f(cohort.feature_length());
        for (std::size_t j = 0; j < f.size(); ++j) {
            std::optional<double> v;
            try {
                v = csv::parse_real(cells[j + 1]);
            } catch (const InvalidArgument& e) {
                throw InvalidArgument("row " + std::to_string(row) + ", column '" + header[j + 1] + "': " + e.what());
            }
            if (!v) throw InvalidArgument("row " + std::to_string(row) + ", column '" + header[j + 1] + "': missing value");
            f[j] = *v;
        }
        cohort.set_image_features(*idx, std::move(f));
    }
}

inline void load_image_features_csv(const std::string& path, Cohort& cohort)
{
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open image feature CSV '" + path + "'");
    read_image_features_csv(in, cohort);
}

inline void write_image_features_csv(std::ostream& out, const Cohort& cohort)
{
    std::vector<std::string> header = {"id"};
    for (std::size_t j = 0; j < cohort.feature_length(); ++j) header.push_back("f" + std::to_string(j));
    csv::write_row(out, header);
    for (const auto& r : cohort.records()) {
        if (!r.image_features) continue;
        std::vector<std::string> row = {r.id};
        for (double v : *r.image_features) row.push_back(csv::format_real(v));
        csv::write_row(out, row);
    }
}

// ---------------------------------------------------------------------------
// Fold planning

struct FoldPlan {
    int k = 5;
    std::uint64_t seed = 0;
    Stage stratify_on = Stage::risk;
    std::vector<std::string> ids;
    std::vector<int> fold; // fold[i] in [0, k) for row i

    [[nodiscard]] auto size() const -> std::size_t { return fold.size(); }

    [[nodiscard]] auto test_rows(int f) const -> std::vector<Index>
    {
        std::vector<Index> out;
        for (std::size_t i = 0; i < fold.size(); ++i)
            if (fold[i] == f) out.push_back(static_cast<Index>(i));
        return out;
    }

    [[nodiscard]] auto train_rows(int f) const -> std::vector<Index>
    {
        std::vector<Index> out;
        for (std::size_t i = 0; i < fold.size(); ++i)
            if (fold[i] != f) out.push_back(static_cast<Index>(i));
        return out;
    }

    /// Plan over `rows` only, keeping their original fold ids renumbered to
    /// 0..k'-1. Used to run an inner cross-validation inside an outer training
    /// partition without re-drawing folds.
    [[nodiscard]] auto restricted(std::span<const Index> rows) const -> FoldPlan
    {
        std::vector<int> remap(static_cast<std::size_t>(k), -1);
        FoldPlan out;
        out.seed = seed;
        out.stratify_on = stratify_on;
        int next = 0;
        for (Index r : rows) {
            const int f = fold[static_cast<std::size_t>(r)];
            if (remap[static_cast<std::size_t>(f)] < 0) remap[static_cast<std::size_t>(f)] = next++;
        }
        // renumber in ascending original fold order so the mapping is independent of row order
        next = 0;
        for (auto& m : remap)
            if (m >= 0) m = next++;
        out.k = next;
        for (Index r : rows) {
            out.fold.push_back(remap[static_cast<std::size_t>(fold[static_cast<std::size_t>(r)])]);
            if (!ids.empty()) out.ids.push_back(ids[static_cast<std::size_t>(r)]);
        }
        return out;
    }
};

/// Stratified k-fold assignment. Each class's rows are shuffled with a seeded
/// xoshiro256** generator (class 0 first, then class 1, one generator), then
/// dealt round-robin; the second class continues dealing where the first
/// stopped so fold totals differ by at most one.
inline auto plan_folds(std::span<const int> y, int k, std::uint64_t seed) -> std::vector<int>
{
    require(k >= 2, "plan_folds: k must be at least 2");
    require_binary(y);
    std::vector<int> fold(y.size(), -1);
    Xoshiro256 rng(seed);
    std::size_t next = 0;
    for (int cls = 0; cls <= 1; ++cls) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < y.size(); ++i)
            if (y[i] == cls) members.push_back(i);
        if (members.empty()) continue;
        if (members.size() < static_cast<std::size_t>(k))
            throw InvalidArgument("plan_folds: class " + std::to_string(cls) + " has " +
                                  std::to_string(members.size()) + " members, fewer than k=" + std::to_string(k));
        rng.shuffle(std::span<std::size_t>(members));
        for (std::size_t m : members) fold[m] = static_cast<int>(next++ % static_cast<std::size_t>(k));
    }
    return fold;
}

inline auto plan_folds(const Cohort& cohort, int k, Stage label, std::uint64_t seed) -> FoldPlan
{
    const auto y = cohort.labels(label);
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.stratify_on = label;
    plan.fold = plan_folds(y, k, seed);
    for (const auto& r : cohort.records()) plan.ids.push_back(r.id);
    return plan;
}

// ---------------------------------------------------------------------------
// Class balancing

struct BalancePlan {
    int negative = 1; // replication factor for label 0
    int positive = 1; // replication factor for label 1

    [[nodiscard]] auto factor(int label) const -> int { return label == 1 ? positive : negative; }

    // low x4, high x3
    static auto risk_default() -> BalancePlan { return {4, 3}; }
    // survived x4, death x9
    static auto outcome_default() -> BalancePlan { return {4, 9}; }
};

/// Repeats each training id factor(label) times; repeats are adjacent and the
/// original order is kept. `labels[i]` is the label of `train_ids[i]`.
template <class Id>
auto balance_by_replication(std::span<const Id> train_ids, std::span<const int> labels, const BalancePlan& plan)
    -> std::vector<Id>
{
    require(plan.negative >= 1 && plan.positive >= 1, "balance_by_replication: factors must be >= 1");
    require(train_ids.size() == labels.size(), "balance_by_replication: ids and labels differ in length");
    std::vector<Id> out;
    out.reserve(train_ids.size() * static_cast<std::size_t>(std::max(plan.negative, plan.positive)));
    for (std::size_t i = 0; i < train_ids.size(); ++i) {
        const int f = plan.factor(labels[i]);
        for (int c = 0; c < f; ++c) out.push_back(train_ids[i]);
    }
    return out;
}

} // namespace riskstack

#endif
