#ifndef RISKSTACK_SERVICE_HPP
#define RISKSTACK_SERVICE_HPP

#include "riskstack/bundle.hpp"
#include "riskstack/core.hpp"
#include "riskstack/nomogram.hpp"
#include "riskstack/preprocess.hpp"

#include "httplib.h"

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace riskstack {

/// Bad client input; `fields` names every offending request field.
class RequestError : public InvalidArgument {
public:
    RequestError(const std::string& what, std::vector<std::string> fields) : InvalidArgument(what), fields_(std::move(fields)) {}
    [[nodiscard]] auto fields() const -> const std::vector<std::string>& { return fields_; }

private:
    std::vector<std::string> fields_;
};

// The bundle cannot serve the request (a stage is missing).
class ConfigurationError : public Error {
public:
    using Error::Error;
};

struct PredictRequest {
    std::optional<Gender> gender;
    std::optional<double> age;
    std::map<std::string, std::optional<double>> biomarkers;
    std::optional<std::vector<double>> image_features;
    std::optional<GrayImage> image;
};

struct PointsEntry {
    std::string name;
    double score = 0.0;
    double points = 0.0;
};

struct PredictResponse {
    RiskLabel risk = RiskLabel::low;
    double risk_probability = 0.0;
    // present iff risk is high
    std::optional<double> death_probability;
    std::optional<Outcome> death_classification;
    std::optional<double> outcome_ensemble_probability;
    std::vector<PointsEntry> points;
    std::optional<double> total_points;
    std::optional<double> linear_predictor;
    std::vector<std::string> imputed;
    std::optional<double> image_mean_intensity; // after gamma correction
};

struct ServiceOptions {
    bool strict = false;
};

inline auto base64_decode(const std::string& in) -> std::string
{
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+' || c == '-') return 62;
        if (c == '/' || c == '_') return 63;
        return -1;
    };
    std::string out;
    unsigned buf = 0;
    int bits = 0;
    for (char c : in) {
        if (c == '=' || c == '\n' || c == '\r' || c == ' ') continue;
        const int v = val(c);
        if (v < 0) throw InvalidArgument("invalid base64 character");
        buf = (buf << 6) | static_cast<unsigned>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((buf >> bits) & 0xFF));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// request / response JSON

inline auto parse_predict_request(const Json& j) -> PredictRequest
{
    if (!j.is_object()) throw RequestError("request body must be a JSON object", {});
    PredictRequest r;
    std::vector<std::string> bad;
    std::string why;
    auto fail = [&](const std::string& field, const std::string& msg) {
        bad.push_back(field);
        if (!why.empty()) why += "; ";
        why += field + ": " + msg;
    };
    auto number = [&](const Json& v, const std::string& field) -> std::optional<double> {
        if (v.is_null()) return std::nullopt;
        if (v.is_number()) return v.get<double>();
        if (v.is_string() && v.get<std::string>().empty()) return std::nullopt;
        fail(field, "expected a number or null");
        return std::nullopt;
    };
    for (const auto& [key, v] : j.items()) {
        if (key == "gender") {
            if (v.is_null()) continue;
            if (!v.is_string()) {
                fail("gender", "expected \"male\" or \"female\"");
                continue;
            }
            std::optional<Gender> g;
            try {
                g = parse_gender(v.get<std::string>());
            } catch (const InvalidArgument&) {
            }
            if (!g || *g == Gender::unknown) fail("gender", "expected \"male\" or \"female\"");
            else r.gender = g;
        } else if (key == "age") {
            r.age = number(v, "age");
            if (r.age && (*r.age < 0 || *r.age > 150)) fail("age", "must lie in [0, 150]");
        } else if (key == "biomarkers") {
            if (!v.is_object()) {
                fail("biomarkers", "expected an object of name: value");
                continue;
            }
            for (const auto& [name, bv] : v.items()) r.biomarkers[lower(name)] = number(bv, "biomarkers." + name);
        } else if (key == "image_features") {
            if (v.is_null()) continue;
            if (!v.is_array()) {
                fail("image_features", "expected an array of numbers");
                continue;
            }
            std::vector<double> f;
            for (const auto& e : v) {
                if (!e.is_number()) {
                    fail("image_features", "expected an array of numbers");
                    break;
                }
                f.push_back(e.get<double>());
            }
            r.image_features = std::move(f);
        } else if (key == "image_pgm") {
            if (v.is_null()) continue;
            try {
                std::istringstream in(base64_decode(v.get<std::string>()));
                r.image = read_pgm(in);
            } catch (const std::exception& e) {
                fail("image_pgm", std::string("expected a base64 binary PGM: ") + e.what());
            }
        } else {
            fail(key, "unknown field");
        }
    }
    if (!bad.empty()) throw RequestError(why, bad);
    return r;
}

inline auto response_to_json(const PredictResponse& r) -> Json
{
    Json j;
    j["risk_class"] = to_string(r.risk);
    j["risk_probability"] = r.risk_probability;
    j["imputed"] = r.imputed;
    if (r.image_mean_intensity) j["image_mean_intensity"] = *r.image_mean_intensity;
    if (r.death_probability) {
        j["death_probability"] = *r.death_probability;
        j["death_classification"] = to_string(*r.death_classification);
        j["outcome_ensemble_probability"] = *r.outcome_ensemble_probability;
        Json pts = Json::array();
        for (const auto& p : r.points) pts.push_back({{"name", p.name}, {"score", p.score}, {"points", p.points}});
        j["nomogram"] = {{"points", pts}, {"total_points", *r.total_points}, {"linear_predictor", *r.linear_predictor}};
    }
    return j;
}

// ---------------------------------------------------------------------------
// prediction

inline auto predict(const ModelBundle& b, const PredictRequest& req, const ServiceOptions& opt = {}) -> PredictResponse
{
    if (!b.risk) throw ConfigurationError("bundle has no risk stage");
    const auto& pre = b.preprocessing;
    PredictResponse out;

    MaskedMatrix clinical;
    std::vector<std::string> missing;
    if (pre.uses_clinical()) {
        clinical = MaskedMatrix(1, static_cast<Index>(pre.clinical_features.size()));
        for (std::size_t k = 0; k < pre.clinical_features.size(); ++k) {
            const auto& name = pre.clinical_features[k];
            std::optional<double> v;
            if (name == "age") v = req.age;
            else if (name == "gender") {
                if (req.gender && *req.gender != Gender::unknown) v = *req.gender == Gender::male ? 1.0 : 0.0;
            } else if (auto it = req.biomarkers.find(name); it != req.biomarkers.end())
                v = it->second;
            if (!v) missing.push_back(name == "age" || name == "gender" ? name : "biomarkers." + name);
            clinical.set(0, static_cast<Index>(k), v);
        }
        for (const auto& [name, v] : req.biomarkers) {
            if (std::find(pre.clinical_features.begin(), pre.clinical_features.end(), name) == pre.clinical_features.end())
                throw RequestError("biomarkers." + name + ": not a model feature", {"biomarkers." + name});
        }
    }
    if (!missing.empty() && opt.strict) {
        std::string msg = "strict mode: missing required fields:";
        for (const auto& m : missing) msg += " " + m;
        throw RequestError(msg, missing);
    }
    for (const auto& m : missing) out.imputed.push_back(m);

    if (req.image) {
        const auto corrected = gamma_correct(*req.image, b.gamma);
        double s = 0;
        for (double v : corrected) s += v;
        out.image_mean_intensity = corrected.empty() ? 0.0 : s / static_cast<double>(corrected.size());
    }
    Matrix image;
    if (req.image_features && b.image_feature_length > 0 && req.image_features->size() != b.image_feature_length)
        throw RequestError("image_features: expected " + std::to_string(b.image_feature_length) + " values, got " +
                               std::to_string(req.image_features->size()),
                           {"image_features"});
    if (pre.uses_image()) {
        if (!req.image_features)
            throw RequestError(req.image ? "image_features: a raw image is gamma-corrected only; the feature vector is required"
                                         : "image_features: required by this model",
                               {"image_features"});
        image = Eigen::Map<const Eigen::RowVectorXd>(req.image_features->data(), static_cast<Index>(req.image_features->size()));
    }

    const Matrix x = pre.transform(clinical, image);
    out.risk_probability = predict_stacking(*b.risk, x)(0);
    out.risk = out.risk_probability >= 0.5 ? RiskLabel::high : RiskLabel::low;
    if (out.risk == RiskLabel::low) return out;

    if (!b.outcome || !b.nomogram) throw ConfigurationError("bundle has no outcome stage or nomogram");
    const Matrix s = b.outcome->base_scores(x);
    out.outcome_ensemble_probability = b.outcome->combine(s)(0);
    std::vector<double> scores(s.data(), s.data() + s.size());
    const auto& nomo = *b.nomogram;
    out.death_probability = death_probability(nomo, scores);
    out.death_classification = classify(nomo, scores);
    out.linear_predictor = linear_prediction(nomo, scores);
    const auto pts = points_breakdown(nomo, scores);
    double total = 0;
    for (std::size_t k = 0; k < pts.size(); ++k) {
        out.points.push_back({nomo.names[k], scores[k], pts[k]});
        total += pts[k];
    }
    out.total_points = total;
    return out;
}

// ---------------------------------------------------------------------------
// history

inline auto utc_timestamp() -> std::string
{
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Append-only JSON-lines log; each line is {"checksum": fnv1a64 of the
/// record's compact JSON, "record": ...}. An empty path keeps it in memory.
class HistoryStore {
public:
    explicit HistoryStore(std::string path = {}) : path_(std::move(path))
    {
        if (path_.empty()) return;
        if (std::ifstream probe(path_); probe) records_ = replay(path_);
        out_.open(path_, std::ios::app | std::ios::binary);
        if (!out_) throw Error("cannot open history file '" + path_ + "'");
    }

    static auto encode(const Json& record) -> std::string
    {
        const auto body = record.dump();
        return Json{{"checksum", hex64(fnv1a64(body))}, {"record", record}}.dump();
    }

    static auto replay(const std::string& path) -> std::vector<Json>
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open history file '" + path + "'");
        std::vector<Json> out;
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (line.empty()) continue;
            Json j;
            try {
                j = Json::parse(line);
            } catch (const Json::parse_error&) {
                throw Error("history line " + std::to_string(n) + ": malformed JSON");
            }
            if (!j.contains("checksum") || !j.contains("record")) throw Error("history line " + std::to_string(n) + ": bad record");
            if (j.at("checksum").get<std::string>() != hex64(fnv1a64(j.at("record").dump())))
                throw Error("history line " + std::to_string(n) + ": checksum mismatch");
            out.push_back(j.at("record"));
        }
        return out;
    }

    auto append(Json record) -> Json
    {
        std::lock_guard lock(mutex_);
        record["seq"] = records_.size() + 1;
        if (out_.is_open()) {
            out_ << encode(record) << '\n';
            out_.flush();
            if (!out_) throw Error("failed appending to history file '" + path_ + "'");
        }
        records_.push_back(record);
        return record;
    }

    // newest first
    [[nodiscard]] auto list(std::size_t limit) const -> std::vector<Json>
    {
        std::lock_guard lock(mutex_);
        std::vector<Json> out;
        for (auto it = records_.rbegin(); it != records_.rend() && out.size() < limit; ++it) out.push_back(*it);
        return out;
    }

    [[nodiscard]] auto size() const -> std::size_t
    {
        std::lock_guard lock(mutex_);
        return records_.size();
    }

private:
    std::string path_;
    mutable std::mutex mutex_;
    std::vector<Json> records_;
    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// service

struct HttpReply {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

class Service {
public:
    Service(ModelBundle bundle, ServiceOptions opt = {}, std::string history_path = {})
        : bundle_(std::move(bundle)), fingerprint_(bundle_fingerprint(bundle_)), options_(opt), history_(std::move(history_path))
    {
    }

    [[nodiscard]] auto bundle() const -> const ModelBundle& { return bundle_; }
    [[nodiscard]] auto fingerprint() const -> const std::string& { return fingerprint_; }
    [[nodiscard]] auto history() -> HistoryStore& { return history_; }

    static auto error_reply(int status, const std::string& msg, const std::vector<std::string>& fields = {}) -> HttpReply
    {
        Json j{{"error", msg}};
        if (!fields.empty()) j["fields"] = fields;
        return {status, j.dump()};
    }

    // predict without touching the history; shared by the CLI
    [[nodiscard]] auto evaluate(const Json& body) const -> Json
    {
        auto j = response_to_json(predict(bundle_, parse_predict_request(body), options_));
        j["bundle_fingerprint"] = fingerprint_;
        return j;
    }

    auto handle_predict(const std::string& body) -> HttpReply
    {
        Json req;
        try {
            req = Json::parse(body);
        } catch (const Json::parse_error& e) {
            return error_reply(400, std::string("malformed JSON: ") + e.what());
        }
        try {
            Json resp = evaluate(req);
            Json stored{{"timestamp", utc_timestamp()}, {"bundle_fingerprint", fingerprint_}, {"request", req}, {"response", resp}};
            stored = history_.append(std::move(stored));
            resp["seq"] = stored["seq"];
            return {200, resp.dump()};
        } catch (const RequestError& e) {
            return error_reply(400, e.what(), e.fields());
        } catch (const ConfigurationError& e) {
            return error_reply(500, e.what());
        } catch (const InvalidArgument& e) {
            return error_reply(400, e.what());
        } catch (const std::exception& e) {
            return error_reply(500, e.what());
        }
    }

    auto handle_list(const std::optional<std::string>& limit) -> HttpReply
    {
        std::size_t n = 50;
        if (limit) {
            std::size_t pos = 0;
            long v = -1;
            try {
                v = std::stol(*limit, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos != limit->size() || v < 0) return error_reply(400, "limit must be a nonnegative integer", {"limit"});
            n = static_cast<std::size_t>(v);
        }
        return {200, Json{{"predictions", history_.list(n)}, {"count", history_.size()}}.dump()};
    }

    [[nodiscard]] auto model_info() const -> Json
    {
        const auto& pre = bundle_.preprocessing;
        Json features = Json::array();
        if (pre.uses_clinical())
            for (const auto& n : pre.clinical_features) features.push_back({{"name", n}, {"unit", feature_unit(n)}});
        auto stage = [](const std::optional<StackingModel>& m) -> Json {
            if (!m) return nullptr;
            Json names = Json::array();
            for (const auto& b : m->bases) names.push_back(b.spec.name);
            return {{"base_learners", names}};
        };
        return {{"schema_version", bundle_schema_version},
                {"library_version", library_version},
                {"fingerprint", fingerprint_},
                {"modality", to_string(pre.modality)},
                {"features", features},
                {"image_feature_length", bundle_.image_feature_length},
                {"requires_image_features", pre.uses_image()},
                {"strict", options_.strict},
                {"risk_stage", stage(bundle_.risk)},
                {"outcome_stage", stage(bundle_.outcome)},
                {"has_nomogram", bundle_.nomogram.has_value()},
                {"created", bundle_.metadata.created},
                {"dataset_fingerprint", bundle_.metadata.dataset_fingerprint}};
    }

    auto handle_nomogram(const std::optional<std::string>& format) const -> HttpReply
    {
        if (!bundle_.nomogram) return error_reply(500, "bundle has no nomogram");
        if (!format || *format == "json") return {200, chart_to_json(*bundle_.nomogram).dump()};
        if (*format == "svg") return {200, nomogram_svg(*bundle_.nomogram), "image/svg+xml"};
        return error_reply(400, "format must be json or svg", {"format"});
    }

    [[nodiscard]] static auto health() -> Json { return {{"status", "ok"}, {"version", library_version}}; }

private:
    ModelBundle bundle_;
    std::string fingerprint_;
    ServiceOptions options_;
    HistoryStore history_;
};

/// Routes the JSON API onto an httplib server; the caller binds and listens.
inline void install_routes(httplib::Server& srv, Service& svc, const std::string& static_dir = {})
{
    auto send = [](httplib::Response& res, const HttpReply& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    auto param = [](const httplib::Request& req, const char* key) -> std::optional<std::string> {
        if (!req.has_param(key)) return std::nullopt;
        return req.get_param_value(key);
    };
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Headers", "Content-Type"},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    srv.Get("/healthz", [&](const httplib::Request&, httplib::Response& res) { send(res, {200, Service::health().dump()}); });
    srv.Post("/api/v1/predict", [&](const httplib::Request& req, httplib::Response& res) { send(res, svc.handle_predict(req.body)); });
    srv.Get("/api/v1/predictions",
            [&, param](const httplib::Request& req, httplib::Response& res) { send(res, svc.handle_list(param(req, "limit"))); });
    srv.Get("/api/v1/model", [&](const httplib::Request&, httplib::Response& res) { send(res, {200, svc.model_info().dump()}); });
    srv.Get("/api/v1/nomogram",
            [&, param](const httplib::Request& req, httplib::Response& res) { send(res, svc.handle_nomogram(param(req, "format"))); });
    if (!static_dir.empty() && !srv.set_mount_point("/", static_dir))
        throw Error("static directory '" + static_dir + "' does not exist");
}

} // namespace riskstack

#endif
