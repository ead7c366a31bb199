#include "riskstack/bundle.hpp"
#include "riskstack/config.hpp"
#include "riskstack/service.hpp"
#include "riskstack/synth.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

using namespace riskstack;

namespace {

auto temp_path(const std::string& name) -> std::string
{
    const auto dir = std::filesystem::temp_directory_path() / "riskstack_tests";
    std::filesystem::create_directories(dir);
    const auto p = dir / name;
    std::filesystem::remove(p);
    return p.string();
}

auto tiny_bundle(std::uint64_t seed) -> ModelBundle
{
    SynthSpec s;
    s.n_low = 70;
    s.n_high = 130;
    s.feature_length = 16;
    s.missing_rate = 0.05;
    s.seed = seed;
    const auto cohort = generate(s).cohort;
    PipelineConfig c;
    c.seed = seed;
    c.modality = Modality::fused;
    c.pca_components = 4;
    c.nomogram_resamples = 20;
    c.nomogram_l2 = 1e-3;
    c.candidates = make_candidates({"lr", "lda", "knn", "rf"}, seed, {15, 15});
    return train_bundle(cohort, c);
}

auto full_request() -> Json
{
    return Json::parse(R"({"gender":"male","age":71,"biomarkers":{"ldh":480,"o2_percentage":88,"wbc":11.2,"crp":95}})");
}

// deterministic nomogram oracle, independent of the library
auto sigmoid_ld(long double z) -> long double { return 1.0L / (1.0L + std::exp(-z)); }

} // namespace

TEST(Bundle, RoundTripIsByteIdentical)
{
    const auto b = tiny_bundle(3);
    const auto text = serialize_bundle(b);
    const auto path = temp_path("roundtrip.json");
    save_bundle(b, path);
    EXPECT_EQ(read_file(path), text);
    const auto loaded = load_bundle(path);
    EXPECT_EQ(serialize_bundle(loaded), text);
    EXPECT_EQ(bundle_fingerprint(loaded), bundle_fingerprint(b));
    ASSERT_TRUE(loaded.risk && loaded.outcome && loaded.nomogram);

    // the same request scores identically before and after the round trip
    Json req = full_request();
    req["image_features"] = std::vector<double>(16, 0.25);
    const auto a = predict(b, parse_predict_request(req));
    const auto c = predict(loaded, parse_predict_request(req));
    EXPECT_NEAR(a.risk_probability, c.risk_probability, 1e-12);
    EXPECT_EQ(a.death_probability.has_value(), c.death_probability.has_value());
    if (a.death_probability) {
        EXPECT_NEAR(*a.death_probability, *c.death_probability, 1e-12);
    }
}

TEST(Bundle, TrainingIsDeterministic)
{
    EXPECT_EQ(serialize_bundle(tiny_bundle(4)), serialize_bundle(tiny_bundle(4)));
}

TEST(Bundle, VersionMismatchRefused)
{
    Json j = bundle_to_json(fixture_bundle(0.9));
    j["schema_version"] = bundle_schema_version + 1;
    try {
        (void)parse_bundle(j.dump());
        FAIL() << "expected a version error";
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("schema version"), std::string::npos);
    }
    j.erase("schema_version");
    EXPECT_THROW((void)parse_bundle(j.dump()), InvalidArgument);
    EXPECT_THROW((void)parse_bundle("{not json"), InvalidArgument);
    EXPECT_THROW((void)load_bundle(temp_path("absent.json")), Error);
}

TEST(Predict, FixtureDeathProbability)
{
    const auto b = fixture_bundle(0.9);
    const auto r = predict(b, parse_predict_request(full_request()));
    EXPECT_EQ(r.risk, RiskLabel::high);
    EXPECT_NEAR(r.risk_probability, 0.9, 1e-12);
    ASSERT_TRUE(r.death_probability.has_value());
    const long double lp = 11.23907L - 14.85299L * 0.9L - 5.028269L * 0.8L - 1.788734L * 0.7L;
    EXPECT_NEAR(*r.death_probability, static_cast<double>(sigmoid_ld(lp)), 1e-12);
    EXPECT_NEAR(*r.death_probability, 6.09e-4, 5e-6);
    EXPECT_EQ(*r.death_classification, Outcome::survived);
    ASSERT_EQ(r.points.size(), 3u);
    double total = 0;
    for (const auto& p : r.points) total += p.points;
    EXPECT_NEAR(total, *r.total_points, 1e-12);
    EXPECT_TRUE(r.imputed.empty());

    const auto j = response_to_json(r);
    EXPECT_EQ(j.at("risk_class"), "high");
    EXPECT_TRUE(j.contains("death_probability"));
    EXPECT_EQ(j.at("nomogram").at("points").size(), 3u);
}

TEST(Predict, LowRiskHasNoDeathFields)
{
    const auto r = predict(fixture_bundle(0.1), parse_predict_request(full_request()));
    EXPECT_EQ(r.risk, RiskLabel::low);
    EXPECT_FALSE(r.death_probability || r.death_classification || r.total_points || r.linear_predictor);
    EXPECT_TRUE(r.points.empty());
    const auto j = response_to_json(r);
    for (const char* k : {"death_probability", "death_classification", "nomogram", "outcome_ensemble_probability"})
        EXPECT_FALSE(j.contains(k)) << k;
}

TEST(Predict, StrictModeNamesAllMissing)
{
    const auto b = fixture_bundle(0.9);
    const auto req = parse_predict_request(Json::parse(R"({"gender":"female"})"));
    try {
        (void)predict(b, req, {true});
        FAIL() << "strict mode must reject";
    } catch (const RequestError& e) {
        const std::vector<std::string> want{"biomarkers.ldh", "biomarkers.o2_percentage", "biomarkers.wbc", "age", "biomarkers.crp"};
        EXPECT_EQ(e.fields().size(), 5u);
        for (const auto& f : want) EXPECT_NE(std::find(e.fields().begin(), e.fields().end(), f), e.fields().end()) << f;
    }
    // impute mode fills the same five and still answers
    const auto r = predict(b, req);
    EXPECT_EQ(r.imputed.size(), 5u);
    EXPECT_GE(r.risk_probability, 0.0);
    EXPECT_LE(r.risk_probability, 1.0);
}

TEST(Predict, RequestValidation)
{
    auto bad_field = [](const char* text) -> std::vector<std::string> {
        try {
            (void)parse_predict_request(Json::parse(text));
        } catch (const RequestError& e) {
            return e.fields();
        }
        return {};
    };
    EXPECT_EQ(bad_field(R"({"age":"old"})"), std::vector<std::string>{"age"});
    EXPECT_EQ(bad_field(R"({"age":200})"), std::vector<std::string>{"age"});
    EXPECT_EQ(bad_field(R"({"gender":"x"})"), std::vector<std::string>{"gender"});
    EXPECT_EQ(bad_field(R"({"favourite_colour":"red"})"), std::vector<std::string>{"favourite_colour"});
    EXPECT_EQ(bad_field(R"({"biomarkers":{"ldh":"high"}})"), std::vector<std::string>{"biomarkers.ldh"});
    EXPECT_EQ(bad_field(R"({"image_features":[1,"a"]})"), std::vector<std::string>{"image_features"});
    EXPECT_EQ(bad_field(R"({"image_pgm":"!!!"})"), std::vector<std::string>{"image_pgm"});
    EXPECT_THROW((void)parse_predict_request(Json::array()), RequestError);

    const auto b = fixture_bundle(0.9);
    EXPECT_THROW((void)predict(b, parse_predict_request(Json::parse(R"({"biomarkers":{"ferritin":3}})"))), RequestError);
    // a bundle without stage 2 cannot answer a high-risk request
    auto partial = fixture_bundle(0.9);
    partial.outcome.reset();
    EXPECT_THROW((void)predict(partial, parse_predict_request(full_request())), ConfigurationError);
    ModelBundle empty;
    EXPECT_THROW((void)predict(empty, parse_predict_request(full_request())), ConfigurationError);
}

TEST(Predict, ImageFeaturesChecked)
{
    const auto b = tiny_bundle(5);
    Json req = full_request();
    EXPECT_THROW((void)predict(b, parse_predict_request(req)), RequestError);
    req["image_features"] = std::vector<double>(15, 0.0);
    EXPECT_THROW((void)predict(b, parse_predict_request(req)), RequestError);
    req["image_features"] = std::vector<double>(16, 0.0);
    const auto r = predict(b, parse_predict_request(req));
    EXPECT_GE(r.risk_probability, 0.0);
    EXPECT_LE(r.risk_probability, 1.0);
    EXPECT_EQ(r.death_probability.has_value(), r.risk == RiskLabel::high);
}

TEST(Predict, RawImageIsGammaCorrected)
{
    // 2x1 binary PGM with pixels 0 and 255, base64 encoded
    const std::string pgm = "P5\n2 1\n255\n" + std::string{'\0', '\xff'};
    static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string b64;
    for (std::size_t i = 0; i < pgm.size(); i += 3) {
        unsigned v = static_cast<unsigned char>(pgm[i]) << 16;
        if (i + 1 < pgm.size()) v |= static_cast<unsigned char>(pgm[i + 1]) << 8;
        if (i + 2 < pgm.size()) v |= static_cast<unsigned char>(pgm[i + 2]);
        b64 += tbl[(v >> 18) & 63];
        b64 += tbl[(v >> 12) & 63];
        b64 += i + 1 < pgm.size() ? tbl[(v >> 6) & 63] : '=';
        b64 += i + 2 < pgm.size() ? tbl[v & 63] : '=';
    }
    Json req = full_request();
    req["image_pgm"] = b64;
    const auto r = predict(fixture_bundle(0.9), parse_predict_request(req));
    ASSERT_TRUE(r.image_mean_intensity.has_value());
    EXPECT_NEAR(*r.image_mean_intensity, 127.5, 1e-12);
}

TEST(History, ReplayReconstructsListing)
{
    const auto path = temp_path("history.jsonl");
    std::vector<Json> listed;
    {
        HistoryStore h(path);
        for (int i = 0; i < 5; ++i) h.append(Json{{"i", i}});
        listed = h.list(100);
        EXPECT_EQ(listed.front().at("i"), 4);
        EXPECT_EQ(h.list(2).size(), 2u);
    }
    HistoryStore again(path);
    EXPECT_EQ(again.list(100), listed);
    again.append(Json{{"i", 5}});
    EXPECT_EQ(again.list(1).front().at("seq"), 6);
}

TEST(History, CorruptionDetected)
{
    const auto path = temp_path("corrupt.jsonl");
    {
        HistoryStore h(path);
        h.append(Json{{"value", 1}});
        h.append(Json{{"value", 2}});
    }
    std::string text = read_file(path);
    const auto pos = text.find("\"value\":2");
    ASSERT_NE(pos, std::string::npos);
    text[pos + 8] = '3';
    std::ofstream(path, std::ios::binary | std::ios::trunc) << text;
    try {
        (void)HistoryStore::replay(path);
        FAIL() << "tampered record accepted";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
    std::ofstream(path, std::ios::binary | std::ios::trunc) << "{oops\n";
    EXPECT_THROW((void)HistoryStore::replay(path), Error);
}

TEST(ServiceHandlers, StatusMapping)
{
    Service svc(fixture_bundle(0.9));
    EXPECT_EQ(svc.handle_predict("{broken").status, 400);
    const auto unknown = svc.handle_predict(R"({"shoe_size":44})");
    EXPECT_EQ(unknown.status, 400);
    EXPECT_EQ(Json::parse(unknown.body).at("fields"), Json::array({"shoe_size"}));
    EXPECT_EQ(svc.handle_list(std::string("-1")).status, 400);
    EXPECT_EQ(svc.handle_list(std::string("x")).status, 400);
    EXPECT_EQ(svc.handle_nomogram(std::string("png")).status, 400);
    EXPECT_EQ(svc.handle_nomogram(std::string("svg")).content_type, "image/svg+xml");

    auto partial = fixture_bundle(0.9);
    partial.nomogram.reset();
    Service broken(partial);
    EXPECT_EQ(broken.handle_predict(full_request().dump()).status, 500);
    EXPECT_EQ(broken.history().size(), 0u);

    Service strict(fixture_bundle(0.9), {true});
    const auto rej = strict.handle_predict(R"({"gender":"male"})");
    EXPECT_EQ(rej.status, 400);
    EXPECT_EQ(Json::parse(rej.body).at("fields").size(), 5u);
    EXPECT_TRUE(strict.model_info().at("strict").get<bool>());
}

class HttpApi : public ::testing::Test {
protected:
    void SetUp() override
    {
        history_ = temp_path("http_history.jsonl");
        svc_ = std::make_unique<Service>(fixture_bundle(0.9), ServiceOptions{}, history_);
        install_routes(server_, *svc_);
        port_ = server_.bind_to_any_port("127.0.0.1");
        ASSERT_GT(port_, 0);
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    void TearDown() override
    {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }
    auto client() const -> httplib::Client { return httplib::Client("127.0.0.1", port_); }

    std::string history_;
    std::unique_ptr<Service> svc_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

TEST_F(HttpApi, HealthAndModel)
{
    auto c = client();
    auto h = c.Get("/healthz");
    ASSERT_TRUE(h);
    EXPECT_EQ(h->status, 200);
    EXPECT_EQ(Json::parse(h->body).at("version"), library_version);
    auto m = c.Get("/api/v1/model");
    ASSERT_TRUE(m);
    const auto info = Json::parse(m->body);
    EXPECT_EQ(info.at("fingerprint"), svc_->fingerprint());
    EXPECT_EQ(info.at("features").size(), 5u);
    auto n = c.Get("/api/v1/nomogram");
    ASSERT_TRUE(n);
    EXPECT_EQ(n->status, 200);
    EXPECT_TRUE(Json::parse(n->body).is_object());
    auto svg = c.Get("/api/v1/nomogram?format=svg");
    ASSERT_TRUE(svg);
    EXPECT_NE(svg->body.find("<svg"), std::string::npos);
}

TEST_F(HttpApi, PredictThenList)
{
    auto c = client();
    auto p = c.Post("/api/v1/predict", full_request().dump(), "application/json");
    ASSERT_TRUE(p);
    ASSERT_EQ(p->status, 200) << p->body;
    const auto resp = Json::parse(p->body);
    EXPECT_NEAR(resp.at("death_probability").get<double>(), 6.09e-4, 5e-6);

    Json low = full_request();
    low["age"] = 30;
    auto p2 = c.Post("/api/v1/predict", low.dump(), "application/json");
    ASSERT_TRUE(p2);
    auto l = c.Get("/api/v1/predictions?limit=1");
    ASSERT_TRUE(l);
    const auto listing = Json::parse(l->body);
    ASSERT_EQ(listing.at("predictions").size(), 1u);
    const auto& first = listing.at("predictions")[0];
    EXPECT_EQ(first.at("request").at("age"), 30);
    EXPECT_EQ(first.at("bundle_fingerprint"), svc_->fingerprint());
    EXPECT_FALSE(first.at("timestamp").get<std::string>().empty());
    EXPECT_EQ(listing.at("count"), 2);

    auto bad = c.Post("/api/v1/predict", "{oops", "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
    auto unk = c.Post("/api/v1/predict", R"({"ldh":1})", "application/json");
    ASSERT_TRUE(unk);
    EXPECT_EQ(unk->status, 400);
    EXPECT_NE(unk->body.find("ldh"), std::string::npos);
}

TEST_F(HttpApi, ConcurrentPredicts)
{
    constexpr int threads = 8;
    constexpr int per_thread = 10;
    std::atomic<int> ok{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            auto c = client();
            for (int i = 0; i < per_thread; ++i) {
                Json req = full_request();
                req["age"] = 20 + t * per_thread + i;
                auto r = c.Post("/api/v1/predict", req.dump(), "application/json");
                if (r && r->status == 200) ++ok;
            }
        });
    }
    for (auto& th : pool) th.join();
    EXPECT_EQ(ok.load(), threads * per_thread);
    EXPECT_EQ(svc_->history().size(), static_cast<std::size_t>(threads * per_thread));

    // every line of the log verifies and the ages are a permutation of the requests
    const auto records = HistoryStore::replay(history_);
    ASSERT_EQ(records.size(), static_cast<std::size_t>(threads * per_thread));
    std::vector<int> ages;
    for (std::size_t i = 0; i < records.size(); ++i) {
        EXPECT_EQ(records[i].at("seq"), i + 1);
        ages.push_back(records[i].at("request").at("age").get<int>());
    }
    std::sort(ages.begin(), ages.end());
    for (int i = 0; i < threads * per_thread; ++i) EXPECT_EQ(ages[static_cast<std::size_t>(i)], 20 + i);
}

TEST(Config, ParsesAndValidates)
{
    std::istringstream in("# comment\nseed = 9\nmodality = clinical\ncandidates = lr, rf ,knn\nforest_trees=12\n; another\nstrict = yes\n");
    const auto c = Config::parse(in);
    EXPECT_NO_THROW(c.check_known(known_config_keys()));
    const auto p = pipeline_from_config(c);
    EXPECT_EQ(p.seed, 9u);
    EXPECT_EQ(p.modality, Modality::clinical);
    ASSERT_EQ(p.candidates.size(), 3u);
    EXPECT_EQ(short_code(p.candidates[1]), "RF");
    EXPECT_TRUE(*c.get_bool("strict"));

    std::istringstream typo("sede = 3\n");
    EXPECT_THROW(Config::parse(typo).check_known(known_config_keys()), InvalidArgument);
    std::istringstream noeq("seed 3\n");
    EXPECT_THROW((void)Config::parse(noeq), InvalidArgument);
    std::istringstream badint("folds = five\n");
    EXPECT_THROW((void)pipeline_from_config(Config::parse(badint)), InvalidArgument);
    std::istringstream onefold("folds = 1\n");
    EXPECT_THROW((void)pipeline_from_config(Config::parse(onefold)), InvalidArgument);
}

TEST(Config, PortEnvironmentOverride)
{
    Config c;
    c.set("port", "9000");
    unsetenv("PORT");
    EXPECT_EQ(resolve_port(c), 9000);
    setenv("PORT", "9123", 1);
    EXPECT_EQ(resolve_port(c), 9123);
    setenv("PORT", "abc", 1);
    EXPECT_THROW((void)resolve_port(c), InvalidArgument);
    unsetenv("PORT");
    EXPECT_EQ(resolve_port(Config{}), 8080);
}
