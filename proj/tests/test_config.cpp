#include "mea/config.hpp"
#include "mea/matmul.hpp"

#include <doctest.h>

#include <cctype>
#include <filesystem>
#include <fstream>

using namespace mea;
using json = nlohmann::json;

namespace {

std::string config_error(const json& j) {
    try {
        config_from_json(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST_CASE("defaults survive a JSON round trip") {
    const RunConfig d;
    const json j = to_json(d);
    CHECK(to_json(config_from_json(j)) == j);
    CHECK(config_hash(config_from_json(j)) == config_hash(d));
}

TEST_CASE("unknown keys are rejected with their dotted path") {
    CHECK(contains(config_error({{"nn", {{"cnn", {{"epoch", 3}}}}}}), "nn.cnn.epoch"));
    CHECK(contains(config_error({{"colour", 1}}), "colour"));
    CHECK(contains(config_error({{"synth", {{"rows", 5}}}}), "synth.rows"));
}

TEST_CASE("wrong types and bad enum names name the key") {
    CHECK(contains(config_error({{"eval", {{"k", "ten"}}}}), "eval.k"));
    CHECK(contains(config_error({{"synth", {{"noise", "cauchy"}}}}), "synth.noise"));
    CHECK(contains(config_error({{"nn", {{"cnn", {{"matmul", "fp16"}}}}}}), "nn.cnn.matmul"));
    CHECK(contains(config_error({{"nn", {{"cnn", {{"optimizer", "lbfgs"}}}}}}), "nn.cnn.optimizer"));
    CHECK(contains(config_error({{"synth", "flat"}}), "synth"));
    CHECK(!config_error({{"model_seed", -1}}).empty());
}

TEST_CASE("validation failures surface as ConfigError") {
    CHECK(!config_error({{"eval", {{"k", 1}}}}).empty());
    CHECK(!config_error({{"io", {{"dpis", {0, 5}}}}}).empty());
    CHECK(!config_error({{"io", {{"dpis", json::array()}}}}).empty());
    CHECK(!config_error({{"signal", {{"highpass_hz", 6000.0}}}}).empty());
    CHECK(!config_error({{"gbt", {{"learning_rate", 1.5}}}}).empty());
    CHECK(!config_error({{"threads", 0}}).empty());
}

TEST_CASE("apply_json only touches the keys it is given") {
    RunConfig base;
    base.eval.k = 5;
    base.synth.rows_per_class = 77;
    const RunConfig c = apply_json(base, {{"synth", {{"noise", "laplace"}, {"class_mean_shift", 2.5}}}});
    CHECK(c.eval.k == 5);
    CHECK(c.synth.rows_per_class == 77);
    CHECK(c.synth.noise == NoiseShape::Laplace);
    CHECK(c.synth.class_mean_shift == 2.5);
    CHECK(to_json(c)["synth"]["noise"] == "laplace");
}

TEST_CASE("method list and dpis parse") {
    const RunConfig c = config_from_json({{"eval", {{"methods", {"fused", "naive_bayes"}}}}, {"io", {{"dpis", {7, 0}}}}});
    REQUIRE(c.eval.methods.size() == 2);
    CHECK(c.eval.methods[0] == baselines::Method::Fused);
    CHECK(c.eval.methods[1] == baselines::Method::NaiveBayes);
    CHECK(c.io.dpis == std::vector<int>{7, 0});
    CHECK(!config_error({{"eval", {{"methods", {"svm"}}}}}).empty());
}

TEST_CASE("matmul precision key") {
    CHECK(RunConfig{}.nn.cnn.matmul == nn::MatmulPrecision::FP32);
    const std::string err = config_error({{"nn", {{"cnn", {{"matmul", "bf16"}}}}}});
    if (nn::bf16_matmul_available()) {
        CHECK(err.empty());
        CHECK(config_from_json({{"nn", {{"cnn", {{"matmul", "bf16"}}}}}}).nn.cnn.matmul == nn::MatmulPrecision::BF16);
    } else {
        CHECK(contains(err, "bf16"));
    }
}

TEST_CASE("override assignments build nested objects") {
    CHECK(override_from_assignment("nn.cnn.epochs=5") == json{{"nn", {{"cnn", {{"epochs", 5}}}}}});
    CHECK(override_from_assignment("nn.tap=penultimate") == json{{"nn", {{"tap", "penultimate"}}}});
    CHECK(override_from_assignment("io.dpis=[1,2]") == json{{"io", {{"dpis", {1, 2}}}}});
    CHECK(override_from_assignment("deterministic=true") == json{{"deterministic", true}});
    CHECK_THROWS_AS(override_from_assignment("=5"), ConfigError);
    CHECK_THROWS_AS(override_from_assignment("nn..epochs=5"), ConfigError);
    CHECK_THROWS_AS(override_from_assignment("novalue"), ConfigError);
}

TEST_CASE("config hash is 16 hex digits and tracks every field") {
    const RunConfig a;
    const std::string h = config_hash(a);
    CHECK(h.size() == 16);
    for (char ch : h) CHECK(std::isxdigit(static_cast<unsigned char>(ch)));
    RunConfig b = a;
    b.gbt.lambda = 2.0;
    CHECK(config_hash(b) != h);
    b = a;
    b.io.svg = false;
    CHECK(config_hash(b) != h);
    CHECK(config_hash(RunConfig{}) == h);
}

TEST_CASE("determinism flag forces serial, untimed runs") {
    RunConfig c;
    c.threads = 4;
    CHECK(c.pipeline_spec().threads == 4);
    CHECK(c.pipeline_spec().record_timing);
    c.deterministic = true;
    CHECK(c.effective_threads() == 1);
    CHECK(c.pipeline_spec().threads == 1);
    CHECK_FALSE(c.pipeline_spec().record_timing);
}

TEST_CASE("load_config reports missing files and bad JSON") {
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
    const auto path = std::filesystem::temp_directory_path() / "mea_test_bad_config.json";
    {
        std::ofstream(path) << "{ not json";
    }
    CHECK_THROWS_AS(load_config(path), ConfigError);
    {
        std::ofstream(path) << R"({"eval": {"k": 4}})";
    }
    CHECK(load_config(path).eval.k == 4);
    std::filesystem::remove(path);
}
