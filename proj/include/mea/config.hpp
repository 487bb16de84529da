#pragma once

#include "mea/baselines.hpp"
#include "mea/eval.hpp"
#include "mea/gbt.hpp"
#include "mea/nn.hpp"
#include "mea/preprocess.hpp"
#include "mea/signal.hpp"
#include "mea/synth.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mea {

struct SignalConfig {
    int filter_order = 2;
    double highpass_hz = 200.0;
    SpikeDetectConfig detect;
};

struct NnSection {
    nn::CnnConfig cnn;
    nn::EmbeddingTap tap = nn::EmbeddingTap::Output;
};

struct EvalSection {
    int k = 10;
    std::uint64_t seed = 42;
    eval::Averaging averaging = eval::Averaging::Weighted;
    int pr_thresholds = 101;
    std::vector<baselines::Method> methods{baselines::kAllMethods.begin(), baselines::kAllMethods.end()};
};

struct IoConfig {
    std::string data_dir = "data";
    std::string runs_dir = "runs";
    std::vector<int> dpis = {0, 1, 2, 3, 7};
    bool svg = true;
};

struct RunConfig {
    SynthTableConfig synth;
    SynthRecordingConfig recording;
    SignalConfig signal;
    PreprocessConfig preprocess;
    NnSection nn;
    gbt::GbtConfig gbt;
    baselines::BaselineConfig baselines;
    /// Seed for model initialization, shuffling and bagging (per fold substreams derive from it).
    std::uint64_t model_seed = 7;
    EvalSection eval;
    IoConfig io;
    bool deterministic = false;
    int threads = 1;

    /// Throws ConfigError on any invalid value.
    void validate() const;
    eval::PipelineSpec pipeline_spec() const;
    /// Thread count after the determinism flag is applied.
    int effective_threads() const { return deterministic ? 1 : threads; }
};

nlohmann::json cnn_config_to_json(const nn::CnnConfig& c);
nn::CnnConfig cnn_config_from_json(const nlohmann::json& j);
nlohmann::json gbt_config_to_json(const gbt::GbtConfig& c);
gbt::GbtConfig gbt_config_from_json(const nlohmann::json& j);

/// Every field, with canonical (sorted) key order.
nlohmann::json to_json(const RunConfig& c);
/// Starts from `base` and applies the keys present in `j`. Unknown keys and
/// wrongly typed values throw ConfigError naming the dotted path.
RunConfig apply_json(RunConfig base, const nlohmann::json& j);
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// Parses `section.key=value` (value is JSON, or a bare string) into a nested object.
nlohmann::json override_from_assignment(const std::string& assignment);

/// 16 hex digits of FNV-1a over the canonical JSON dump.
std::string config_hash(const RunConfig& c);

}  // namespace mea
