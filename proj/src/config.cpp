#include "mea/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace mea {

using json = nlohmann::json;

namespace {

std::string_view polarity_name(SpikePolarity p) {
    switch (p) {
        case SpikePolarity::Absolute: return "absolute";
        case SpikePolarity::Negative: return "negative";
        case SpikePolarity::Positive: return "positive";
    }
    return "absolute";
}

SpikePolarity parse_polarity(std::string_view s) {
    for (auto p : {SpikePolarity::Absolute, SpikePolarity::Negative, SpikePolarity::Positive}) {
        if (polarity_name(p) == s) return p;
    }
    throw ConfigError("unknown polarity '" + std::string(s) + "'");
}

std::string_view mode_name(ThresholdMode m) { return m == ThresholdMode::KSigma ? "k_sigma" : "fixed_uv"; }

ThresholdMode parse_mode(std::string_view s) {
    if (s == "k_sigma") return ThresholdMode::KSigma;
    if (s == "fixed_uv") return ThresholdMode::FixedMicrovolts;
    throw ConfigError("unknown threshold mode '" + std::string(s) + "'");
}

std::string_view base_score_name(gbt::BaseScore b) { return b == gbt::BaseScore::Uniform ? "uniform" : "prior"; }

gbt::BaseScore parse_base_score(std::string_view s) {
    if (s == "uniform") return gbt::BaseScore::Uniform;
    if (s == "prior") return gbt::BaseScore::Prior;
    throw ConfigError("unknown base_score '" + std::string(s) + "'");
}

std::string_view activation_name(nn::Activation a) { return a == nn::Activation::ReLU ? "relu" : "linear"; }

nn::Activation parse_activation(std::string_view s) {
    if (s == "relu") return nn::Activation::ReLU;
    if (s == "linear") return nn::Activation::Linear;
    throw ConfigError("unknown activation '" + std::string(s) + "'");
}

/// Reads known keys from one JSON object and rejects everything else.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + "must be an object");
    }

    /// Returns whether the key was present.
    template <typename T>
    bool get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return false;
        try {
            out = convert<T>(j_.at(key));
        } catch (const json::exception&) {
            throw ConfigError(path_ + (path_.empty() ? "" : ".") + key + ": wrong type");
        } catch (const ConfigError& e) {
            throw ConfigError(path_ + (path_.empty() ? "" : ".") + key + ": " + e.what());
        }
        return true;
    }

    template <typename F>
    void with(const char* key, F&& f) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        Section sub(j_.at(key), path_.empty() ? key : path_ + "." + key);
        f(sub);
        sub.finish();
    }

    std::string qualified(const char* key) const { return where() + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError("unknown config key '" + where() + k + "'");
        }
    }

private:
    template <typename T>
    static T convert(const json& v) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("expected a boolean");
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
            return v.get<std::uint64_t>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("expected an integer");
            return v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("expected a number");
            return v.get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("expected a string");
            return v.get<std::string>();
        } else {
            return v.get<T>();
        }
    }

    std::string where() const { return path_.empty() ? "" : path_ + "."; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename E, typename Parse>
void get_enum(Section& s, const char* key, E& out, Parse parse) {
    std::string name;
    if (!s.get(key, name)) return;
    try {
        out = parse(name);
    } catch (const ConfigError& e) {
        throw ConfigError(s.qualified(key) + ": " + e.what());
    }
}

void read_cnn(Section& s, nn::CnnConfig& c) {
    s.get("input_length", c.input_length);
    s.get("conv_filters", c.conv_filters);
    s.get("kernel_size", c.kernel_size);
    s.get("stride", c.stride);
    s.get("dense_units", c.dense_units);
    s.get("n_classes", c.n_classes);
    get_enum(s, "activation", c.activation, parse_activation);
    s.get("learning_rate", c.learning_rate);
    s.get("epochs", c.epochs);
    s.get("batch_size", c.batch_size);
    get_enum(s, "optimizer", c.optimizer, nn::parse_optimizer);
    get_enum(s, "matmul", c.matmul, nn::parse_matmul);
}

void read_gbt(Section& s, gbt::GbtConfig& c) {
    s.get("n_rounds", c.n_rounds);
    s.get("max_depth", c.max_depth);
    s.get("learning_rate", c.learning_rate);
    s.get("lambda", c.lambda);
    s.get("gamma", c.gamma);
    s.get("min_child_hessian", c.min_child_hessian);
    get_enum(s, "base_score", c.base_score, parse_base_score);
}

std::vector<std::string> method_names(const std::vector<baselines::Method>& ms) {
    std::vector<std::string> out;
    for (auto m : ms) out.emplace_back(baselines::method_name(m));
    return out;
}

}  // namespace

json cnn_config_to_json(const nn::CnnConfig& c) {
    return {{"input_length", c.input_length},   {"conv_filters", c.conv_filters},
            {"kernel_size", c.kernel_size},     {"stride", c.stride},
            {"dense_units", c.dense_units},     {"n_classes", c.n_classes},
            {"activation", activation_name(c.activation)},
            {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
            {"batch_size", c.batch_size},       {"optimizer", nn::optimizer_name(c.optimizer)},
            {"matmul", nn::matmul_name(c.matmul)}};
}

nn::CnnConfig cnn_config_from_json(const json& j) {
    nn::CnnConfig c;
    Section s(j, "nn.cnn");
    read_cnn(s, c);
    s.finish();
    c.validate();
    return c;
}

json gbt_config_to_json(const gbt::GbtConfig& c) {
    return {{"n_rounds", c.n_rounds},
            {"max_depth", c.max_depth},
            {"learning_rate", c.learning_rate},
            {"lambda", c.lambda},
            {"gamma", c.gamma},
            {"min_child_hessian", c.min_child_hessian},
            {"base_score", base_score_name(c.base_score)}};
}

gbt::GbtConfig gbt_config_from_json(const json& j) {
    gbt::GbtConfig c;
    Section s(j, "gbt");
    read_gbt(s, c);
    s.finish();
    c.validate();
    return c;
}

json to_json(const RunConfig& c) {
    json j;
    const auto& st = c.synth;
    j["synth"] = {{"rows_per_class", st.rows_per_class},
                  {"class_mean_shift", st.class_mean_shift},
                  {"covariance_scale", st.covariance_scale},
                  {"dpi_effect", st.dpi_effect},
                  {"n_flat_channels", st.n_flat_channels},
                  {"noise", noise_shape_name(st.noise)},
                  {"seed", st.seed}};
    const auto& r = c.recording;
    j["recording"] = {{"fs_hz", r.fs_hz},
                      {"n_channels", r.n_channels},
                      {"duration_s", r.duration_s},
                      {"firing_rate_hz", r.firing_rate_hz},
                      {"class_rate_scale", r.class_rate_scale},
                      {"spike_amplitude_uv", r.spike_amplitude_uv},
                      {"spike_width_ms", r.spike_width_ms},
                      {"positive_lobe_ratio", r.positive_lobe_ratio},
                      {"noise_sd_uv", r.noise_sd_uv},
                      {"lfp_amplitude_uv", r.lfp_amplitude_uv},
                      {"lfp_frequency_hz", r.lfp_frequency_hz},
                      {"seed", r.seed}};
    const auto& d = c.signal.detect;
    j["signal"] = {{"filter_order", c.signal.filter_order},
                   {"highpass_hz", c.signal.highpass_hz},
                   {"k_sigma", d.k_sigma},
                   {"window_ms", d.window_ms},
                   {"refractory_ms", d.refractory_ms},
                   {"polarity", polarity_name(d.polarity)},
                   {"threshold_mode", mode_name(d.mode)},
                   {"fixed_threshold_uv", d.fixed_threshold_uv}};
    j["preprocess"] = {{"tau", c.preprocess.tau},
                       {"n_components", c.preprocess.n_components},
                       {"fit_before_split", c.preprocess.fit_before_split}};
    j["nn"] = {{"cnn", cnn_config_to_json(c.nn.cnn)}, {"tap", nn::tap_name(c.nn.tap)}};
    j["gbt"] = gbt_config_to_json(c.gbt);
    const auto& b = c.baselines;
    j["baselines"] = {{"tree_max_depth", b.tree_max_depth},
                      {"tree_min_samples_split", b.tree_min_samples_split},
                      {"forest_trees", b.forest_trees},
                      {"forest_max_features", b.forest_max_features},
                      {"forest_bootstrap", b.forest_bootstrap},
                      {"adaboost_rounds", b.adaboost_rounds},
                      {"nb_var_smoothing", b.nb_var_smoothing},
                      {"lr_tolerance", b.lr_tolerance},
                      {"lr_max_iter", b.lr_max_iter},
                      {"lr_l2", b.lr_l2},
                      {"mlp_dense_units", b.mlp_dense_units},
                      {"mlp_epochs", b.mlp_epochs},
                      {"mlp_batch_size", b.mlp_batch_size},
                      {"mlp_learning_rate", b.mlp_learning_rate},
                      {"mlp_optimizer", nn::optimizer_name(b.mlp_optimizer)}};
    j["model_seed"] = c.model_seed;
    j["eval"] = {{"k", c.eval.k},
                 {"seed", c.eval.seed},
                 {"averaging", eval::averaging_name(c.eval.averaging)},
                 {"pr_thresholds", c.eval.pr_thresholds},
                 {"methods", method_names(c.eval.methods)}};
    j["io"] = {{"data_dir", c.io.data_dir}, {"runs_dir", c.io.runs_dir}, {"dpis", c.io.dpis}, {"svg", c.io.svg}};
    j["deterministic"] = c.deterministic;
    j["threads"] = c.threads;
    return j;
}

RunConfig apply_json(RunConfig c, const json& j) {
    Section root(j, "");
    root.with("synth", [&](Section& s) {
        auto& t = c.synth;
        s.get("rows_per_class", t.rows_per_class);
        s.get("class_mean_shift", t.class_mean_shift);
        s.get("covariance_scale", t.covariance_scale);
        s.get("dpi_effect", t.dpi_effect);
        s.get("n_flat_channels", t.n_flat_channels);
        get_enum(s, "noise", t.noise, parse_noise_shape);
        s.get("seed", t.seed);
    });
    root.with("recording", [&](Section& s) {
        auto& r = c.recording;
        s.get("fs_hz", r.fs_hz);
        s.get("n_channels", r.n_channels);
        s.get("duration_s", r.duration_s);
        s.get("firing_rate_hz", r.firing_rate_hz);
        s.get("class_rate_scale", r.class_rate_scale);
        s.get("spike_amplitude_uv", r.spike_amplitude_uv);
        s.get("spike_width_ms", r.spike_width_ms);
        s.get("positive_lobe_ratio", r.positive_lobe_ratio);
        s.get("noise_sd_uv", r.noise_sd_uv);
        s.get("lfp_amplitude_uv", r.lfp_amplitude_uv);
        s.get("lfp_frequency_hz", r.lfp_frequency_hz);
        s.get("seed", r.seed);
    });
    root.with("signal", [&](Section& s) {
        auto& d = c.signal.detect;
        s.get("filter_order", c.signal.filter_order);
        s.get("highpass_hz", c.signal.highpass_hz);
        s.get("k_sigma", d.k_sigma);
        s.get("window_ms", d.window_ms);
        s.get("refractory_ms", d.refractory_ms);
        get_enum(s, "polarity", d.polarity, parse_polarity);
        get_enum(s, "threshold_mode", d.mode, parse_mode);
        s.get("fixed_threshold_uv", d.fixed_threshold_uv);
    });
    root.with("preprocess", [&](Section& s) {
        s.get("tau", c.preprocess.tau);
        s.get("n_components", c.preprocess.n_components);
        s.get("fit_before_split", c.preprocess.fit_before_split);
    });
    root.with("nn", [&](Section& s) {
        s.with("cnn", [&](Section& sub) { read_cnn(sub, c.nn.cnn); });
        get_enum(s, "tap", c.nn.tap, nn::parse_tap);
    });
    root.with("gbt", [&](Section& s) { read_gbt(s, c.gbt); });
    root.with("baselines", [&](Section& s) {
        auto& b = c.baselines;
        s.get("tree_max_depth", b.tree_max_depth);
        s.get("tree_min_samples_split", b.tree_min_samples_split);
        s.get("forest_trees", b.forest_trees);
        s.get("forest_max_features", b.forest_max_features);
        s.get("forest_bootstrap", b.forest_bootstrap);
        s.get("adaboost_rounds", b.adaboost_rounds);
        s.get("nb_var_smoothing", b.nb_var_smoothing);
        s.get("lr_tolerance", b.lr_tolerance);
        s.get("lr_max_iter", b.lr_max_iter);
        s.get("lr_l2", b.lr_l2);
        s.get("mlp_dense_units", b.mlp_dense_units);
        s.get("mlp_epochs", b.mlp_epochs);
        s.get("mlp_batch_size", b.mlp_batch_size);
        s.get("mlp_learning_rate", b.mlp_learning_rate);
        get_enum(s, "mlp_optimizer", b.mlp_optimizer, nn::parse_optimizer);
    });
    root.get("model_seed", c.model_seed);
    root.with("eval", [&](Section& s) {
        s.get("k", c.eval.k);
        s.get("seed", c.eval.seed);
        get_enum(s, "averaging", c.eval.averaging, eval::parse_averaging);
        s.get("pr_thresholds", c.eval.pr_thresholds);
        std::vector<std::string> names;
        if (s.get("methods", names)) {
            c.eval.methods.clear();
            for (const auto& n : names) c.eval.methods.push_back(baselines::parse_method(n));
        }
    });
    root.with("io", [&](Section& s) {
        s.get("data_dir", c.io.data_dir);
        s.get("runs_dir", c.io.runs_dir);
        s.get("dpis", c.io.dpis);
        s.get("svg", c.io.svg);
    });
    root.get("deterministic", c.deterministic);
    root.get("threads", c.threads);
    root.finish();
    c.validate();
    return c;
}

RunConfig config_from_json(const json& j) { return apply_json(RunConfig{}, j); }

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    try {
        return config_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
}

void RunConfig::validate() const {
    synth.validate();
    recording.validate();
    if (signal.filter_order != 2) throw ConfigError("signal.filter_order: only order 2 is supported");
    if (!(signal.highpass_hz > 0.0) || !(signal.highpass_hz < recording.fs_hz / 2.0)) {
        throw ConfigError("signal.highpass_hz must lie in (0, fs/2)");
    }
    if (!(signal.detect.k_sigma > 0.0)) throw ConfigError("signal.k_sigma must be positive");
    if (!(signal.detect.window_ms > 0.0)) throw ConfigError("signal.window_ms must be positive");
    if (!(signal.detect.refractory_ms >= 0.0)) throw ConfigError("signal.refractory_ms must be >= 0");
    if (!(signal.detect.fixed_threshold_uv > 0.0)) throw ConfigError("signal.fixed_threshold_uv must be positive");
    if (!(preprocess.tau >= 0.0)) throw ConfigError("preprocess.tau must be >= 0");
    if (preprocess.n_components < 0) throw ConfigError("preprocess.n_components must be >= 0");
    nn.cnn.validate();
    gbt.validate();
    baselines.validate();
    if (eval.k < 2) throw ConfigError("eval.k must be >= 2");
    if (eval.pr_thresholds < 2) throw ConfigError("eval.pr_thresholds must be >= 2");
    if (eval.methods.empty()) throw ConfigError("eval.methods must not be empty");
    if (io.dpis.empty()) throw ConfigError("io.dpis must not be empty");
    for (int d : io.dpis) {
        try {
            DpiTag{d};
        } catch (const DataError& e) {
            throw ConfigError(std::string("io.dpis: ") + e.what());
        }
    }
    if (threads < 1) throw ConfigError("threads must be >= 1");
}

eval::PipelineSpec RunConfig::pipeline_spec() const {
    eval::PipelineSpec spec;
    spec.preprocess = preprocess;
    spec.suite.baselines = baselines;
    spec.suite.cnn = nn.cnn;
    spec.suite.tap = nn.tap;
    spec.suite.gbt = gbt;
    spec.suite.seed = model_seed;
    spec.averaging = eval.averaging;
    spec.pr_thresholds = eval.pr_thresholds;
    spec.threads = effective_threads();
    spec.record_timing = !deterministic;
    return spec;
}

json override_from_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json root = json::object();
    json* cur = &root;
    std::size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("empty key segment in '" + path + "'");
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            break;
        }
        cur = &(*cur)[key];
        start = dot + 1;
    }
    return root;
}

std::string config_hash(const RunConfig& c) {
    const std::string text = to_json(c).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace mea
