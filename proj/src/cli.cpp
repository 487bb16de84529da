#include "mea/cli.hpp"

#include "mea/config.hpp"
#include "mea/eval.hpp"
#include "mea/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace mea::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

/// Runtime failure tagged with the pipeline stage that raised it.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what) : std::runtime_error(what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

/// Files written by one command, relative to the run directory.
class Outputs {
public:
    explicit Outputs(fs::path root) : root_(std::move(root)) {}

    const fs::path& root() const { return root_; }

    void text(const std::string& rel, std::string_view content) {
        eval::write_text(root_ / rel, content);
        files_.insert(rel);
    }

    fs::path path_for(const std::string& rel) {
        const fs::path p = root_ / rel;
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        files_.insert(rel);
        return p;
    }

    std::vector<std::string> files() const { return {files_.begin(), files_.end()}; }

private:
    fs::path root_;
    std::set<std::string> files_;
};

DpiTag dpi_arg(const json& args) {
    try {
        return DpiTag(args.value("dpi", 0));
    } catch (const DataError& e) {
        throw ConfigError(std::string("--dpi: ") + e.what());
    }
}

std::string input_arg(const json& args) {
    const std::string in = args.value("input", std::string());
    if (in.empty()) throw ConfigError("--input is required");
    return in;
}

std::vector<baselines::Method> methods_for(const RunConfig& cfg) { return cfg.eval.methods; }

void write_importance(Outputs& out, const std::string& rel, const FittedPreprocessor& fp) {
    std::string s = "stage,feature,importance,pass\n";
    for (std::size_t j = 0; j < fp.input_names.size(); ++j) {
        s += "pre_pca," + fp.input_names[j] + ',' + eval::format_number(fp.importance.importance(static_cast<Eigen::Index>(j))) +
             ',' + (fp.importance.pass[j] ? "1" : "0") + '\n';
    }
    for (int k = 0; k < fp.n_components(); ++k) {
        char name[16];
        std::snprintf(name, sizeof(name), "pc%02d", k + 1);
        s += std::string("post_pca,") + name + ',' + eval::format_number(fp.post_pca_importance.importance(k)) + ',' +
             (fp.post_pca_importance.pass[static_cast<std::size_t>(k)] ? "1" : "0") + '\n';
    }
    out.text(rel, s);
}

void write_cv_outputs(Outputs& out, const RunConfig& cfg, const eval::CvReport& r, const std::string& prefix) {
    const std::string m(baselines::method_name(r.method));
    out.text(prefix + "cv_" + m + ".json", eval::cv_report_json(r));
    out.text(prefix + "folds_" + m + ".csv", eval::folds_csv(r));
    out.text(prefix + "confusion_" + m + ".csv", eval::confusion_csv(r.pooled));
    out.text(prefix + "pr_" + m + ".csv", eval::pr_csv(r.pr));
    if (cfg.io.svg) {
        const std::string title = std::string(baselines::method_label(r.method)) + ", dpi " + std::to_string(r.dpi);
        out.text(prefix + "confusion_" + m + ".svg", eval::confusion_svg(r.pooled, title));
        out.text(prefix + "pr_" + m + ".svg", eval::pr_svg(r.pr, title));
    }
}

FeatureTable load_table(const json& args) {
    const DpiTag dpi = dpi_arg(args);
    const std::string in = input_arg(args);
    return stage("load", [&] { return load_feature_table(in, dpi); });
}

// ---------------------------------------------------------------------------
// Commands. Each one only reads `cfg` and `args` so a manifest can replay it.

void cmd_synth(const RunConfig& cfg, const json& args, Outputs& out, std::ostream& log) {
    for (int d : cfg.io.dpis) {
        const DpiTag dpi(d);
        const FeatureTable t = stage("synth", [&] { return synth_feature_table(cfg.synth, dpi); });
        stage("write", [&] { save_feature_table(t, out.path_for(dataset_file_name(dpi))); return 0; });
        log << "wrote " << dataset_file_name(dpi) << " (" << t.n_rows() << " rows)\n";
    }
    if (args.value("recordings", false)) {
        for (auto cls : kAllClasses) {
            const auto rec = stage("synth", [&] { return synth_recording(cfg.recording, cls); });
            const std::string name = "recording_" + std::string(class_name(cls)) + ".csv";
            stage("write", [&] { save_recording_csv(rec, out.path_for(name)); return 0; });
            log << "wrote " << name << '\n';
        }
    }
}

BiquadCoefficients filter_for(const RunConfig& cfg, double fs) {
    return design_highpass_butterworth(cfg.signal.filter_order, cfg.signal.highpass_hz, fs);
}

void cmd_filter(const RunConfig& cfg, const json& args, Outputs& out, std::ostream& log) {
    const std::string in = input_arg(args);
    const auto rec = stage("load", [&] { return load_recording_csv(in); });
    const auto filtered = stage("filter", [&] { return filter_recording(rec, filter_for(cfg, rec.fs_hz)); });
    stage("write", [&] { save_recording_csv(filtered, out.path_for("filtered.csv")); return 0; });
    log << "filtered " << rec.n_channels() << " channels x " << rec.n_samples() << " samples\n";
}

void cmd_detect(const RunConfig& cfg, const json& args, Outputs& out, std::ostream& log) {
    const std::string in = input_arg(args);
    auto rec = stage("load", [&] { return load_recording_csv(in); });
    if (!args.value("no_filter", false)) {
        rec = stage("filter", [&] { return filter_recording(rec, filter_for(cfg, rec.fs_hz)); });
    }
    const auto spikes = stage("detect", [&] { return detect_spikes(rec, cfg.signal.detect); });
    json summary;
    summary["total_events"] = spikes.total_events();
    json per = json::array();
    for (std::size_t c = 0; c < spikes.channels.size(); ++c) {
        per.push_back({{"channel", c + 1},
                       {"events", spikes.channels[c].events.size()},
                       {"whole_trace_sigma", spikes.channels[c].whole_trace_sigma}});
    }
    summary["channels"] = per;
    stage("write", [&] {
        save_spike_train_csv(spikes, out.path_for("spikes.csv"));
        out.text("detect_summary.json", summary.dump(2) + "\n");
        return 0;
    });
    log << "detected " << spikes.total_events() << " events on " << spikes.channels.size() << " channels\n";
}

void cmd_preprocess(const RunConfig& cfg, const json& args, Outputs& out, std::ostream& log) {
    const FeatureTable t = load_table(args);
    const auto fp = stage("preprocess", [&] { return fit_pipeline(t, cfg.preprocess); });
    const auto reduced = stage("preprocess", [&] { return apply_pipeline(fp, t); });
    stage("write", [&] {
        out.text("preprocessor.json", preprocessor_to_json(fp) + "\n");
        save_feature_table(reduced, out.path_for("preprocessed.csv"));
        write_importance(out, "importance.csv", fp);
        return 0;
    });
    log << fp.importance.pass_count() << " of " << fp.input_names.size() << " features exceed tau="
        << cfg.preprocess.tau << "; kept " << fp.n_components() << " components\n";
}

void cmd_train(const RunConfig& cfg, const json& args, Outputs& out, std::ostream& log) {
    const FeatureTable t = load_table(args);
    const auto method = baselines::parse_method(args.value("method", std::string("fused")));
    const auto plan = stage("split", [&] { return stratified_kfold(t, cfg.eval.k, cfg.eval.seed); });
    const auto mf = stage("split", [&] { return materialize_fold(t, plan, 0); });
    const auto fp = stage("preprocess", [&] { return fit_pipeline(mf.train, cfg.preprocess); });
    const auto train = apply_pipeline(fp, mf.train);
    const auto val = apply_pipeline(fp, mf.val);
    const auto test = apply_pipeline(fp, mf.test);
    auto spec = cfg.pipeline_spec();

    baselines::BaselineModel model;
    stage("train", [&] {
        if (method == baselines::Method::Cnn || method == baselines::Method::Fused) {
            nn::TrainHistory hist;
            auto cnn = baselines::train_suite_cnn(train, val, spec.suite, &hist);
            nn::save_history_csv(hist, out.path_for("history.csv"), spec.record_timing);
            nn::save_model(cnn, out.path_for("cnn.json"));
            if (method == baselines::Method::Fused) {
                auto fused = baselines::fuse(std::move(cnn), train, spec.suite);
                gbt::save_ensemble(fused.booster, out.path_for("booster.json"));
                model = baselines::wrap_fused(train, std::move(fused));
            } else {
                model = baselines::wrap_cnn(train, std::move(cnn));
            }
        } else {
            model = baselines::fit_baseline(method, train, val, spec.suite);
            if (const auto* ens = std::get_if<gbt::BoostedEnsemble>(&model.model)) {
                gbt::save_ensemble(*ens, out.path_for("booster.json"));
            }
        }
        return 0;
    });
    const auto pred = stage("evaluate", [&] { return baselines::predict_baseline(model, test); });
    const auto cm = eval::confusion_matrix(test.label_indices(), pred.labels);
    const auto m = eval::metrics_from_cm(cm, cfg.eval.averaging);
    stage("write", [&] {
        out.text("preprocessor.json", preprocessor_to_json(fp) + "\n");
        out.text("confusion.csv", eval::confusion_csv(cm));
        json j = {{"method", baselines::method_name(method)},
                  {"n_train", train.n_rows()},
                  {"n_val", val.n_rows()},
                  {"n_test", test.n_rows()},
                  {"accuracy", m.accuracy},
                  {"precision", m.precision},
                  {"recall", m.recall},
                  {"f1", m.f1}};
        out.text("test_metrics.json", j.dump(2) + "\n");
        return 0;
    });
    log << baselines::method_name(method) << " held-out accuracy " << m.accuracy << " on " << test.n_rows()
        << " rows\n";
}

void cmd_eval(const RunConfig& cfg, const json& args, Outputs& out, std::ostream& log) {
    const FeatureTable t = load_table(args);
    const auto r = stage("evaluate", [&] { return eval::cross_validate(t, cfg.pipeline_spec(), cfg.eval.k, cfg.eval.seed); });
    stage("write", [&] { write_cv_outputs(out, cfg, r, ""); return 0; });
    log << "mean accuracy " << r.mean.accuracy << " over " << (r.k - r.failed_folds) << " folds\n";
    for (const auto& f : r.folds) {
        if (!f.ok) log << "fold " << f.fold << " failed: " << f.error << '\n';
    }
}

void write_comparisons(Outputs& out, const RunConfig& cfg, const std::vector<eval::Comparison>& cmps) {
    out.text("comparison.json", eval::comparison_json(cmps));
    out.text("comparison.csv", eval::comparison_csv(cmps));
    out.text("comparison.txt", eval::format_comparison(cmps));
    for (const auto& c : cmps) {
        for (const auto& r : c.methods) write_cv_outputs(out, cfg, r, "dpi" + std::to_string(c.dpi) + "/");
    }
}

void cmd_compare(const RunConfig& cfg, const json& args, Outputs& out, std::ostream& log) {
    const FeatureTable t = load_table(args);
    const auto methods = methods_for(cfg);
    std::vector<eval::Comparison> cmps;
    cmps.push_back(stage("evaluate", [&] {
        return eval::compare_methods(t, methods, cfg.pipeline_spec(), cfg.eval.k, cfg.eval.seed);
    }));
    stage("write", [&] { write_comparisons(out, cfg, cmps); return 0; });
    log << eval::format_comparison(cmps);
}

void cmd_pipeline(const RunConfig& cfg, const json& args, Outputs& out, std::ostream& log) {
    const std::string data_dir = args.value("data_dir", std::string());
    const auto methods = methods_for(cfg);
    std::vector<eval::Comparison> cmps;
    for (int d : cfg.io.dpis) {
        const DpiTag dpi(d);
        FeatureTable t;
        if (!data_dir.empty()) {
            t = stage("load", [&] { return load_feature_table(fs::path(data_dir) / dataset_file_name(dpi), dpi); });
        } else {
            t = stage("synth", [&] { return synth_feature_table(cfg.synth, dpi); });
        }
        log << "dpi " << d << ": " << t.n_rows() << " rows\n";
        cmps.push_back(stage("evaluate", [&] {
            return eval::compare_methods(t, methods, cfg.pipeline_spec(), cfg.eval.k, cfg.eval.seed);
        }));
        log << eval::format_comparison(std::span(&cmps.back(), 1));
    }
    const auto focus = std::find(methods.begin(), methods.end(), baselines::Method::Fused) != methods.end()
                           ? baselines::Method::Fused
                           : methods.front();
    const auto per_dpi = eval::per_dpi_report(cmps, focus);
    stage("write", [&] {
        write_comparisons(out, cfg, cmps);
        out.text("per_dpi.csv", eval::per_dpi_csv(per_dpi));
        out.text("per_dpi.txt", eval::format_per_dpi(per_dpi));
        return 0;
    });
    log << eval::format_per_dpi(per_dpi);
}

using Command = void (*)(const RunConfig&, const json&, Outputs&, std::ostream&);

Command lookup(const std::string& name) {
    if (name == "synth") return cmd_synth;
    if (name == "filter") return cmd_filter;
    if (name == "detect") return cmd_detect;
    if (name == "preprocess") return cmd_preprocess;
    if (name == "train") return cmd_train;
    if (name == "eval") return cmd_eval;
    if (name == "compare") return cmd_compare;
    if (name == "pipeline") return cmd_pipeline;
    throw ConfigError("unknown command '" + name + "' in manifest");
}

std::string timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

fs::path make_run_dir(const RunConfig& cfg, const std::string& out_override) {
    if (!out_override.empty()) {
        fs::create_directories(out_override);
        return out_override;
    }
    const fs::path base = fs::path(cfg.io.runs_dir) / (timestamp() + "-" + config_hash(cfg));
    fs::path dir = base;
    for (int i = 1; fs::exists(dir); ++i) dir = base.string() + "-" + std::to_string(i);
    fs::create_directories(dir);
    return dir;
}

/// Runs one command into a run directory and writes its manifest.
int execute(const std::string& command, const RunConfig& cfg, const json& args, const std::string& out_override,
            std::ostream& log) {
    const Command cmd = lookup(command);
    const fs::path dir = stage("setup", [&] { return make_run_dir(cfg, out_override); });
    Outputs out(dir);
    cmd(cfg, args, out, log);

    json manifest;
    manifest["tool"] = "mea";
    manifest["version"] = kVersion;
    manifest["command"] = command;
    manifest["args"] = args;
    manifest["config"] = to_json(cfg);
    manifest["config_hash"] = config_hash(cfg);
    manifest["seeds"] = {{"synth", cfg.synth.seed},
                         {"recording", cfg.recording.seed},
                         {"model", cfg.model_seed},
                         {"eval", cfg.eval.seed}};
    manifest["deterministic"] = cfg.deterministic;
    manifest["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION);
    manifest["outputs"] = out.files();
    stage("write", [&] { eval::write_text(dir / "manifest.json", manifest.dump(2) + "\n"); return 0; });
    log << "run directory: " << dir.string() << '\n';
    return kOk;
}

int threads_from_env(int fallback) {
    const char* env = std::getenv("MEA_THREADS");
    if (env == nullptr || *env == '\0') return fallback;
    try {
        std::size_t pos = 0;
        const int v = std::stoi(env, &pos);
        if (pos != std::string(env).size() || v < 1) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string("MEA_THREADS must be a positive integer, got '") + env + "'");
    }
}

}  // namespace

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"MEA signal classification: synthesis, preprocessing, CNN + boosted trees, evaluation", "mea"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", kVersion);

    std::string config_path, out_dir, runs_dir;
    std::vector<std::string> sets;
    int threads = 0;
    bool deterministic = false;
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--set", sets, "Override a config value, e.g. --set nn.cnn.epochs=5 (repeatable)");
    app.add_option("--threads", threads, "Worker threads (also MEA_THREADS)")->check(CLI::PositiveNumber);
    app.add_flag("--deterministic", deterministic, "Serial execution, no wall-clock values in outputs");
    app.add_option("--out", out_dir, "Write into this directory instead of runs/<timestamp>-<hash>/");
    app.add_option("--runs-dir", runs_dir, "Parent of generated run directories");

    json args = json::object();
    std::string input, method, data_dir, methods_csv, tap, optimizer, manifest_path;
    int dpi = 0, rows = 0, k = 0, epochs = -1;
    long long seed = -1;
    bool recordings = false, no_filter = false;

    auto* synth = app.add_subcommand("synth", "Write synthetic dataset CSVs, one per dpi");
    synth->add_option("--rows", rows, "Rows per class")->check(CLI::PositiveNumber);
    synth->add_option("--seed", seed, "Generator seed")->check(CLI::NonNegativeNumber);
    synth->add_option("--dpi", dpi, "Only this dpi (default: every configured one)");
    synth->add_flag("--recordings", recordings, "Also write one raw recording per class");

    auto* filter = app.add_subcommand("filter", "High-pass filter a recording CSV");
    filter->add_option("--input", input, "Recording CSV")->required();

    auto* detect = app.add_subcommand("detect", "Detect spikes in a recording CSV");
    detect->add_option("--input", input, "Recording CSV")->required();
    detect->add_flag("--no-filter", no_filter, "Input is already filtered");

    const auto table_opts = [&](CLI::App* sub) {
        sub->add_option("--input", input, "Dataset CSV")->required();
        sub->add_option("--dpi", dpi, "Days post-infection of the table");
    };
    const auto eval_opts = [&](CLI::App* sub) {
        sub->add_option("--seed", seed, "Fold seed")->check(CLI::NonNegativeNumber);
        sub->add_option("--k", k, "Number of folds")->check(CLI::Range(2, 1000));
        sub->add_option("--epochs", epochs, "CNN epochs")->check(CLI::NonNegativeNumber);
        sub->add_option("--tap", tap, "Embedding tap: output or penultimate");
        sub->add_option("--optimizer", optimizer, "CNN optimizer");
    };

    auto* preprocess = app.add_subcommand("preprocess", "Fit scaler, importance and PCA on a table");
    table_opts(preprocess);
    auto* train = app.add_subcommand("train", "Train one method on a stratified split and report held-out metrics");
    table_opts(train);
    eval_opts(train);
    train->add_option("--method", method, "Method name (default fused)");
    auto* evalc = app.add_subcommand("eval", "Cross-validate the fused pipeline on one table");
    table_opts(evalc);
    eval_opts(evalc);
    auto* compare = app.add_subcommand("compare", "Cross-validate several methods on shared folds");
    table_opts(compare);
    eval_opts(compare);
    compare->add_option("--methods", methods_csv, "Comma-separated method names");
    auto* pipeline = app.add_subcommand("pipeline", "End-to-end run over every dpi with per-dpi and comparison reports");
    eval_opts(pipeline);
    pipeline->add_option("--data-dir", data_dir, "Read dataset CSVs from here instead of synthesizing");
    pipeline->add_option("--methods", methods_csv, "Comma-separated method names");
    pipeline->add_option("--rows", rows, "Synthetic rows per class")->check(CLI::PositiveNumber);
    auto* replay = app.add_subcommand("replay", "Re-run a command from its manifest");
    replay->add_option("manifest", manifest_path, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);

    std::vector<std::string> reversed(argv.rbegin(), argv.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << '\n';
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }

    const CLI::App* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    try {
        RunConfig cfg;
        json args_for_replay = json::object();
        std::string command_to_run = command;
        if (command == "replay") {
            std::ifstream in(manifest_path);
            json manifest;
            try {
                manifest = json::parse(in);
                command_to_run = manifest.at("command").get<std::string>();
                args_for_replay = manifest.at("args");
                cfg = config_from_json(manifest.at("config"));
            } catch (const json::exception& e) {
                throw ConfigError("malformed manifest: " + std::string(e.what()));
            }
            if (command_to_run == "replay") throw ConfigError("a manifest cannot name the replay command");
            if (!cfg.deterministic) {
                err << "warning: the manifest was not produced in determinism mode; timings will differ\n";
            }
        } else {
            if (!config_path.empty()) cfg = load_config(config_path);
            json overrides = json::object();
            const auto set = [&](const std::string& a) { overrides.merge_patch(override_from_assignment(a)); };
            if (rows > 0) overrides["synth"]["rows_per_class"] = rows;
            if (seed >= 0) {
                if (command == "synth") {
                    overrides["synth"]["seed"] = static_cast<std::uint64_t>(seed);
                } else {
                    overrides["eval"]["seed"] = static_cast<std::uint64_t>(seed);
                }
            }
            if (k > 0) overrides["eval"]["k"] = k;
            if (epochs >= 0) overrides["nn"]["cnn"]["epochs"] = epochs;
            if (!tap.empty()) overrides["nn"]["tap"] = tap;
            if (!optimizer.empty()) overrides["nn"]["cnn"]["optimizer"] = optimizer;
            if (!methods_csv.empty()) {
                json list = json::array();
                std::stringstream ss(methods_csv);
                std::string tok;
                while (std::getline(ss, tok, ',')) list.push_back(tok);
                overrides["eval"]["methods"] = list;
            }
            if (!runs_dir.empty()) overrides["io"]["runs_dir"] = runs_dir;
            if (command == "synth" && sub->count("--dpi")) overrides["io"]["dpis"] = json::array({dpi});
            for (const auto& s : sets) set(s);
            cfg = apply_json(cfg, overrides);
            cfg.threads = threads_from_env(cfg.threads);
            if (threads > 0) cfg.threads = threads;
            if (deterministic) cfg.deterministic = true;
            cfg.validate();

            if (!input.empty()) args_for_replay["input"] = input;
            if (command == "preprocess" || command == "train" || command == "eval" || command == "compare") {
                args_for_replay["dpi"] = dpi;
            }
            if (!method.empty()) args_for_replay["method"] = method;
            if (!data_dir.empty()) args_for_replay["data_dir"] = data_dir;
            if (recordings) args_for_replay["recordings"] = true;
            if (no_filter) args_for_replay["no_filter"] = true;
        }
        return execute(command_to_run, cfg, args_for_replay, out_dir, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const StageError& e) {
        err << "error [" << e.stage() << "]: " << e.what() << '\n';
        return kRuntime;
    } catch (const std::exception& e) {
        err << "error [run]: " << e.what() << '\n';
        return kRuntime;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace mea::cli
