#include "mea/preprocess.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mea {

using json = nlohmann::json;

double quantile_linear(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("quantile of empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile p outside [0,1]");
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const double a = values[lo];
    if (frac == 0.0 || lo + 1 >= values.size()) return a;
    const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
    return a + frac * (b - a);
}

ScalerParams fit_robust_scaler(const FeatureTable& train) {
    if (train.n_rows() == 0) throw DataError("cannot fit scaler on an empty table");
    const auto d = train.features.cols();
    ScalerParams p;
    p.median.resize(d);
    p.iqr.resize(d);
    p.degenerate.assign(static_cast<std::size_t>(d), false);
    std::vector<double> col(train.n_rows());
    for (Eigen::Index j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < col.size(); ++i) col[i] = train.features(static_cast<Eigen::Index>(i), j);
        p.median(j) = quantile_linear(col, 0.5);
        const double q1 = quantile_linear(col, 0.25);
        const double q3 = quantile_linear(col, 0.75);
        p.iqr(j) = std::max(0.0, q3 - q1);
        p.degenerate[static_cast<std::size_t>(j)] = p.iqr(j) == 0.0;
    }
    return p;
}

FeatureTable apply_scaler(const ScalerParams& params, const FeatureTable& table) {
    if (table.n_features() != params.n_features()) {
        throw DataError("scaler expects " + std::to_string(params.n_features()) + " features, got " +
                        std::to_string(table.n_features()));
    }
    FeatureTable out = table;
    for (Eigen::Index j = 0; j < out.features.cols(); ++j) {
        const double div = params.degenerate[static_cast<std::size_t>(j)] ? 1.0 : params.iqr(j);
        out.features.col(j) = (out.features.col(j).array() - params.median(j)) / div;
    }
    return out;
}

std::size_t ImportanceReport::pass_count() const {
    return static_cast<std::size_t>(std::count(pass.begin(), pass.end(), true));
}

ImportanceReport variance_importance(const FeatureTable& table, double tau) {
    if (table.n_rows() == 0) throw DataError("cannot compute importance of an empty table");
    ImportanceReport r;
    r.tau = tau;
    const Eigen::RowVectorXd mean = table.features.colwise().mean();
    r.importance = (table.features.rowwise() - mean).array().square().colwise().mean().transpose();
    r.pass.resize(static_cast<std::size_t>(r.importance.size()));
    for (Eigen::Index j = 0; j < r.importance.size(); ++j) {
        r.pass[static_cast<std::size_t>(j)] = r.importance(j) > tau;
    }
    return r;
}

PcaModel fit_pca(const FeatureTable& table, int n_components) {
    const auto n = static_cast<Eigen::Index>(table.n_rows());
    const auto d = table.features.cols();
    if (n_components < 1 || n_components > d) {
        throw std::invalid_argument("n_components " + std::to_string(n_components) +
                                    " outside [1, " + std::to_string(d) + "]");
    }
    if (n < 2 || d > n) {
        throw std::invalid_argument("PCA needs at least as many rows as features (and >= 2)");
    }

    PcaModel m;
    m.means = table.features.colwise().mean().transpose();

    // Blocked accumulation avoids materializing a centered copy of large tables.
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    constexpr Eigen::Index kBlock = 1 << 15;
    for (Eigen::Index start = 0; start < n; start += kBlock) {
        const Eigen::Index rows = std::min(kBlock, n - start);
        const Eigen::MatrixXd block =
            table.features.middleRows(start, rows).rowwise() - m.means.transpose();
        cov.noalias() += block.transpose() * block;
    }
    cov /= static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("covariance eigendecomposition failed");

    // Eigen returns ascending eigenvalues.
    m.components.resize(n_components, d);
    m.explained_variance.resize(n_components);
    for (int k = 0; k < n_components; ++k) {
        const Eigen::Index src = d - 1 - k;
        Vector v = eig.eigenvectors().col(src);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        m.components.row(k) = v.transpose();
        m.explained_variance(k) = std::max(0.0, eig.eigenvalues()(src));
    }
    return m;
}

FeatureTable apply_pca(const PcaModel& model, const FeatureTable& table) {
    if (static_cast<int>(table.n_features()) != model.n_features()) {
        throw DataError("PCA expects " + std::to_string(model.n_features()) + " features, got " +
                        std::to_string(table.n_features()));
    }
    FeatureTable out;
    out.dpi = table.dpi;
    out.labels = table.labels;
    out.features.noalias() =
        (table.features.rowwise() - model.means.transpose()) * model.components.transpose();
    out.feature_names.reserve(static_cast<std::size_t>(model.n_components()));
    for (int k = 0; k < model.n_components(); ++k) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "pc%02d", k + 1);
        out.feature_names.emplace_back(buf);
    }
    return out;
}

RowMatrix reconstruct_pca(const PcaModel& model, const RowMatrix& scores) {
    RowMatrix x = scores * model.components;
    x.rowwise() += model.means.transpose();
    return x;
}

FittedPreprocessor fit_pipeline(const FeatureTable& train, const PreprocessConfig& cfg) {
    train.validate();
    if (train.n_rows() < 2) throw DataError("preprocessing needs at least 2 training rows");

    FittedPreprocessor fp;
    fp.input_names = train.feature_names;
    fp.scaler = fit_robust_scaler(train);
    const FeatureTable scaled = apply_scaler(fp.scaler, train);
    fp.importance = variance_importance(scaled, cfg.tau);

    int n_components = cfg.n_components;
    if (n_components <= 0) {
        n_components = static_cast<int>(fp.importance.pass_count());
        if (n_components < 2) {
            throw DataError("only " + std::to_string(n_components) +
                            " feature(s) exceed the importance threshold; need at least 2");
        }
    }
    fp.pca = fit_pca(scaled, n_components);
    // scaled data is already centred on the median; anchor scores there so a
    // median row maps to the origin (variances are unaffected)
    fp.pca.means.setZero();
    fp.post_pca_importance = variance_importance(apply_pca(fp.pca, scaled), cfg.tau);
    return fp;
}

FeatureTable apply_pipeline(const FittedPreprocessor& fp, const FeatureTable& table) {
    if (table.feature_names != fp.input_names) {
        throw DataError("table schema does not match the fitted preprocessor");
    }
    return apply_pca(fp.pca, apply_scaler(fp.scaler, table));
}

namespace {

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector json_vec(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json importance_json(const ImportanceReport& r) {
    return {{"importance", vec_json(r.importance)}, {"tau", r.tau}, {"pass", r.pass}};
}

ImportanceReport json_importance(const json& j) {
    ImportanceReport r;
    r.importance = json_vec(j.at("importance"));
    r.tau = j.at("tau").get<double>();
    r.pass = j.at("pass").get<std::vector<bool>>();
    return r;
}

}  // namespace

std::string preprocessor_to_json(const FittedPreprocessor& fp) {
    json j;
    j["format"] = "mea.preprocessor";
    j["version"] = FittedPreprocessor::kFormatVersion;
    j["input_names"] = fp.input_names;
    j["scaler"] = {{"median", vec_json(fp.scaler.median)},
                   {"iqr", vec_json(fp.scaler.iqr)},
                   {"degenerate", fp.scaler.degenerate}};
    j["importance"] = importance_json(fp.importance);
    j["pca"] = {{"n_components", fp.pca.n_components()},
                {"n_features", fp.pca.n_features()},
                {"means", vec_json(fp.pca.means)},
                {"components", std::vector<double>(fp.pca.components.data(),
                                                   fp.pca.components.data() + fp.pca.components.size())},
                {"explained_variance", vec_json(fp.pca.explained_variance)}};
    j["post_pca_importance"] = importance_json(fp.post_pca_importance);
    return j.dump(1);
}

FittedPreprocessor preprocessor_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        if (j.at("format") != "mea.preprocessor") throw DataError("not a preprocessor file");
        if (j.at("version").get<int>() != FittedPreprocessor::kFormatVersion) {
            throw DataError("unsupported preprocessor version");
        }
        FittedPreprocessor fp;
        fp.input_names = j.at("input_names").get<std::vector<std::string>>();
        fp.scaler.median = json_vec(j.at("scaler").at("median"));
        fp.scaler.iqr = json_vec(j.at("scaler").at("iqr"));
        fp.scaler.degenerate = j.at("scaler").at("degenerate").get<std::vector<bool>>();
        fp.importance = json_importance(j.at("importance"));
        const auto& p = j.at("pca");
        const int k = p.at("n_components").get<int>();
        const int d = p.at("n_features").get<int>();
        fp.pca.means = json_vec(p.at("means"));
        const auto comps = p.at("components").get<std::vector<double>>();
        if (comps.size() != static_cast<std::size_t>(k) * static_cast<std::size_t>(d)) {
            throw DataError("component matrix size mismatch");
        }
        fp.pca.components = Eigen::Map<const RowMatrix>(comps.data(), k, d);
        fp.pca.explained_variance = json_vec(p.at("explained_variance"));
        fp.post_pca_importance = json_importance(j.at("post_pca_importance"));
        return fp;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed preprocessor JSON: ") + e.what());
    }
}

void save_preprocessor(const FittedPreprocessor& fp, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << preprocessor_to_json(fp) << '\n';
}

FittedPreprocessor load_preprocessor(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return preprocessor_from_json(ss.str());
}

}  // namespace mea
