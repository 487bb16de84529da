#pragma once

#include "mea/dataset.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mea {

/// Quantile with linear interpolation between order statistics: position p*(n-1).
double quantile_linear(std::vector<double> values, double p);

struct ScalerParams {
    Vector median;
    Vector iqr;
    std::vector<bool> degenerate;  // exactly where iqr == 0

    std::size_t n_features() const { return static_cast<std::size_t>(median.size()); }
};

ScalerParams fit_robust_scaler(const FeatureTable& train);
/// x' = (x - median) / iqr; degenerate features are only centered.
FeatureTable apply_scaler(const ScalerParams& params, const FeatureTable& table);

struct ImportanceReport {
    Vector importance;  // population variance per feature
    double tau = 0.5;
    std::vector<bool> pass;  // importance > tau

    std::size_t pass_count() const;
};

ImportanceReport variance_importance(const FeatureTable& table, double tau = 0.5);

struct PcaModel {
    Vector means;
    RowMatrix components;  // n_components x n_features, orthonormal rows
    Vector explained_variance;

    int n_components() const { return static_cast<int>(components.rows()); }
    int n_features() const { return static_cast<int>(components.cols()); }
};

/// Top eigenvectors of the sample covariance, descending by explained variance;
/// each component's largest-magnitude loading is made positive.
PcaModel fit_pca(const FeatureTable& table, int n_components);
FeatureTable apply_pca(const PcaModel& model, const FeatureTable& table);
/// Maps scores back to the input feature space.
RowMatrix reconstruct_pca(const PcaModel& model, const RowMatrix& scores);

struct PreprocessConfig {
    double tau = 0.5;
    /// 0 selects the number of features whose importance exceeds tau.
    int n_components = 0;
    /// Fit once on the whole table before splitting instead of per training fold (leaks test rows).
    bool fit_before_split = false;
};

struct FittedPreprocessor {
    static constexpr int kFormatVersion = 1;

    std::vector<std::string> input_names;
    ScalerParams scaler;
    ImportanceReport importance;
    PcaModel pca;
    ImportanceReport post_pca_importance;

    int n_components() const { return pca.n_components(); }
};

FittedPreprocessor fit_pipeline(const FeatureTable& train, const PreprocessConfig& cfg = {});
FeatureTable apply_pipeline(const FittedPreprocessor& fp, const FeatureTable& table);

std::string preprocessor_to_json(const FittedPreprocessor& fp);
FittedPreprocessor preprocessor_from_json(const std::string& text);
void save_preprocessor(const FittedPreprocessor& fp, const std::filesystem::path& path);
FittedPreprocessor load_preprocessor(const std::filesystem::path& path);

}  // namespace mea
