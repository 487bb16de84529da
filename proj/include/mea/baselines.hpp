#pragma once

#include "mea/dataset.hpp"
#include "mea/gbt.hpp"
#include "mea/nn.hpp"
#include "mea/rng.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace mea::baselines {

enum class Method {
    Cnn,
    Mlp,
    GbtAlone,
    AdaBoost,
    RandomForest,
    DecisionTree,
    NaiveBayes,
    LogisticRegression,
    Fused,
};

inline constexpr std::array<Method, 9> kAllMethods = {
    Method::Cnn,          Method::Mlp,          Method::GbtAlone,
    Method::AdaBoost,     Method::RandomForest, Method::DecisionTree,
    Method::NaiveBayes,   Method::LogisticRegression, Method::Fused};

std::string_view method_name(Method m);    // config/CLI token, e.g. "random_forest"
std::string_view method_label(Method m);   // report column heading
Method parse_method(std::string_view name);

struct BaselineConfig {
    int tree_max_depth = 16;
    int tree_min_samples_split = 2;
    int forest_trees = 100;
    /// Features tried per split; 0 means floor(sqrt(d)).
    int forest_max_features = 0;
    bool forest_bootstrap = true;
    int adaboost_rounds = 50;
    /// Added to every per-class variance, relative to the largest feature variance.
    double nb_var_smoothing = 1e-9;
    double lr_tolerance = 1e-6;
    int lr_max_iter = 500;
    double lr_l2 = 0.0;
    std::vector<int> mlp_dense_units = {256, 128, 64};
    int mlp_epochs = 20;
    int mlp_batch_size = 1024;
    double mlp_learning_rate = 0.001;
    nn::OptimizerKind mlp_optimizer = nn::OptimizerKind::Adam;

    void validate() const;
};

/// Everything a method may need; the CNN and booster settings are shared with the fused pipeline.
struct ModelSuite {
    BaselineConfig baselines;
    nn::CnnConfig cnn;
    nn::EmbeddingTap tap = nn::EmbeddingTap::Output;
    gbt::GbtConfig gbt;
    std::uint64_t seed = 1;
};

// ---------------------------------------------------------------------------
// CART

struct CartNode {
    int feature = -1;
    double threshold = 0.0;  // x < threshold goes left
    int left = -1;
    int right = -1;
    std::array<double, kNumClasses> proportions{};  // weighted class mix at the node

    bool is_leaf() const { return feature < 0; }
};

struct ClassificationTree {
    std::vector<CartNode> nodes;  // preorder

    const CartNode& leaf_for(const double* row) const;
    int depth() const;
};

struct CartParams {
    int max_depth = 16;
    int min_samples_split = 2;
    /// Features tried per split; 0 or >= d means all of them.
    int max_features = 0;
};

/// Gini CART on weighted rows (weights are per-row multiplicities; zero-weight rows are ignored).
/// `rng` draws the per-node feature subset and may be null when all features are used.
ClassificationTree fit_cart(const RowMatrix& x, std::span<const int> y, std::span<const double> w,
                            const CartParams& params, Rng* rng);

struct Forest {
    std::vector<ClassificationTree> trees;
};

/// Decision stump for SAMME. Both sides predict their weighted-majority class.
struct Stump {
    int feature = -1;  // -1: constant prediction `left_class`
    double threshold = 0.0;
    int left_class = 0;
    int right_class = 0;
    double weighted_error = 0.0;

    int predict(const double* row) const {
        return feature < 0 || row[feature] < threshold ? left_class : right_class;
    }
};

/// Exhaustive minimum-weighted-error stump; ties go to the lowest feature, then threshold.
Stump best_stump(const RowMatrix& x, std::span<const int> y, std::span<const double> w);

struct AdaBoostModel {
    std::vector<Stump> stumps;
    std::vector<double> alphas;
};

struct NaiveBayesModel {
    std::array<double, kNumClasses> log_prior{};
    RowMatrix means;      // classes x features
    RowMatrix variances;  // classes x features, smoothing included
    std::array<bool, kNumClasses> present{};
};

struct LogisticModel {
    RowMatrix weights;  // (features + 1) x classes, last row is the intercept
    int iterations = 0;
    double final_loss = 0.0;
    bool converged = false;
};

struct FusedModel {
    nn::CnnModel cnn;
    nn::EmbeddingTap tap = nn::EmbeddingTap::Output;
    gbt::BoostedEnsemble booster;
};

struct BaselineModel {
    Method method = Method::Fused;
    std::vector<std::string> feature_names;
    std::variant<ClassificationTree, Forest, AdaBoostModel, NaiveBayesModel, LogisticModel, nn::CnnModel,
                 gbt::BoostedEnsemble, FusedModel>
        model;
};

struct ScoredPrediction {
    RowMatrix scores;         // rows x 3
    std::vector<int> labels;  // argmax, lowest index on ties
};

/// `val` is only used by the network-based methods (recorded, not acted on) and may be empty.
BaselineModel fit_baseline(Method method, const FeatureTable& train, const FeatureTable& val,
                           const ModelSuite& suite);
ScoredPrediction predict_baseline(const BaselineModel& model, const FeatureTable& table);

/// Stage-wise pieces of the fused method so a trained CNN can be shared with the `cnn` method.
nn::CnnModel train_suite_cnn(const FeatureTable& train, const FeatureTable& val, const ModelSuite& suite,
                             nn::TrainHistory* history = nullptr);
FusedModel fuse(nn::CnnModel cnn, const FeatureTable& train, const ModelSuite& suite);
BaselineModel wrap_fused(const FeatureTable& train, FusedModel fused);
BaselineModel wrap_cnn(const FeatureTable& train, nn::CnnModel cnn);

}  // namespace mea::baselines
