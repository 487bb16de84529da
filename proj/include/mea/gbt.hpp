#pragma once

#include "mea/dataset.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mea::gbt {

enum class BaseScore { Uniform, Prior };

struct GbtConfig {
    int n_rounds = 100;
    int max_depth = 6;
    double learning_rate = 0.3;  // eta
    double lambda = 1.0;         // L2 on leaf weights
    double gamma = 0.0;          // per-split penalty
    double min_child_hessian = 1.0;
    BaseScore base_score = BaseScore::Uniform;

    void validate() const;
};

/// Softmax cross-entropy derivatives: g = p - onehot(y), h = p (1 - p).
struct GradHess {
    RowMatrix g;
    RowMatrix h;
};
GradHess softmax_grad_hess(const RowMatrix& logits, std::span<const int> labels);

RowMatrix softmax(const RowMatrix& logits);

/// 0.5 [GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)] - gamma
double split_gain(double gl, double hl, double gr, double hr, double lambda, double gamma);
/// -G / (H + lambda); throws std::domain_error when H + lambda <= 0.
double leaf_weight(double g, double h, double lambda);

struct SplitParams {
    double lambda = 1.0;
    double gamma = 0.0;
    double min_child_hessian = 0.0;
};

struct SplitCandidate {
    int feature = -1;
    double threshold = 0.0;  // rows with x < threshold go left
    double gain = 0.0;
};

/// Exact greedy search over all (feature, midpoint between consecutive
/// distinct values). Ties go to the lowest feature, then the lowest threshold.
/// Returns nullopt when fewer than 2 rows or no split has positive gain.
std::optional<SplitCandidate> find_best_split(const RowMatrix& x, std::span<const std::size_t> rows,
                                              std::span<const double> g, std::span<const double> h,
                                              const SplitParams& params);

struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf output, already scaled by the learning rate

    bool is_leaf() const { return feature < 0; }
};

class RegressionTree {
public:
    std::vector<TreeNode> nodes;  // preorder; nodes[0] is the root

    double predict(const double* row) const;
    int depth() const;
    std::size_t leaf_count() const;
};

/// Depth-limited exact greedy tree on one class's (g, h).
RegressionTree build_tree(const RowMatrix& x, std::span<const double> g, std::span<const double> h,
                          const GbtConfig& cfg);

struct BoostedEnsemble {
    GbtConfig config;
    int n_features = 0;
    std::array<double, kNumClasses> base_score{};
    std::vector<std::array<RegressionTree, kNumClasses>> rounds;

    std::size_t tree_count() const { return rounds.size() * kNumClasses; }
};

/// Optional per-round diagnostics: mean training log-loss before round 1 and after each round.
struct FitTrace {
    std::vector<double> train_logloss;
};

BoostedEnsemble fit_gbt(const FeatureTable& train, const GbtConfig& cfg, FitTrace* trace = nullptr);

struct Prediction {
    RowMatrix probs;
    std::vector<int> labels;  // argmax, lowest index on ties
};

RowMatrix predict_logits(const BoostedEnsemble& ens, const RowMatrix& x);
Prediction predict_gbt(const BoostedEnsemble& ens, const FeatureTable& table);

double mean_logloss(const RowMatrix& probs, std::span<const int> labels);
std::vector<int> argmax_rows(const RowMatrix& m);

std::string ensemble_to_json(const BoostedEnsemble& ens);
BoostedEnsemble ensemble_from_json(const std::string& text);
void save_ensemble(const BoostedEnsemble& ens, const std::filesystem::path& path);
BoostedEnsemble load_ensemble(const std::filesystem::path& path);

}  // namespace mea::gbt
