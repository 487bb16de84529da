#include "mea/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace mea::baselines {

namespace {

constexpr std::array<std::string_view, 9> kNames = {
    "cnn", "mlp", "gbt_alone", "adaboost", "random_forest", "decision_tree",
    "naive_bayes", "logistic_regression", "fused"};
constexpr std::array<std::string_view, 9> kLabels = {
    "CNN", "MLP", "GBT", "AdaBoost", "Random Forest", "Decision Tree",
    "Naive Bayes", "Logistic Regression", "CNN+GBT"};

enum SeedTag : std::uint64_t { kCnnInit = 11, kCnnShuffle, kMlpInit, kMlpShuffle, kForest };

using RowIndex = std::uint32_t;

int argmax3(const double* v) {
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c) {
        if (v[c] > v[best]) best = c;
    }
    return best;
}

std::size_t distinct_classes(std::span<const int> y) {
    std::array<bool, kNumClasses> seen{};
    for (int v : y) seen[static_cast<std::size_t>(v)] = true;
    return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
}

void sort_rows_by(const RowMatrix& x, int feature, std::vector<RowIndex>& rows) {
    std::sort(rows.begin(), rows.end(), [&](RowIndex a, RowIndex b) {
        const double va = x(static_cast<Eigen::Index>(a), feature);
        const double vb = x(static_cast<Eigen::Index>(b), feature);
        return va < vb || (va == vb && a < b);
    });
}

double midpoint(double a, double b) {
    const double m = a + (b - a) / 2.0;
    return m > a ? m : b;
}

class CartBuilder {
public:
    CartBuilder(const RowMatrix& x, std::span<const int> y, std::span<const double> w, const CartParams& p,
                Rng* rng)
        : x_(x), y_(y), w_(w), p_(p), rng_(rng), d_(static_cast<int>(x.cols())) {
        features_.resize(static_cast<std::size_t>(d_));
        std::iota(features_.begin(), features_.end(), 0);
        use_subset_ = p.max_features > 0 && p.max_features < d_;
        if (use_subset_ && rng == nullptr) throw std::invalid_argument("feature subsampling needs an rng");
    }

    ClassificationTree build() {
        std::vector<RowIndex> rows;
        for (Eigen::Index r = 0; r < x_.rows(); ++r) {
            if (w_[static_cast<std::size_t>(r)] > 0.0) rows.push_back(static_cast<RowIndex>(r));
        }
        if (rows.empty()) throw DataError("tree needs at least one row with positive weight");
        grow(std::move(rows), 0);
        return std::move(tree_);
    }

private:
    int grow(std::vector<RowIndex> rows, int depth) {
        std::array<double, kNumClasses> counts{};
        for (auto r : rows) counts[static_cast<std::size_t>(y_[r])] += w_[r];
        const double total = counts[0] + counts[1] + counts[2];
        const int id = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        for (int c = 0; c < kNumClasses; ++c) {
            tree_.nodes.back().proportions[static_cast<std::size_t>(c)] = counts[static_cast<std::size_t>(c)] / total;
        }
        const int present = static_cast<int>(std::count_if(counts.begin(), counts.end(), [](double v) { return v > 0.0; }));
        if (depth >= p_.max_depth || present <= 1 || static_cast<int>(rows.size()) < p_.min_samples_split) {
            return id;
        }

        const double parent = (counts[0] * counts[0] + counts[1] * counts[1] + counts[2] * counts[2]) / total;
        int best_feature = -1;
        double best_threshold = 0.0;
        double best_score = parent + 1e-12 * total;
        std::vector<RowIndex> sorted = rows;
        for (int j : candidate_features()) {
            sort_rows_by(x_, j, sorted);
            std::array<double, kNumClasses> left{};
            double wl = 0.0;
            for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
                const RowIndex r = sorted[i];
                left[static_cast<std::size_t>(y_[r])] += w_[r];
                wl += w_[r];
                const double a = x_(static_cast<Eigen::Index>(r), j);
                const double b = x_(static_cast<Eigen::Index>(sorted[i + 1]), j);
                if (!(a < b)) continue;
                const double wr = total - wl;
                if (!(wr > 0.0)) continue;
                double sl = 0.0, sr = 0.0;
                for (std::size_t c = 0; c < kNumClasses; ++c) {
                    const double rc = counts[c] - left[c];
                    sl += left[c] * left[c];
                    sr += rc * rc;
                }
                const double score = sl / wl + sr / wr;
                if (score > best_score) {
                    best_score = score;
                    best_feature = j;
                    best_threshold = midpoint(a, b);
                }
            }
        }
        if (best_feature < 0) return id;

        std::vector<RowIndex> left_rows, right_rows;
        for (auto r : rows) {
            (x_(static_cast<Eigen::Index>(r), best_feature) < best_threshold ? left_rows : right_rows).push_back(r);
        }
        rows.clear();
        rows.shrink_to_fit();
        sorted.clear();
        sorted.shrink_to_fit();
        const int l = grow(std::move(left_rows), depth + 1);
        const int r = grow(std::move(right_rows), depth + 1);
        auto& node = tree_.nodes[static_cast<std::size_t>(id)];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = l;
        node.right = r;
        return id;
    }

    std::vector<int> candidate_features() {
        if (!use_subset_) return features_;
        std::vector<int> pool = features_;
        for (int i = 0; i < p_.max_features; ++i) {
            std::uniform_int_distribution<int> pick(i, d_ - 1);
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(*rng_))]);
        }
        pool.resize(static_cast<std::size_t>(p_.max_features));
        std::sort(pool.begin(), pool.end());
        return pool;
    }

    const RowMatrix& x_;
    std::span<const int> y_;
    std::span<const double> w_;
    CartParams p_;
    Rng* rng_;
    int d_;
    bool use_subset_ = false;
    std::vector<int> features_;
    ClassificationTree tree_;
};

Stump stump_from_sorted(const RowMatrix& x, const std::vector<std::vector<RowIndex>>& sorted,
                        std::span<const int> y, std::span<const double> w) {
    std::array<double, kNumClasses> totals{};
    for (std::size_t r = 0; r < y.size(); ++r) totals[static_cast<std::size_t>(y[r])] += w[r];
    const double total = totals[0] + totals[1] + totals[2];

    Stump best;
    best.left_class = best.right_class = argmax3(totals.data());
    best.weighted_error = total - totals[static_cast<std::size_t>(best.left_class)];
    for (int j = 0; j < static_cast<int>(sorted.size()); ++j) {
        const auto& order = sorted[static_cast<std::size_t>(j)];
        std::array<double, kNumClasses> left{};
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            const RowIndex r = order[i];
            left[static_cast<std::size_t>(y[r])] += w[r];
            const double a = x(static_cast<Eigen::Index>(r), j);
            const double b = x(static_cast<Eigen::Index>(order[i + 1]), j);
            if (!(a < b)) continue;
            std::array<double, kNumClasses> right{};
            for (std::size_t c = 0; c < kNumClasses; ++c) right[c] = totals[c] - left[c];
            const int lc = argmax3(left.data());
            const int rc = argmax3(right.data());
            const double err = (left[0] + left[1] + left[2] - left[static_cast<std::size_t>(lc)]) +
                               (right[0] + right[1] + right[2] - right[static_cast<std::size_t>(rc)]);
            if (err < best.weighted_error) {
                best = Stump{j, midpoint(a, b), lc, rc, err};
            }
        }
    }
    return best;
}

std::vector<std::vector<RowIndex>> presort(const RowMatrix& x) {
    std::vector<RowIndex> all(static_cast<std::size_t>(x.rows()));
    std::iota(all.begin(), all.end(), RowIndex{0});
    std::vector<std::vector<RowIndex>> out;
    for (int j = 0; j < static_cast<int>(x.cols()); ++j) {
        out.push_back(all);
        sort_rows_by(x, j, out.back());
    }
    return out;
}

AdaBoostModel fit_adaboost(const RowMatrix& x, std::span<const int> y, int rounds) {
    const auto sorted = presort(x);
    const std::size_t n = y.size();
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    AdaBoostModel m;
    const double k = kNumClasses;
    for (int round = 0; round < rounds; ++round) {
        const Stump s = stump_from_sorted(x, sorted, y, w);
        const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
        const double err = s.weighted_error / wsum;
        if (err <= 0.0) {
            m.stumps.push_back(s);
            m.alphas.push_back(1.0);
            break;
        }
        if (err >= 1.0 - 1.0 / k) {
            if (m.stumps.empty()) {
                m.stumps.push_back(s);
                m.alphas.push_back(1.0);
            }
            break;
        }
        const double alpha = std::log((1.0 - err) / err) + std::log(k - 1.0);
        m.stumps.push_back(s);
        m.alphas.push_back(alpha);
        const double boost = std::exp(alpha);
        double norm = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            if (s.predict(x.row(static_cast<Eigen::Index>(r)).data()) != y[r]) w[r] *= boost;
            norm += w[r];
        }
        for (auto& v : w) v /= norm;
    }
    return m;
}

NaiveBayesModel fit_naive_bayes(const RowMatrix& x, std::span<const int> y, double smoothing) {
    const auto d = x.cols();
    NaiveBayesModel m;
    m.means = RowMatrix::Zero(kNumClasses, d);
    m.variances = RowMatrix::Zero(kNumClasses, d);
    std::array<double, kNumClasses> counts{};
    for (std::size_t r = 0; r < y.size(); ++r) {
        counts[static_cast<std::size_t>(y[r])] += 1.0;
        m.means.row(y[r]) += x.row(static_cast<Eigen::Index>(r));
    }
    for (int c = 0; c < kNumClasses; ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0.0) m.means.row(c) /= counts[static_cast<std::size_t>(c)];
    }
    for (std::size_t r = 0; r < y.size(); ++r) {
        m.variances.row(y[r]) += (x.row(static_cast<Eigen::Index>(r)) - m.means.row(y[r])).array().square().matrix();
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const double max_var = d > 0 ? (x.rowwise() - mean).array().square().colwise().mean().maxCoeff() : 0.0;
    const double eps = smoothing * (max_var > 0.0 ? max_var : 1.0);
    for (int c = 0; c < kNumClasses; ++c) {
        const double nc = counts[static_cast<std::size_t>(c)];
        m.present[static_cast<std::size_t>(c)] = nc > 0.0;
        if (nc > 0.0) m.variances.row(c) /= nc;
        m.variances.row(c).array() += eps;
        m.log_prior[static_cast<std::size_t>(c)] =
            nc > 0.0 ? std::log(nc / static_cast<double>(y.size())) : -std::numeric_limits<double>::infinity();
    }
    return m;
}

RowMatrix softmax_rows(RowMatrix logits) {
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        logits.row(r) = (logits.row(r).array() - mx).exp();
        logits.row(r) /= logits.row(r).sum();
    }
    return logits;
}

RowMatrix naive_bayes_scores(const NaiveBayesModel& m, const RowMatrix& x) {
    RowMatrix logp(x.rows(), kNumClasses);
    const double log2pi = std::log(2.0 * std::numbers::pi);
    for (int c = 0; c < kNumClasses; ++c) {
        if (!m.present[static_cast<std::size_t>(c)]) {
            logp.col(c).setConstant(-std::numeric_limits<double>::infinity());
            continue;
        }
        const double norm = -0.5 * (m.variances.row(c).array().log() + log2pi).sum();
        const Eigen::RowVectorXd inv = m.variances.row(c).cwiseInverse();
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double quad = ((x.row(r) - m.means.row(c)).array().square() * inv.array()).sum();
            logp(r, c) = m.log_prior[static_cast<std::size_t>(c)] + norm - 0.5 * quad;
        }
    }
    return softmax_rows(std::move(logp));
}

RowMatrix augment(const RowMatrix& x) {
    RowMatrix a(x.rows(), x.cols() + 1);
    a.leftCols(x.cols()) = x;
    a.col(x.cols()).setOnes();
    return a;
}

double logistic_loss(const RowMatrix& xa, const RowMatrix& onehot, const RowMatrix& w, double l2,
                     RowMatrix* probs) {
    const RowMatrix p = softmax_rows(xa * w);
    double loss = 0.0;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        for (int c = 0; c < kNumClasses; ++c) {
            if (onehot(r, c) > 0.0) loss -= std::log(std::max(p(r, c), 1e-300));
        }
    }
    loss /= static_cast<double>(p.rows());
    loss += 0.5 * l2 * w.topRows(w.rows() - 1).squaredNorm();
    if (probs) *probs = p;
    return loss;
}

LogisticModel fit_logistic(const RowMatrix& x, std::span<const int> y, const BaselineConfig& cfg) {
    const RowMatrix xa = augment(x);
    RowMatrix onehot = RowMatrix::Zero(xa.rows(), kNumClasses);
    for (std::size_t r = 0; r < y.size(); ++r) onehot(static_cast<Eigen::Index>(r), y[r]) = 1.0;

    LogisticModel m;
    m.weights = RowMatrix::Zero(xa.cols(), kNumClasses);
    RowMatrix p;
    double loss = logistic_loss(xa, onehot, m.weights, cfg.lr_l2, &p);
    double step = 1.0;
    const double n = static_cast<double>(xa.rows());
    for (int it = 0; it < cfg.lr_max_iter; ++it) {
        RowMatrix grad = xa.transpose() * (p - onehot) / n;
        grad.topRows(grad.rows() - 1) += cfg.lr_l2 * m.weights.topRows(m.weights.rows() - 1);
        if (grad.cwiseAbs().maxCoeff() < cfg.lr_tolerance) {
            m.converged = true;
            break;
        }
        const double gnorm2 = grad.squaredNorm();
        step = std::min(step * 2.0, 1e6);
        RowMatrix candidate;
        RowMatrix cand_p;
        double cand_loss = 0.0;
        for (;;) {
            candidate = m.weights - step * grad;
            cand_loss = logistic_loss(xa, onehot, candidate, cfg.lr_l2, &cand_p);
            if (cand_loss <= loss - 0.5 * step * gnorm2 || step < 1e-12) break;
            step *= 0.5;
        }
        m.iterations = it + 1;
        if (!(cand_loss < loss)) {
            m.converged = true;
            break;
        }
        m.weights = std::move(candidate);
        p = std::move(cand_p);
        loss = cand_loss;
    }
    m.final_loss = loss;
    return m;
}

nn::CnnModel fit_mlp(const FeatureTable& train, const FeatureTable& val, const ModelSuite& suite) {
    const auto& b = suite.baselines;
    nn::CnnConfig cfg;
    cfg.input_length = static_cast<int>(train.n_features());
    cfg.conv_filters.clear();
    cfg.dense_units = b.mlp_dense_units;
    cfg.epochs = b.mlp_epochs;
    cfg.batch_size = b.mlp_batch_size;
    cfg.learning_rate = b.mlp_learning_rate;
    cfg.optimizer = b.mlp_optimizer;
    cfg.activation = suite.cnn.activation;
    cfg.matmul = suite.cnn.matmul;
    nn::CnnModel model = nn::build_cnn(cfg, derive_seed(suite.seed, {kMlpInit}));
    nn::train_cnn(model, train, val, derive_seed(suite.seed, {kMlpShuffle}));
    return model;
}

void require_classes(const std::vector<int>& y, Method m) {
    if (distinct_classes(y) < 2) {
        throw DataError(std::string(method_name(m)) + " needs at least two classes in the training set");
    }
}

ScoredPrediction finish(RowMatrix scores) {
    ScoredPrediction p;
    p.labels = gbt::argmax_rows(scores);
    p.scores = std::move(scores);
    return p;
}

}  // namespace

std::string_view method_name(Method m) { return kNames[static_cast<std::size_t>(m)]; }
std::string_view method_label(Method m) { return kLabels[static_cast<std::size_t>(m)]; }

Method parse_method(std::string_view name) {
    for (auto m : kAllMethods) {
        if (method_name(m) == name) return m;
    }
    throw ConfigError("unknown method '" + std::string(name) + "'");
}

void BaselineConfig::validate() const {
    if (tree_max_depth < 1) throw ConfigError("baselines.tree_max_depth must be >= 1");
    if (tree_min_samples_split < 2) throw ConfigError("baselines.tree_min_samples_split must be >= 2");
    if (forest_trees < 1) throw ConfigError("baselines.forest_trees must be >= 1");
    if (forest_max_features < 0) throw ConfigError("baselines.forest_max_features must be >= 0");
    if (adaboost_rounds < 1) throw ConfigError("baselines.adaboost_rounds must be >= 1");
    if (!(nb_var_smoothing >= 0.0)) throw ConfigError("baselines.nb_var_smoothing must be >= 0");
    if (!(lr_tolerance > 0.0)) throw ConfigError("baselines.lr_tolerance must be positive");
    if (lr_max_iter < 1) throw ConfigError("baselines.lr_max_iter must be >= 1");
    if (!(lr_l2 >= 0.0)) throw ConfigError("baselines.lr_l2 must be >= 0");
    for (int u : mlp_dense_units) {
        if (u < 1) throw ConfigError("baselines.mlp_dense_units must be positive");
    }
    if (mlp_epochs < 0) throw ConfigError("baselines.mlp_epochs must be >= 0");
    if (mlp_batch_size < 1) throw ConfigError("baselines.mlp_batch_size must be >= 1");
    if (!(mlp_learning_rate > 0.0)) throw ConfigError("baselines.mlp_learning_rate must be positive");
}

const CartNode& ClassificationTree::leaf_for(const double* row) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
        i = static_cast<std::size_t>(row[nodes[i].feature] < nodes[i].threshold ? nodes[i].left : nodes[i].right);
    }
    return nodes[i];
}

int ClassificationTree::depth() const {
    std::vector<int> d(nodes.size(), 0);
    int best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].is_leaf()) continue;
        d[static_cast<std::size_t>(nodes[i].left)] = d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
        best = std::max(best, d[i] + 1);
    }
    return best;
}

ClassificationTree fit_cart(const RowMatrix& x, std::span<const int> y, std::span<const double> w,
                            const CartParams& params, Rng* rng) {
    if (static_cast<std::size_t>(x.rows()) != y.size() || y.size() != w.size()) {
        throw std::invalid_argument("x, y and w row counts differ");
    }
    return CartBuilder(x, y, w, params, rng).build();
}

Stump best_stump(const RowMatrix& x, std::span<const int> y, std::span<const double> w) {
    if (static_cast<std::size_t>(x.rows()) != y.size() || y.size() != w.size()) {
        throw std::invalid_argument("x, y and w row counts differ");
    }
    return stump_from_sorted(x, presort(x), y, w);
}

nn::CnnModel train_suite_cnn(const FeatureTable& train, const FeatureTable& val, const ModelSuite& suite,
                             nn::TrainHistory* history) {
    nn::CnnConfig cfg = suite.cnn;
    cfg.input_length = static_cast<int>(train.n_features());
    nn::CnnModel model = nn::build_cnn(cfg, derive_seed(suite.seed, {kCnnInit}));
    auto h = nn::train_cnn(model, train, val, derive_seed(suite.seed, {kCnnShuffle}));
    if (history) *history = std::move(h);
    return model;
}

FusedModel fuse(nn::CnnModel cnn, const FeatureTable& train, const ModelSuite& suite) {
    FusedModel f;
    f.tap = suite.tap;
    f.booster = gbt::fit_gbt(nn::extract_embeddings(cnn, train, suite.tap), suite.gbt);
    f.cnn = std::move(cnn);
    return f;
}

BaselineModel wrap_fused(const FeatureTable& train, FusedModel fused) {
    return BaselineModel{Method::Fused, train.feature_names, std::move(fused)};
}

BaselineModel wrap_cnn(const FeatureTable& train, nn::CnnModel cnn) {
    return BaselineModel{Method::Cnn, train.feature_names, std::move(cnn)};
}

BaselineModel fit_baseline(Method method, const FeatureTable& train, const FeatureTable& val,
                           const ModelSuite& suite) {
    train.validate();
    if (train.n_rows() == 0) throw DataError("cannot fit on an empty training table");
    suite.baselines.validate();
    const auto y = train.label_indices();
    const RowMatrix& x = train.features;
    const auto& b = suite.baselines;

    switch (method) {
        case Method::DecisionTree: {
            const std::vector<double> w(y.size(), 1.0);
            CartParams p{b.tree_max_depth, b.tree_min_samples_split, 0};
            return {method, train.feature_names, fit_cart(x, y, w, p, nullptr)};
        }
        case Method::RandomForest: {
            const int d = static_cast<int>(x.cols());
            int mf = b.forest_max_features > 0 ? b.forest_max_features
                                               : static_cast<int>(std::floor(std::sqrt(static_cast<double>(d))));
            mf = std::clamp(mf, 1, std::max(d, 1));
            Forest forest;
            std::vector<double> w(y.size());
            for (int t = 0; t < b.forest_trees; ++t) {
                Rng rng(derive_seed(suite.seed, {kForest, static_cast<std::uint64_t>(t)}));
                if (b.forest_bootstrap) {
                    std::fill(w.begin(), w.end(), 0.0);
                    std::uniform_int_distribution<std::size_t> pick(0, y.size() - 1);
                    for (std::size_t i = 0; i < y.size(); ++i) w[pick(rng)] += 1.0;
                } else {
                    std::fill(w.begin(), w.end(), 1.0);
                }
                CartParams p{b.tree_max_depth, b.tree_min_samples_split, mf};
                forest.trees.push_back(fit_cart(x, y, w, p, &rng));
            }
            return {method, train.feature_names, std::move(forest)};
        }
        case Method::AdaBoost:
            require_classes(y, method);
            return {method, train.feature_names, fit_adaboost(x, y, b.adaboost_rounds)};
        case Method::NaiveBayes:
            return {method, train.feature_names, fit_naive_bayes(x, y, b.nb_var_smoothing)};
        case Method::LogisticRegression:
            require_classes(y, method);
            return {method, train.feature_names, fit_logistic(x, y, b)};
        case Method::Mlp:
            require_classes(y, method);
            return {method, train.feature_names, fit_mlp(train, val, suite)};
        case Method::Cnn:
            require_classes(y, method);
            return wrap_cnn(train, train_suite_cnn(train, val, suite));
        case Method::GbtAlone:
            return {method, train.feature_names, gbt::fit_gbt(train, suite.gbt)};
        case Method::Fused:
            require_classes(y, method);
            return wrap_fused(train, fuse(train_suite_cnn(train, val, suite), train, suite));
    }
    throw ConfigError("unknown method");
}

ScoredPrediction predict_baseline(const BaselineModel& model, const FeatureTable& table) {
    if (table.feature_names != model.feature_names) {
        throw DataError(std::string(method_name(model.method)) + ": table has " +
                        std::to_string(table.n_features()) + " features, model expects " +
                        std::to_string(model.feature_names.size()));
    }
    const RowMatrix& x = table.features;
    const auto n = x.rows();
    return std::visit(
        [&](const auto& m) -> ScoredPrediction {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, ClassificationTree>) {
                RowMatrix s(n, kNumClasses);
                for (Eigen::Index r = 0; r < n; ++r) {
                    const auto& leaf = m.leaf_for(x.row(r).data());
                    for (int c = 0; c < kNumClasses; ++c) s(r, c) = leaf.proportions[static_cast<std::size_t>(c)];
                }
                return finish(std::move(s));
            } else if constexpr (std::is_same_v<M, Forest>) {
                RowMatrix s = RowMatrix::Zero(n, kNumClasses);
                for (const auto& tree : m.trees) {
                    for (Eigen::Index r = 0; r < n; ++r) {
                        s(r, argmax3(tree.leaf_for(x.row(r).data()).proportions.data())) += 1.0;
                    }
                }
                s /= static_cast<double>(m.trees.size());
                return finish(std::move(s));
            } else if constexpr (std::is_same_v<M, AdaBoostModel>) {
                RowMatrix s = RowMatrix::Zero(n, kNumClasses);
                const double total = std::accumulate(m.alphas.begin(), m.alphas.end(), 0.0);
                for (std::size_t k = 0; k < m.stumps.size(); ++k) {
                    for (Eigen::Index r = 0; r < n; ++r) s(r, m.stumps[k].predict(x.row(r).data())) += m.alphas[k];
                }
                s /= total;
                return finish(std::move(s));
            } else if constexpr (std::is_same_v<M, NaiveBayesModel>) {
                return finish(naive_bayes_scores(m, x));
            } else if constexpr (std::is_same_v<M, LogisticModel>) {
                return finish(softmax_rows(augment(x) * m.weights));
            } else if constexpr (std::is_same_v<M, nn::CnnModel>) {
                return finish(nn::predict_proba(m, table));
            } else if constexpr (std::is_same_v<M, gbt::BoostedEnsemble>) {
                auto p = gbt::predict_gbt(m, table);
                return ScoredPrediction{std::move(p.probs), std::move(p.labels)};
            } else {
                auto p = gbt::predict_gbt(m.booster, nn::extract_embeddings(m.cnn, table, m.tap));
                return ScoredPrediction{std::move(p.probs), std::move(p.labels)};
            }
        },
        model.model);
}

}  // namespace mea::baselines
