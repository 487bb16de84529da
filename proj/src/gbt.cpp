#include "mea/gbt.hpp"

#include "mea/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mea::gbt {

using json = nlohmann::json;

void GbtConfig::validate() const {
    if (n_rounds < 0) throw ConfigError("gbt.n_rounds must be >= 0");
    if (max_depth < 1) throw ConfigError("gbt.max_depth must be >= 1");
    if (!(learning_rate >= 0.0 && learning_rate <= 1.0)) {
        throw ConfigError("gbt.learning_rate must lie in [0, 1]");
    }
    if (!(lambda >= 0.0)) throw ConfigError("gbt.lambda must be >= 0");
    if (!(gamma >= 0.0)) throw ConfigError("gbt.gamma must be >= 0");
    if (!(min_child_hessian >= 0.0)) throw ConfigError("gbt.min_child_hessian must be >= 0");
}

RowMatrix softmax(const RowMatrix& logits) {
    RowMatrix p(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        p.row(r) = (logits.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

GradHess softmax_grad_hess(const RowMatrix& logits, std::span<const int> labels) {
    if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
        throw std::invalid_argument("logits rows != labels");
    }
    GradHess gh;
    const RowMatrix p = softmax(logits);
    gh.g = p;
    gh.h = (p.array() * (1.0 - p.array())).matrix();
    for (std::size_t r = 0; r < labels.size(); ++r) {
        gh.g(static_cast<Eigen::Index>(r), labels[r]) -= 1.0;
    }
    return gh;
}

double split_gain(double gl, double hl, double gr, double hr, double lambda, double gamma) {
    const double g = gl + gr;
    const double h = hl + hr;
    return 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma;
}

double leaf_weight(double g, double h, double lambda) {
    if (!(h + lambda > 0.0)) throw std::domain_error("leaf weight needs H + lambda > 0");
    return -g / (h + lambda);
}

namespace {

using RowIndex = std::uint32_t;

struct Entry {
    double v;
    RowIndex r;
};
// per feature, the node's rows ordered by (value, row)
using SortedColumns = std::vector<std::vector<Entry>>;

/// Scans one feature's entries (ascending by value) and updates `best`.
void scan_feature(int feature, std::span<const Entry> sorted, std::span<const double> g,
                  std::span<const double> h, double g_total, double h_total, const SplitParams& p,
                  std::optional<SplitCandidate>& best) {
    double gl = 0.0, hl = 0.0;
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        const RowIndex r = sorted[i].r;
        gl += g[r];
        hl += h[r];
        const double a = sorted[i].v;
        const double b = sorted[i + 1].v;
        if (!(a < b)) continue;
        const double hr = h_total - hl;
        if (hl < p.min_child_hessian || hr < p.min_child_hessian) continue;
        const double gain = split_gain(gl, hl, g_total - gl, hr, p.lambda, p.gamma);
        if (!best || gain > best->gain) {
            double thr = a + (b - a) / 2.0;
            if (!(thr > a)) thr = b;
            best = SplitCandidate{feature, thr, gain};
        }
    }
}

SortedColumns presort(const RowMatrix& x, std::span<const RowIndex> rows) {
    SortedColumns out(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        auto& col = out[static_cast<std::size_t>(j)];
        col.reserve(rows.size());
        for (auto r : rows) col.push_back({x(static_cast<Eigen::Index>(r), j), r});
        std::sort(col.begin(), col.end(), [](const Entry& a, const Entry& b) {
            return a.v < b.v || (a.v == b.v && a.r < b.r);
        });
    }
    return out;
}

std::optional<SplitCandidate> best_split_sorted(const SortedColumns& sorted, std::span<const double> g,
                                                std::span<const double> h, double g_total, double h_total,
                                                const SplitParams& p) {
    std::optional<SplitCandidate> best;
    for (int j = 0; j < static_cast<int>(sorted.size()); ++j) {
        scan_feature(j, sorted[static_cast<std::size_t>(j)], g, h, g_total, h_total, p, best);
    }
    if (best && !(best->gain > 0.0)) best.reset();
    return best;
}

}  // namespace

std::optional<SplitCandidate> find_best_split(const RowMatrix& x, std::span<const std::size_t> rows,
                                              std::span<const double> g, std::span<const double> h,
                                              const SplitParams& params) {
    if (rows.size() < 2) return std::nullopt;
    std::vector<RowIndex> base(rows.begin(), rows.end());
    double g_total = 0.0, h_total = 0.0;
    for (auto r : rows) {
        g_total += g[r];
        h_total += h[r];
    }
    return best_split_sorted(presort(x, base), g, h, g_total, h_total, params);
}

double RegressionTree::predict(const double* row) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
        const auto& n = nodes[static_cast<std::size_t>(i)];
        i = row[n.feature] < n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
}

int RegressionTree::depth() const {
    std::vector<int> d(nodes.size(), 0);
    int best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto& n = nodes[i];
        if (n.is_leaf()) continue;
        d[static_cast<std::size_t>(n.left)] = d[i] + 1;
        d[static_cast<std::size_t>(n.right)] = d[i] + 1;
        best = std::max(best, d[i] + 1);
    }
    return best;
}

std::size_t RegressionTree::leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

namespace {

class TreeBuilder {
public:
    TreeBuilder(const RowMatrix& x, std::span<const double> g, std::span<const double> h, const GbtConfig& cfg)
        : x_(x), g_(g), h_(h), cfg_(cfg), go_left_(static_cast<std::size_t>(x.rows()), 0) {}

    RegressionTree build(SortedColumns sorted) {
        std::vector<RowIndex> all(static_cast<std::size_t>(x_.rows()));
        std::iota(all.begin(), all.end(), RowIndex{0});
        grow(std::move(sorted), all, 0);
        return std::move(tree_);
    }

private:
    int grow(SortedColumns sorted, const std::vector<RowIndex>& rows, int depth) {
        double g_total = 0.0, h_total = 0.0;
        for (auto r : rows) {
            g_total += g_[r];
            h_total += h_[r];
        }
        const int id = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();

        std::optional<SplitCandidate> split;
        if (depth < cfg_.max_depth && rows.size() >= 2 && !sorted.empty()) {
            const SplitParams p{cfg_.lambda, cfg_.gamma, cfg_.min_child_hessian};
            split = best_split_sorted(sorted, g_, h_, g_total, h_total, p);
        }
        if (!split) {
            tree_.nodes[static_cast<std::size_t>(id)].value =
                cfg_.learning_rate * leaf_weight(g_total, h_total, cfg_.lambda);
            return id;
        }

        std::vector<RowIndex> left_rows, right_rows;
        for (auto r : rows) {
            const bool left = x_(static_cast<Eigen::Index>(r), split->feature) < split->threshold;
            go_left_[r] = left ? 1 : 0;
            (left ? left_rows : right_rows).push_back(r);
        }
        SortedColumns left_sorted(sorted.size()), right_sorted(sorted.size());
        for (std::size_t j = 0; j < sorted.size(); ++j) {
            left_sorted[j].reserve(left_rows.size());
            right_sorted[j].reserve(right_rows.size());
            for (const auto& e : sorted[j]) (go_left_[e.r] ? left_sorted[j] : right_sorted[j]).push_back(e);
        }
        sorted.clear();
        sorted.shrink_to_fit();

        const int left = grow(std::move(left_sorted), left_rows, depth + 1);
        const int right = grow(std::move(right_sorted), right_rows, depth + 1);
        auto& node = tree_.nodes[static_cast<std::size_t>(id)];
        node.feature = split->feature;
        node.threshold = split->threshold;
        node.left = left;
        node.right = right;
        return id;
    }

    const RowMatrix& x_;
    std::span<const double> g_, h_;
    const GbtConfig& cfg_;
    std::vector<char> go_left_;
    RegressionTree tree_;
};

}  // namespace

RegressionTree build_tree(const RowMatrix& x, std::span<const double> g, std::span<const double> h,
                          const GbtConfig& cfg) {
    if (static_cast<std::size_t>(x.rows()) != g.size() || g.size() != h.size()) {
        throw std::invalid_argument("x, g and h row counts differ");
    }
    if (x.rows() == 0) throw std::invalid_argument("cannot build a tree on zero rows");
    std::vector<RowIndex> all(static_cast<std::size_t>(x.rows()));
    std::iota(all.begin(), all.end(), RowIndex{0});
    return TreeBuilder(x, g, h, cfg).build(presort(x, all));
}

double mean_logloss(const RowMatrix& probs, std::span<const int> labels) {
    if (labels.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        s -= std::log(std::max(probs(static_cast<Eigen::Index>(r), labels[r]), 1e-300));
    }
    return s / static_cast<double>(labels.size());
}

std::vector<int> argmax_rows(const RowMatrix& m) {
    std::vector<int> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        int best = 0;
        for (Eigen::Index c = 1; c < m.cols(); ++c) {
            if (m(r, c) > m(r, best)) best = static_cast<int>(c);
        }
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

BoostedEnsemble fit_gbt(const FeatureTable& train, const GbtConfig& cfg, FitTrace* trace) {
    cfg.validate();
    train.validate();
    if (train.n_rows() == 0) throw DataError("cannot fit booster on an empty table");

    BoostedEnsemble ens;
    ens.config = cfg;
    ens.n_features = static_cast<int>(train.n_features());
    const auto labels = train.label_indices();
    if (cfg.base_score == BaseScore::Prior) {
        std::array<double, kNumClasses> counts{};
        for (int y : labels) counts[static_cast<std::size_t>(y)] += 1.0;
        double mean_log = 0.0;
        for (int c = 0; c < kNumClasses; ++c) {
            // smoothed so absent classes keep a finite logit
            ens.base_score[static_cast<std::size_t>(c)] =
                std::log((counts[static_cast<std::size_t>(c)] + 1.0) / (static_cast<double>(labels.size()) + kNumClasses));
            mean_log += ens.base_score[static_cast<std::size_t>(c)] / kNumClasses;
        }
        for (auto& b : ens.base_score) b -= mean_log;
    }

    const auto n = static_cast<Eigen::Index>(train.n_rows());
    RowMatrix logits(n, kNumClasses);
    for (int c = 0; c < kNumClasses; ++c) logits.col(c).setConstant(ens.base_score[static_cast<std::size_t>(c)]);
    if (trace) trace->train_logloss.push_back(mean_logloss(softmax(logits), labels));

    std::vector<double> g(static_cast<std::size_t>(n)), h(static_cast<std::size_t>(n));
    std::vector<RowIndex> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), RowIndex{0});
    const SortedColumns order = presort(train.features, all);  // value order never changes across trees
    for (int round = 0; round < cfg.n_rounds; ++round) {
        const GradHess gh = softmax_grad_hess(logits, labels);
        std::array<RegressionTree, kNumClasses> trees;
        for (int c = 0; c < kNumClasses; ++c) {
            for (Eigen::Index r = 0; r < n; ++r) {
                g[static_cast<std::size_t>(r)] = gh.g(r, c);
                h[static_cast<std::size_t>(r)] = gh.h(r, c);
            }
            trees[static_cast<std::size_t>(c)] = TreeBuilder(train.features, g, h, cfg).build(order);
        }
        for (Eigen::Index r = 0; r < n; ++r) {
            const double* row = train.features.row(r).data();
            for (int c = 0; c < kNumClasses; ++c) logits(r, c) += trees[static_cast<std::size_t>(c)].predict(row);
        }
        ens.rounds.push_back(std::move(trees));
        if (trace) trace->train_logloss.push_back(mean_logloss(softmax(logits), labels));
    }
    return ens;
}

RowMatrix predict_logits(const BoostedEnsemble& ens, const RowMatrix& x) {
    if (x.cols() != ens.n_features) {
        throw DataError("booster expects " + std::to_string(ens.n_features) + " features, got " +
                        std::to_string(x.cols()));
    }
    RowMatrix logits(x.rows(), kNumClasses);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double* row = x.row(r).data();
        for (int c = 0; c < kNumClasses; ++c) {
            double s = ens.base_score[static_cast<std::size_t>(c)];
            for (const auto& round : ens.rounds) s += round[static_cast<std::size_t>(c)].predict(row);
            logits(r, c) = s;
        }
    }
    return logits;
}

Prediction predict_gbt(const BoostedEnsemble& ens, const FeatureTable& table) {
    Prediction p;
    p.probs = softmax(predict_logits(ens, table.features));
    p.labels = argmax_rows(p.probs);
    return p;
}

std::string ensemble_to_json(const BoostedEnsemble& ens) {
    json j;
    j["format"] = "mea.gbt";
    j["version"] = 1;
    j["config"] = gbt_config_to_json(ens.config);
    j["n_features"] = ens.n_features;
    j["base_score"] = ens.base_score;
    json rounds = json::array();
    for (const auto& round : ens.rounds) {
        json per_class = json::array();
        for (const auto& tree : round) {
            json nodes = json::array();
            for (const auto& n : tree.nodes) {
                if (n.is_leaf()) {
                    nodes.push_back({{"leaf", n.value}});
                } else {
                    nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold},
                                     {"left", n.left}, {"right", n.right}});
                }
            }
            per_class.push_back(nodes);
        }
        rounds.push_back(per_class);
    }
    j["rounds"] = rounds;
    return j.dump();
}

BoostedEnsemble ensemble_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        if (j.at("format") != "mea.gbt" || j.at("version") != 1) throw DataError("not a v1 booster file");
        BoostedEnsemble ens;
        ens.config = gbt_config_from_json(j.at("config"));
        ens.n_features = j.at("n_features").get<int>();
        ens.base_score = j.at("base_score").get<std::array<double, kNumClasses>>();
        for (const auto& round : j.at("rounds")) {
            if (round.size() != kNumClasses) throw DataError("round must hold one tree per class");
            std::array<RegressionTree, kNumClasses> trees;
            for (int c = 0; c < kNumClasses; ++c) {
                for (const auto& n : round[static_cast<std::size_t>(c)]) {
                    TreeNode node;
                    if (n.contains("leaf")) {
                        node.value = n.at("leaf").get<double>();
                    } else {
                        node.feature = n.at("feature").get<int>();
                        node.threshold = n.at("threshold").get<double>();
                        node.left = n.at("left").get<int>();
                        node.right = n.at("right").get<int>();
                    }
                    trees[static_cast<std::size_t>(c)].nodes.push_back(node);
                }
                const auto& nodes = trees[static_cast<std::size_t>(c)].nodes;
                for (const auto& node : nodes) {
                    if (node.is_leaf()) continue;
                    const auto size = static_cast<int>(nodes.size());
                    if (node.left <= 0 || node.left >= size || node.right <= 0 || node.right >= size ||
                        node.feature >= ens.n_features) {
                        throw DataError("tree node references out of range");
                    }
                }
                if (nodes.empty()) throw DataError("empty tree");
            }
            ens.rounds.push_back(std::move(trees));
        }
        return ens;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed booster JSON: ") + e.what());
    }
}

void save_ensemble(const BoostedEnsemble& ens, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << ensemble_to_json(ens) << '\n';
}

BoostedEnsemble load_ensemble(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ensemble_from_json(ss.str());
}

}  // namespace mea::gbt
