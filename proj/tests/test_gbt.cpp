#include "mea/gbt.hpp"
#include "mea/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

using namespace mea;
using namespace mea::gbt;

namespace {

FeatureTable make(const RowMatrix& x, const std::vector<int>& y) {
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < x.cols(); ++j) names.push_back("e" + std::to_string(j));
    std::vector<ClassLabel> labels;
    for (int v : y) labels.push_back(class_from_index(v));
    return make_table(names, x, labels, DpiTag(0));
}

double gain_formula(double gl, double hl, double gr, double hr, double lambda, double gamma) {
    const auto sq = [](double v) { return v * v; };
    return 0.5 * (sq(gl) / (hl + lambda) + sq(gr) / (hr + lambda) - sq(gl + gr) / (hl + hr + lambda)) - gamma;
}

struct Brute {
    double best_gain = -1e300;
    double second_gain = -1e300;
    int feature = -1;
    double threshold = 0;
};

// every (feature, gap between distinct sorted values), sums recomputed from scratch
Brute brute_split(const RowMatrix& x, const std::vector<std::size_t>& rows, const std::vector<double>& g,
                  const std::vector<double>& h, const SplitParams& p) {
    Brute b;
    for (int j = 0; j < x.cols(); ++j) {
        std::set<double> vals;
        for (auto r : rows) vals.insert(x(static_cast<Eigen::Index>(r), j));
        for (auto it = vals.begin(); std::next(it) != vals.end(); ++it) {
            const double thr = (*it + *std::next(it)) / 2.0;
            double gl = 0, hl = 0, gr = 0, hr = 0;
            for (auto r : rows) {
                if (x(static_cast<Eigen::Index>(r), j) < thr) {
                    gl += g[r];
                    hl += h[r];
                } else {
                    gr += g[r];
                    hr += h[r];
                }
            }
            if (hl < p.min_child_hessian || hr < p.min_child_hessian) continue;
            const double gain = gain_formula(gl, hl, gr, hr, p.lambda, p.gamma);
            if (gain > b.best_gain) {
                b.second_gain = b.best_gain;
                b.best_gain = gain;
                b.feature = j;
                b.threshold = thr;
            } else if (gain > b.second_gain) {
                b.second_gain = gain;
            }
        }
    }
    return b;
}

std::pair<RowMatrix, std::vector<int>> separable_toy(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    RowMatrix x(n, 2);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int c = i % 3;
        x(i, 0) = u(rng) + 3.0 * c;
        x(i, 1) = u(rng);
        y[static_cast<std::size_t>(i)] = c;
    }
    return {x, y};
}

}  // namespace

TEST_CASE("softmax derivatives") {
    RowMatrix logits = RowMatrix::Zero(1, 3);
    const auto gh = softmax_grad_hess(logits, std::vector<int>{0});
    CHECK(gh.g(0, 0) == doctest::Approx(-2.0 / 3.0).epsilon(1e-15));
    CHECK(gh.g(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(gh.g(0, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    for (int c = 0; c < 3; ++c) CHECK(gh.h(0, c) == doctest::Approx(2.0 / 9.0).epsilon(1e-15));

    Rng rng(4);
    std::normal_distribution<double> n(0, 5);
    RowMatrix many(200, 3);
    std::vector<int> y(200);
    for (int i = 0; i < 200; ++i) {
        for (int c = 0; c < 3; ++c) many(i, c) = n(rng);
        y[static_cast<std::size_t>(i)] = i % 3;
    }
    const auto all = softmax_grad_hess(many, y);
    for (int i = 0; i < 200; ++i) {
        CHECK(std::abs(all.g.row(i).sum()) < 1e-12);
        CHECK(all.h.row(i).minCoeff() >= 0.0);
    }
    // confident and correct: gradient vanishes
    RowMatrix sure(1, 3);
    sure << 800, 0, 0;
    CHECK(softmax_grad_hess(sure, std::vector<int>{0}).g.cwiseAbs().maxCoeff() < 1e-300);
}

TEST_CASE("gain and leaf arithmetic") {
    CHECK(split_gain(-2, 4, 2, 4, 1, 0) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(split_gain(-2, 4, 2, 4, 1, 0.5) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(leaf_weight(-2, 4, 1) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(leaf_weight(0, 4, 1) == 0.0);
    double prev = 1e9;
    for (double l : {0.0, 1.0, 10.0, 1e3, 1e6}) {
        const double w = std::abs(leaf_weight(-2, 4, l));
        CHECK(w < prev);
        prev = w;
    }
    CHECK_THROWS_AS(leaf_weight(1, 0, 0), std::domain_error);
    CHECK_THROWS_AS(leaf_weight(1, -2, 1), std::domain_error);
}

TEST_CASE("split on a single separating feature lands on the midpoint") {
    RowMatrix x(6, 1);
    x << 1, 2, 3, 10, 11, 12;
    const std::vector<double> g{-1, -1, -1, 1, 1, 1}, h(6, 1.0);
    std::vector<std::size_t> rows(6);
    std::iota(rows.begin(), rows.end(), 0);
    const auto s = find_best_split(x, rows, g, h, {});
    REQUIRE(s.has_value());
    CHECK(s->feature == 0);
    CHECK(s->threshold == 6.5);
    CHECK(s->gain == doctest::Approx(gain_formula(-3, 3, 3, 3, 1, 0)));
}

TEST_CASE("homogeneous node has no split") {
    RowMatrix x(5, 2);
    x << 1, 5, 2, 4, 3, 3, 4, 2, 5, 1;
    const std::vector<double> g(5, 0.7), h(5, 0.3);
    std::vector<std::size_t> rows{0, 1, 2, 3, 4};
    CHECK_FALSE(find_best_split(x, rows, g, h, {}).has_value());
    CHECK_FALSE(find_best_split(x, std::vector<std::size_t>{2}, g, h, {}).has_value());
}

TEST_CASE("property: exact greedy split equals brute force") {
    Rng rng(31337);
    std::uniform_int_distribution<int> nr(2, 64), nf(1, 8), coarse(0, 5);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> u(0.01, 1.0);
    int compared = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = nr(rng), d = nf(rng);
        RowMatrix x(n, d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) x(i, j) = trial % 3 == 0 ? coarse(rng) : nd(rng);  // some with duplicates
        std::vector<double> g(static_cast<std::size_t>(n)), h(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            g[static_cast<std::size_t>(i)] = nd(rng);
            h[static_cast<std::size_t>(i)] = u(rng);
        }
        std::vector<std::size_t> rows;
        for (int i = 0; i < n; ++i)
            if (trial % 4 != 1 || i % 3 != 0) rows.push_back(static_cast<std::size_t>(i));
        SplitParams p;
        p.lambda = trial % 5 == 0 ? 0.0 : 1.0;
        p.gamma = trial % 7 == 0 ? 0.2 : 0.0;
        p.min_child_hessian = trial % 2 == 0 ? 0.0 : 1.0;
        const auto got = find_best_split(x, rows, g, h, p);
        const auto want = brute_split(x, rows, g, h, p);
        if (rows.size() < 2 || !(want.best_gain > 0.0)) {
            CHECK_FALSE(got.has_value());
            continue;
        }
        REQUIRE(got.has_value());
        CHECK(std::abs(got->gain - want.best_gain) <= 1e-10);
        if (want.best_gain - want.second_gain > 1e-9) {
            CHECK(got->feature == want.feature);
            CHECK(got->threshold == doctest::Approx(want.threshold).epsilon(1e-12));
            ++compared;
        }
    }
    CHECK(compared > 150);
}

TEST_CASE("separable toy is fit perfectly in 10 rounds") {
    const auto [x, y] = separable_toy(90, 2);
    GbtConfig cfg;
    cfg.n_rounds = 10;
    const auto ens = fit_gbt(make(x, y), cfg);
    CHECK(ens.tree_count() == 30);
    const auto pred = predict_gbt(ens, make(x, y));
    CHECK(pred.labels == y);
    for (Eigen::Index i = 0; i < pred.probs.rows(); ++i) CHECK(std::abs(pred.probs.row(i).sum() - 1.0) <= 1e-6);
    for (const auto& round : ens.rounds)
        for (const auto& t : round) {
            CHECK(t.depth() <= cfg.max_depth);
            for (const auto& nd : t.nodes)
                if (!nd.is_leaf()) {
                    CHECK(std::isfinite(nd.threshold));
                    CHECK(nd.left >= 0);
                    CHECK(nd.right >= 0);
                }
        }
}

TEST_CASE("eta = 0 leaves the base score") {
    const auto [x, y] = separable_toy(60, 3);
    GbtConfig cfg;
    cfg.n_rounds = 5;
    cfg.learning_rate = 0.0;
    cfg.base_score = BaseScore::Prior;
    std::vector<int> skew = y;
    skew[0] = skew[1] = skew[2] = 0;
    const auto ens = fit_gbt(make(x, skew), cfg);
    const auto logits = predict_logits(ens, x);
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
        for (int c = 0; c < 3; ++c) CHECK(logits(i, c) == ens.base_score[static_cast<std::size_t>(c)]);
    CHECK(ens.base_score[0] > ens.base_score[1]);
}

TEST_CASE("zero rounds predicts uniform") {
    const auto [x, y] = separable_toy(30, 1);
    GbtConfig cfg;
    cfg.n_rounds = 0;
    const auto p = predict_gbt(fit_gbt(make(x, y), cfg), make(x, y));
    for (Eigen::Index i = 0; i < p.probs.size(); ++i) CHECK(p.probs.data()[i] == doctest::Approx(1.0 / 3.0));
    for (int l : p.labels) CHECK(l == 0);
}

TEST_CASE("one depth-1 round equals the brute-force stump") {
    Rng rng(8);
    std::normal_distribution<double> nd;
    RowMatrix x(40, 1);
    std::vector<int> y(40);
    for (int i = 0; i < 40; ++i) {
        y[static_cast<std::size_t>(i)] = i % 3;
        x(i, 0) = nd(rng) + y[static_cast<std::size_t>(i)];
    }
    GbtConfig cfg;
    cfg.n_rounds = 1;
    cfg.max_depth = 1;
    cfg.min_child_hessian = 0.0;
    const auto ens = fit_gbt(make(x, y), cfg);
    const auto gh = softmax_grad_hess(RowMatrix::Zero(40, 3), y);
    std::vector<std::size_t> rows(40);
    std::iota(rows.begin(), rows.end(), 0);
    for (int c = 0; c < 3; ++c) {
        std::vector<double> g(40), h(40);
        for (int i = 0; i < 40; ++i) {
            g[static_cast<std::size_t>(i)] = gh.g(i, c);
            h[static_cast<std::size_t>(i)] = gh.h(i, c);
        }
        SplitParams p;
        p.min_child_hessian = 0.0;
        const auto b = brute_split(x, rows, g, h, p);
        const auto& tree = ens.rounds[0][static_cast<std::size_t>(c)];
        REQUIRE(tree.nodes.size() == 3);
        CHECK(tree.nodes[0].threshold == doctest::Approx(b.threshold).epsilon(1e-12));
        double gl = 0, hl = 0, gr = 0, hr = 0;
        for (int i = 0; i < 40; ++i) {
            if (x(i, 0) < b.threshold) {
                gl += g[static_cast<std::size_t>(i)];
                hl += h[static_cast<std::size_t>(i)];
            } else {
                gr += g[static_cast<std::size_t>(i)];
                hr += h[static_cast<std::size_t>(i)];
            }
        }
        const auto& left = tree.nodes[static_cast<std::size_t>(tree.nodes[0].left)];
        const auto& right = tree.nodes[static_cast<std::size_t>(tree.nodes[0].right)];
        CHECK(left.value == doctest::Approx(0.3 * -gl / (hl + 1.0)).epsilon(1e-12));
        CHECK(right.value == doctest::Approx(0.3 * -gr / (hr + 1.0)).epsilon(1e-12));
    }
}

TEST_CASE("training log-loss never increases") {
    Rng rng(12);
    std::normal_distribution<double> nd;
    RowMatrix x(150, 4);
    std::vector<int> y(150);
    for (int i = 0; i < 150; ++i) {
        y[static_cast<std::size_t>(i)] = i % 3;
        for (int j = 0; j < 4; ++j) x(i, j) = nd(rng) + 0.6 * (j == y[static_cast<std::size_t>(i)]);
    }
    for (double eta : {0.05, 0.3}) {
        GbtConfig cfg;
        cfg.n_rounds = 40;
        cfg.learning_rate = eta;
        FitTrace trace;
        fit_gbt(make(x, y), cfg, &trace);
        REQUIRE(trace.train_logloss.size() == 41);
        for (std::size_t r = 1; r < trace.train_logloss.size(); ++r)
            CHECK(trace.train_logloss[r] <= trace.train_logloss[r - 1] + 1e-9);
    }
}

TEST_CASE("single-class input predicts that class") {
    RowMatrix x = RowMatrix::Random(20, 2);
    const std::vector<int> y(20, 2);
    GbtConfig cfg;
    cfg.n_rounds = 5;
    const auto p = predict_gbt(fit_gbt(make(x, y), cfg), make(x, y));
    for (int l : p.labels) CHECK(l == 2);
}

TEST_CASE("fitting is deterministic and JSON round trips") {
    const auto [x, y] = separable_toy(120, 9);
    GbtConfig cfg;
    cfg.n_rounds = 7;
    cfg.max_depth = 3;
    const auto a = fit_gbt(make(x, y), cfg), b = fit_gbt(make(x, y), cfg);
    CHECK(ensemble_to_json(a) == ensemble_to_json(b));
    const auto p = std::filesystem::temp_directory_path() / "mea_test_gbt.json";
    save_ensemble(a, p);
    const auto back = load_ensemble(p);
    CHECK(predict_logits(back, x) == predict_logits(a, x));
    CHECK(back.config.max_depth == 3);
    CHECK_THROWS(ensemble_from_json("{\"format\":\"mea.gbt\",\"version\":99}"));
    CHECK_THROWS(ensemble_from_json("[1,2"));
}

TEST_CASE("prediction errors and tie-breaking") {
    const auto [x, y] = separable_toy(30, 4);
    GbtConfig cfg;
    cfg.n_rounds = 2;
    const auto ens = fit_gbt(make(x, y), cfg);
    CHECK_THROWS_AS(predict_logits(ens, RowMatrix::Zero(3, 5)), DataError);
    RowMatrix m(2, 3);
    m << 1, 1, 0, 0, 2, 2;
    CHECK(argmax_rows(m) == std::vector<int>{0, 1});
}

TEST_CASE("config validation") {
    GbtConfig c;
    c.max_depth = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.lambda = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.learning_rate = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.gamma = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.n_rounds = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
