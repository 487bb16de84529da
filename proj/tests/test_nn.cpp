#include "mea/nn.hpp"
#include "mea/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace mea;
using namespace mea::nn;

namespace {

FeatureTable toy_table(int n, int d, std::uint64_t seed, double sep = 3.0) {
    Rng rng(seed);
    std::normal_distribution<double> g;
    RowMatrix x(n, d);
    std::vector<ClassLabel> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int c = i % 3;
        y[static_cast<std::size_t>(i)] = class_from_index(c);
        for (int j = 0; j < d; ++j) x(i, j) = g(rng) + (j % 3 == c ? sep : 0.0);
    }
    std::vector<std::string> names;
    for (int j = 0; j < d; ++j) names.push_back("pc" + std::to_string(j + 1));
    return make_table(names, x, y, DpiTag(0));
}

CnnConfig tiny_cfg(int len = 9) {
    CnnConfig c;
    c.input_length = len;
    c.conv_filters = {3, 2};
    c.kernel_size = 3;
    c.stride = 2;
    c.dense_units = {5};
    c.batch_size = 16;
    return c;
}

Mat<double> random_batch(int b, int len, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g;
    Mat<double> x(b, len);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    return x;
}

// independent central-difference gradient of the mean loss for every parameter
std::vector<double> fd_gradient(Network<double> net, const Mat<double>& x, std::span<const int> y, double eps) {
    std::vector<double> out;
    auto params = net.parameters();
    for (auto& p : params) {
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double keep = p[j];
            ForwardCache<double> c;
            p[j] = keep + eps;
            net.forward(x, c);
            const double up = Network<double>::loss(c, y);
            p[j] = keep - eps;
            net.forward(x, c);
            const double dn = Network<double>::loss(c, y);
            p[j] = keep;
            out.push_back((up - dn) / (2 * eps));
        }
    }
    return out;
}

std::vector<double> flat_grads(const Gradients<double>& g) {
    std::vector<double> out;
    for (const auto& t : g.tensors()) out.insert(out.end(), t.begin(), t.end());
    return out;
}

}  // namespace

TEST_CASE("default shape chain") {
    const CnnConfig c;
    CHECK(c.conv_output_lengths() == std::vector<int>{26, 13, 7});
    CHECK(c.flatten_width() == 1792);
    CHECK(c.dense_widths() == std::vector<int>{256, 128, 64, 3});
    CHECK(c.learning_rate == 0.001);
    CHECK(c.epochs == 20);
    CHECK(c.batch_size == 1024);
    CHECK(c.optimizer == OptimizerKind::Adam);
    const auto m = build_cnn(c, 1);
    REQUIRE(m.conv().size() == 3);
    CHECK(m.conv()[0].out_len == 26);
    CHECK(m.conv()[2].out_len == 7);
    CHECK(m.dense().front().weight.rows() == 1792);
    CHECK(m.dense().back().weight.cols() == 3);
}

TEST_CASE("same padding arithmetic") {
    for (int len = 1; len < 80; ++len) {
        for (int s = 1; s <= 3; ++s) {
            const auto p = same_padding(len, 3, s);
            CHECK(p.out_len == (len + s - 1) / s);
            CHECK(p.pad_left >= 0);
        }
    }
}

TEST_CASE("initialization is seeded") {
    const auto a = build_cnn(tiny_cfg(), 5), b = build_cnn(tiny_cfg(), 5), c = build_cnn(tiny_cfg(), 6);
    CHECK(a.dense()[0].weight == b.dense()[0].weight);
    CHECK(a.conv()[1].weight == b.conv()[1].weight);
    CHECK(a.conv()[0].weight != c.conv()[0].weight);
}

TEST_CASE("config validation") {
    CnnConfig c = tiny_cfg();
    c.stride = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_cfg();
    c.dense_units = {4, 0};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_cfg();
    c.conv_filters = {-1};
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("softmax rows lie on the simplex; zero weights give uniform output") {
    auto m = build_cnn(CnnConfig{}, 3);
    Mat<float> x = random_batch(40, 51, 9).cast<float>() * 50.0f;
    const auto p = m.predict_proba(x);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        CHECK(std::abs(p.row(i).sum() - 1.0f) <= 1e-6f);
        CHECK(p.row(i).minCoeff() >= 0.0f);
    }
    for (auto& s : m.parameters()) std::fill(s.begin(), s.end(), 0.0f);
    const auto u = m.predict_proba(x);
    for (Eigen::Index i = 0; i < u.size(); ++i) CHECK(u.data()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-7));

    Mat<float> wrong(2, 50);
    CHECK_THROWS_AS(m.predict_proba(wrong), std::invalid_argument);
}

TEST_CASE("conv forward matches a direct loop") {
    CnnConfig c;
    c.input_length = 11;
    c.conv_filters = {4};
    c.kernel_size = 3;
    c.stride = 2;
    c.dense_units = {};
    c.activation = Activation::Linear;
    const auto net = build_cnn(c, 4).cast<double>();
    const Mat<double> x = random_batch(5, 11, 2);
    ForwardCache<double> cache;
    net.forward(x, cache);
    const auto& l = net.conv()[0];
    const int out_len = (11 + 1) / 2;
    // total pad = (6-1)*2+3-11 = 2 -> one zero on the left
    CHECK(l.pad_left == 1);
    double worst = 0;
    for (int b = 0; b < 5; ++b) {
        for (int t = 0; t < out_len; ++t) {
            for (int f = 0; f < 4; ++f) {
                double acc = l.bias(f);
                for (int k = 0; k < 3; ++k) {
                    const int pos = t * 2 + k - 1;
                    if (pos < 0 || pos >= 11) continue;
                    acc += x(b, pos) * l.weight(k, f);
                }
                worst = std::max(worst, std::abs(acc - cache.conv_out[0](b * out_len + t, f)));
            }
        }
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("two-channel conv forward matches a direct loop") {
    CnnConfig c = tiny_cfg(10);
    const auto net = build_cnn(c, 8).cast<double>();
    const Mat<double> x = random_batch(3, 10, 1);
    ForwardCache<double> cache;
    net.forward(x, cache);
    const auto& l0 = net.conv()[0];
    const auto& l1 = net.conv()[1];
    auto relu = [](double v) { return v > 0 ? v : 0.0; };
    double worst = 0;
    for (int b = 0; b < 3; ++b) {
        // layer 0 by hand
        std::vector<std::array<double, 3>> h(static_cast<std::size_t>(l0.out_len));
        for (int t = 0; t < l0.out_len; ++t)
            for (int f = 0; f < 3; ++f) {
                double acc = l0.bias(f);
                for (int k = 0; k < 3; ++k) {
                    const int pos = t * 2 + k - l0.pad_left;
                    if (pos >= 0 && pos < 10) acc += x(b, pos) * l0.weight(k, f);
                }
                h[static_cast<std::size_t>(t)][static_cast<std::size_t>(f)] = relu(acc);
            }
        for (int t = 0; t < l1.out_len; ++t)
            for (int f = 0; f < 2; ++f) {
                double acc = l1.bias(f);
                for (int k = 0; k < 3; ++k) {
                    const int pos = t * 2 + k - l1.pad_left;
                    if (pos < 0 || pos >= l0.out_len) continue;
                    for (int ch = 0; ch < 3; ++ch) acc += h[static_cast<std::size_t>(pos)][static_cast<std::size_t>(ch)] * l1.weight(k * 3 + ch, f);
                }
                worst = std::max(worst, std::abs(relu(acc) - cache.conv_out[1](b * l1.out_len + t, f)));
            }
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("backprop matches finite differences") {
    auto net = build_cnn(tiny_cfg(), 11).cast<double>();
    // nonzero biases keep pre-activations off the ReLU kink
    Rng brng(77);
    std::uniform_real_distribution<double> bu(-0.3, 0.3);
    for (auto& l : net.conv())
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = bu(brng);
    for (auto& l : net.dense())
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = bu(brng);
    const Mat<double> x = random_batch(8, 9, 3);
    const std::vector<int> y = {0, 1, 2, 0, 1, 2, 2, 1};
    ForwardCache<double> cache;
    net.forward(x, cache);
    auto g = net.zero_gradients();
    net.backward(cache, y, g);
    const auto a = flat_grads(g);
    const auto n = fd_gradient(net, x, y, 1e-5);
    REQUIRE(a.size() == n.size());
    REQUIRE(a.size() == net.parameter_count());
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - n[i]) / std::max(std::abs(a[i]) + std::abs(n[i]), 1e-6));
    CHECK(worst < 1e-4);

    const auto lib = gradient_check(net, x, y);
    CHECK(lib.max_relative_error < 1e-4);
    CHECK(lib.parameters_checked == net.parameter_count());
}

TEST_CASE("linear network gradients are exact to 1e-8") {
    CnnConfig c = tiny_cfg();
    c.activation = Activation::Linear;
    const auto net = build_cnn(c, 2).cast<double>();
    const Mat<double> x = random_batch(8, 9, 5);
    const std::vector<int> y = {2, 1, 0, 0, 1, 2, 1, 0};
    ForwardCache<double> cache;
    net.forward(x, cache);
    auto g = net.zero_gradients();
    net.backward(cache, y, g);
    const auto a = flat_grads(g);
    const auto n = fd_gradient(net, x, y, 1e-4);
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - n[i]));
    CHECK(worst < 1e-8);
}

TEST_CASE("MLP (no conv layers) gradients") {
    CnnConfig c;
    c.input_length = 6;
    c.conv_filters = {};
    c.dense_units = {7, 4};
    const auto net = build_cnn(c, 2).cast<double>();
    const auto r = gradient_check(net, random_batch(8, 6, 4), std::vector<int>{0, 1, 2, 0, 1, 2, 0, 1});
    CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("near-zero loss gives near-zero gradients") {
    CnnConfig c;
    c.input_length = 3;
    c.conv_filters = {};
    c.dense_units = {};
    c.activation = Activation::Linear;
    auto net = build_cnn(c, 1).cast<double>();
    net.dense()[0].weight = Mat<double>::Identity(3, 3) * 60.0;
    net.dense()[0].bias.setZero();
    const Mat<double> x = Mat<double>::Identity(3, 3);
    const std::vector<int> y = {0, 1, 2};
    ForwardCache<double> cache;
    net.forward(x, cache);
    CHECK(Network<double>::loss(cache, y) < 1e-20);
    auto g = net.zero_gradients();
    net.backward(cache, y, g);
    double mx = 0;
    for (auto v : flat_grads(g)) mx = std::max(mx, std::abs(v));
    CHECK(mx < 1e-20);
}

TEST_CASE("batch gradient is invariant to row order") {
    const auto net = build_cnn(tiny_cfg(), 13).cast<double>();
    const Mat<double> x = random_batch(12, 9, 6);
    std::vector<int> y(12);
    for (int i = 0; i < 12; ++i) y[static_cast<std::size_t>(i)] = (i * 7) % 3;
    std::vector<int> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(1);
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat<double> xp(12, 9);
    std::vector<int> yp(12);
    for (int i = 0; i < 12; ++i) {
        xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
        yp[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    ForwardCache<double> c1, c2;
    auto g1 = net.zero_gradients(), g2 = net.zero_gradients();
    net.forward(x, c1);
    net.backward(c1, y, g1);
    net.forward(xp, c2);
    net.backward(c2, yp, g2);
    const auto a = flat_grads(g1), b = flat_grads(g2);
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    CHECK(worst <= 1e-12);
}

TEST_CASE("optimizer closed forms") {
    SUBCASE("SGD") {
        std::vector<double> p{1.0};
        const std::vector<double> g{2.0};
        Optimizer<double> opt(OptimizerKind::SGD, 0.1);
        std::vector<std::span<double>> ps{p};
        std::vector<std::span<const double>> gs{g};
        opt.step(ps, gs);
        CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-15));
    }
    SUBCASE("Adam first step is -lr*sign(g)") {
        for (double gv : {3.0, -0.02, 1e-3, 250.0}) {
            std::vector<double> p{0.5};
            const std::vector<double> g{gv};
            Optimizer<double> opt(OptimizerKind::Adam, 0.001);
            std::vector<std::span<double>> ps{p};
            std::vector<std::span<const double>> gs{g};
            opt.step(ps, gs);
            CHECK(std::abs((p[0] - 0.5) + 0.001 * (gv > 0 ? 1 : -1)) <= 1e-6);
        }
    }
    SUBCASE("zero gradient is a fixed point") {
        for (auto k : {OptimizerKind::SGD, OptimizerKind::Adagrad, OptimizerKind::Adam, OptimizerKind::RMSprop,
                       OptimizerKind::Adamax, OptimizerKind::Nadam, OptimizerKind::Adadelta}) {
            std::vector<double> p{0.25, -4.0};
            const std::vector<double> g{0.0, 0.0};
            Optimizer<double> opt(k, 0.01);
            std::vector<std::span<double>> ps{p};
            std::vector<std::span<const double>> gs{g};
            for (int i = 0; i < 3; ++i) opt.step(ps, gs);
            CHECK(p[0] == 0.25);
            CHECK(p[1] == -4.0);
        }
    }
    SUBCASE("non-finite gradients are rejected without touching parameters") {
        std::vector<double> p{1.0, 2.0};
        const std::vector<double> g{0.5, std::nan("")};
        Optimizer<double> opt(OptimizerKind::Adam, 0.01);
        std::vector<std::span<double>> ps{p};
        std::vector<std::span<const double>> gs{g};
        CHECK_THROWS_AS(opt.step(ps, gs), std::domain_error);
        CHECK(p[0] == 1.0);
        CHECK(opt.step_count() == 0);
    }
    SUBCASE("every rule descends a quadratic") {
        for (auto k : kAllOptimizers) {
            std::vector<double> p{3.0};
            Optimizer<double> opt(k, k == OptimizerKind::Adadelta ? 1.0 : 0.05);
            std::vector<std::span<double>> ps{p};
            for (int i = 0; i < 200; ++i) {
                const std::vector<double> g{2.0 * p[0]};
                std::vector<std::span<const double>> gs{g};
                opt.step(ps, gs);
            }
            CHECK(std::abs(p[0]) < 3.0);
        }
    }
}

TEST_CASE("optimizer names round trip") {
    for (auto k : kAllOptimizers) CHECK(parse_optimizer(optimizer_name(k)) == k);
    CHECK_THROWS_AS(parse_optimizer("lbfgs"), ConfigError);
    CHECK(parse_tap("penultimate") == EmbeddingTap::Penultimate);
    CHECK_THROWS_AS(parse_tap("middle"), ConfigError);
}

TEST_CASE("small net overfits a 64-row separable toy") {
    const auto t = toy_table(64, 9, 2);
    CnnConfig c = tiny_cfg();
    c.conv_filters = {8};
    c.dense_units = {16};
    c.epochs = 200;
    c.batch_size = 16;
    c.learning_rate = 0.01;
    auto m = build_cnn(c, 3);
    const auto h = train_cnn(m, t, FeatureTable{}, 4);
    CHECK(h.epochs.size() == 200);
    CHECK(evaluate(m, t).accuracy == 1.0);
}

TEST_CASE("one epoch lowers the loss; zero epochs change nothing") {
    const auto t = toy_table(256, 9, 5);
    CnnConfig c = tiny_cfg();
    c.epochs = 1;
    c.batch_size = 32;
    auto m = build_cnn(c, 1);
    const double before = evaluate(m, t).loss;
    train_cnn(m, t, t, 9);
    CHECK(evaluate(m, t).loss < before);

    c.epochs = 0;
    auto z = build_cnn(c, 1);
    const auto ref = build_cnn(c, 1);
    const auto h = train_cnn(z, t, t, 9);
    CHECK(h.epochs.empty());
    CHECK(z.dense()[0].weight == ref.dense()[0].weight);
}

TEST_CASE("training is deterministic") {
    const auto t = toy_table(300, 9, 7);
    CnnConfig c = tiny_cfg();
    c.epochs = 3;
    c.batch_size = 50;
    auto a = build_cnn(c, 1), b = build_cnn(c, 1);
    train_cnn(a, t, t, 2);
    train_cnn(b, t, t, 2);
    CHECK(a.conv()[0].weight == b.conv()[0].weight);
    CHECK(a.dense()[1].weight == b.dense()[1].weight);
}

TEST_CASE("training input errors") {
    CnnConfig c = tiny_cfg();
    auto m = build_cnn(c, 1);
    CHECK_THROWS(train_cnn(m, toy_table(0, 9, 1), FeatureTable{}, 1));
    CHECK_THROWS(train_cnn(m, toy_table(30, 8, 1), FeatureTable{}, 1));
}

TEST_CASE("embeddings: output and penultimate taps") {
    const auto t = toy_table(90, 51, 3);
    const auto m = build_cnn(CnnConfig{}, 2);
    const auto out = extract_embeddings(m, t, EmbeddingTap::Output);
    CHECK(out.n_features() == 3);
    CHECK(out.labels == t.labels);
    for (Eigen::Index i = 0; i < out.features.rows(); ++i) CHECK(std::abs(out.features.row(i).sum() - 1.0) < 1e-6);
    const auto pen = extract_embeddings(m, t, EmbeddingTap::Penultimate);
    CHECK(pen.n_features() == 64);
    CHECK(pen.features.minCoeff() >= 0.0);
    CHECK(pen.labels == t.labels);
    // rows line up with a direct forward pass
    const auto p = predict_proba(m, t);
    CHECK((p - out.features).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("model JSON round trip and history CSV") {
    auto m = build_cnn(tiny_cfg(), 21);
    const auto back = model_from_json(model_to_json(m));
    CHECK(back.config().conv_filters == m.config().conv_filters);
    const auto t = toy_table(30, 9, 1);
    CHECK(predict_proba(back, t) == predict_proba(m, t));
    CHECK_THROWS(model_from_json("{}"));

    TrainHistory h;
    h.epochs.push_back({1, 0.5, 0.6, 0.7, 1.25});
    const auto p = std::filesystem::temp_directory_path() / "mea_test_hist.csv";
    save_history_csv(h, p, false);
    std::ifstream in(p);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "epoch,train_loss,train_acc,val_acc,seconds");
    CHECK(row.substr(row.size() - 3) == ",NA");
}
