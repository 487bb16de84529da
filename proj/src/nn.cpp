#include "mea/nn.hpp"

#include "mea/config.hpp"
#include "mea/matmul.hpp"
#include "mea/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <type_traits>

namespace mea::nn {

using json = nlohmann::json;

std::string_view optimizer_name(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::SGD: return "sgd";
        case OptimizerKind::RMSprop: return "rmsprop";
        case OptimizerKind::Nadam: return "nadam";
        case OptimizerKind::Adadelta: return "adadelta";
        case OptimizerKind::Adamax: return "adamax";
        case OptimizerKind::Adagrad: return "adagrad";
        case OptimizerKind::Adam: return "adam";
    }
    return "?";
}

OptimizerKind parse_optimizer(std::string_view name) {
    for (auto k : kAllOptimizers) {
        if (optimizer_name(k) == name) return k;
    }
    throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

std::string_view tap_name(EmbeddingTap t) {
    return t == EmbeddingTap::Output ? "output" : "penultimate";
}

EmbeddingTap parse_tap(std::string_view name) {
    if (name == "output") return EmbeddingTap::Output;
    if (name == "penultimate") return EmbeddingTap::Penultimate;
    throw ConfigError("unknown embedding tap '" + std::string(name) + "'");
}

std::string_view matmul_name(MatmulPrecision p) { return p == MatmulPrecision::BF16 ? "bf16" : "fp32"; }

MatmulPrecision parse_matmul(std::string_view name) {
    if (name == "fp32") return MatmulPrecision::FP32;
    if (name == "bf16") return MatmulPrecision::BF16;
    throw ConfigError("unknown matmul precision '" + std::string(name) + "'");
}

SamePadding same_padding(int in_len, int kernel, int stride) {
    SamePadding p;
    p.out_len = (in_len + stride - 1) / stride;
    const int total = std::max((p.out_len - 1) * stride + kernel - in_len, 0);
    p.pad_left = total / 2;
    return p;
}

void CnnConfig::validate() const {
    if (input_length < 1) throw ConfigError("nn.input_length must be >= 1");
    if (kernel_size < 1) throw ConfigError("nn.kernel_size must be >= 1");
    if (stride < 1) throw ConfigError("nn.stride must be >= 1");
    if (n_classes < 2) throw ConfigError("nn.n_classes must be >= 2");
    for (int f : conv_filters) {
        if (f < 1) throw ConfigError("nn.conv_filters must be positive");
    }
    for (int u : dense_units) {
        if (u < 1) throw ConfigError("nn.dense_units must be positive");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("nn.learning_rate must be positive");
    }
    if (epochs < 0) throw ConfigError("nn.epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("nn.batch_size must be >= 1");
    if (matmul == MatmulPrecision::BF16 && !bf16_matmul_available()) {
        throw ConfigError("nn.matmul=bf16 needs a CPU with AMX-BF16");
    }
}

std::vector<int> CnnConfig::conv_output_lengths() const {
    std::vector<int> out;
    int len = input_length;
    for (std::size_t i = 0; i < conv_filters.size(); ++i) {
        len = same_padding(len, kernel_size, stride).out_len;
        out.push_back(len);
    }
    return out;
}

int CnnConfig::flatten_width() const {
    if (conv_filters.empty()) return input_length;
    return conv_output_lengths().back() * conv_filters.back();
}

std::vector<int> CnnConfig::dense_widths() const {
    std::vector<int> w = dense_units;
    w.push_back(n_classes);
    return w;
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<std::span<const T>> Gradients<T>::tensors() const {
    std::vector<std::span<const T>> out;
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
        out.emplace_back(conv_w[i].data(), static_cast<std::size_t>(conv_w[i].size()));
        out.emplace_back(conv_b[i].data(), static_cast<std::size_t>(conv_b[i].size()));
    }
    for (std::size_t i = 0; i < dense_w.size(); ++i) {
        out.emplace_back(dense_w[i].data(), static_cast<std::size_t>(dense_w[i].size()));
        out.emplace_back(dense_b[i].data(), static_cast<std::size_t>(dense_b[i].size()));
    }
    return out;
}

template <typename T>
const Mat<T>& ForwardCache<T>::penultimate() const {
    return dense_in.back();
}

namespace {

template <typename T>
void apply_activation(Mat<T>& m, Activation a) {
    if (a != Activation::ReLU) return;
    T* p = m.data();
    for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = std::max(p[i], T(0));
}

template <typename T>
void add_bias_activate(Mat<T>& m, const RowVec<T>& bias, Activation a) {
    const Eigen::Index n = m.cols();
    const T* b = bias.data();
    const bool relu = a == Activation::ReLU;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        T* row = m.data() + r * n;
        for (Eigen::Index c = 0; c < n; ++c) {
            const T v = row[c] + b[c];
            row[c] = relu ? std::max(v, T(0)) : v;
        }
    }
}

template <typename T>
void activation_backward(Mat<T>& grad, const Mat<T>& activated, Activation a) {
    if (a != Activation::ReLU) return;
    T* g = grad.data();
    const T* act = activated.data();
    for (Eigen::Index i = 0; i < grad.size(); ++i) {
        if (!(act[i] > T(0))) g[i] = T(0);
    }
}

// column sums of a row-major matrix, rows visited in order
template <typename T>
void column_sums(const Mat<T>& m, RowVec<T>& out) {
    out.setZero(m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) out += m.row(r);
}

template <typename T>
void im2col(const Mat<T>& in, int batch, const ConvLayer<T>& l, int kernel, int stride, Mat<T>& col) {
    const int c = l.in_channels;
    col.resize(static_cast<Eigen::Index>(batch) * l.out_len, static_cast<Eigen::Index>(kernel) * c);
    for (int b = 0; b < batch; ++b) {
        for (int o = 0; o < l.out_len; ++o) {
            T* dst = col.data() + (static_cast<Eigen::Index>(b) * l.out_len + o) * col.cols();
            for (int k = 0; k < kernel; ++k) {
                const int pos = o * stride + k - l.pad_left;
                T* seg = dst + static_cast<std::ptrdiff_t>(k) * c;
                if (pos < 0 || pos >= l.in_len) {
                    std::fill(seg, seg + c, T(0));
                } else {
                    const T* src = in.data() + (static_cast<Eigen::Index>(b) * l.in_len + pos) * c;
                    std::memcpy(seg, src, sizeof(T) * static_cast<std::size_t>(c));
                }
            }
        }
    }
}

template <typename T>
void col2im(const Mat<T>& dcol, int batch, const ConvLayer<T>& l, int kernel, int stride, Mat<T>& din) {
    const int c = l.in_channels;
    din.setZero(static_cast<Eigen::Index>(batch) * l.in_len, c);
    for (int b = 0; b < batch; ++b) {
        for (int o = 0; o < l.out_len; ++o) {
            const T* src = dcol.data() + (static_cast<Eigen::Index>(b) * l.out_len + o) * dcol.cols();
            for (int k = 0; k < kernel; ++k) {
                const int pos = o * stride + k - l.pad_left;
                if (pos < 0 || pos >= l.in_len) continue;
                T* dst = din.data() + (static_cast<Eigen::Index>(b) * l.in_len + pos) * c;
                const T* seg = src + static_cast<std::ptrdiff_t>(k) * c;
                for (int ch = 0; ch < c; ++ch) dst[ch] += seg[ch];
            }
        }
    }
}

// c = op(a) * op(b)
template <typename T>
void product(Mat<T>& c, const Mat<T>& a, bool ta, const Mat<T>& b, bool tb, MatmulPrecision prec) {
    if constexpr (std::is_same_v<T, float>) {
        if (prec == MatmulPrecision::BF16) {
            const auto m = ta ? a.cols() : a.rows(), k = ta ? a.rows() : a.cols();
            const auto n = tb ? b.rows() : b.cols();
            c.resize(m, n);
            const MatView av{a.data(), ta ? 1 : a.cols(), ta ? a.cols() : 1};
            const MatView bv{b.data(), tb ? 1 : b.cols(), tb ? b.cols() : 1};
            matmul_bf16(static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), av, bv, c.data());
            return;
        }
    }
    if (ta && tb) {
        c.noalias() = a.transpose() * b.transpose();
    } else if (ta) {
        c.noalias() = a.transpose() * b;
    } else if (tb) {
        c.noalias() = a * b.transpose();
    } else {
        c.noalias() = a * b;
    }
}

template <typename T>
void softmax_rows(const Mat<T>& logits, Mat<T>& probs) {
    probs.resize(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const T mx = logits.row(r).maxCoeff();
        probs.row(r) = (logits.row(r).array() - mx).exp();
        probs.row(r) /= probs.row(r).sum();
    }
}

}  // namespace

template <typename T>
Network<T>::Network(const CnnConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    Rng rng(derive_seed(seed, {0x1417}));
    auto init = [&](Mat<T>& w, int fan_in) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(dist(rng));
    };

    int len = cfg_.input_length;
    int channels = 1;
    for (int filters : cfg_.conv_filters) {
        const SamePadding p = same_padding(len, cfg_.kernel_size, cfg_.stride);
        ConvLayer<T> l;
        l.in_channels = channels;
        l.out_channels = filters;
        l.in_len = len;
        l.out_len = p.out_len;
        l.pad_left = p.pad_left;
        l.weight.resize(static_cast<Eigen::Index>(cfg_.kernel_size) * channels, filters);
        init(l.weight, cfg_.kernel_size * channels);
        l.bias = RowVec<T>::Zero(filters);
        conv_.push_back(std::move(l));
        len = p.out_len;
        channels = filters;
    }
    int in = cfg_.flatten_width();
    for (int width : cfg_.dense_widths()) {
        DenseLayer<T> d;
        d.weight.resize(in, width);
        init(d.weight, in);
        d.bias = RowVec<T>::Zero(width);
        dense_.push_back(std::move(d));
        in = width;
    }
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& s : parameters()) n += s.size();
    return n;
}

template <typename T>
std::vector<std::span<T>> Network<T>::parameters() {
    std::vector<std::span<T>> out;
    for (auto& c : conv_) {
        out.emplace_back(c.weight.data(), static_cast<std::size_t>(c.weight.size()));
        out.emplace_back(c.bias.data(), static_cast<std::size_t>(c.bias.size()));
    }
    for (auto& d : dense_) {
        out.emplace_back(d.weight.data(), static_cast<std::size_t>(d.weight.size()));
        out.emplace_back(d.bias.data(), static_cast<std::size_t>(d.bias.size()));
    }
    return out;
}

template <typename T>
std::vector<std::span<const T>> Network<T>::parameters() const {
    auto mut = const_cast<Network<T>*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

template <typename T>
Gradients<T> Network<T>::zero_gradients() const {
    Gradients<T> g;
    for (const auto& c : conv_) {
        g.conv_w.push_back(Mat<T>::Zero(c.weight.rows(), c.weight.cols()));
        g.conv_b.push_back(RowVec<T>::Zero(c.bias.size()));
    }
    for (const auto& d : dense_) {
        g.dense_w.push_back(Mat<T>::Zero(d.weight.rows(), d.weight.cols()));
        g.dense_b.push_back(RowVec<T>::Zero(d.bias.size()));
    }
    return g;
}

template <typename T>
void Network<T>::forward(const Mat<T>& batch, ForwardCache<T>& cache) const {
    if (batch.cols() != cfg_.input_length) {
        throw std::invalid_argument("batch width " + std::to_string(batch.cols()) +
                                    " != input_length " + std::to_string(cfg_.input_length));
    }
    const int b = static_cast<int>(batch.rows());
    cache.cols.resize(conv_.size());
    cache.conv_out.resize(conv_.size());
    cache.dense_in.resize(dense_.size());
    cache.dense_pre.resize(dense_.size());

    // Input is B x L with one channel; channels-last it is the same memory as (B*L) x 1.
    const Mat<T>* in = &batch;
    Mat<T> reshaped_input;
    if (!conv_.empty()) {
        reshaped_input = Eigen::Map<const Mat<T>>(batch.data(), batch.size(), 1);
        in = &reshaped_input;
    }
    for (std::size_t i = 0; i < conv_.size(); ++i) {
        const auto& l = conv_[i];
        im2col(*in, b, l, cfg_.kernel_size, cfg_.stride, cache.cols[i]);
        Mat<T>& out = cache.conv_out[i];
        product(out, cache.cols[i], false, l.weight, false, cfg_.matmul);
        add_bias_activate(out, l.bias, cfg_.activation);
        in = &out;
    }

    if (conv_.empty()) {
        cache.dense_in[0] = batch;
    } else {
        const Mat<T>& last = cache.conv_out.back();
        cache.dense_in[0] = Eigen::Map<const Mat<T>>(last.data(), b, cfg_.flatten_width());
    }
    for (std::size_t i = 0; i < dense_.size(); ++i) {
        Mat<T>& pre = cache.dense_pre[i];
        product(pre, cache.dense_in[i], false, dense_[i].weight, false, cfg_.matmul);
        pre.rowwise() += dense_[i].bias;
        if (i + 1 < dense_.size()) {
            cache.dense_in[i + 1] = pre;
            apply_activation(cache.dense_in[i + 1], cfg_.activation);
        }
    }
    softmax_rows(cache.dense_pre.back(), cache.probs);
}

template <typename T>
Mat<T> Network<T>::predict_proba(const Mat<T>& batch) const {
    ForwardCache<T> cache;
    forward(batch, cache);
    return std::move(cache.probs);
}

template <typename T>
T Network<T>::loss(const ForwardCache<T>& cache, std::span<const int> labels) {
    const Mat<T>& logits = cache.dense_pre.back();
    if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
        throw std::invalid_argument("label count does not match batch");
    }
    if (labels.empty()) return T(0);
    double total = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = static_cast<double>(logits.row(r).maxCoeff());
        double s = 0.0;
        for (Eigen::Index c = 0; c < logits.cols(); ++c) s += std::exp(static_cast<double>(logits(r, c)) - mx);
        total += mx + std::log(s) - static_cast<double>(logits(r, labels[static_cast<std::size_t>(r)]));
    }
    return static_cast<T>(total / static_cast<double>(labels.size()));
}

template <typename T>
void Network<T>::backward(const ForwardCache<T>& cache, std::span<const int> labels,
                          Gradients<T>& grads) const {
    const int b = static_cast<int>(cache.probs.rows());
    if (static_cast<std::size_t>(b) != labels.size()) {
        throw std::invalid_argument("label count does not match batch");
    }
    if (grads.dense_w.size() != dense_.size() || grads.conv_w.size() != conv_.size()) {
        grads = zero_gradients();
    }

    Mat<T> dz = cache.probs;
    for (int r = 0; r < b; ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= cfg_.n_classes) throw std::invalid_argument("label out of range");
        dz(r, y) -= T(1);
    }
    dz /= static_cast<T>(b);

    Mat<T> da;
    for (std::size_t i = dense_.size(); i-- > 0;) {
        product(grads.dense_w[i], cache.dense_in[i], true, dz, false, cfg_.matmul);
        column_sums(dz, grads.dense_b[i]);
        if (i == 0 && conv_.empty()) break;
        product(da, dz, false, dense_[i].weight, true, cfg_.matmul);
        if (i > 0) {
            activation_backward(da, cache.dense_in[i], cfg_.activation);
            dz = std::move(da);
        }
    }
    if (conv_.empty()) return;

    // da: B x flatten  ->  (B*len) x channels for the last conv layer
    Mat<T> dconv = Eigen::Map<const Mat<T>>(da.data(), static_cast<Eigen::Index>(b) * conv_.back().out_len,
                                            conv_.back().out_channels);
    Mat<T> dcol, din;
    for (std::size_t i = conv_.size(); i-- > 0;) {
        const auto& l = conv_[i];
        activation_backward(dconv, cache.conv_out[i], cfg_.activation);
        product(grads.conv_w[i], cache.cols[i], true, dconv, false, cfg_.matmul);
        column_sums(dconv, grads.conv_b[i]);
        if (i == 0) break;
        product(dcol, dconv, false, l.weight, true, cfg_.matmul);
        col2im(dcol, b, l, cfg_.kernel_size, cfg_.stride, din);
        dconv = std::move(din);
    }
}

template class Network<float>;
template class Network<double>;
template struct Gradients<float>;
template struct Gradients<double>;
template struct ForwardCache<float>;
template struct ForwardCache<double>;

// ---------------------------------------------------------------------------

OptimizerHyper OptimizerHyper::defaults(OptimizerKind kind) {
    OptimizerHyper h;
    switch (kind) {
        case OptimizerKind::SGD: break;
        case OptimizerKind::RMSprop: h.rho = 0.9; h.epsilon = 1e-7; break;
        case OptimizerKind::Adadelta: h.rho = 0.95; h.epsilon = 1e-7; break;
        case OptimizerKind::Adagrad: h.initial_accumulator = 0.1; h.epsilon = 1e-7; break;
        case OptimizerKind::Adam: h.epsilon = 1e-8; break;
        case OptimizerKind::Adamax: h.epsilon = 1e-7; break;
        case OptimizerKind::Nadam: h.epsilon = 1e-7; break;
    }
    return h;
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerKind kind, double learning_rate)
    : Optimizer(kind, learning_rate, OptimizerHyper::defaults(kind)) {}

template <typename T>
Optimizer<T>::Optimizer(OptimizerKind kind, double learning_rate, OptimizerHyper hyper)
    : kind_(kind), lr_(learning_rate), h_(hyper) {}

template <typename T>
void Optimizer<T>::step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("parameter/gradient count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (params[i].size() != grads[i].size()) {
            throw std::invalid_argument("parameter/gradient shape mismatch at tensor " + std::to_string(i));
        }
        for (std::size_t j = 0; j < grads[i].size(); ++j) {
            if (!std::isfinite(static_cast<double>(grads[i][j]))) {
                throw std::domain_error("non-finite gradient in tensor " + std::to_string(i) + " element " +
                                        std::to_string(j) + " at step " + std::to_string(t_ + 1));
            }
        }
    }
    if (s1_.size() != params.size()) {
        s1_.assign(params.size(), {});
        s2_.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) {
            s1_[i].assign(params[i].size(), static_cast<T>(h_.initial_accumulator));
            s2_[i].assign(params[i].size(), T(0));
        }
    }
    ++t_;

    const T lr = static_cast<T>(lr_);
    const T b1 = static_cast<T>(h_.beta1), b2 = static_cast<T>(h_.beta2);
    const T rho = static_cast<T>(h_.rho), eps = static_cast<T>(h_.epsilon);
    const double t = static_cast<double>(t_);
    const T bc1 = static_cast<T>(1.0 - std::pow(h_.beta1, t));
    const T bc1_next = static_cast<T>(1.0 - std::pow(h_.beta1, t + 1.0));
    const T bc2 = static_cast<T>(1.0 - std::pow(h_.beta2, t));

    for (std::size_t i = 0; i < params.size(); ++i) {
        T* p = params[i].data();
        const T* g = grads[i].data();
        T* m = s1_[i].data();
        T* v = s2_[i].data();
        const std::size_t n = params[i].size();
        switch (kind_) {
            case OptimizerKind::SGD:
                for (std::size_t j = 0; j < n; ++j) p[j] -= lr * g[j];
                break;
            case OptimizerKind::RMSprop:
                for (std::size_t j = 0; j < n; ++j) {
                    m[j] = rho * m[j] + (T(1) - rho) * g[j] * g[j];
                    p[j] -= lr * g[j] / (std::sqrt(m[j]) + eps);
                }
                break;
            case OptimizerKind::Adagrad:
                for (std::size_t j = 0; j < n; ++j) {
                    m[j] += g[j] * g[j];
                    p[j] -= lr * g[j] / (std::sqrt(m[j]) + eps);
                }
                break;
            case OptimizerKind::Adadelta:
                // m: running E[g^2], v: running E[dx^2]
                for (std::size_t j = 0; j < n; ++j) {
                    m[j] = rho * m[j] + (T(1) - rho) * g[j] * g[j];
                    const T dx = -std::sqrt(v[j] + eps) / std::sqrt(m[j] + eps) * g[j];
                    v[j] = rho * v[j] + (T(1) - rho) * dx * dx;
                    p[j] += lr * dx;
                }
                break;
            case OptimizerKind::Adam:
                for (std::size_t j = 0; j < n; ++j) {
                    m[j] = b1 * m[j] + (T(1) - b1) * g[j];
                    v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
                    const T mhat = m[j] / bc1;
                    const T vhat = v[j] / bc2;
                    p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
                }
                break;
            case OptimizerKind::Adamax:
                for (std::size_t j = 0; j < n; ++j) {
                    m[j] = b1 * m[j] + (T(1) - b1) * g[j];
                    v[j] = std::max(b2 * v[j], std::abs(g[j]));
                    p[j] -= (lr / bc1) * m[j] / (v[j] + eps);
                }
                break;
            case OptimizerKind::Nadam:
                for (std::size_t j = 0; j < n; ++j) {
                    m[j] = b1 * m[j] + (T(1) - b1) * g[j];
                    v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
                    const T mhat = b1 * m[j] / bc1_next + (T(1) - b1) * g[j] / bc1;
                    const T vhat = v[j] / bc2;
                    p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
                }
                break;
        }
    }
}

template class Optimizer<float>;
template class Optimizer<double>;

// ---------------------------------------------------------------------------

CnnModel build_cnn(const CnnConfig& cfg, std::uint64_t seed) { return CnnModel(cfg, seed); }

namespace {

void gather_batch(const FeatureTable& table, std::span<const std::size_t> rows, Mat<float>& out,
                  std::vector<int>& labels) {
    out.resize(static_cast<Eigen::Index>(rows.size()), table.features.cols());
    labels.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) =
            table.features.row(static_cast<Eigen::Index>(rows[i])).cast<float>();
        labels[i] = class_index(table.labels[rows[i]]);
    }
}

int argmax_row(const Mat<float>& m, Eigen::Index r) {
    int best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c) {
        if (m(r, c) > m(r, best)) best = static_cast<int>(c);
    }
    return best;
}

constexpr std::size_t kInferenceChunk = 4096;

}  // namespace

Mat<float> table_to_batch(const FeatureTable& table) { return table.features.cast<float>(); }

TrainHistory train_cnn(CnnModel& model, const FeatureTable& train, const FeatureTable& val,
                       std::uint64_t shuffle_seed) {
    const CnnConfig& cfg = model.config();
    if (cfg.epochs > 0 && train.n_rows() == 0) throw DataError("empty training set");
    if (static_cast<int>(train.n_features()) != cfg.input_length) {
        throw DataError("training table has " + std::to_string(train.n_features()) +
                        " features, model expects " + std::to_string(cfg.input_length));
    }

    TrainHistory history;
    Optimizer<float> opt(cfg.optimizer, cfg.learning_rate);
    ForwardCache<float> cache;
    Gradients<float> grads = model.zero_gradients();
    Mat<float> batch;
    std::vector<int> labels;
    std::vector<std::size_t> order(train.n_rows());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(shuffle_seed, {0x5u, static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
            gather_batch(train, std::span(order).subspan(start, count), batch, labels);
            model.forward(batch, cache);
            loss_sum += static_cast<double>(CnnModel::loss(cache, labels)) * static_cast<double>(count);
            for (std::size_t r = 0; r < count; ++r) {
                if (argmax_row(cache.probs, static_cast<Eigen::Index>(r)) == labels[r]) ++correct;
            }
            model.backward(cache, labels, grads);
            const auto params = model.parameters();
            const auto g = grads.tensors();
            opt.step(params, g);
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        rec.val_accuracy = val.n_rows() > 0 ? evaluate(model, val).accuracy : 0.0;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.epochs.push_back(rec);
    }
    return history;
}

EvalResult evaluate(const CnnModel& model, const FeatureTable& table) {
    EvalResult r;
    if (table.n_rows() == 0) return r;
    ForwardCache<float> cache;
    Mat<float> batch;
    std::vector<int> labels;
    std::vector<std::size_t> rows;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < table.n_rows(); start += kInferenceChunk) {
        const std::size_t count = std::min(kInferenceChunk, table.n_rows() - start);
        rows.resize(count);
        std::iota(rows.begin(), rows.end(), start);
        gather_batch(table, rows, batch, labels);
        model.forward(batch, cache);
        loss_sum += static_cast<double>(CnnModel::loss(cache, labels)) * static_cast<double>(count);
        for (std::size_t i = 0; i < count; ++i) {
            if (argmax_row(cache.probs, static_cast<Eigen::Index>(i)) == labels[i]) ++correct;
        }
    }
    r.loss = loss_sum / static_cast<double>(table.n_rows());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(table.n_rows());
    return r;
}

namespace {

RowMatrix run_tap(const CnnModel& model, const FeatureTable& table, EmbeddingTap tap) {
    if (static_cast<int>(table.n_features()) != model.config().input_length) {
        throw DataError("table has " + std::to_string(table.n_features()) + " features, model expects " +
                        std::to_string(model.config().input_length));
    }
    const int width = tap == EmbeddingTap::Output ? model.config().n_classes
                                                  : model.config().dense_widths().end()[-2];
    RowMatrix out(static_cast<Eigen::Index>(table.n_rows()), width);
    ForwardCache<float> cache;
    for (std::size_t start = 0; start < table.n_rows(); start += kInferenceChunk) {
        const auto count = static_cast<Eigen::Index>(std::min(kInferenceChunk, table.n_rows() - start));
        const Mat<float> batch = table.features.middleRows(static_cast<Eigen::Index>(start), count).cast<float>();
        model.forward(batch, cache);
        const Mat<float>& src = tap == EmbeddingTap::Output ? cache.probs : cache.penultimate();
        out.middleRows(static_cast<Eigen::Index>(start), count) = src.cast<double>();
    }
    return out;
}

}  // namespace

RowMatrix predict_proba(const CnnModel& model, const FeatureTable& table) {
    return run_tap(model, table, EmbeddingTap::Output);
}

FeatureTable extract_embeddings(const CnnModel& model, const FeatureTable& table, EmbeddingTap tap) {
    if (tap == EmbeddingTap::Penultimate && model.config().dense_units.empty()) {
        throw std::invalid_argument("model has no hidden dense layer to tap");
    }
    FeatureTable out;
    out.dpi = table.dpi;
    out.labels = table.labels;
    out.features = run_tap(model, table, tap);
    const std::string prefix = tap == EmbeddingTap::Output ? "cnn_p" : "cnn_h";
    for (Eigen::Index c = 0; c < out.features.cols(); ++c) {
        out.feature_names.push_back(prefix + std::to_string(c + 1));
    }
    return out;
}

GradientCheckResult gradient_check(const Network<double>& model, const Mat<double>& batch,
                                   std::span<const int> labels, double eps) {
    Network<double> work = model;
    ForwardCache<double> cache;
    work.forward(batch, cache);
    Gradients<double> grads = work.zero_gradients();
    work.backward(cache, labels, grads);
    const auto analytic = grads.tensors();

    GradientCheckResult res;
    auto params = work.parameters();
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t j = 0; j < params[t].size(); ++j) {
            const double orig = params[t][j];
            params[t][j] = orig + eps;
            work.forward(batch, cache);
            const double lp = Network<double>::loss(cache, labels);
            params[t][j] = orig - eps;
            work.forward(batch, cache);
            const double lm = Network<double>::loss(cache, labels);
            params[t][j] = orig;

            const double numeric = (lp - lm) / (2.0 * eps);
            const double a = analytic[t][j];
            const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
            res.max_relative_error = std::max(res.max_relative_error, rel);
            res.max_abs_analytic = std::max(res.max_abs_analytic, std::abs(a));
            ++res.parameters_checked;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------

std::string model_to_json(const CnnModel& model) {
    json j;
    j["format"] = "mea.cnn";
    j["version"] = 1;
    j["config"] = cnn_config_to_json(model.config());
    j["seed"] = model.seed();
    auto tensor = [](const auto& m) {
        return json{{"rows", m.rows()}, {"cols", m.cols()},
                    {"data", std::vector<float>(m.data(), m.data() + m.size())}};
    };
    json conv = json::array(), dense = json::array();
    for (const auto& c : model.conv()) conv.push_back({{"weight", tensor(c.weight)}, {"bias", tensor(c.bias)}});
    for (const auto& d : model.dense()) dense.push_back({{"weight", tensor(d.weight)}, {"bias", tensor(d.bias)}});
    j["conv"] = conv;
    j["dense"] = dense;
    return j.dump();
}

CnnModel model_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        if (j.at("format") != "mea.cnn" || j.at("version") != 1) throw DataError("not a v1 CNN model file");
        CnnModel model(cnn_config_from_json(j.at("config")), j.at("seed").get<std::uint64_t>());
        auto load = [](const json& t, auto& m) {
            const auto data = t.at("data").get<std::vector<float>>();
            if (t.at("rows").get<Eigen::Index>() != m.rows() || t.at("cols").get<Eigen::Index>() != m.cols() ||
                data.size() != static_cast<std::size_t>(m.size())) {
                throw DataError("tensor shape does not match topology");
            }
            std::copy(data.begin(), data.end(), m.data());
        };
        const auto& conv = j.at("conv");
        const auto& dense = j.at("dense");
        if (conv.size() != model.conv().size() || dense.size() != model.dense().size()) {
            throw DataError("layer count does not match topology");
        }
        for (std::size_t i = 0; i < conv.size(); ++i) {
            load(conv[i].at("weight"), model.conv()[i].weight);
            load(conv[i].at("bias"), model.conv()[i].bias);
        }
        for (std::size_t i = 0; i < dense.size(); ++i) {
            load(dense[i].at("weight"), model.dense()[i].weight);
            load(dense[i].at("bias"), model.dense()[i].bias);
        }
        return model;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed model JSON: ") + e.what());
    }
}

void save_model(const CnnModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << model_to_json(model) << '\n';
}

CnnModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return model_from_json(ss.str());
}

void save_history_csv(const TrainHistory& h, const std::filesystem::path& path, bool include_timing) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "epoch,train_loss,train_acc,val_acc,seconds\n";
    out.precision(17);
    for (const auto& e : h.epochs) {
        out << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',' << e.val_accuracy << ',';
        if (include_timing) {
            out << e.seconds;
        } else {
            out << "NA";
        }
        out << '\n';
    }
}

}  // namespace mea::nn
