#pragma once

#include "mea/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mea::nn {

enum class OptimizerKind { SGD, RMSprop, Nadam, Adadelta, Adamax, Adagrad, Adam };
enum class Activation { ReLU, Linear };
enum class EmbeddingTap { Output, Penultimate };
/// fp32: Eigen products. bf16: AMX tiles with bf16 operands and fp32 accumulation
/// (float networks only; double networks always run fp32-or-better).
enum class MatmulPrecision { FP32, BF16 };

std::string_view optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);
std::string_view tap_name(EmbeddingTap t);
EmbeddingTap parse_tap(std::string_view name);
std::string_view matmul_name(MatmulPrecision p);
MatmulPrecision parse_matmul(std::string_view name);
inline constexpr std::array<OptimizerKind, 7> kAllOptimizers = {
    OptimizerKind::SGD,     OptimizerKind::RMSprop, OptimizerKind::Nadam, OptimizerKind::Adadelta,
    OptimizerKind::Adamax,  OptimizerKind::Adagrad, OptimizerKind::Adam};

/// Defaults: 51x1 input, three stride-2
/// conv layers (64, 128, 256 filters), dense 256-128-64, softmax over 3 classes,
/// Adam at 1e-3, 20 epochs, batch 1024.
struct CnnConfig {
    int input_length = 51;
    std::vector<int> conv_filters = {64, 128, 256};
    int kernel_size = 3;
    int stride = 2;
    std::vector<int> dense_units = {256, 128, 64};
    int n_classes = kNumClasses;
    Activation activation = Activation::ReLU;
    double learning_rate = 0.001;
    int epochs = 20;
    int batch_size = 1024;
    OptimizerKind optimizer = OptimizerKind::Adam;
    MatmulPrecision matmul = MatmulPrecision::FP32;

    void validate() const;
    /// Lengths after each conv layer; "same" padding gives ceil(L / stride).
    std::vector<int> conv_output_lengths() const;
    int flatten_width() const;
    /// Widths of every dense layer including the output layer.
    std::vector<int> dense_widths() const;
};

struct SamePadding {
    int out_len = 0;
    int pad_left = 0;
};
SamePadding same_padding(int in_len, int kernel, int stride);

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
struct ConvLayer {
    int in_channels = 0;
    int out_channels = 0;
    int in_len = 0;
    int out_len = 0;
    int pad_left = 0;
    Mat<T> weight;  // (kernel * in_channels) x out_channels, kernel-major rows
    RowVec<T> bias;
};

template <typename T>
struct DenseLayer {
    Mat<T> weight;  // in x out
    RowVec<T> bias;
};

/// Gradients mirror the parameter layout of a Network.
template <typename T>
struct Gradients {
    std::vector<Mat<T>> conv_w, dense_w;
    std::vector<RowVec<T>> conv_b, dense_b;

    std::vector<std::span<const T>> tensors() const;
};

/// Activations kept from a forward pass; also exposes the embedding taps.
template <typename T>
struct ForwardCache {
    std::vector<Mat<T>> cols;        // im2col matrix per conv layer
    std::vector<Mat<T>> conv_out;    // post-activation per conv layer, (B*len) x channels
    std::vector<Mat<T>> dense_in;    // input to each dense layer, B x in
    std::vector<Mat<T>> dense_pre;   // pre-activation of each dense layer
    Mat<T> probs;                    // B x n_classes

    const Mat<T>& penultimate() const;  // input of the output layer
};

/// 1-D convolutional classifier: conv stack (channels-last, stride, same
/// padding) -> flatten -> dense stack -> softmax. With no conv layers it is a
/// plain multilayer perceptron.
template <typename T>
class Network {
public:
    Network() = default;
    Network(const CnnConfig& cfg, std::uint64_t seed);

    const CnnConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }

    std::vector<ConvLayer<T>>& conv() { return conv_; }
    const std::vector<ConvLayer<T>>& conv() const { return conv_; }
    std::vector<DenseLayer<T>>& dense() { return dense_; }
    const std::vector<DenseLayer<T>>& dense() const { return dense_; }

    std::size_t parameter_count() const;
    std::vector<std::span<T>> parameters();
    std::vector<std::span<const T>> parameters() const;
    Gradients<T> zero_gradients() const;

    /// batch: rows x input_length.
    void forward(const Mat<T>& batch, ForwardCache<T>& cache) const;
    Mat<T> predict_proba(const Mat<T>& batch) const;

    /// Mean categorical cross-entropy of cached probabilities.
    static T loss(const ForwardCache<T>& cache, std::span<const int> labels);
    /// Backpropagates mean cross-entropy; overwrites `grads`.
    void backward(const ForwardCache<T>& cache, std::span<const int> labels, Gradients<T>& grads) const;

    /// Parameter-wise conversion (e.g. float model to double for gradient checks).
    template <typename U>
    Network<U> cast() const;

    template <typename U>
    friend class Network;

private:
    CnnConfig cfg_;
    std::uint64_t seed_ = 0;
    std::vector<ConvLayer<T>> conv_;
    std::vector<DenseLayer<T>> dense_;
};

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
    Network<U> out;
    out.cfg_ = cfg_;
    out.seed_ = seed_;
    for (const auto& c : conv_) {
        ConvLayer<U> l{c.in_channels, c.out_channels, c.in_len, c.out_len, c.pad_left,
                       c.weight.template cast<U>(), c.bias.template cast<U>()};
        out.conv_.push_back(std::move(l));
    }
    for (const auto& d : dense_) {
        out.dense_.push_back({d.weight.template cast<U>(), d.bias.template cast<U>()});
    }
    return out;
}

extern template class Network<float>;
extern template class Network<double>;

using CnnModel = Network<float>;

// ---------------------------------------------------------------------------
// Optimizers

/// Published default constants per rule; only the learning rate comes from the run config.
struct OptimizerHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double rho = 0.9;
    double epsilon = 1e-7;
    double initial_accumulator = 0.0;

    static OptimizerHyper defaults(OptimizerKind kind);
};

template <typename T>
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate);
    Optimizer(OptimizerKind kind, double learning_rate, OptimizerHyper hyper);

    OptimizerKind kind() const { return kind_; }
    long step_count() const { return t_; }

    /// Applies one update. Throws std::domain_error on NaN/Inf gradients
    /// (parameters are left untouched in that case).
    void step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads);

private:
    OptimizerKind kind_;
    double lr_;
    OptimizerHyper h_;
    long t_ = 0;
    std::vector<std::vector<T>> s1_, s2_;  // rule-specific accumulators, parameter-shaped
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
};

CnnModel build_cnn(const CnnConfig& cfg, std::uint64_t seed);

/// Mini-batch training with a per-epoch seeded shuffle. The config's epochs,
/// batch size, optimizer and learning rate are used; `val` may be empty.
TrainHistory train_cnn(CnnModel& model, const FeatureTable& train, const FeatureTable& val,
                       std::uint64_t shuffle_seed);

/// Mean cross-entropy and accuracy of a model over a table.
struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};
EvalResult evaluate(const CnnModel& model, const FeatureTable& table);

Mat<float> table_to_batch(const FeatureTable& table);
RowMatrix predict_proba(const CnnModel& model, const FeatureTable& table);

FeatureTable extract_embeddings(const CnnModel& model, const FeatureTable& table, EmbeddingTap tap);

/// Largest relative difference between backprop gradients and central finite
/// differences over every parameter. Relative error uses max(|a| + |n|, 1e-6)
/// as denominator so that vanishing gradients are compared absolutely.
struct GradientCheckResult {
    double max_relative_error = 0.0;
    double max_abs_analytic = 0.0;
    std::size_t parameters_checked = 0;
};
GradientCheckResult gradient_check(const Network<double>& model, const Mat<double>& batch,
                                   std::span<const int> labels, double eps = 1e-5);

std::string model_to_json(const CnnModel& model);
CnnModel model_from_json(const std::string& text);
void save_model(const CnnModel& model, const std::filesystem::path& path);
CnnModel load_model(const std::filesystem::path& path);

/// CSV `epoch,train_loss,train_acc,val_acc,seconds`; seconds written as NA when omitted.
void save_history_csv(const TrainHistory& h, const std::filesystem::path& path, bool include_timing);

}  // namespace mea::nn
