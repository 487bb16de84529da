#pragma once

#include "mea/baselines.hpp"
#include "mea/dataset.hpp"
#include "mea/preprocess.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mea::eval {

enum class Averaging { Weighted, Macro, Micro };
std::string_view averaging_name(Averaging a);
Averaging parse_averaging(std::string_view name);

/// counts[true][predicted]
struct ConfusionMatrix {
    std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};

    std::int64_t total() const;
    std::int64_t correct() const;
    ConfusionMatrix& operator+=(const ConfusionMatrix& o);
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred);

/// Accuracy, precision, recall and F1 of a single two-class count table.
struct BinaryMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};
BinaryMetrics binary_metrics(std::int64_t tp, std::int64_t tn, std::int64_t fp, std::int64_t fn);

struct ClassMetrics {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::int64_t support = 0;  // tp + fn
    BinaryMetrics m;           // one-vs-rest
};

struct MetricsReport {
    Averaging averaging = Averaging::Weighted;
    double accuracy = 0.0;  // trace / total
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::array<ClassMetrics, kNumClasses> per_class{};
};

/// Throws std::invalid_argument on an empty matrix.
MetricsReport metrics_from_cm(const ConfusionMatrix& cm, Averaging averaging = Averaging::Weighted);

struct PrPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

struct PrCurve {
    int cls = 0;
    std::vector<PrPoint> points;  // thresholds descending
    bool empty = false;           // class had no positives
};

/// Sweeps the distinct scores of class `cls` from high to low (thinned to at
/// most n_thresholds by quantile positions); a row is called positive when its
/// class score is >= the threshold.
PrCurve pr_curve(std::span<const int> y_true, const RowMatrix& scores, int cls, int n_thresholds);

/// Settings shared by every method inside one evaluation.
struct PipelineSpec {
    PreprocessConfig preprocess;
    baselines::ModelSuite suite;
    Averaging averaging = Averaging::Weighted;
    int pr_thresholds = 101;
    int threads = 1;
    bool record_timing = true;
};

struct FoldResult {
    int fold = 0;
    bool ok = false;
    std::string error;  // "<stage>: <message>" when !ok
    ConfusionMatrix cm;
    MetricsReport metrics;
    double train_seconds = 0.0;  // NaN when timing is not recorded
    std::vector<std::size_t> test_rows;
    std::vector<int> y_true;
    std::vector<int> y_pred;
    RowMatrix scores;
};

struct CvReport {
    baselines::Method method = baselines::Method::Fused;
    int dpi = 0;
    int k = 0;
    std::uint64_t seed = 0;
    Averaging averaging = Averaging::Weighted;
    std::vector<FoldResult> folds;
    /// Arithmetic mean over successful folds.
    MetricsReport mean;
    double mean_train_seconds = 0.0;
    int failed_folds = 0;
    ConfusionMatrix pooled;  // summed over successful folds
    std::array<PrCurve, kNumClasses> pr;  // from pooled out-of-fold scores
};

/// Cross-validated fused pipeline (the proposed method).
CvReport cross_validate(const FeatureTable& table, const PipelineSpec& spec, int k, std::uint64_t seed);

struct Comparison {
    int dpi = 0;
    FoldPlan plan;
    std::vector<CvReport> methods;  // in request order

    const CvReport* find(baselines::Method m) const;
};

/// Every method sees the same FoldPlan and the same per-fold preprocessing.
/// When both `cnn` and `fused` are requested they share one trained network per fold.
Comparison compare_methods(const FeatureTable& table, std::span<const baselines::Method> methods,
                           const PipelineSpec& spec, int k, std::uint64_t seed);

/// Mean metrics of one method per dpi plus an average row.
struct DpiRow {
    int dpi = 0;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0, train_seconds = 0.0;
    bool failed = false;
};
struct PerDpiReport {
    baselines::Method method = baselines::Method::Fused;
    std::vector<DpiRow> rows;
    DpiRow average;
};
PerDpiReport per_dpi_report(std::span<const Comparison> comparisons, baselines::Method method);

// ---------------------------------------------------------------------------
// Export

std::string cv_report_json(const CvReport& r);
std::string comparison_json(std::span<const Comparison> comparisons);
/// `dpi,method,accuracy,precision,recall,f1,train_seconds`
std::string comparison_csv(std::span<const Comparison> comparisons);
/// `dpi,accuracy,precision,recall,f1,train_seconds` with a final `average` row.
std::string per_dpi_csv(const PerDpiReport& r);
/// `fold,accuracy,precision,recall,f1,train_seconds` with a final `mean` row.
std::string folds_csv(const CvReport& r);
/// `class,threshold,precision,recall`
std::string pr_csv(const std::array<PrCurve, kNumClasses>& curves);
/// `true\predicted,Control,DENV2,ZIKV`
std::string confusion_csv(const ConfusionMatrix& cm);

std::string pr_svg(const std::array<PrCurve, kNumClasses>& curves, std::string_view title);
std::string confusion_svg(const ConfusionMatrix& cm, std::string_view title);

/// Plain-text grids for terminal output.
std::string format_per_dpi(const PerDpiReport& r);
std::string format_comparison(std::span<const Comparison> comparisons);

/// Shortest round-trip decimal; NaN becomes "NA".
std::string format_number(double v);

void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace mea::eval
