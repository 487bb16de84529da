#include "mea/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

namespace mea::eval {

using json = nlohmann::json;
using baselines::Method;

std::string_view averaging_name(Averaging a) {
    switch (a) {
        case Averaging::Weighted: return "weighted";
        case Averaging::Macro: return "macro";
        case Averaging::Micro: return "micro";
    }
    return "weighted";
}

Averaging parse_averaging(std::string_view name) {
    for (auto a : {Averaging::Weighted, Averaging::Macro, Averaging::Micro}) {
        if (averaging_name(a) == name) return a;
    }
    throw ConfigError("unknown averaging '" + std::string(name) + "'");
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (const auto& row : counts) {
        for (auto v : row) t += v;
    }
    return t;
}

std::int64_t ConfusionMatrix::correct() const {
    std::int64_t t = 0;
    for (int c = 0; c < kNumClasses; ++c) t += counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        for (std::size_t j = 0; j < kNumClasses; ++j) counts[i][j] += o.counts[i][j];
    }
    return *this;
}

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred) {
    if (y_true.size() != y_pred.size()) {
        throw std::invalid_argument("confusion_matrix: " + std::to_string(y_true.size()) + " labels vs " +
                                    std::to_string(y_pred.size()) + " predictions");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const int t = y_true[i], p = y_pred[i];
        if (t < 0 || t >= kNumClasses || p < 0 || p >= kNumClasses) {
            throw std::invalid_argument("confusion_matrix: label out of range at position " + std::to_string(i));
        }
        ++cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    }
    return cm;
}

namespace {

double ratio(std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

BinaryMetrics binary_metrics(std::int64_t tp, std::int64_t tn, std::int64_t fp, std::int64_t fn) {
    if (tp < 0 || tn < 0 || fp < 0 || fn < 0) throw std::invalid_argument("negative count");
    BinaryMetrics m;
    m.accuracy = ratio(tp + tn, tp + tn + fp + fn);
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f1 = harmonic(m.precision, m.recall);
    return m;
}

MetricsReport metrics_from_cm(const ConfusionMatrix& cm, Averaging averaging) {
    const std::int64_t n = cm.total();
    if (n <= 0) throw std::invalid_argument("metrics of an empty confusion matrix");
    MetricsReport r;
    r.averaging = averaging;
    r.accuracy = ratio(cm.correct(), n);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        auto& pc = r.per_class[c];
        pc.tp = cm.counts[c][c];
        for (std::size_t o = 0; o < kNumClasses; ++o) {
            if (o == c) continue;
            pc.fn += cm.counts[c][o];
            pc.fp += cm.counts[o][c];
        }
        pc.tn = n - pc.tp - pc.fn - pc.fp;
        pc.support = pc.tp + pc.fn;
        pc.m = binary_metrics(pc.tp, pc.tn, pc.fp, pc.fn);
    }
    switch (averaging) {
        case Averaging::Weighted: {
            double p = 0.0, f = 0.0;
            for (const auto& pc : r.per_class) {
                p += static_cast<double>(pc.support) * pc.m.precision;
                f += static_cast<double>(pc.support) * pc.m.f1;
            }
            r.precision = p / static_cast<double>(n);
            // sum_c support_c * tp_c / support_c collapses to the trace
            r.recall = ratio(cm.correct(), n);
            r.f1 = f / static_cast<double>(n);
            break;
        }
        case Averaging::Macro: {
            for (const auto& pc : r.per_class) {
                r.precision += pc.m.precision / kNumClasses;
                r.recall += pc.m.recall / kNumClasses;
                r.f1 += pc.m.f1 / kNumClasses;
            }
            break;
        }
        case Averaging::Micro: {
            std::int64_t tp = 0, fp = 0, fn = 0;
            for (const auto& pc : r.per_class) {
                tp += pc.tp;
                fp += pc.fp;
                fn += pc.fn;
            }
            r.precision = ratio(tp, tp + fp);
            r.recall = ratio(tp, tp + fn);
            r.f1 = ratio(2 * tp, 2 * tp + fp + fn);
            break;
        }
    }
    return r;
}

PrCurve pr_curve(std::span<const int> y_true, const RowMatrix& scores, int cls, int n_thresholds) {
    if (static_cast<std::size_t>(scores.rows()) != y_true.size() || scores.cols() != kNumClasses) {
        throw std::invalid_argument("pr_curve: scores must be rows x 3 matching the labels");
    }
    if (cls < 0 || cls >= kNumClasses) throw std::invalid_argument("pr_curve: class out of range");
    if (n_thresholds < 2) throw std::invalid_argument("pr_curve: n_thresholds must be >= 2");

    PrCurve curve;
    curve.cls = cls;
    const std::int64_t positives = std::count(y_true.begin(), y_true.end(), cls);
    if (positives == 0) {
        curve.empty = true;
        return curve;
    }
    std::vector<std::size_t> order(y_true.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores(static_cast<Eigen::Index>(a), cls) > scores(static_cast<Eigen::Index>(b), cls);
    });

    // Cumulative counts at each distinct score, descending.
    struct Step {
        double threshold;
        std::int64_t tp, called;
    };
    std::vector<Step> steps;
    std::int64_t tp = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const double s = scores(static_cast<Eigen::Index>(order[i]), cls);
        if (y_true[order[i]] == cls) ++tp;
        const bool last_of_value =
            i + 1 == order.size() || scores(static_cast<Eigen::Index>(order[i + 1]), cls) != s;
        if (last_of_value) steps.push_back({s, tp, static_cast<std::int64_t>(i + 1)});
    }

    std::vector<std::size_t> pick;
    if (steps.size() <= static_cast<std::size_t>(n_thresholds)) {
        for (std::size_t i = 0; i < steps.size(); ++i) pick.push_back(i);
    } else {
        const double span = static_cast<double>(steps.size() - 1);
        for (int i = 0; i < n_thresholds; ++i) {
            const auto idx = static_cast<std::size_t>(std::llround(span * i / (n_thresholds - 1)));
            if (pick.empty() || pick.back() != idx) pick.push_back(idx);
        }
    }
    for (auto i : pick) {
        const auto& st = steps[i];
        curve.points.push_back({st.threshold, ratio(st.tp, st.called), ratio(st.tp, positives)});
    }
    return curve;
}

const CvReport* Comparison::find(Method m) const {
    for (const auto& r : methods) {
        if (r.method == m) return &r;
    }
    return nullptr;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Prepared {
    FeatureTable train, val, test;
};

FoldResult failed(int fold, std::string error) {
    FoldResult r;
    r.fold = fold;
    r.ok = false;
    r.error = std::move(error);
    r.train_seconds = std::numeric_limits<double>::quiet_NaN();
    return r;
}

std::vector<FoldResult> run_fold(const FeatureTable& table, const FoldPlan& plan, int fold,
                                 std::span<const Method> methods, const PipelineSpec& spec,
                                 const FittedPreprocessor* global) {
    std::vector<FoldResult> out;
    const auto fail_all = [&](const std::string& msg) {
        out.clear();
        for (std::size_t i = 0; i < methods.size(); ++i) out.push_back(failed(fold, msg));
        return out;
    };

    MaterializedFold mf;
    Prepared data;
    try {
        mf = materialize_fold(table, plan, fold);
        const FittedPreprocessor fp = global ? *global : fit_pipeline(mf.train, spec.preprocess);
        data.train = apply_pipeline(fp, mf.train);
        data.val = apply_pipeline(fp, mf.val);
        data.test = apply_pipeline(fp, mf.test);
    } catch (const std::exception& e) {
        return fail_all(std::string("preprocess: ") + e.what());
    }

    baselines::ModelSuite suite = spec.suite;
    suite.seed = derive_seed(spec.suite.seed, {static_cast<std::uint64_t>(fold)});

    const bool need_cnn = std::any_of(methods.begin(), methods.end(),
                                      [](Method m) { return m == Method::Cnn || m == Method::Fused; });
    std::optional<nn::CnnModel> cnn;
    double cnn_seconds = 0.0;
    std::string cnn_error;
    if (need_cnn) {
        try {
            const auto t0 = Clock::now();
            cnn = baselines::train_suite_cnn(data.train, data.val, suite);
            cnn_seconds = seconds_since(t0);
        } catch (const std::exception& e) {
            cnn_error = std::string("cnn: ") + e.what();
        }
    }

    const auto truth = data.test.label_indices();
    for (Method m : methods) {
        if ((m == Method::Cnn || m == Method::Fused) && !cnn) {
            out.push_back(failed(fold, cnn_error));
            continue;
        }
        std::string stage = "fit " + std::string(baselines::method_name(m));
        try {
            const auto t0 = Clock::now();
            baselines::BaselineModel model;
            if (m == Method::Cnn) {
                model = baselines::wrap_cnn(data.train, *cnn);
            } else if (m == Method::Fused) {
                model = baselines::wrap_fused(data.train, baselines::fuse(*cnn, data.train, suite));
            } else {
                model = baselines::fit_baseline(m, data.train, data.val, suite);
            }
            double secs = seconds_since(t0);
            if (m == Method::Cnn || m == Method::Fused) secs += cnn_seconds;
            stage = "predict " + std::string(baselines::method_name(m));
            auto pred = baselines::predict_baseline(model, data.test);

            FoldResult r;
            r.fold = fold;
            r.ok = true;
            r.train_seconds = spec.record_timing ? secs : std::numeric_limits<double>::quiet_NaN();
            r.test_rows = mf.rows.test_rows;
            r.y_true = truth;
            r.y_pred = std::move(pred.labels);
            r.scores = std::move(pred.scores);
            r.cm = confusion_matrix(r.y_true, r.y_pred);
            r.metrics = metrics_from_cm(r.cm, spec.averaging);
            out.push_back(std::move(r));
        } catch (const std::exception& e) {
            out.push_back(failed(fold, stage + ": " + e.what()));
        }
    }
    return out;
}

MetricsReport mean_metrics(const std::vector<FoldResult>& folds, Averaging averaging) {
    MetricsReport mean;
    mean.averaging = averaging;
    int n = 0;
    for (const auto& f : folds) {
        if (!f.ok) continue;
        ++n;
        mean.accuracy += f.metrics.accuracy;
        mean.precision += f.metrics.precision;
        mean.recall += f.metrics.recall;
        mean.f1 += f.metrics.f1;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            auto& dst = mean.per_class[c];
            const auto& src = f.metrics.per_class[c];
            dst.tp += src.tp;
            dst.fp += src.fp;
            dst.fn += src.fn;
            dst.tn += src.tn;
            dst.support += src.support;
            dst.m.accuracy += src.m.accuracy;
            dst.m.precision += src.m.precision;
            dst.m.recall += src.m.recall;
            dst.m.f1 += src.m.f1;
        }
    }
    if (n == 0) return mean;
    const double dn = n;
    mean.accuracy /= dn;
    mean.precision /= dn;
    mean.recall /= dn;
    mean.f1 /= dn;
    for (auto& pc : mean.per_class) {
        pc.m.accuracy /= dn;
        pc.m.precision /= dn;
        pc.m.recall /= dn;
        pc.m.f1 /= dn;
    }
    return mean;
}

void finalize(CvReport& r, int pr_thresholds) {
    r.mean = mean_metrics(r.folds, r.averaging);
    r.failed_folds = 0;
    double secs = 0.0;
    std::vector<int> y;
    std::vector<const FoldResult*> ok;
    for (const auto& f : r.folds) {
        if (!f.ok) {
            ++r.failed_folds;
            continue;
        }
        ok.push_back(&f);
        r.pooled += f.cm;
        secs += f.train_seconds;
        y.insert(y.end(), f.y_true.begin(), f.y_true.end());
    }
    r.mean_train_seconds = ok.empty() ? std::numeric_limits<double>::quiet_NaN() : secs / static_cast<double>(ok.size());
    RowMatrix scores(static_cast<Eigen::Index>(y.size()), kNumClasses);
    Eigen::Index at = 0;
    for (const auto* f : ok) {
        scores.middleRows(at, f->scores.rows()) = f->scores;
        at += f->scores.rows();
    }
    for (int c = 0; c < kNumClasses; ++c) {
        r.pr[static_cast<std::size_t>(c)] =
            y.empty() ? PrCurve{c, {}, true} : pr_curve(y, scores, c, pr_thresholds);
    }
}

}  // namespace

Comparison compare_methods(const FeatureTable& table, std::span<const Method> methods, const PipelineSpec& spec,
                           int k, std::uint64_t seed) {
    if (methods.empty()) throw ConfigError("compare_methods needs at least one method");
    table.validate();
    spec.suite.baselines.validate();
    spec.suite.cnn.validate();
    spec.suite.gbt.validate();

    Comparison cmp;
    cmp.dpi = table.dpi.day();
    cmp.plan = stratified_kfold(table, k, seed);

    std::optional<FittedPreprocessor> global;
    std::string global_error;
    if (spec.preprocess.fit_before_split) {
        try {
            global = fit_pipeline(table, spec.preprocess);
        } catch (const std::exception& e) {
            global_error = std::string("preprocess: ") + e.what();
        }
    }

    std::vector<std::vector<FoldResult>> per_fold(static_cast<std::size_t>(k));
    const auto work = [&](int fold) {
        if (!global_error.empty()) {
            for (std::size_t i = 0; i < methods.size(); ++i) per_fold[static_cast<std::size_t>(fold)].push_back(failed(fold, global_error));
            return;
        }
        per_fold[static_cast<std::size_t>(fold)] =
            run_fold(table, cmp.plan, fold, methods, spec, global ? &*global : nullptr);
    };

    const int threads = std::clamp(spec.threads, 1, k);
    if (threads == 1) {
        for (int f = 0; f < k; ++f) work(f);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (int f = next++; f < k; f = next++) work(f);
            });
        }
        for (auto& th : pool) th.join();
    }

    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        CvReport r;
        r.method = methods[mi];
        r.dpi = cmp.dpi;
        r.k = k;
        r.seed = seed;
        r.averaging = spec.averaging;
        for (int f = 0; f < k; ++f) r.folds.push_back(std::move(per_fold[static_cast<std::size_t>(f)][mi]));
        finalize(r, spec.pr_thresholds);
        cmp.methods.push_back(std::move(r));
    }
    return cmp;
}

CvReport cross_validate(const FeatureTable& table, const PipelineSpec& spec, int k, std::uint64_t seed) {
    const std::array<Method, 1> fused = {Method::Fused};
    return std::move(compare_methods(table, fused, spec, k, seed).methods.front());
}

PerDpiReport per_dpi_report(std::span<const Comparison> comparisons, Method method) {
    PerDpiReport rep;
    rep.method = method;
    int n = 0;
    for (const auto& cmp : comparisons) {
        const CvReport* r = cmp.find(method);
        DpiRow row;
        row.dpi = cmp.dpi;
        if (r == nullptr || r->failed_folds == r->k) {
            row.failed = true;
            row.train_seconds = std::numeric_limits<double>::quiet_NaN();
        } else {
            row.accuracy = r->mean.accuracy;
            row.precision = r->mean.precision;
            row.recall = r->mean.recall;
            row.f1 = r->mean.f1;
            row.train_seconds = r->mean_train_seconds;
            rep.average.accuracy += row.accuracy;
            rep.average.precision += row.precision;
            rep.average.recall += row.recall;
            rep.average.f1 += row.f1;
            rep.average.train_seconds += row.train_seconds;
            ++n;
        }
        rep.rows.push_back(row);
    }
    if (n == 0) {
        rep.average.failed = true;
        rep.average.train_seconds = std::numeric_limits<double>::quiet_NaN();
        return rep;
    }
    rep.average.accuracy /= n;
    rep.average.precision /= n;
    rep.average.recall /= n;
    rep.average.f1 /= n;
    rep.average.train_seconds /= n;
    return rep;
}

// ---------------------------------------------------------------------------

std::string format_number(double v) {
    if (std::isnan(v)) return "NA";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

json num(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

json cm_json(const ConfusionMatrix& cm) {
    json rows = json::array();
    for (const auto& r : cm.counts) rows.push_back(r);
    return rows;
}

json metrics_json(const MetricsReport& m) {
    json per_class = json::object();
    for (int c = 0; c < kNumClasses; ++c) {
        const auto& pc = m.per_class[static_cast<std::size_t>(c)];
        per_class[std::string(class_name(class_from_index(c)))] = {
            {"accuracy", pc.m.accuracy}, {"precision", pc.m.precision}, {"recall", pc.m.recall},
            {"f1", pc.m.f1},             {"support", pc.support}};
    }
    return {{"averaging", averaging_name(m.averaging)},
            {"accuracy", m.accuracy},
            {"precision", m.precision},
            {"recall", m.recall},
            {"f1", m.f1},
            {"per_class", per_class}};
}

json cv_json(const CvReport& r) {
    json folds = json::array();
    for (const auto& f : r.folds) {
        json jf = {{"fold", f.fold}, {"ok", f.ok}};
        if (f.ok) {
            jf["metrics"] = metrics_json(f.metrics);
            jf["confusion"] = cm_json(f.cm);
            jf["train_seconds"] = num(f.train_seconds);
            jf["n_test"] = f.y_true.size();
        } else {
            jf["error"] = f.error;
        }
        folds.push_back(jf);
    }
    return {{"method", baselines::method_name(r.method)},
            {"dpi", r.dpi},
            {"k", r.k},
            {"seed", r.seed},
            {"folds", folds},
            {"mean", metrics_json(r.mean)},
            {"mean_train_seconds", num(r.mean_train_seconds)},
            {"failed_folds", r.failed_folds},
            {"pooled_confusion", cm_json(r.pooled)}};
}

}  // namespace

std::string cv_report_json(const CvReport& r) { return cv_json(r).dump(2) + "\n"; }

std::string comparison_json(std::span<const Comparison> comparisons) {
    json arr = json::array();
    for (const auto& cmp : comparisons) {
        json methods = json::array();
        for (const auto& r : cmp.methods) methods.push_back(cv_json(r));
        arr.push_back({{"dpi", cmp.dpi}, {"k", cmp.plan.k}, {"seed", cmp.plan.seed}, {"methods", methods}});
    }
    return json{{"comparisons", arr}}.dump(2) + "\n";
}

std::string comparison_csv(std::span<const Comparison> comparisons) {
    std::string s = "dpi,method,accuracy,precision,recall,f1,train_seconds\n";
    for (const auto& cmp : comparisons) {
        for (const auto& r : cmp.methods) {
            const bool dead = r.failed_folds == r.k;
            s += std::to_string(cmp.dpi) + ',' + std::string(baselines::method_name(r.method)) + ',';
            if (dead) {
                s += "NA,NA,NA,NA,NA\n";
                continue;
            }
            s += format_number(r.mean.accuracy) + ',' + format_number(r.mean.precision) + ',' +
                 format_number(r.mean.recall) + ',' + format_number(r.mean.f1) + ',' +
                 format_number(r.mean_train_seconds) + '\n';
        }
    }
    return s;
}

std::string per_dpi_csv(const PerDpiReport& r) {
    std::string s = "dpi,accuracy,precision,recall,f1,train_seconds\n";
    const auto line = [&](const std::string& key, const DpiRow& row) {
        if (row.failed) {
            s += key + ",NA,NA,NA,NA,NA\n";
            return;
        }
        s += key + ',' + format_number(row.accuracy) + ',' + format_number(row.precision) + ',' +
             format_number(row.recall) + ',' + format_number(row.f1) + ',' + format_number(row.train_seconds) +
             '\n';
    };
    for (const auto& row : r.rows) line(std::to_string(row.dpi), row);
    line("average", r.average);
    return s;
}

std::string folds_csv(const CvReport& r) {
    std::string s = "fold,accuracy,precision,recall,f1,train_seconds\n";
    for (const auto& f : r.folds) {
        if (!f.ok) {
            s += std::to_string(f.fold) + ",NA,NA,NA,NA,NA\n";
            continue;
        }
        s += std::to_string(f.fold) + ',' + format_number(f.metrics.accuracy) + ',' +
             format_number(f.metrics.precision) + ',' + format_number(f.metrics.recall) + ',' +
             format_number(f.metrics.f1) + ',' + format_number(f.train_seconds) + '\n';
    }
    s += "mean," + format_number(r.mean.accuracy) + ',' + format_number(r.mean.precision) + ',' +
         format_number(r.mean.recall) + ',' + format_number(r.mean.f1) + ',' +
         format_number(r.mean_train_seconds) + '\n';
    return s;
}

std::string pr_csv(const std::array<PrCurve, kNumClasses>& curves) {
    std::string s = "class,threshold,precision,recall\n";
    for (const auto& c : curves) {
        const std::string name(class_name(class_from_index(c.cls)));
        for (const auto& p : c.points) {
            s += name + ',' + format_number(p.threshold) + ',' + format_number(p.precision) + ',' +
                 format_number(p.recall) + '\n';
        }
    }
    return s;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
    std::string s = "true\\predicted,Control,DENV2,ZIKV\n";
    for (int t = 0; t < kNumClasses; ++t) {
        s += std::string(class_name(class_from_index(t)));
        for (int p = 0; p < kNumClasses; ++p) {
            s += ',' + std::to_string(cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]);
        }
        s += '\n';
    }
    return s;
}

namespace {

constexpr std::array<const char*, kNumClasses> kColors = {"#1f77b4", "#d62728", "#2ca02c"};

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::string escape_xml(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string pr_svg(const std::array<PrCurve, kNumClasses>& curves, std::string_view title) {
    constexpr double W = 480, H = 400, L = 60, R = 20, T = 40, B = 50;
    const double pw = W - L - R, ph = H - T - B;
    const auto sx = [&](double r) { return fixed(L + r * pw, 2); };
    const auto sy = [&](double p) { return fixed(T + (1.0 - p) * ph, 2); };

    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"400\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"240\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + escape_xml(title) + "</text>\n";
    s += "<rect x=\"" + fixed(L, 0) + "\" y=\"" + fixed(T, 0) + "\" width=\"" + fixed(pw, 0) + "\" height=\"" +
         fixed(ph, 0) + "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double v = i / 5.0;
        s += "<text x=\"" + sx(v) + "\" y=\"" + fixed(T + ph + 16, 2) + "\" text-anchor=\"middle\">" + fixed(v, 1) + "</text>\n";
        s += "<text x=\"" + fixed(L - 6, 2) + "\" y=\"" + sy(v) + "\" text-anchor=\"end\" dominant-baseline=\"middle\">" +
             fixed(v, 1) + "</text>\n";
    }
    s += "<text x=\"" + fixed(L + pw / 2, 2) + "\" y=\"" + fixed(H - 12, 2) + "\" text-anchor=\"middle\">Recall</text>\n";
    s += "<text x=\"16\" y=\"" + fixed(T + ph / 2, 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         fixed(T + ph / 2, 2) + ")\">Precision</text>\n";
    for (const auto& c : curves) {
        if (c.points.empty()) continue;
        s += "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" + std::string(kColors[static_cast<std::size_t>(c.cls)]) +
             "\" points=\"";
        for (const auto& p : c.points) s += sx(p.recall) + "," + sy(p.precision) + " ";
        s += "\"/>\n";
    }
    for (int c = 0; c < kNumClasses; ++c) {
        const double y = T + 16 + 16 * c;
        s += "<line x1=\"" + fixed(L + 12, 2) + "\" x2=\"" + fixed(L + 32, 2) + "\" y1=\"" + fixed(y, 2) + "\" y2=\"" +
             fixed(y, 2) + "\" stroke-width=\"2\" stroke=\"" + kColors[static_cast<std::size_t>(c)] + "\"/>\n";
        s += "<text x=\"" + fixed(L + 38, 2) + "\" y=\"" + fixed(y, 2) + "\" dominant-baseline=\"middle\">" +
             std::string(class_name(class_from_index(c))) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

std::string confusion_svg(const ConfusionMatrix& cm, std::string_view title) {
    constexpr double cell = 90, L = 90, T = 60;
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"380\" height=\"380\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"190\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + escape_xml(title) + "</text>\n";
    for (int t = 0; t < kNumClasses; ++t) {
        std::int64_t row_total = 0;
        for (auto v : cm.counts[static_cast<std::size_t>(t)]) row_total += v;
        for (int p = 0; p < kNumClasses; ++p) {
            const auto v = cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
            const double frac = row_total > 0 ? static_cast<double>(v) / static_cast<double>(row_total) : 0.0;
            const int shade = static_cast<int>(std::lround(255.0 * (1.0 - 0.8 * frac)));
            const double x = L + cell * p, y = T + cell * t;
            s += "<rect x=\"" + fixed(x, 0) + "\" y=\"" + fixed(y, 0) + "\" width=\"90\" height=\"90\" stroke=\"black\" fill=\"rgb(" +
                 std::to_string(shade) + "," + std::to_string(shade) + ",255)\"/>\n";
            s += "<text x=\"" + fixed(x + cell / 2, 0) + "\" y=\"" + fixed(y + cell / 2, 0) +
                 "\" text-anchor=\"middle\" dominant-baseline=\"middle\">" + std::to_string(v) + "</text>\n";
        }
        const std::string name(class_name(class_from_index(t)));
        s += "<text x=\"" + fixed(L - 8, 0) + "\" y=\"" + fixed(T + cell * t + cell / 2, 0) +
             "\" text-anchor=\"end\" dominant-baseline=\"middle\">" + name + "</text>\n";
        s += "<text x=\"" + fixed(L + cell * t + cell / 2, 0) + "\" y=\"" + fixed(T - 8, 0) +
             "\" text-anchor=\"middle\">" + name + "</text>\n";
    }
    s += "<text x=\"" + fixed(L + 1.5 * cell, 0) + "\" y=\"" + fixed(T + 3 * cell + 24, 0) +
         "\" text-anchor=\"middle\">rows: true class, columns: predicted</text>\n";
    s += "</svg>\n";
    return s;
}

namespace {

std::string pct(double v) { return std::isnan(v) ? "NA" : fixed(100.0 * v, 2); }
std::string secs(double v) { return std::isnan(v) ? "NA" : fixed(v, 2); }

std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.insert(0, width - s.size(), ' ');
    return s;
}

}  // namespace

std::string format_per_dpi(const PerDpiReport& r) {
    std::string s = "method: " + std::string(baselines::method_label(r.method)) + "\n";
    s += pad("dpi", 8) + pad("accuracy", 11) + pad("precision", 11) + pad("recall", 11) + pad("f1", 11) +
         pad("train_s", 11) + "\n";
    const auto line = [&](const std::string& key, const DpiRow& row) {
        if (row.failed) {
            s += pad(key, 8) + pad("failed", 11) + "\n";
            return;
        }
        s += pad(key, 8) + pad(pct(row.accuracy), 11) + pad(pct(row.precision), 11) + pad(pct(row.recall), 11) +
             pad(pct(row.f1), 11) + pad(secs(row.train_seconds), 11) + "\n";
    };
    for (const auto& row : r.rows) line(std::to_string(row.dpi), row);
    line("average", r.average);
    return s;
}

std::string format_comparison(std::span<const Comparison> comparisons) {
    std::string s;
    for (const auto& cmp : comparisons) {
        s += "dpi " + std::to_string(cmp.dpi) + "\n" + pad("", 11);
        for (const auto& r : cmp.methods) s += pad(std::string(baselines::method_name(r.method)), 20);
        s += "\n";
        const std::array<std::string, 5> names = {"accuracy", "precision", "recall", "f1", "train_s"};
        for (std::size_t k = 0; k < names.size(); ++k) {
            s += pad(names[k], 11);
            for (const auto& r : cmp.methods) {
                if (r.failed_folds == r.k) {
                    s += pad("failed", 20);
                    continue;
                }
                const double v = k == 0 ? r.mean.accuracy : k == 1 ? r.mean.precision : k == 2 ? r.mean.recall
                                 : k == 3 ? r.mean.f1 : r.mean_train_seconds;
                s += pad(k == 4 ? secs(v) : pct(v), 20);
            }
            s += "\n";
        }
    }
    return s;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace mea::eval
