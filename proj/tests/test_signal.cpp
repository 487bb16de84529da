#include "mea/rng.hpp"
#include "mea/signal.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace mea;

namespace {

constexpr double kFs = 10000.0;
constexpr double kFc = 200.0;

// analytic Butterworth HP magnitude after bilinear transform with prewarping
double analytic_mag(double f) {
    const double k = std::tan(std::numbers::pi * kFc / kFs);
    const double w = 2.0 * std::numbers::pi * f / kFs;
    if (f == 0.0) return 0.0;
    const double r = k / std::tan(w / 2.0);
    return 1.0 / std::sqrt(1.0 + r * r * r * r);
}

// plain direct form I, written independently of the library's TDF-II loop
std::vector<double> df1(const BiquadCoefficients& c, const std::vector<double>& x) {
    std::vector<double> y(x.size());
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (std::size_t n = 0; n < x.size(); ++n) {
        y[n] = c.b0 * x[n] + c.b1 * x1 + c.b2 * x2 - c.a1 * y1 - c.a2 * y2;
        x2 = x1;
        x1 = x[n];
        y2 = y1;
        y1 = y[n];
    }
    return y;
}

double value(double x, SpikePolarity p) {
    if (p == SpikePolarity::Absolute) return std::abs(x);
    return p == SpikePolarity::Negative ? -x : x;
}

// O(n*W) detector: sigma recomputed from scratch for every candidate
std::vector<SpikeEvent> brute_detect(const std::vector<double>& tr, double fs, const SpikeDetectConfig& cfg) {
    const std::size_t n = tr.size();
    std::size_t w = static_cast<std::size_t>(std::round(cfg.window_ms * fs / 1000.0));
    const auto refr = static_cast<std::size_t>(std::round(cfg.refractory_ms * fs / 1000.0));
    if (w > n) w = n;
    std::vector<SpikeEvent> out;
    for (std::size_t t = 1; t + 1 < n; ++t) {
        const double v = value(tr[t], cfg.polarity);
        if (v < value(tr[t - 1], cfg.polarity) || !(v > value(tr[t + 1], cfg.polarity))) continue;
        double thr = cfg.fixed_threshold_uv;
        if (cfg.mode == ThresholdMode::KSigma) {
            const std::size_t s = t + 1 >= w ? t + 1 - w : 0;
            double m = 0;
            for (std::size_t i = s; i < s + w; ++i) m += tr[i];
            m /= static_cast<double>(w);
            double var = 0;
            for (std::size_t i = s; i < s + w; ++i) var += (tr[i] - m) * (tr[i] - m);
            thr = cfg.k_sigma * std::sqrt(var / static_cast<double>(w));
        }
        if (!(v > thr)) continue;
        if (!out.empty() && t - out.back().sample_index < refr) {
            if (v > value(out.back().amplitude_uv, cfg.polarity)) out.back() = {t, tr[t]};
        } else {
            out.push_back({t, tr[t]});
        }
    }
    return out;
}

std::vector<double> noise(std::size_t n, double sd, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, sd);
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

}  // namespace

TEST_CASE("high-pass magnitude at reference frequencies") {
    const auto c = design_highpass_butterworth(2, kFc, kFs);
    CHECK(std::abs(c.magnitude_at(0.0, kFs)) < 1e-9);
    CHECK(std::abs(c.magnitude_at(kFs / 2, kFs) - 1.0) < 1e-9);
    CHECK(std::abs(c.magnitude_at(kFc, kFs) - 1.0 / std::sqrt(2.0)) < 1e-6);
    CHECK(std::abs(c.magnitude_at(2000.0, kFs) - analytic_mag(2000.0)) < 1e-9);
    // 20 log-spaced probes from 1 Hz to 4999 Hz
    for (int i = 0; i < 20; ++i) {
        const double f = std::exp(std::log(1.0) + (std::log(4999.0) - std::log(1.0)) * i / 19.0);
        const double want = analytic_mag(f);
        CHECK(std::abs(c.magnitude_at(f, kFs) - want) <= 1e-9 * std::max(want, 1e-12) + 1e-15);
    }
}

TEST_CASE("poles are inside the unit circle") {
    const auto c = design_highpass_butterworth();
    CHECK(c.is_stable());
    CHECK(c.pole_moduli()[0] < 1.0);
    for (double fc : {1.0, 50.0, 200.0, 1000.0, 4900.0}) CHECK(design_highpass_butterworth(2, fc, kFs).is_stable());
}

TEST_CASE("bad designs are rejected") {
    CHECK_THROWS_AS(design_highpass_butterworth(4, 200, kFs), std::invalid_argument);
    CHECK_THROWS_AS(design_highpass_butterworth(2, 0, kFs), std::invalid_argument);
    CHECK_THROWS_AS(design_highpass_butterworth(2, 5000, kFs), std::invalid_argument);
    CHECK_THROWS_AS(design_highpass_butterworth(2, 200, -1), std::invalid_argument);
}

TEST_CASE("filter matches a direct-form-I recurrence") {
    const auto c = design_highpass_butterworth();
    const auto x = noise(20000, 30.0, 5);
    const auto y = filter_trace(c, x);
    const auto z = df1(c, x);
    double worst = 0;
    for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(y[i] - z[i]));
    CHECK(worst < 1e-9);
}

TEST_CASE("zero in, zero out; constants decay; linearity") {
    const auto c = design_highpass_butterworth();
    const std::vector<double> zeros(1000, 0.0);
    for (double v : filter_trace(c, zeros)) CHECK(v == 0.0);

    const std::vector<double> dc(static_cast<std::size_t>(kFs) + 1, 42.0);
    const auto y = filter_trace(c, dc);
    CHECK(std::abs(y.back()) < 1e-6 * 42.0);

    const auto a = noise(5000, 10.0, 1), b = noise(5000, 10.0, 2);
    std::vector<double> mix(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) mix[i] = 2.5 * a[i] - 0.75 * b[i];
    const auto ya = filter_trace(c, a), yb = filter_trace(c, b), ym = filter_trace(c, mix);
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(ym[i] - (2.5 * ya[i] - 0.75 * yb[i])));
    CHECK(worst < 1e-10);

    CHECK_THROWS_AS(filter_trace(c, std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("flat trace has no spikes") {
    const std::vector<double> flat(20000, 3.0);
    CHECK(detect_spikes(flat, kFs).events.empty());
}

TEST_CASE("single excursion over 2.75 uV noise is detected once at its peak") {
    auto tr = noise(20000, 2.75, 17);
    tr[12345] = -30.0;
    const auto r = detect_spikes(tr, kFs);
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0].sample_index == 12345);
    CHECK(r.events[0].amplitude_uv == -30.0);
}

TEST_CASE("two 10 sigma excursions 50 ms apart are two events") {
    auto tr = noise(20000, 1.0, 3);
    tr[8000] = 10.0;
    tr[8500] = -10.0;
    SpikeDetectConfig cfg;
    cfg.k_sigma = 8.0;
    const auto r = detect_spikes(tr, kFs, cfg);
    REQUIRE(r.events.size() == 2);
    CHECK(r.events[0].sample_index == 8000);
    CHECK(r.events[1].sample_index == 8500);
}

TEST_CASE("refractory gap keeps the larger of two close peaks") {
    std::vector<double> tr(30000, 0.0);
    tr[10000] = 40.0;
    tr[10005] = 60.0;  // 0.5 ms later, inside the 1 ms gap
    tr[20000] = 50.0;
    SpikeDetectConfig cfg;
    cfg.mode = ThresholdMode::FixedMicrovolts;
    const auto r = detect_spikes(tr, kFs, cfg);
    REQUIRE(r.events.size() == 2);
    CHECK(r.events[0].sample_index == 10005);
    CHECK(r.events[1].sample_index == 20000);
}

TEST_CASE("polarity selects the lobe") {
    std::vector<double> tr(1000, 0.0);
    tr[100] = 50.0;
    tr[300] = -50.0;
    SpikeDetectConfig cfg;
    cfg.mode = ThresholdMode::FixedMicrovolts;
    cfg.polarity = SpikePolarity::Negative;
    auto r = detect_spikes(tr, kFs, cfg);
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0].sample_index == 300);
    cfg.polarity = SpikePolarity::Positive;
    r = detect_spikes(tr, kFs, cfg);
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0].sample_index == 100);
    cfg.polarity = SpikePolarity::Absolute;
    CHECK(detect_spikes(tr, kFs, cfg).events.size() == 2);
}

TEST_CASE("short traces fall back to whole-trace sigma") {
    auto tr = noise(100, 1.0, 4);
    const auto r = detect_spikes(tr, kFs);
    CHECK(r.whole_trace_sigma);
    SpikeDetectConfig bad;
    bad.window_ms = 0.1;  // one sample
    CHECK_THROWS_AS(detect_spikes(tr, kFs, bad), std::invalid_argument);
}

TEST_CASE("property: detector agrees with a brute-force oracle") {
    Rng rng(99);
    std::uniform_int_distribution<int> len(2, 10000);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = static_cast<std::size_t>(len(rng));
        auto tr = noise(n, 1.0 + 4.0 * u(rng), static_cast<std::uint64_t>(trial) + 1000);
        const int spikes = static_cast<int>(u(rng) * 8);
        for (int s = 0; s < spikes; ++s) {
            const auto at = static_cast<std::size_t>(u(rng) * static_cast<double>(n - 1));
            tr[at] += (u(rng) < 0.5 ? -1 : 1) * (20.0 + 60.0 * u(rng));
        }
        SpikeDetectConfig cfg;
        cfg.k_sigma = 3.0 + 6.0 * u(rng);
        cfg.window_ms = 0.5 + 60.0 * u(rng);
        cfg.refractory_ms = u(rng) * 3.0;
        cfg.polarity = static_cast<SpikePolarity>(trial % 3);
        if (trial % 7 == 0) cfg.mode = ThresholdMode::FixedMicrovolts;
        const auto got = detect_spikes(tr, kFs, cfg).events;
        const auto want = brute_detect(tr, kFs, cfg);
        if (got != want) ++mismatches;
    }
    CHECK(mismatches == 0);
}

TEST_CASE("recording to feature rows") {
    MultichannelRecording rec;
    rec.fs_hz = kFs;
    rec.traces.resize(kNumChannels, 100);
    Rng rng(8);
    std::normal_distribution<double> g(0.0, 5.0);
    for (Eigen::Index c = 0; c < rec.traces.rows(); ++c)
        for (Eigen::Index s = 0; s < rec.traces.cols(); ++s) rec.traces(c, s) = g(rng);
    const auto coeffs = design_highpass_butterworth();
    const auto t = recording_to_feature_rows(rec, ClassLabel::ZIKV, DpiTag(3), coeffs);
    REQUIRE(t.n_rows() == 100);
    CHECK(t.n_features() == kRawFeatureCount);
    CHECK(t.feature_names == raw_feature_names());
    for (Eigen::Index i = 0; i < 100; ++i) CHECK(t.features(i, kNumChannels) == static_cast<double>(i));
    for (int j : {0, 17, 59}) {
        std::vector<double> row(100);
        for (int s = 0; s < 100; ++s) row[static_cast<std::size_t>(s)] = rec.traces(j, s);
        const auto y = filter_trace(coeffs, row);
        for (int s = 0; s < 100; ++s) CHECK(t.features(s, j) == y[static_cast<std::size_t>(s)]);
    }
    for (auto l : t.labels) CHECK(l == ClassLabel::ZIKV);

    MultichannelRecording small;
    small.traces = RowMatrix::Zero(8, 100);
    CHECK_THROWS_AS(recording_to_feature_rows(small, ClassLabel::Control, DpiTag(0)), DataError);
}

TEST_CASE("recording CSV round trip") {
    MultichannelRecording rec;
    rec.fs_hz = 2500.0;
    rec.traces = RowMatrix::Random(4, 50) * 100.0;
    const auto p = std::filesystem::temp_directory_path() / "mea_test_signal_rec.csv";
    save_recording_csv(rec, p);
    const auto back = load_recording_csv(p);
    CHECK(back.fs_hz == 2500.0);
    CHECK(back.traces == rec.traces);

    rec.traces(1, 2) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(rec.validate(), DataError);
}
