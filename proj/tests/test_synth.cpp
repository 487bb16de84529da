#include "mea/synth.hpp"

#include <doctest.h>

#include <cmath>

using namespace mea;

namespace {

// fit class means on even rows, score odd rows
double nearest_centroid_accuracy(const FeatureTable& t) {
    const Eigen::Index d = kNumChannels;
    std::array<Vector, 3> mu;
    std::array<int, 3> cnt{};
    for (auto& m : mu) m = Vector::Zero(d);
    for (Eigen::Index r = 0; r < t.features.rows(); r += 2) {
        const auto c = static_cast<std::size_t>(class_index(t.labels[static_cast<std::size_t>(r)]));
        mu[c] += t.features.row(r).head(d).transpose();
        ++cnt[c];
    }
    for (std::size_t c = 0; c < 3; ++c) mu[c] /= std::max(cnt[c], 1);
    int right = 0, total = 0;
    for (Eigen::Index r = 1; r < t.features.rows(); r += 2) {
        const Vector x = t.features.row(r).head(d).transpose();
        int best = 0;
        double bd = (x - mu[0]).squaredNorm();
        for (int c = 1; c < 3; ++c) {
            const double dd = (x - mu[static_cast<std::size_t>(c)]).squaredNorm();
            if (dd < bd) {
                bd = dd;
                best = c;
            }
        }
        right += best == class_index(t.labels[static_cast<std::size_t>(r)]);
        ++total;
    }
    return static_cast<double>(right) / total;
}

SynthTableConfig table_cfg(int rows, double s, std::uint64_t seed) {
    SynthTableConfig c;
    c.rows_per_class = rows;
    c.class_mean_shift = s;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("silent, noiseless recording is all zeros") {
    SynthRecordingConfig cfg;
    cfg.firing_rate_hz = {0.0};
    cfg.noise_sd_uv = 0.0;
    cfg.duration_s = 0.5;
    const auto rec = synth_recording(cfg, ClassLabel::Control);
    CHECK(rec.n_channels() == 60);
    CHECK(rec.n_samples() == 5000);
    CHECK(rec.traces.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("10 Hz for 10 s gives a Poisson count per channel") {
    SynthRecordingConfig cfg;
    cfg.firing_rate_hz = {10.0};
    cfg.class_rate_scale = {1.0, 1.0, 1.0};
    cfg.duration_s = 10.0;
    cfg.n_channels = 6;
    cfg.seed = 21;
    const auto truth = synth_recording_with_truth(cfg, ClassLabel::Control);
    const auto spikes = detect_spikes(truth.recording);
    REQUIRE(spikes.channels.size() == 6);
    for (std::size_t c = 0; c < spikes.channels.size(); ++c) {
        const double n = static_cast<double>(spikes.channels[c].events.size());
        CHECK(std::abs(n - 100.0) <= 30.0);
        // only overlapping templates may merge into one event
        const auto& on = truth.spike_onsets[c];
        int close = 0;
        for (std::size_t i = 1; i < on.size(); ++i) close += on[i] - on[i - 1] < 20;
        const auto missed = static_cast<int>(on.size()) - static_cast<int>(spikes.channels[c].events.size());
        CHECK(missed >= 0);
        CHECK(missed <= close);
    }
}

TEST_CASE("recordings are deterministic per seed") {
    SynthRecordingConfig cfg;
    cfg.duration_s = 0.2;
    cfg.seed = 5;
    const auto a = synth_recording(cfg, ClassLabel::DENV2);
    const auto b = synth_recording(cfg, ClassLabel::DENV2);
    CHECK(a.traces == b.traces);
    cfg.seed = 6;
    CHECK(synth_recording(cfg, ClassLabel::DENV2).traces != a.traces);
}

TEST_CASE("recording config validation") {
    SynthRecordingConfig cfg;
    cfg.duration_s = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.duration_s = 1.0;
    cfg.firing_rate_hz = {std::nan("")};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.firing_rate_hz = {1.0, 2.0};  // neither broadcast nor per-channel
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("table shape and balance") {
    const auto t = synth_feature_table(table_cfg(500, 3.0, 1), DpiTag(2));
    CHECK(t.n_rows() == 1500);
    CHECK(t.feature_names == raw_feature_names());
    CHECK(t.dpi.day() == 2);
    std::array<int, 3> cnt{};
    for (auto l : t.labels) ++cnt[static_cast<std::size_t>(class_index(l))];
    CHECK(cnt == std::array<int, 3>{500, 500, 500});
    for (Eigen::Index i = 0; i < 1500; ++i) CHECK(t.features(i, kNumChannels) == static_cast<double>(i));
    CHECK_NOTHROW(t.validate_raw());
}

TEST_CASE("tables are deterministic per seed") {
    const auto a = synth_feature_table(table_cfg(200, 2.0, 9), DpiTag(1));
    const auto b = synth_feature_table(table_cfg(200, 2.0, 9), DpiTag(1));
    CHECK(a.features == b.features);
    CHECK(a.labels == b.labels);
    CHECK(synth_feature_table(table_cfg(200, 2.0, 10), DpiTag(1)).features != a.features);
}

TEST_CASE("s=0 is chance for nearest centroid") {
    // 10k rows
    const double acc = nearest_centroid_accuracy(synth_feature_table(table_cfg(3334, 0.0, 3), DpiTag(0)));
    CHECK(std::abs(acc - 1.0 / 3.0) <= 0.03);
}

TEST_CASE("large s is nearly perfectly separable") {
    auto cfg = table_cfg(2000, 10.0, 4);
    const double acc = nearest_centroid_accuracy(synth_feature_table(cfg, DpiTag(7)));
    CHECK(acc >= 0.99);
}

TEST_CASE("nearest-centroid accuracy is monotone in s") {
    double prev = 0.0;
    for (double s : {0.0, 1.0, 2.0, 4.0}) {
        double sum = 0;
        for (std::uint64_t seed = 1; seed <= 5; ++seed)
            sum += nearest_centroid_accuracy(synth_feature_table(table_cfg(1000, s, seed), DpiTag(0)));
        const double mean = sum / 5.0;
        CHECK(mean >= prev);
        prev = mean;
    }
}

TEST_CASE("time column carries no class information") {
    const auto t = synth_feature_table(table_cfg(2000, 3.0, 12), DpiTag(3));
    const auto n = static_cast<double>(t.n_rows());
    double lo = t.features.col(kNumChannels).minCoeff(), hi = t.features.col(kNumChannels).maxCoeff();
    std::array<std::array<double, 3>, 10> joint{};
    for (std::size_t i = 0; i < t.n_rows(); ++i) {
        const double v = t.features(static_cast<Eigen::Index>(i), kNumChannels);
        int b = static_cast<int>((v - lo) / (hi - lo) * 10.0);
        b = std::clamp(b, 0, 9);
        joint[static_cast<std::size_t>(b)][static_cast<std::size_t>(class_index(t.labels[i]))] += 1.0;
    }
    std::array<double, 10> pb{};
    std::array<double, 3> pc{};
    for (std::size_t b = 0; b < 10; ++b)
        for (std::size_t c = 0; c < 3; ++c) {
            pb[b] += joint[b][c] / n;
            pc[c] += joint[b][c] / n;
        }
    double mi = 0;
    for (std::size_t b = 0; b < 10; ++b)
        for (std::size_t c = 0; c < 3; ++c) {
            const double p = joint[b][c] / n;
            if (p > 0) mi += p * std::log(p / (pb[b] * pc[c]));
        }
    CHECK(mi < 0.01);
}

TEST_CASE("flat channels are a seeded subset") {
    auto cfg = table_cfg(10, 1.0, 3);
    const auto idx = flat_channel_indices(cfg);
    CHECK(idx.size() == 9);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    CHECK(idx == flat_channel_indices(cfg));
    cfg.n_flat_channels = 0;
    CHECK(flat_channel_indices(cfg).empty());
}

TEST_CASE("table config validation") {
    auto cfg = table_cfg(10, -1.0, 1);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = table_cfg(10, 1.0, 1);
    cfg.covariance_scale = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = table_cfg(0, 1.0, 1);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("spike template is biphasic") {
    const auto tpl = spike_template(60.0, 1.0, 0.5, 10000.0);
    REQUIRE(!tpl.empty());
    const double mn = *std::min_element(tpl.begin(), tpl.end());
    const double mx = *std::max_element(tpl.begin(), tpl.end());
    CHECK(mn == doctest::Approx(-60.0).epsilon(0.05));
    CHECK(mx == doctest::Approx(30.0).epsilon(0.1));
    const auto first_neg = std::find_if(tpl.begin(), tpl.end(), [](double v) { return v < 0; });
    const auto first_pos = std::find_if(tpl.begin(), tpl.end(), [](double v) { return v > 0; });
    CHECK(first_neg < first_pos);
}
