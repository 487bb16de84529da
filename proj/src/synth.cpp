#include "mea/synth.hpp"

#include "mea/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace mea {

void SynthRecordingConfig::validate() const {
    if (!(fs_hz > 0.0)) throw ConfigError("synth.fs_hz must be positive");
    if (n_channels <= 0) throw ConfigError("synth.n_channels must be positive");
    if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
        throw ConfigError("synth.duration_s must be positive");
    }
    if (firing_rate_hz.size() != 1 && firing_rate_hz.size() != static_cast<std::size_t>(n_channels)) {
        throw ConfigError("synth.firing_rate_hz needs 1 or n_channels entries");
    }
    for (double r : firing_rate_hz) {
        if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("firing rates must be finite and >= 0");
    }
    for (double r : class_rate_scale) {
        if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("class_rate_scale must be finite and >= 0");
    }
    if (!(spike_width_ms > 0.0)) throw ConfigError("spike_width_ms must be positive");
    if (!(noise_sd_uv >= 0.0)) throw ConfigError("noise_sd_uv must be >= 0");
}

void SynthTableConfig::validate() const {
    if (rows_per_class < 1) throw ConfigError("rows_per_class must be >= 1");
    if (!(class_mean_shift >= 0.0) || !std::isfinite(class_mean_shift)) {
        throw ConfigError("class_mean_shift must be finite and >= 0");
    }
    if (!(covariance_scale > 0.0)) throw ConfigError("covariance_scale must be positive");
    if (!(dpi_effect >= 0.0)) throw ConfigError("dpi_effect must be >= 0");
    if (n_flat_channels < 0 || n_flat_channels > kNumChannels - kNumClasses) {
        throw ConfigError("n_flat_channels out of range");
    }
}

const char* noise_shape_name(NoiseShape s) {
    return s == NoiseShape::Laplace ? "laplace" : "gaussian";
}

NoiseShape parse_noise_shape(const std::string& s) {
    if (s == "gaussian") return NoiseShape::Gaussian;
    if (s == "laplace") return NoiseShape::Laplace;
    throw ConfigError("unknown noise shape '" + s + "' (gaussian|laplace)");
}

std::vector<double> spike_template(double amplitude_uv, double width_ms, double positive_ratio,
                                   double fs_hz) {
    const auto n = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(width_ms * fs_hz / 1000.0)));
    const std::size_t neg = n / 2;
    const std::size_t pos = n - neg;
    std::vector<double> t(n);
    for (std::size_t i = 0; i < neg; ++i) {
        t[i] = -amplitude_uv * std::sin(std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(neg));
    }
    for (std::size_t i = 0; i < pos; ++i) {
        t[neg + i] = positive_ratio * amplitude_uv *
                     std::sin(std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(pos));
    }
    return t;
}

SynthRecording synth_recording_with_truth(const SynthRecordingConfig& cfg, ClassLabel cls) {
    cfg.validate();
    const auto n_samples = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.fs_hz));
    const auto tmpl = spike_template(cfg.spike_amplitude_uv, cfg.spike_width_ms,
                                     cfg.positive_lobe_ratio, cfg.fs_hz);

    SynthRecording out;
    out.recording.fs_hz = cfg.fs_hz;
    out.recording.traces = RowMatrix::Zero(cfg.n_channels, static_cast<Eigen::Index>(n_samples));
    out.spike_onsets.resize(static_cast<std::size_t>(cfg.n_channels));

    const double class_scale = cfg.class_rate_scale[static_cast<std::size_t>(class_index(cls))];
    for (int c = 0; c < cfg.n_channels; ++c) {
        Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(class_index(cls)),
                                       static_cast<std::uint64_t>(c)}));
        auto row = out.recording.traces.row(c);
        const double rate =
            class_scale * (cfg.firing_rate_hz.size() == 1 ? cfg.firing_rate_hz[0]
                                                          : cfg.firing_rate_hz[static_cast<std::size_t>(c)]);
        auto& onsets = out.spike_onsets[static_cast<std::size_t>(c)];
        if (rate > 0.0) {
            std::exponential_distribution<double> gap(rate);
            double t = gap(rng);
            while (t < cfg.duration_s) {
                const auto start = static_cast<std::size_t>(t * cfg.fs_hz);
                onsets.push_back(start);
                for (std::size_t i = 0; i < tmpl.size() && start + i < n_samples; ++i) {
                    row(static_cast<Eigen::Index>(start + i)) += tmpl[i];
                }
                t += gap(rng);
            }
        }
        if (cfg.lfp_amplitude_uv != 0.0) {
            std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
            const double phase = phase_dist(rng);
            const double w = 2.0 * std::numbers::pi * cfg.lfp_frequency_hz / cfg.fs_hz;
            for (std::size_t i = 0; i < n_samples; ++i) {
                row(static_cast<Eigen::Index>(i)) +=
                    cfg.lfp_amplitude_uv * std::sin(w * static_cast<double>(i) + phase);
            }
        }
        if (cfg.noise_sd_uv > 0.0) {
            std::normal_distribution<double> noise(0.0, cfg.noise_sd_uv);
            for (std::size_t i = 0; i < n_samples; ++i) row(static_cast<Eigen::Index>(i)) += noise(rng);
        }
    }
    return out;
}

MultichannelRecording synth_recording(const SynthRecordingConfig& cfg, ClassLabel cls) {
    return synth_recording_with_truth(cfg, cls).recording;
}

std::vector<int> flat_channel_indices(const SynthTableConfig& cfg) {
    std::vector<int> idx(kNumChannels);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(cfg.seed, {0xf1a7}));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(cfg.n_flat_channels));
    std::sort(idx.begin(), idx.end());
    return idx;
}

namespace {

/// Orthonormal random directions supported on the informative channels.
std::array<Vector, kNumClasses> class_directions(const SynthTableConfig& cfg,
                                                 const std::vector<bool>& informative) {
    Rng rng(derive_seed(cfg.seed, {0xd1ec}));
    std::normal_distribution<double> nd;
    std::array<Vector, kNumClasses> dirs;
    for (int c = 0; c < kNumClasses; ++c) {
        Vector v = Vector::Zero(kNumChannels);
        for (int j = 0; j < kNumChannels; ++j) {
            if (informative[static_cast<std::size_t>(j)]) v(j) = nd(rng);
        }
        for (int p = 0; p < c; ++p) v -= v.dot(dirs[static_cast<std::size_t>(p)]) * dirs[static_cast<std::size_t>(p)];
        dirs[static_cast<std::size_t>(c)] = v.normalized();
    }
    return dirs;
}

}  // namespace

FeatureTable synth_feature_table(const SynthTableConfig& cfg, DpiTag dpi) {
    cfg.validate();
    const double sigma = std::sqrt(cfg.covariance_scale);
    const auto flat = flat_channel_indices(cfg);
    std::vector<bool> informative(kNumChannels, true);
    for (int j : flat) informative[static_cast<std::size_t>(j)] = false;

    // Per-channel µV gain and offset (shared across dpi: same electrodes).
    Rng chan_rng(derive_seed(cfg.seed, {0xc4a2}));
    std::uniform_real_distribution<double> gain_dist(0.5, 4.0), offset_dist(-5.0, 5.0);
    Vector gain(kNumChannels), offset(kNumChannels);
    for (int j = 0; j < kNumChannels; ++j) {
        gain(j) = gain_dist(chan_rng);
        offset(j) = offset_dist(chan_rng);
    }

    const auto dirs = class_directions(cfg, informative);
    std::array<Vector, kNumClasses> means;
    {
        Rng dpi_rng(derive_seed(cfg.seed, {0xd910, static_cast<std::uint64_t>(dpi.day())}));
        std::normal_distribution<double> nd;
        for (int c = 0; c < kNumClasses; ++c) {
            Vector perturb(kNumChannels);
            for (int j = 0; j < kNumChannels; ++j) perturb(j) = informative[static_cast<std::size_t>(j)] ? nd(dpi_rng) : 0.0;
            const double norm = perturb.norm();
            if (norm > 0.0) perturb /= norm;
            means[static_cast<std::size_t>(c)] =
                sigma * cfg.class_mean_shift *
                (std::numbers::sqrt2 * dirs[static_cast<std::size_t>(c)] + cfg.dpi_effect * perturb);
        }
    }

    const std::size_t n = static_cast<std::size_t>(cfg.rows_per_class) * kNumClasses;
    std::vector<ClassLabel> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = class_from_index(static_cast<int>(i % kNumClasses));
    Rng rng(derive_seed(cfg.seed, {0x7ab1e, static_cast<std::uint64_t>(dpi.day())}));
    std::shuffle(labels.begin(), labels.end(), rng);

    FeatureTable t;
    t.feature_names = raw_feature_names();
    t.dpi = dpi;
    t.features.resize(static_cast<Eigen::Index>(n), kRawFeatureCount);
    t.labels = std::move(labels);

    std::normal_distribution<double> nd;
    // Laplace(b) has variance 2b^2
    std::exponential_distribution<double> ed(std::numbers::sqrt2 / sigma);
    auto draw = [&]() {
        if (cfg.noise == NoiseShape::Gaussian) return sigma * nd(rng);
        return ed(rng) - ed(rng);
    };
    const double half_width = std::sqrt(3.0) * sigma;  // uniform with variance sigma^2
    std::uniform_real_distribution<double> ud(-half_width, half_width);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const Vector& mean = means[static_cast<std::size_t>(class_index(t.labels[i]))];
        for (int j = 0; j < kNumChannels; ++j) {
            const double z = informative[static_cast<std::size_t>(j)] ? mean(j) + draw() : ud(rng);
            t.features(r, j) = offset(j) + gain(j) * z;
        }
        t.features(r, kNumChannels) = static_cast<double>(i);
    }
    return t;
}

}  // namespace mea
