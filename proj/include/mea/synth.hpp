#pragma once

#include "mea/dataset.hpp"
#include "mea/signal.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mea {

struct SynthRecordingConfig {
    double fs_hz = 10000.0;
    int n_channels = kNumChannels;
    double duration_s = 1.0;
    /// One rate per channel, or a single value broadcast to every channel.
    std::vector<double> firing_rate_hz = {5.0};
    /// Per-class multiplier on every channel's rate (Control, DENV2, ZIKV).
    std::array<double, kNumClasses> class_rate_scale = {1.0, 0.7, 1.4};
    double spike_amplitude_uv = 60.0;  // depth of the negative lobe
    double spike_width_ms = 1.0;
    double positive_lobe_ratio = 0.5;
    double noise_sd_uv = 2.75;
    /// Slow field-potential component (removed by the 200 Hz high-pass).
    double lfp_amplitude_uv = 0.0;
    double lfp_frequency_hz = 8.0;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Within-class noise on informative channels. Laplace keeps the same variance but
/// a smaller IQR, so robust-scaled variances sit well above the 0.5 cutoff.
enum class NoiseShape { Gaussian, Laplace };

const char* noise_shape_name(NoiseShape s);
NoiseShape parse_noise_shape(const std::string& s);

struct SynthTableConfig {
    int rows_per_class = 1000;
    /// Class means sit sqrt(2)*s*sigma from the origin along orthonormal random
    /// directions, so any two classes are 2*s*sigma apart.
    double class_mean_shift = 3.0;
    double covariance_scale = 1.0;  // sigma^2 of the informative channels
    /// Random per-dpi, per-class mean perturbation, in units of s*sigma (so s=0 stays chance).
    double dpi_effect = 0.25;
    /// Class-uninformative, uniformly distributed channels. With the sequential
    /// time column these are the features whose robust-scaled variance is 1/3.
    int n_flat_channels = 9;
    NoiseShape noise = NoiseShape::Gaussian;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Biphasic template: negative half-sine lobe then a positive lobe, `width_ms` total.
std::vector<double> spike_template(double amplitude_uv, double width_ms, double positive_ratio,
                                   double fs_hz);

struct SynthRecording {
    MultichannelRecording recording;
    /// Ground-truth spike onsets per channel.
    std::vector<std::vector<std::size_t>> spike_onsets;
};

SynthRecording synth_recording_with_truth(const SynthRecordingConfig& cfg, ClassLabel cls);
MultichannelRecording synth_recording(const SynthRecordingConfig& cfg, ClassLabel cls);

FeatureTable synth_feature_table(const SynthTableConfig& cfg, DpiTag dpi);

/// Indices of the flat channels for a config (deterministic in the seed).
std::vector<int> flat_channel_indices(const SynthTableConfig& cfg);

}  // namespace mea
