#pragma once

#include "mea/dataset.hpp"
#include "mea/types.hpp"

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace mea {

/// Raw voltage traces in µV, one row per electrode.
struct MultichannelRecording {
    double fs_hz = 10000.0;
    RowMatrix traces;  // channels x samples

    int n_channels() const { return static_cast<int>(traces.rows()); }
    std::size_t n_samples() const { return static_cast<std::size_t>(traces.cols()); }
    void validate() const;
};

/// Second-order section, a0 normalized to 1:
///   y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
struct BiquadCoefficients {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;

    /// H(e^{jw}) at normalized angular frequency w (rad/sample).
    std::complex<double> response(double w) const;
    double magnitude_at(double freq_hz, double fs_hz) const;
    /// Pole moduli, largest first.
    std::array<double, 2> pole_moduli() const;
    bool is_stable() const { return pole_moduli()[0] < 1.0; }
};

/// Bilinear transform (with cutoff prewarping) of the analog 2nd-order
/// Butterworth high-pass s^2 / (s^2 + sqrt(2) s + 1).
BiquadCoefficients design_highpass_butterworth(int order = 2, double fc_hz = 200.0,
                                               double fs_hz = 10000.0);

/// Causal filtering from zero initial state (transposed direct form II).
std::vector<double> filter_trace(const BiquadCoefficients& coeffs, std::span<const double> trace);

enum class SpikePolarity { Absolute, Negative, Positive };
enum class ThresholdMode { KSigma, FixedMicrovolts };

struct SpikeDetectConfig {
    double k_sigma = 8.0;
    double window_ms = 500.0;
    double refractory_ms = 1.0;
    SpikePolarity polarity = SpikePolarity::Absolute;
    ThresholdMode mode = ThresholdMode::KSigma;
    double fixed_threshold_uv = 22.0;
};

struct SpikeEvent {
    std::size_t sample_index = 0;
    double amplitude_uv = 0.0;  // signed filtered value at the peak

    friend bool operator==(const SpikeEvent&, const SpikeEvent&) = default;
};

struct ChannelSpikes {
    std::vector<SpikeEvent> events;
    /// Set when the window exceeded the trace and whole-trace sigma was used instead.
    bool whole_trace_sigma = false;
};

struct SpikeTrain {
    std::vector<ChannelSpikes> channels;
    std::size_t total_events() const;
};

/// Window, refractory gap and threshold sample counts derived from a config.
struct DetectGeometry {
    std::size_t window = 0;      // samples in the trailing sigma window
    std::size_t refractory = 0;  // minimum gap between kept events
    bool whole_trace = false;
};
DetectGeometry detect_geometry(std::size_t n_samples, double fs_hz, const SpikeDetectConfig& cfg);

/// Threshold detector over a rolling trailing-window standard deviation.
///
/// For sample t the window is [s, s + W) with s = max(0, t - W + 1): trailing
/// once W samples are available, the first full window before that. A sample
/// is a candidate when its polarity-adjusted value v[t] is a local peak
/// (v[t] >= v[t-1] and v[t] > v[t+1], first and last samples excluded) and
/// exceeds the threshold. Candidates
/// closer than the refractory gap to the last kept event replace it only if
/// larger.
ChannelSpikes detect_spikes(std::span<const double> trace, double fs_hz,
                            const SpikeDetectConfig& cfg = {});

SpikeTrain detect_spikes(const MultichannelRecording& rec, const SpikeDetectConfig& cfg = {});

MultichannelRecording filter_recording(const MultichannelRecording& rec,
                                       const BiquadCoefficients& coeffs);

/// One row per sample: filtered channel values, time = sample index.
FeatureTable recording_to_feature_rows(const MultichannelRecording& rec, ClassLabel label,
                                       DpiTag dpi,
                                       const BiquadCoefficients& coeffs = design_highpass_butterworth());

// Recording CSV: "fs_hz,<v>" / "n_channels,<n>" / "ch01,..." then one row per sample.
void save_recording_csv(const MultichannelRecording& rec, const std::filesystem::path& path);
MultichannelRecording load_recording_csv(const std::filesystem::path& path);

/// CSV `channel,sample_index,amplitude_uV`, channels numbered from 1.
void save_spike_train_csv(const SpikeTrain& spikes, const std::filesystem::path& path);

}  // namespace mea
