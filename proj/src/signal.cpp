#include "mea/signal.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace mea {

void MultichannelRecording::validate() const {
    if (!(fs_hz > 0.0) || !std::isfinite(fs_hz)) throw DataError("fs_hz must be positive");
    if (!traces.allFinite()) throw DataError("recording contains non-finite samples");
}

std::complex<double> BiquadCoefficients::response(double w) const {
    const std::complex<double> z1 = std::polar(1.0, -w);
    const std::complex<double> z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
}

double BiquadCoefficients::magnitude_at(double freq_hz, double fs_hz) const {
    return std::abs(response(2.0 * std::numbers::pi * freq_hz / fs_hz));
}

std::array<double, 2> BiquadCoefficients::pole_moduli() const {
    // roots of z^2 + a1 z + a2
    const std::complex<double> disc = std::sqrt(std::complex<double>(a1 * a1 - 4.0 * a2, 0.0));
    const double m1 = std::abs((-a1 + disc) / 2.0);
    const double m2 = std::abs((-a1 - disc) / 2.0);
    return {std::max(m1, m2), std::min(m1, m2)};
}

BiquadCoefficients design_highpass_butterworth(int order, double fc_hz, double fs_hz) {
    if (order != 2) {
        throw std::invalid_argument("only 2nd-order Butterworth sections are supported");
    }
    if (!(fs_hz > 0.0)) throw std::invalid_argument("fs_hz must be positive");
    if (!(fc_hz > 0.0) || !(fc_hz < fs_hz / 2.0)) {
        throw std::invalid_argument("cutoff must lie in (0, fs/2)");
    }
    const double k = std::tan(std::numbers::pi * fc_hz / fs_hz);
    const double k2 = k * k;
    const double sqrt2 = std::numbers::sqrt2;
    const double norm = 1.0 / (1.0 + sqrt2 * k + k2);

    BiquadCoefficients c;
    c.b0 = norm;
    c.b1 = -2.0 * norm;
    c.b2 = norm;
    c.a1 = 2.0 * (k2 - 1.0) * norm;
    c.a2 = (1.0 - sqrt2 * k + k2) * norm;
    return c;
}

std::vector<double> filter_trace(const BiquadCoefficients& c, std::span<const double> trace) {
    if (trace.empty()) throw std::invalid_argument("cannot filter an empty trace");
    std::vector<double> out(trace.size());
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t n = 0; n < trace.size(); ++n) {
        const double x = trace[n];
        const double y = c.b0 * x + s1;
        s1 = c.b1 * x - c.a1 * y + s2;
        s2 = c.b2 * x - c.a2 * y;
        out[n] = y;
    }
    return out;
}

std::size_t SpikeTrain::total_events() const {
    std::size_t n = 0;
    for (const auto& ch : channels) n += ch.events.size();
    return n;
}

DetectGeometry detect_geometry(std::size_t n_samples, double fs_hz, const SpikeDetectConfig& cfg) {
    if (!(fs_hz > 0.0)) throw std::invalid_argument("fs_hz must be positive");
    if (cfg.refractory_ms < 0.0) throw std::invalid_argument("refractory_ms must be >= 0");
    const double w = std::round(cfg.window_ms * fs_hz / 1000.0);
    if (!(w >= 2.0)) throw std::invalid_argument("sigma window must cover at least 2 samples");
    DetectGeometry g;
    g.window = static_cast<std::size_t>(w);
    g.refractory = static_cast<std::size_t>(std::round(cfg.refractory_ms * fs_hz / 1000.0));
    if (g.window > n_samples) {
        g.window = n_samples;
        g.whole_trace = true;
    }
    return g;
}

namespace {

double polarity_value(double x, SpikePolarity p) {
    switch (p) {
        case SpikePolarity::Absolute: return std::abs(x);
        case SpikePolarity::Negative: return -x;
        case SpikePolarity::Positive: return x;
    }
    return x;
}

}  // namespace

ChannelSpikes detect_spikes(std::span<const double> trace, double fs_hz,
                            const SpikeDetectConfig& cfg) {
    ChannelSpikes result;
    const std::size_t n = trace.size();
    const DetectGeometry geo = detect_geometry(n, fs_hz, cfg);
    result.whole_trace_sigma = geo.whole_trace;
    if (n == 0) return result;

    // Prefix sums over mean-removed samples keep the variance subtraction well conditioned.
    double mean = 0.0;
    for (double x : trace) mean += x;
    mean /= static_cast<double>(n);
    std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = trace[i] - mean;
        s1[i + 1] = s1[i] + d;
        s2[i + 1] = s2[i] + d * d;
    }
    const std::size_t w = geo.window;
    const double inv_w = 1.0 / static_cast<double>(w);
    auto window_sigma = [&](std::size_t t) {
        const std::size_t start = t + 1 >= w ? t + 1 - w : 0;
        const double sum = s1[start + w] - s1[start];
        const double sq = s2[start + w] - s2[start];
        const double m = sum * inv_w;
        return std::sqrt(std::max(0.0, sq * inv_w - m * m));
    };

    auto v = [&](std::size_t t) { return polarity_value(trace[t], cfg.polarity); };

    // edge samples have no two-sided neighbourhood and are never peaks
    for (std::size_t t = 1; t + 1 < n; ++t) {
        const double vt = v(t);
        if (vt < v(t - 1) || !(vt > v(t + 1))) continue;
        const double threshold = cfg.mode == ThresholdMode::KSigma ? cfg.k_sigma * window_sigma(t)
                                                                   : cfg.fixed_threshold_uv;
        if (!(vt > threshold)) continue;

        SpikeEvent ev{t, trace[t]};
        if (!result.events.empty() && t - result.events.back().sample_index < geo.refractory) {
            if (vt > polarity_value(result.events.back().amplitude_uv, cfg.polarity)) {
                result.events.back() = ev;
            }
        } else {
            result.events.push_back(ev);
        }
    }
    return result;
}

SpikeTrain detect_spikes(const MultichannelRecording& rec, const SpikeDetectConfig& cfg) {
    rec.validate();
    SpikeTrain out;
    out.channels.reserve(static_cast<std::size_t>(rec.n_channels()));
    std::vector<double> row(rec.n_samples());
    for (int c = 0; c < rec.n_channels(); ++c) {
        Eigen::Map<Eigen::RowVectorXd>(row.data(), static_cast<Eigen::Index>(row.size())) =
            rec.traces.row(c);
        out.channels.push_back(detect_spikes(row, rec.fs_hz, cfg));
    }
    return out;
}

MultichannelRecording filter_recording(const MultichannelRecording& rec,
                                       const BiquadCoefficients& coeffs) {
    rec.validate();
    MultichannelRecording out;
    out.fs_hz = rec.fs_hz;
    out.traces.resize(rec.traces.rows(), rec.traces.cols());
    if (rec.n_samples() == 0) return out;
    std::vector<double> row(rec.n_samples());
    for (int c = 0; c < rec.n_channels(); ++c) {
        Eigen::Map<Eigen::RowVectorXd>(row.data(), static_cast<Eigen::Index>(row.size())) =
            rec.traces.row(c);
        const auto y = filter_trace(coeffs, row);
        out.traces.row(c) =
            Eigen::Map<const Eigen::RowVectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    }
    return out;
}

FeatureTable recording_to_feature_rows(const MultichannelRecording& rec, ClassLabel label,
                                       DpiTag dpi, const BiquadCoefficients& coeffs) {
    if (rec.n_channels() != kNumChannels) {
        throw DataError("recording has " + std::to_string(rec.n_channels()) + " channels, expected " +
                        std::to_string(kNumChannels));
    }
    const MultichannelRecording filtered = filter_recording(rec, coeffs);
    const auto n = static_cast<Eigen::Index>(rec.n_samples());

    FeatureTable t;
    t.feature_names = raw_feature_names();
    t.dpi = dpi;
    t.features.resize(n, kRawFeatureCount);
    t.features.leftCols(kNumChannels) = filtered.traces.transpose();
    for (Eigen::Index i = 0; i < n; ++i) t.features(i, kNumChannels) = static_cast<double>(i);
    t.labels.assign(static_cast<std::size_t>(n), label);
    return t;
}

void save_recording_csv(const MultichannelRecording& rec, const std::filesystem::path& path) {
    rec.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    char buf[32];
    auto put = [&](double v) {
        auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        out.write(buf, end - buf);
    };
    out << "fs_hz,";
    put(rec.fs_hz);
    out << "\nn_channels," << rec.n_channels() << "\n";
    for (int c = 0; c < rec.n_channels(); ++c) {
        char name[16];
        std::snprintf(name, sizeof(name), "ch%02d", c + 1);
        out << (c ? "," : "") << name;
    }
    out << "\n";
    for (Eigen::Index s = 0; s < rec.traces.cols(); ++s) {
        for (Eigen::Index c = 0; c < rec.traces.rows(); ++c) {
            if (c) out.put(',');
            put(rec.traces(c, s));
        }
        out.put('\n');
    }
    if (!out) throw DataError("write failed: " + path.string());
}

MultichannelRecording load_recording_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    auto fail = [&](std::size_t line, const std::string& what) {
        return DataError(path.string() + ":" + std::to_string(line) + ": " + what);
    };

    std::string line;
    MultichannelRecording rec;
    if (!std::getline(in, line) || line.rfind("fs_hz,", 0) != 0) throw fail(1, "expected fs_hz header");
    rec.fs_hz = std::stod(line.substr(6));
    if (!std::getline(in, line) || line.rfind("n_channels,", 0) != 0) {
        throw fail(2, "expected n_channels header");
    }
    const int n_channels = std::stoi(line.substr(11));
    if (n_channels <= 0) throw fail(2, "n_channels must be positive");
    if (!std::getline(in, line)) throw fail(3, "missing channel header");

    std::vector<double> values;
    std::size_t line_no = 3;
    std::size_t n_samples = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const char* p = line.data();
        const char* end = p + line.size();
        for (int c = 0; c < n_channels; ++c) {
            double v = 0.0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc()) throw fail(line_no, "malformed sample");
            values.push_back(v);
            if (c + 1 < n_channels) {
                if (next == end || *next != ',') throw fail(line_no, "too few columns");
                p = next + 1;
            } else if (next != end) {
                throw fail(line_no, "too many columns");
            }
        }
        ++n_samples;
    }
    // values are sample-major; traces are channel-major
    rec.traces = Eigen::Map<RowMatrix>(values.data(), static_cast<Eigen::Index>(n_samples),
                                       n_channels)
                     .transpose();
    rec.validate();
    return rec;
}

void save_spike_train_csv(const SpikeTrain& spikes, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "channel,sample_index,amplitude_uV\n";
    char buf[32];
    for (std::size_t c = 0; c < spikes.channels.size(); ++c) {
        for (const auto& ev : spikes.channels[c].events) {
            auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), ev.amplitude_uv);
            out << (c + 1) << ',' << ev.sample_index << ',';
            out.write(buf, end - buf);
            out.put('\n');
        }
    }
    if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace mea
