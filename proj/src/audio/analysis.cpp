#include "beatflow/audio/analysis.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

namespace beatflow::audio {

namespace {

// Half-width, in frames, of the moving average removed from the flux.
constexpr int kLocalMeanRadius = 8;
// Flux at frame i peaks when an impulsive onset sits about 70% of a window
// past the frame start (measured over sub-frame click positions).
constexpr double kOnsetLagFraction = 0.70;

}  // namespace

double hz_to_mel(double hz)
{
    return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double mel_to_hz(double mel)
{
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

Eigen::MatrixXd mel_filterbank(int n_mels, int n_fft, int sample_rate)
{
    const int bins = n_fft / 2 + 1;
    const double mel_max = hz_to_mel(sample_rate / 2.0);
    std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
    for (int i = 0; i < n_mels + 2; ++i) {
        edges[static_cast<std::size_t>(i)] = mel_to_hz(mel_max * i / (n_mels + 1));
    }
    Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, bins);
    for (int m = 0; m < n_mels; ++m) {
        const double lo = edges[static_cast<std::size_t>(m)];
        const double mid = edges[static_cast<std::size_t>(m + 1)];
        const double hi = edges[static_cast<std::size_t>(m + 2)];
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / n_fft;
            if (f > lo && f < hi) {
                fb(m, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
            }
        }
    }
    return fb;
}

MelSpectrogram log_mel(const AudioClip& clip, int n_fft, int hop, int n_mels)
{
    const Index length = clip.length();
    if (length < n_fft) {
        throw DomainError("clip of " + std::to_string(length) + " samples is shorter than one " + std::to_string(n_fft) +
                          "-sample window");
    }
    const Index frames = (length - n_fft) / hop + 1;
    const int bins = n_fft / 2 + 1;
    const Eigen::MatrixXd fb = mel_filterbank(n_mels, n_fft, clip.sample_rate());

    std::vector<double> window(static_cast<std::size_t>(n_fft));
    for (int n = 0; n < n_fft; ++n) {
        window[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / n_fft);
    }

    Eigen::FFT<double> fft;
    std::vector<double> frame(static_cast<std::size_t>(n_fft));
    std::vector<std::complex<double>> spectrum;
    Eigen::MatrixXd magnitude(bins, frames);
    for (Index t = 0; t < frames; ++t) {
        for (int n = 0; n < n_fft; ++n) {
            frame[static_cast<std::size_t>(n)] = clip.samples()[t * hop + n] * window[static_cast<std::size_t>(n)];
        }
        fft.fwd(spectrum, frame);
        for (int k = 0; k < bins; ++k) {
            magnitude(k, t) = std::abs(spectrum[static_cast<std::size_t>(k)]);
        }
    }

    MelSpectrogram mel;
    mel.n_fft = n_fft;
    mel.hop = hop;
    mel.sample_rate = clip.sample_rate();
    mel.values = (fb * magnitude).transpose().array().log1p().matrix();
    return mel;
}

OnsetEnvelope onset_envelope(const MelSpectrogram& mel)
{
    const Index frames = mel.frames();
    Eigen::VectorXd flux = Eigen::VectorXd::Zero(frames);
    for (Index t = 1; t < frames; ++t) {
        flux[t] = (mel.values.row(t) - mel.values.row(t - 1)).cwiseMax(0.0).sum();
    }
    OnsetEnvelope env;
    env.values = Eigen::VectorXd::Zero(frames);
    for (Index t = 0; t < frames; ++t) {
        const Index lo = std::max<Index>(0, t - kLocalMeanRadius);
        const Index hi = std::min<Index>(frames - 1, t + kLocalMeanRadius);
        const double local = flux.segment(lo, hi - lo + 1).mean();
        env.values[t] = std::max(0.0, flux[t] - local);
    }
    env.frame_rate = static_cast<double>(mel.sample_rate) / mel.hop;
    env.time_offset = kOnsetLagFraction * mel.n_fft / mel.sample_rate;
    return env;
}

namespace {

// Parabolic vertex offset in (-1, 1) through (-1, a), (0, b), (1, c).
double parabolic_offset(double a, double b, double c)
{
    const double denom = a - 2.0 * b + c;
    if (denom >= 0.0) {
        return 0.0;
    }
    return std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
}

}  // namespace

TempoEstimate estimate_tempo(const OnsetEnvelope& env, double bpm_lo, double bpm_hi)
{
    if (bpm_lo <= 0.0 || bpm_hi <= bpm_lo) {
        throw DomainError("invalid tempo range");
    }
    const Index n = env.size();
    const double lag_lo = 60.0 * env.frame_rate / bpm_hi;
    const double lag_hi = 60.0 * env.frame_rate / bpm_lo;
    if (static_cast<double>(n) < 2.0 * lag_hi) {
        throw DomainError("onset envelope of " + std::to_string(n) + " frames covers fewer than two beat periods at " +
                          std::to_string(bpm_lo) + " BPM");
    }
    const Eigen::VectorXd x = env.values.array() - env.values.mean();
    auto r = [&](Index lag) { return x.head(n - lag).dot(x.tail(n - lag)) / static_cast<double>(n); };
    const double r0 = r(0);

    TempoEstimate est;
    const auto first = static_cast<Index>(std::ceil(lag_lo));
    const auto last = static_cast<Index>(std::floor(lag_hi));
    if (r0 <= 0.0) {
        est.bpm = std::clamp(120.0, bpm_lo, bpm_hi);
        return est;
    }
    Index best = first;
    double best_r = r(first);
    for (Index lag = first + 1; lag <= last; ++lag) {
        const double v = r(lag);
        if (v > best_r) {
            best_r = v;
            best = lag;
        }
    }
    // A fractional period splits the first peak over two lags, so the
    // doubled period can win; step down while half the lag is nearly as strong.
    while (static_cast<double>(best) / 2.0 >= lag_lo - 1.0) {
        Index half = best / 2;
        for (Index lag = std::max<Index>(1, best / 2 - 1); lag <= best / 2 + 1; ++lag) {
            if (r(lag) > r(half)) {
                half = lag;
            }
        }
        if (r(half) < 0.7 * best_r) {
            break;
        }
        best = half;
    }

    // Refine with the autocorrelation peaks at multiples of the coarse lag;
    // longer baselines pin the period more precisely.
    double weighted = 0.0;
    double weights = 0.0;
    for (int k = 1; static_cast<double>(k) * best + 2 < 0.75 * static_cast<double>(n); ++k) {
        Index centre = k * best;
        for (Index lag = std::max<Index>(1, k * best - k); lag <= k * best + k; ++lag) {
            if (r(lag) > r(centre)) {
                centre = lag;
            }
        }
        const double rc = r(centre);
        if (rc <= 0.0) {
            break;
        }
        const double refined = static_cast<double>(centre) + parabolic_offset(r(centre - 1), rc, r(centre + 1));
        weighted += rc * refined / k;
        weights += rc;
    }
    const double lag = weights > 0.0 ? weighted / weights : static_cast<double>(best);
    est.bpm = std::clamp(60.0 * env.frame_rate / lag, bpm_lo, bpm_hi);
    est.confidence = std::clamp(best_r / r0, 0.0, 1.0);
    est.low_confidence = est.confidence < 0.25;
    return est;
}

bool beat_path_feasible(std::span<const int> frames, double period)
{
    for (std::size_t i = 1; i < frames.size(); ++i) {
        const double gap = frames[i] - frames[i - 1];
        if (gap < 0.8 * period - 1e-9 || gap > 1.2 * period + 1e-9) {
            return false;
        }
    }
    return true;
}

double beat_path_score(std::span<const double> onset, std::span<const int> frames, double period, double lambda)
{
    double score = 0.0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        score += onset[static_cast<std::size_t>(frames[i])];
        if (i > 0) {
            const double l = std::log((frames[i] - frames[i - 1]) / period);
            score -= lambda * l * l;
        }
    }
    return score;
}

BeatPath best_beat_path(std::span<const double> onset, double period, double lambda)
{
    BeatPath path;
    const int n = static_cast<int>(onset.size());
    if (n == 0) {
        return path;
    }
    const int gap_lo = std::max(1, static_cast<int>(std::ceil(0.8 * period - 1e-9)));
    const int gap_hi = static_cast<int>(std::floor(1.2 * period + 1e-9));
    std::vector<double> penalty(static_cast<std::size_t>(gap_hi + 1), 0.0);
    for (int g = gap_lo; g <= gap_hi; ++g) {
        const double l = std::log(g / period);
        penalty[static_cast<std::size_t>(g)] = lambda * l * l;
    }
    std::vector<double> cum(static_cast<std::size_t>(n));
    std::vector<int> prev(static_cast<std::size_t>(n), -1);
    for (int t = 0; t < n; ++t) {
        double best = 0.0;
        for (int g = gap_lo; g <= gap_hi && g <= t; ++g) {
            const double v = cum[static_cast<std::size_t>(t - g)] - penalty[static_cast<std::size_t>(g)];
            if (v > best) {
                best = v;
                prev[static_cast<std::size_t>(t)] = t - g;
            }
        }
        cum[static_cast<std::size_t>(t)] = onset[static_cast<std::size_t>(t)] + best;
    }
    int end = 0;
    for (int t = 1; t < n; ++t) {
        if (cum[static_cast<std::size_t>(t)] > cum[static_cast<std::size_t>(end)]) {
            end = t;
        }
    }
    for (int t = end; t >= 0; t = prev[static_cast<std::size_t>(t)]) {
        path.frames.push_back(t);
    }
    std::reverse(path.frames.begin(), path.frames.end());
    path.score = cum[static_cast<std::size_t>(end)];
    return path;
}

BeatGrid track_beats(const OnsetEnvelope& env, double tempo_bpm, double lambda)
{
    if (tempo_bpm < 60.0 || tempo_bpm > 180.0) {
        throw DomainError("tempo " + std::to_string(tempo_bpm) + " BPM outside [60, 180]");
    }
    BeatGrid grid;
    grid.tempo_bpm = tempo_bpm;
    if (env.size() == 0) {
        return grid;
    }
    const double mean = env.values.mean();
    const double stdev = std::sqrt((env.values.array() - mean).square().mean());
    if (!(stdev > 0.0)) {
        return grid;
    }
    const Eigen::VectorXd normalised = env.values / stdev;
    const double period = 60.0 * env.frame_rate / tempo_bpm;
    const BeatPath path = best_beat_path(std::span<const double>(normalised.data(), static_cast<std::size_t>(normalised.size())),
                                         period, lambda);
    for (int f : path.frames) {
        grid.beat_times.push_back(env.time_of(f));
    }
    return grid;
}

std::vector<int> find_peaks(std::span<const double> x, double min_prominence)
{
    std::vector<int> peaks;
    const int n = static_cast<int>(x.size());
    if (n < 3) {
        return peaks;
    }
    const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
    const double range = *hi_it - *lo_it;
    if (!(range > 0.0)) {
        return peaks;
    }
    for (int i = 1; i + 1 < n; ++i) {
        const auto at = [&](int k) { return x[static_cast<std::size_t>(k)]; };
        if (!(at(i) > at(i - 1) && at(i) > at(i + 1))) {
            continue;
        }
        double left_min = at(i);
        for (int j = i - 1; j >= 0 && at(j) <= at(i); --j) {
            left_min = std::min(left_min, at(j));
        }
        double right_min = at(i);
        for (int j = i + 1; j < n && at(j) <= at(i); ++j) {
            right_min = std::min(right_min, at(j));
        }
        if (at(i) - std::max(left_min, right_min) >= min_prominence * range) {
            peaks.push_back(i);
        }
    }
    return peaks;
}

BeatGrid detect_beats(const AudioClip& clip)
{
    const OnsetEnvelope env = onset_envelope(log_mel(clip));
    const TempoEstimate tempo = estimate_tempo(env);
    return track_beats(env, tempo.bpm);
}

}  // namespace beatflow::audio
