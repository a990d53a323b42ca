#pragma once

#include "beatflow/core/beat_grid.hpp"
#include "beatflow/core/media.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace beatflow::audio {

/// Log-compressed mel magnitudes, one row per analysis frame.
struct MelSpectrogram {
    Eigen::MatrixXd values;  // frames x n_mels
    int n_fft = 1024;
    int hop = 256;
    int sample_rate = kDefaultSampleRate;

    [[nodiscard]] Index frames() const { return values.rows(); }
    [[nodiscard]] Index n_mels() const { return values.cols(); }
};

/// Onset strength per analysis frame. Entry i refers to the instant
/// time_offset + i / frame_rate seconds.
struct OnsetEnvelope {
    Eigen::VectorXd values;
    double frame_rate = 0.0;
    double time_offset = 0.0;

    [[nodiscard]] double time_of(double frame) const { return time_offset + frame / frame_rate; }
    [[nodiscard]] Index size() const { return values.size(); }
};

struct TempoEstimate {
    double bpm = 0.0;
    /// Normalised autocorrelation at the chosen lag, in [0, 1].
    double confidence = 0.0;
    bool low_confidence = true;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);
/// Triangular HTK-spaced filters over 0..sr/2, shape n_mels x (n_fft/2 + 1).
Eigen::MatrixXd mel_filterbank(int n_mels, int n_fft, int sample_rate);

MelSpectrogram log_mel(const AudioClip& clip, int n_fft = 1024, int hop = 256, int n_mels = 64);

/// Positive spectral flux summed over mel bands, minus its local mean, clamped at zero.
OnsetEnvelope onset_envelope(const MelSpectrogram& mel);

/// Autocorrelation tempo over the lag range matching [bpm_lo, bpm_hi].
TempoEstimate estimate_tempo(const OnsetEnvelope& env, double bpm_lo = 60.0, double bpm_hi = 180.0);

inline constexpr double kBeatTransitionWeight = 100.0;

/// Result of the beat dynamic programme in envelope frames.
struct BeatPath {
    std::vector<int> frames;
    double score = 0.0;
};

/// Value of sum(onset at beats) - lambda * sum(log(gap / period)^2).
double beat_path_score(std::span<const double> onset, std::span<const int> frames, double period, double lambda);
/// Whether consecutive gaps all lie within [0.8, 1.2] periods.
bool beat_path_feasible(std::span<const int> frames, double period);
/// Highest-scoring feasible beat sequence over `onset`.
BeatPath best_beat_path(std::span<const double> onset, double period, double lambda = kBeatTransitionWeight);

BeatGrid track_beats(const OnsetEnvelope& env, double tempo_bpm, double lambda = kBeatTransitionWeight);

/// Strict interior local maxima (x[i] > x[i-1] and x[i] > x[i+1]) whose
/// prominence is at least `min_prominence` times the series range.
std::vector<int> find_peaks(std::span<const double> x, double min_prominence = 0.1);

/// Full chain: mel, onset envelope, tempo, beats.
BeatGrid detect_beats(const AudioClip& clip);

}  // namespace beatflow::audio
