#pragma once

#include "beatflow/core/io.hpp"
#include "beatflow/core/media.hpp"
#include "beatflow/corpus/synth.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace beatflow::metrics {

/// Beat positions in frames (may be fractional), ascending.
using BeatSequence = std::vector<double>;

/// A score that is not defined for the given input (for example no beats).
class UndefinedScore : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultSigma = 3.0;
inline constexpr double kDefaultProminence = 0.1;

/// Interior strict local minima of a speed series with prominence of at
/// least `prominence` times the series range. Constant series give none.
BeatSequence kinematic_beats(std::span<const double> speed, double prominence = kDefaultProminence);
/// Mean joint speed per frame (central differences, one-sided at the ends).
std::vector<double> joint_speed(const corpus::JointTrack& joints);
BeatSequence kinematic_beats(const corpus::JointTrack& joints, double prominence = kDefaultProminence);

/// series[i] = mean |frame(i+1) - frame(i)|; needs at least two frames.
std::vector<double> video_motion_series(const VideoTensor& video);
/// Motion minima of a video. series[i] describes the step between frames i
/// and i+1, so a minimum at index i is reported at frame i + 0.5.
BeatSequence video_kinematic_beats(const VideoTensor& video, double prominence = kDefaultProminence);

/// Seconds to frames.
BeatSequence to_frames(std::span<const double> seconds, double fps);

/// mean over kinematic beats of exp(-d^2 / (2 sigma^2)), d = distance to the
/// nearest music beat. Throws UndefinedScore if either side is empty.
double mm_align_2d(std::span<const double> kinematic, std::span<const double> music, double sigma = kDefaultSigma);

/// Greedy in-order one-to-one matching within +-window; returns the match count.
int match_peaks(std::span<const double> a, std::span<const double> b, double window = 1.0);
/// Matches / (|a| + |b| - matches). Throws UndefinedScore if both are empty.
double peak_iou(std::span<const double> a, std::span<const double> b, double window = 1.0);

/// Onset-envelope peaks inside the video's span, in frames.
BeatSequence audio_peak_frames(const AudioClip& audio, double fps, int n_frames);
/// Motion-series maxima, in frames (index i reported at i + 0.5).
BeatSequence visual_peak_frames(const VideoTensor& video);
double av_align(const VideoTensor& video, const AudioClip& audio, double window = 1.0);

/// Mean SSIM over 8x8 windows at stride 4, averaged over channels.
double ssim(const Image& x, const Image& y);

struct Psnr {
    double db = 0.0;
    /// Zero error; `db` is then meaningless.
    bool exact = false;
};
Psnr psnr(const Image& x, const Image& y);
/// Mean PSNR-style comparison over whole videos: frame-averaged SSIM, MSE-pooled PSNR.
double video_ssim(const VideoTensor& a, const VideoTensor& b);
Psnr video_psnr(const VideoTensor& a, const VideoTensor& b);

struct EvalItem {
    std::string id;
    int style_id = 0;
    VideoTensor generated;
    std::optional<VideoTensor> reference;
    AudioClip music;
    /// Music beats in seconds relative to the first frame.
    std::vector<double> beat_times;
};

struct SuiteConfig {
    double sigma = kDefaultSigma;
    double av_window = 1.0;
    double prominence = kDefaultProminence;
};

/// Per-sample SSIM/PSNR (when a reference exists), 2D-MM Align and AV-Align,
/// with overall and per-style means.
Json evaluate_suite(const std::vector<EvalItem>& items, const SuiteConfig& config = {});

}  // namespace beatflow::metrics
