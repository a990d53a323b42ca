#pragma once

#include "beatflow/core/beat_grid.hpp"
#include "beatflow/core/io.hpp"
#include "beatflow/core/media.hpp"
#include "beatflow/core/rng.hpp"

#include <array>
#include <string>
#include <vector>

namespace beatflow::corpus {

inline constexpr int kJoints = 10;
/// Joint order: torso, head, left shoulder, left elbow, right shoulder,
/// right elbow, left hip, left knee, right hip, right knee.
inline constexpr std::array<int, kJoints> kParent{-1, 0, 0, 2, 0, 4, 0, 6, 0, 8};
/// Bone lengths in figure units (one unit = 1/64 of the frame side).
inline constexpr std::array<double, kJoints> kBoneLength{0.0, 7.0, 6.0, 8.0, 6.0, 8.0, 9.0, 10.0, 9.0, 10.0};

/// Bone angles (radians, 0 = pointing up, clockwise positive) plus a root offset.
struct Pose {
    std::array<double, kJoints> angle{};
    double root_dx = 0.0;
    double root_dy = 0.0;
};

enum class Waveform { Sine, Triangle, Square, Saw };

struct Timbre {
    Waveform waveform = Waveform::Sine;
    double base_hz = 220.0;
    /// Semitone offsets cycled over successive beats.
    std::vector<int> melody;
};

struct DanceStyle {
    int id = 0;
    std::string name;
    double bpm_lo = 60.0;
    double bpm_hi = 180.0;
    std::vector<Pose> keyposes;
    /// Order in which keyposes are visited, one per beat; never repeats consecutively.
    std::vector<int> sequence;
    Timbre timbre;
    /// Scales the distance between keyposes.
    double motion_complexity = 1.0;
};

/// Built-in styles; at most 6.
std::vector<DanceStyle> default_styles(int count);

struct MusicTrack {
    AudioClip clip;
    BeatGrid beats;
};

inline constexpr double kFirstBeat = 0.1;

/// Style-timbred notes plus a click on every beat, softer notes on off-beats.
MusicTrack synth_music(const DanceStyle& style, double tempo_bpm, double duration, RngStream rng);

/// Joint positions in pixels, frames x joints x 2 (x, y).
struct JointTrack {
    TensorF positions;

    [[nodiscard]] int frames() const { return positions.dim(0); }
    [[nodiscard]] double x(int frame, int joint) const { return positions[(static_cast<Index>(frame) * kJoints + joint) * 2]; }
    [[nodiscard]] double y(int frame, int joint) const
    {
        return positions[(static_cast<Index>(frame) * kJoints + joint) * 2 + 1];
    }
};

/// Per-video look of the figure and background.
struct Appearance {
    std::array<float, 3> body{};
    std::array<float, 3> head{};
    std::array<float, 3> bg_a{};
    std::array<float, 3> bg_b{};
    double bg_freq_x = 1.0;
    double bg_freq_y = 1.0;
    double bg_phase = 0.0;
    double centre_x = 0.5;
    double centre_y = 0.5;
    double scale = 1.0;
    double limb_radius = 1.6;
    double pose_jitter = 0.0;
    std::uint64_t jitter_seed = 0;

    static Appearance random(RngStream& rng);
};

/// Pose at time t: keyposes on the beats, cosine-eased in between. Before the
/// first and after the last beat the grid is extended at its own period; an
/// empty grid holds the first keypose.
Pose pose_at(const DanceStyle& style, const BeatGrid& beats, double t, const Appearance& look);
/// Forward kinematics into pixel coordinates for a side x side frame.
std::array<std::array<double, 2>, kJoints> joint_positions(const Pose& pose, const Appearance& look, int side);
Image render_frame(const std::array<std::array<double, 2>, kJoints>& joints, const Appearance& look, int side);

struct DanceClip {
    VideoTensor video;
    JointTrack joints;
};

/// Renders n_frames frames starting at track time `start`. Beats are in track time.
DanceClip synth_dance(const DanceStyle& style, const BeatGrid& beats, int n_frames, double fps, RngStream rng,
                      double start = 0.0, int side = 64);

struct CorpusConfig {
    int styles = 4;
    int tracks_per_style = 10;
    int videos_per_track = 6;
    int n_frames = 16;
    double fps = 20.0;
    int frame_size = 64;
    double track_duration = 6.0;
    /// Length of the music clip a video is conditioned on; it starts at the video's first frame.
    double context_duration = 3.0;
    double test_fraction = 0.2;
    std::uint64_t seed = 0;

    [[nodiscard]] Json to_json() const;
    static CorpusConfig from_json(const Json& j);
};

/// Writes root/style_s/track_t/{track.wav, track.json, video_v/{frames/, audio.wav, meta.json}}
/// and root/corpus.json. Refuses a non-empty root unless `overwrite`.
void generate_corpus(const CorpusConfig& config, const fs::path& root, bool overwrite = false);

class CorpusExistsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SampleMeta {
    std::string id;  // "style_s/track_t/video_v"
    fs::path dir;
    int style_id = 0;
    int track_id = 0;
    int video_index = 0;
    double fps = 20.0;
    int n_frames = 0;
    std::vector<double> beat_times;  // relative to the first frame
    double tempo_bpm = 0.0;
    std::string split;
    double music_offset = 0.0;  // seconds into the track
    fs::path track_wav;
};

struct CorpusSample {
    SampleMeta meta;
    VideoTensor video;
    AudioClip audio;
    JointTrack joints;
};

class Corpus {
public:
    explicit Corpus(fs::path root);

    [[nodiscard]] const fs::path& root() const noexcept { return root_; }
    [[nodiscard]] const CorpusConfig& config() const noexcept { return config_; }
    [[nodiscard]] const std::vector<SampleMeta>& samples() const noexcept { return samples_; }
    [[nodiscard]] std::vector<SampleMeta> split(const std::string& name) const;

    [[nodiscard]] CorpusSample load(const SampleMeta& meta) const;
    [[nodiscard]] VideoTensor load_video(const SampleMeta& meta) const;
    /// Music clip of context_duration seconds starting at the video's first frame.
    [[nodiscard]] AudioClip music_context(const SampleMeta& meta) const;

private:
    fs::path root_;
    CorpusConfig config_;
    std::vector<SampleMeta> samples_;
};

}  // namespace beatflow::corpus
