#include "beatflow/corpus/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace beatflow::corpus {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int kMaxKeyposes = 8;

Pose pose_deg(std::initializer_list<double> deg, double dx, double dy)
{
    Pose p;
    int i = 1;
    for (double d : deg) {
        p.angle[static_cast<std::size_t>(i++)] = d * kDeg;
    }
    p.root_dx = dx;
    p.root_dy = dy;
    return p;
}

std::string zero_pad(int value, int width)
{
    std::ostringstream s;
    s << std::setw(width) << std::setfill('0') << value;
    return s.str();
}

double waveform_value(Waveform w, double phase)
{
    phase -= std::floor(phase);
    switch (w) {
    case Waveform::Sine:
        return std::sin(2.0 * std::numbers::pi * phase);
    case Waveform::Triangle:
        return 4.0 * std::abs(phase - 0.5) - 1.0;
    case Waveform::Square:
        return phase < 0.5 ? 1.0 : -1.0;
    case Waveform::Saw:
        return 2.0 * phase - 1.0;
    }
    return 0.0;
}

}  // namespace

std::vector<DanceStyle> default_styles(int count)
{
    if (count < 2 || count > 6) {
        throw DomainError("style count must lie in [2, 6]");
    }
    std::vector<DanceStyle> all(6);

    all[0].name = "pulse";
    all[0].bpm_lo = 60.0;
    all[0].bpm_hi = 100.0;
    all[0].keyposes = {pose_deg({0, -100, -150, 100, 150, 190, 180, 170, 180}, 0, 0),
                       pose_deg({10, -60, -20, 120, 160, 200, 170, 165, 185}, 0, 1.5),
                       pose_deg({-10, -120, -160, 60, 20, 195, 190, 160, 170}, 0, 1.5)};
    all[0].sequence = {0, 1, 0, 2};
    all[0].timbre = {Waveform::Sine, 196.0, {0, 4, 7, 4}};

    all[1].name = "swing";
    all[1].bpm_lo = 90.0;
    all[1].bpm_hi = 130.0;
    all[1].keyposes = {pose_deg({-15, -70, -100, 110, 80, 200, 185, 165, 170}, -3, 0),
                       pose_deg({15, -110, -80, 70, 100, 195, 190, 160, 175}, 3, 0)};
    all[1].sequence = {0, 1};
    all[1].timbre = {Waveform::Triangle, 293.66, {0, 3, 5, 7, 5, 3}};

    all[2].name = "pop";
    all[2].bpm_lo = 120.0;
    all[2].bpm_hi = 160.0;
    all[2].keyposes = {pose_deg({0, -30, -10, 150, 170, 210, 200, 170, 180}, 0, -1),
                       pose_deg({0, -150, -170, 30, 10, 190, 180, 150, 160}, 0, -1),
                       pose_deg({0, -90, -90, 90, 90, 185, 150, 175, 210}, 0, 2)};
    all[2].sequence = {0, 2, 1, 2};
    all[2].timbre = {Waveform::Square, 440.0, {0, 7, 12, 7}};

    all[3].name = "drive";
    all[3].bpm_lo = 140.0;
    all[3].bpm_hi = 180.0;
    all[3].keyposes = {pose_deg({5, -80, -30, 80, 30, 230, 200, 175, 180}, 0, 0),
                       pose_deg({-5, -80, -130, 80, 130, 185, 180, 130, 160}, 0, 0),
                       pose_deg({0, -45, -45, 45, 45, 190, 180, 170, 180}, 0, 2)};
    all[3].sequence = {0, 2, 1, 2};
    all[3].timbre = {Waveform::Saw, 110.0, {0, 0, 5, 3}};

    all[4].name = "glide";
    all[4].bpm_lo = 70.0;
    all[4].bpm_hi = 110.0;
    all[4].keyposes = {pose_deg({20, -135, -135, 45, 0, 205, 195, 175, 180}, -2, 0),
                       pose_deg({-20, -45, 0, 135, 135, 185, 180, 155, 165}, 2, 0)};
    all[4].sequence = {0, 1};
    all[4].timbre = {Waveform::Sine, 523.25, {0, 2, 4, 2}};

    all[5].name = "stomp";
    all[5].bpm_lo = 100.0;
    all[5].bpm_hi = 150.0;
    all[5].keyposes = {pose_deg({0, -95, -170, 95, 170, 180, 180, 180, 180}, 0, 3),
                       pose_deg({0, -100, -60, 100, 60, 215, 150, 180, 180}, 0, 0),
                       pose_deg({0, -100, -60, 100, 60, 180, 180, 145, 210}, 0, 0)};
    all[5].sequence = {0, 1, 0, 2};
    all[5].timbre = {Waveform::Triangle, 82.41, {0, 12, 0, 7}};

    all.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        all[static_cast<std::size_t>(i)].id = i;
    }
    return all;
}

MusicTrack synth_music(const DanceStyle& style, double tempo_bpm, double duration, RngStream rng)
{
    if (tempo_bpm < style.bpm_lo || tempo_bpm > style.bpm_hi) {
        throw DomainError("tempo " + std::to_string(tempo_bpm) + " BPM outside the " + style.name + " range");
    }
    if (duration < 1.0) {
        throw DomainError("music must last at least 1 s");
    }
    const int sr = kDefaultSampleRate;
    const auto length = static_cast<Index>(std::llround(duration * sr));
    Eigen::VectorXd out = Eigen::VectorXd::Zero(length);

    MusicTrack track;
    track.beats.tempo_bpm = tempo_bpm;
    const double period = 60.0 / tempo_bpm;
    for (int k = 0;; ++k) {
        const double t = kFirstBeat + k * period;
        if (t >= duration - 1e-9) {
            break;
        }
        track.beats.beat_times.push_back(t);
    }

    const int melody_shift = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(style.timbre.melody.size()) - 1));
    const double detune = std::pow(2.0, rng.uniform(-1.0, 1.0) / 12.0);
    RngStream noise = rng.fork("click");

    auto add_note = [&](double start, double hz, double amplitude, double decay, double length_s) {
        const auto begin = static_cast<Index>(std::llround(start * sr));
        const auto count = static_cast<Index>(length_s * sr);
        for (Index i = 0; i < count && begin + i < length; ++i) {
            const double tau = static_cast<double>(i) / sr;
            const double attack = std::min(1.0, tau / 0.004);
            const double release = std::min(1.0, (length_s - tau) / 0.01);
            out[begin + i] += amplitude * attack * release * std::exp(-tau / decay) *
                              waveform_value(style.timbre.waveform, hz * tau);
        }
    };

    for (std::size_t k = 0; k < track.beats.beat_times.size(); ++k) {
        const double t = track.beats.beat_times[k];
        const auto begin = static_cast<Index>(std::llround(t * sr));
        const auto click = static_cast<Index>(0.008 * sr);
        for (Index i = 0; i < click && begin + i < length; ++i) {
            out[begin + i] += 0.5 * noise.uniform(-1.0, 1.0) * std::exp(-static_cast<double>(i) / (0.0015 * sr));
        }
        const auto& mel = style.timbre.melody;
        const int step = mel[(k + static_cast<std::size_t>(melody_shift)) % mel.size()];
        const double hz = style.timbre.base_hz * detune * std::pow(2.0, step / 12.0);
        add_note(t, hz, 0.22, 0.35 * period, 0.45 * period);
        add_note(t + 0.5 * period, hz * 1.5, 0.08, 0.2 * period, 0.4 * period);
    }

    const double peak = out.cwiseAbs().maxCoeff();
    if (peak > 0.95) {
        out *= 0.95 / peak;
    }
    track.clip = AudioClip(out.cast<float>(), sr);
    return track;
}

Appearance Appearance::random(RngStream& rng)
{
    Appearance a;
    auto colour = [&](double lo, double hi) {
        return std::array<float, 3>{static_cast<float>(rng.uniform(lo, hi)), static_cast<float>(rng.uniform(lo, hi)),
                                    static_cast<float>(rng.uniform(lo, hi))};
    };
    a.bg_a = colour(0.15, 0.45);
    a.bg_b = colour(0.15, 0.45);
    a.body = colour(0.55, 1.0);
    a.head = colour(0.6, 1.0);
    // Keep the figure clearly brighter than the background on at least one channel.
    const auto c = static_cast<std::size_t>(rng.uniform_int(0, 2));
    a.body[c] = 0.95f;
    a.bg_freq_x = rng.uniform(0.5, 2.0);
    a.bg_freq_y = rng.uniform(0.5, 2.0);
    a.bg_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    a.centre_x = rng.uniform(0.42, 0.58);
    a.centre_y = rng.uniform(0.38, 0.44);
    a.scale = rng.uniform(0.9, 1.1);
    a.limb_radius = rng.uniform(1.5, 2.0);
    a.pose_jitter = rng.uniform(0.0, 0.12);
    a.jitter_seed = rng.next_u64();
    return a;
}

namespace {

double jitter_offset(const Appearance& look, int keypose, int bone)
{
    if (look.pose_jitter == 0.0) {
        return 0.0;
    }
    const std::uint64_t h = fnv1a64(std::to_string(look.jitter_seed) + ":" + std::to_string(keypose) + ":" + std::to_string(bone));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return look.pose_jitter * (2.0 * u - 1.0);
}

Pose keypose(const DanceStyle& style, long beat_index, const Appearance& look)
{
    const auto n = static_cast<long>(style.sequence.size());
    const int which = style.sequence[static_cast<std::size_t>(((beat_index % n) + n) % n)];
    Pose mean;
    for (const Pose& p : style.keyposes) {
        for (int b = 0; b < kJoints; ++b) {
            mean.angle[static_cast<std::size_t>(b)] += p.angle[static_cast<std::size_t>(b)] / static_cast<double>(style.keyposes.size());
        }
    }
    const Pose& src = style.keyposes[static_cast<std::size_t>(which)];
    Pose out = src;
    for (int b = 0; b < kJoints; ++b) {
        const auto i = static_cast<std::size_t>(b);
        out.angle[i] = mean.angle[i] + style.motion_complexity * (src.angle[i] - mean.angle[i]) +
                       jitter_offset(look, which % kMaxKeyposes, b);
    }
    out.root_dx = style.motion_complexity * src.root_dx;
    out.root_dy = style.motion_complexity * src.root_dy;
    return out;
}

}  // namespace

Pose pose_at(const DanceStyle& style, const BeatGrid& beats, double t, const Appearance& look)
{
    const auto& b = beats.beat_times;
    if (b.empty()) {
        return keypose(style, 0, look);
    }
    double period = beats.tempo_bpm > 0.0 ? beats.period() : 0.0;
    if (period <= 0.0) {
        period = b.size() > 1 ? (b.back() - b.front()) / static_cast<double>(b.size() - 1) : 1.0;
    }
    const auto n = static_cast<long>(b.size());
    auto beat_time = [&](long k) {
        if (k < 0) {
            return b.front() + static_cast<double>(k) * period;
        }
        if (k >= n) {
            return b.back() + static_cast<double>(k - n + 1) * period;
        }
        return b[static_cast<std::size_t>(k)];
    };
    long k = 0;
    if (t < b.front()) {
        k = static_cast<long>(std::floor((t - b.front()) / period));
    } else if (t >= b.back()) {
        k = n - 1 + static_cast<long>(std::floor((t - b.back()) / period));
    } else {
        k = static_cast<long>(std::upper_bound(b.begin(), b.end(), t) - b.begin()) - 1;
    }
    const double t0 = beat_time(k);
    const double t1 = beat_time(k + 1);
    const double u = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
    const double e = 0.5 * (1.0 - std::cos(std::numbers::pi * u));
    const Pose p0 = keypose(style, k, look);
    const Pose p1 = keypose(style, k + 1, look);
    Pose out;
    for (std::size_t i = 0; i < kJoints; ++i) {
        out.angle[i] = (1.0 - e) * p0.angle[i] + e * p1.angle[i];
    }
    out.root_dx = (1.0 - e) * p0.root_dx + e * p1.root_dx;
    out.root_dy = (1.0 - e) * p0.root_dy + e * p1.root_dy;
    return out;
}

std::array<std::array<double, 2>, kJoints> joint_positions(const Pose& pose, const Appearance& look, int side)
{
    const double unit = side / 64.0 * look.scale;
    std::array<std::array<double, 2>, kJoints> p{};
    p[0] = {look.centre_x * side + pose.root_dx * unit, look.centre_y * side + pose.root_dy * unit};
    for (int j = 1; j < kJoints; ++j) {
        const auto parent = static_cast<std::size_t>(kParent[static_cast<std::size_t>(j)]);
        const double len = kBoneLength[static_cast<std::size_t>(j)] * unit;
        const double a = pose.angle[static_cast<std::size_t>(j)];
        p[static_cast<std::size_t>(j)] = {p[parent][0] + len * std::sin(a), p[parent][1] - len * std::cos(a)};
    }
    return p;
}

Image render_frame(const std::array<std::array<double, 2>, kJoints>& joints, const Appearance& look, int side)
{
    Image img({side, side, 3});
    const double unit = side / 64.0 * look.scale;
    const double radius = look.limb_radius * unit;
    const double head_radius = 3.2 * unit;
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const double px = x + 0.5;
            const double py = y + 0.5;
            const double w = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * (look.bg_freq_x * px + look.bg_freq_y * py) / side +
                                                  look.bg_phase);
            std::array<double, 3> c{};
            for (std::size_t ch = 0; ch < 3; ++ch) {
                c[ch] = (1.0 - w) * look.bg_a[ch] + w * look.bg_b[ch];
            }
            double body = 0.0;
            for (int j = 1; j < kJoints; ++j) {
                const auto& a = joints[static_cast<std::size_t>(kParent[static_cast<std::size_t>(j)])];
                const auto& b = joints[static_cast<std::size_t>(j)];
                const double dx = b[0] - a[0];
                const double dy = b[1] - a[1];
                const double len2 = dx * dx + dy * dy;
                const double s = len2 > 0.0 ? std::clamp(((px - a[0]) * dx + (py - a[1]) * dy) / len2, 0.0, 1.0) : 0.0;
                const double d = std::hypot(px - (a[0] + s * dx), py - (a[1] + s * dy));
                body = std::max(body, std::clamp(radius - d + 0.5, 0.0, 1.0));
            }
            const auto& h = joints[1];
            const double head = std::clamp(head_radius - std::hypot(px - h[0], py - h[1]) + 0.5, 0.0, 1.0);
            for (std::size_t ch = 0; ch < 3; ++ch) {
                c[ch] = (1.0 - body) * c[ch] + body * look.body[ch];
                c[ch] = (1.0 - head) * c[ch] + head * look.head[ch];
                img[(static_cast<Index>(y) * side + x) * 3 + static_cast<Index>(ch)] = static_cast<float>(std::clamp(c[ch], 0.0, 1.0));
            }
        }
    }
    return img;
}

DanceClip synth_dance(const DanceStyle& style, const BeatGrid& beats, int n_frames, double fps, RngStream rng, double start,
                      int side)
{
    if (n_frames < 2) {
        throw DomainError("a dance needs at least 2 frames");
    }
    const Appearance look = Appearance::random(rng);
    TensorF frames({n_frames, side, side, 3});
    JointTrack track{TensorF({n_frames, kJoints, 2})};
    const Index per_frame = static_cast<Index>(side) * side * 3;
    for (int i = 0; i < n_frames; ++i) {
        const Pose pose = pose_at(style, beats, start + i / fps, look);
        const auto joints = joint_positions(pose, look, side);
        for (int j = 0; j < kJoints; ++j) {
            track.positions[(static_cast<Index>(i) * kJoints + j) * 2] = static_cast<float>(joints[static_cast<std::size_t>(j)][0]);
            track.positions[(static_cast<Index>(i) * kJoints + j) * 2 + 1] = static_cast<float>(joints[static_cast<std::size_t>(j)][1]);
        }
        frames.vec().segment(i * per_frame, per_frame) = render_frame(joints, look, side).vec();
    }
    return {VideoTensor(std::move(frames), fps), std::move(track)};
}

Json CorpusConfig::to_json() const
{
    return Json{{"styles", styles},
                {"tracks_per_style", tracks_per_style},
                {"videos_per_track", videos_per_track},
                {"n_frames", n_frames},
                {"fps", fps},
                {"frame_size", frame_size},
                {"track_duration", track_duration},
                {"context_duration", context_duration},
                {"test_fraction", test_fraction},
                {"seed", seed}};
}

CorpusConfig CorpusConfig::from_json(const Json& j)
{
    CorpusConfig c;
    c.styles = j.at("styles").get<int>();
    c.tracks_per_style = j.at("tracks_per_style").get<int>();
    c.videos_per_track = j.at("videos_per_track").get<int>();
    c.n_frames = j.at("n_frames").get<int>();
    c.fps = j.at("fps").get<double>();
    c.frame_size = j.at("frame_size").get<int>();
    c.track_duration = j.at("track_duration").get<double>();
    c.context_duration = j.at("context_duration").get<double>();
    c.test_fraction = j.at("test_fraction").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

namespace {

std::string style_dir(int s)
{
    return "style_" + std::to_string(s);
}

std::string track_dir(int t)
{
    return "track_" + zero_pad(t, 3);
}

std::string video_dir(int v)
{
    return "video_" + zero_pad(v, 2);
}

}  // namespace

void generate_corpus(const CorpusConfig& config, const fs::path& root, bool overwrite)
{
    if (config.tracks_per_style < 1 || config.videos_per_track < 1) {
        throw DomainError("corpus needs at least one track per style and one video per track");
    }
    if (config.context_duration + config.n_frames / config.fps > config.track_duration + 1e-9 ||
        config.context_duration < config.n_frames / config.fps) {
        throw DomainError("track too short for the music context and video length");
    }
    if (fs::exists(root) && !fs::is_empty(root)) {
        if (!overwrite) {
            throw CorpusExistsError("output directory " + root.string() + " is not empty");
        }
        fs::remove_all(root);
    }
    fs::create_directories(root);

    const RngStream master(config.seed);
    const std::vector<DanceStyle> styles = default_styles(config.styles);
    const int sr = kDefaultSampleRate;
    const int n = config.n_frames;
    const int max_start = static_cast<int>(std::floor((config.track_duration - config.context_duration) * config.fps + 1e-9));

    for (const DanceStyle& style : styles) {
        // Test tracks are chosen per style so every style appears in both splits.
        std::vector<int> order(static_cast<std::size_t>(config.tracks_per_style));
        for (int i = 0; i < config.tracks_per_style; ++i) {
            order[static_cast<std::size_t>(i)] = i;
        }
        RngStream split_rng = master.fork("split").fork(static_cast<std::uint64_t>(style.id));
        for (int i = config.tracks_per_style - 1; i > 0; --i) {
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(split_rng.uniform_int(0, i))]);
        }
        const auto n_test = static_cast<int>(std::lround(config.test_fraction * config.tracks_per_style));
        std::vector<bool> is_test(static_cast<std::size_t>(config.tracks_per_style), false);
        for (int i = 0; i < n_test; ++i) {
            is_test[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
        }

        for (int t = 0; t < config.tracks_per_style; ++t) {
            const int track_id = style.id * config.tracks_per_style + t;
            const RngStream track_rng = master.fork("track").fork(static_cast<std::uint64_t>(track_id));
            RngStream tempo_rng = track_rng.fork("tempo");
            const double bpm = tempo_rng.uniform(style.bpm_lo, style.bpm_hi);
            const MusicTrack music = synth_music(style, bpm, config.track_duration, track_rng.fork("music"));
            const fs::path tdir = root / style_dir(style.id) / track_dir(track_id);
            save_audio(music.clip, tdir / "track.wav");
            save_json(Json{{"style_id", style.id},
                           {"track_id", track_id},
                           {"tempo_bpm", bpm},
                           {"beat_times", music.beats.beat_times},
                           {"split", is_test[static_cast<std::size_t>(t)] ? "test" : "train"}},
                      tdir / "track.json");

            for (int v = 0; v < config.videos_per_track; ++v) {
                RngStream video_rng = track_rng.fork("video").fork(static_cast<std::uint64_t>(v));
                RngStream window_rng = video_rng.fork("window");
                int start = 0;
                for (int attempt = 0; attempt < 200; ++attempt) {
                    start = static_cast<int>(window_rng.uniform_int(0, max_start));
                    bool inside = false;
                    for (double b : music.beats.beat_times) {
                        const double f = b * config.fps - start;
                        inside = inside || (f >= 2.0 && f <= n - 3.0);
                    }
                    if (inside) {
                        break;
                    }
                }
                const double start_time = start / config.fps;
                const DanceClip dance = synth_dance(style, music.beats, n, config.fps, video_rng.fork("dance"), start_time,
                                                    config.frame_size);
                const fs::path vdir = tdir / video_dir(v);
                save_video_frames(dance.video, vdir / "frames");
                const auto first = static_cast<Index>(std::llround(start_time * sr));
                const auto count = static_cast<Index>(std::llround(n / config.fps * sr));
                save_audio(music.clip.segment(first, count), vdir / "audio.wav");

                std::vector<double> local;
                for (double b : music.beats.beat_times) {
                    const double r = b - start_time;
                    if (r >= 0.0 && r < n / config.fps) {
                        local.push_back(r);
                    }
                }
                Json joints = Json::array();
                for (int i = 0; i < n; ++i) {
                    Json frame = Json::array();
                    for (int j = 0; j < kJoints; ++j) {
                        frame.push_back({dance.joints.x(i, j), dance.joints.y(i, j)});
                    }
                    joints.push_back(frame);
                }
                save_json(Json{{"style_id", style.id},
                               {"style_name", style.name},
                               {"track_id", track_id},
                               {"video_index", v},
                               {"fps", config.fps},
                               {"n_frames", n},
                               {"beat_times", local},
                               {"tempo_bpm", bpm},
                               {"joints", joints},
                               {"split", is_test[static_cast<std::size_t>(t)] ? "test" : "train"},
                               {"music_offset", start_time}},
                          vdir / "meta.json");
            }
        }
    }
    save_json(Json{{"config", config.to_json()}, {"layout_version", 1}}, root / "corpus.json");
}

Corpus::Corpus(fs::path root) : root_(std::move(root))
{
    const fs::path index = root_ / "corpus.json";
    if (!fs::exists(index)) {
        throw IoError("no corpus at " + root_.string() + " (corpus.json missing)");
    }
    config_ = CorpusConfig::from_json(load_json(index).at("config"));
    for (int s = 0; s < config_.styles; ++s) {
        for (int t = 0; t < config_.tracks_per_style; ++t) {
            const int track_id = s * config_.tracks_per_style + t;
            for (int v = 0; v < config_.videos_per_track; ++v) {
                SampleMeta m;
                m.id = style_dir(s) + "/" + track_dir(track_id) + "/" + video_dir(v);
                m.dir = root_ / m.id;
                m.track_wav = root_ / style_dir(s) / track_dir(track_id) / "track.wav";
                const Json j = load_json(m.dir / "meta.json");
                m.style_id = j.at("style_id").get<int>();
                m.track_id = j.at("track_id").get<int>();
                m.video_index = j.at("video_index").get<int>();
                m.fps = j.at("fps").get<double>();
                m.n_frames = j.at("n_frames").get<int>();
                m.beat_times = j.at("beat_times").get<std::vector<double>>();
                m.tempo_bpm = j.at("tempo_bpm").get<double>();
                m.split = j.at("split").get<std::string>();
                m.music_offset = j.at("music_offset").get<double>();
                samples_.push_back(std::move(m));
            }
        }
    }
}

std::vector<SampleMeta> Corpus::split(const std::string& name) const
{
    std::vector<SampleMeta> out;
    std::copy_if(samples_.begin(), samples_.end(), std::back_inserter(out), [&](const SampleMeta& m) { return m.split == name; });
    return out;
}

VideoTensor Corpus::load_video(const SampleMeta& meta) const
{
    return load_video_frames(meta.dir / "frames", meta.fps);
}

CorpusSample Corpus::load(const SampleMeta& meta) const
{
    CorpusSample s;
    s.meta = meta;
    s.video = load_video(meta);
    s.audio = load_audio(meta.dir / "audio.wav");
    const Json j = load_json(meta.dir / "meta.json");
    const auto& joints = j.at("joints");
    s.joints.positions = TensorF({meta.n_frames, kJoints, 2});
    for (int i = 0; i < meta.n_frames; ++i) {
        for (int k = 0; k < kJoints; ++k) {
            for (int c = 0; c < 2; ++c) {
                s.joints.positions[(static_cast<Index>(i) * kJoints + k) * 2 + c] =
                    joints.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)).at(static_cast<std::size_t>(c)).get<float>();
            }
        }
    }
    return s;
}

AudioClip Corpus::music_context(const SampleMeta& meta) const
{
    const AudioClip track = load_audio(meta.track_wav);
    const auto first = static_cast<Index>(std::llround(meta.music_offset * track.sample_rate()));
    const auto count = static_cast<Index>(std::llround(config_.context_duration * track.sample_rate()));
    return track.segment(first, count);
}

}  // namespace beatflow::corpus
