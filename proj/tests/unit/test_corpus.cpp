#include "doctest.h"

#include "beatflow/audio/analysis.hpp"
#include "beatflow/corpus/synth.hpp"
#include "beatflow/metrics/metrics.hpp"

#include <cmath>
#include <set>

using namespace beatflow;
using namespace beatflow::corpus;

namespace {

fs::path scratch_dir(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("beatflow_test_" + name);
    fs::remove_all(dir);
    return dir;
}

CorpusConfig small_config()
{
    CorpusConfig c;
    c.styles = 4;
    c.tracks_per_style = 5;
    c.videos_per_track = 3;
    c.frame_size = 32;
    c.seed = 17;
    return c;
}

}  // namespace

TEST_CASE("music beats follow the period from 0.1 s")
{
    const std::vector<DanceStyle> styles = default_styles(4);
    const auto it = std::find_if(styles.begin(), styles.end(), [](const DanceStyle& d) { return d.bpm_lo <= 120.0 && d.bpm_hi >= 120.0; });
    REQUIRE(it != styles.end());
    const DanceStyle& s = *it;
    const MusicTrack a = synth_music(s, 120.0, 2.1, RngStream(1));
    REQUIRE(a.beats.beat_times.size() == 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(a.beats.beat_times[static_cast<std::size_t>(i)] == doctest::Approx(0.1 + 0.5 * i).epsilon(1e-12));
    }
    CHECK(a.clip.duration() == doctest::Approx(2.1).epsilon(1e-4));
    CHECK_THROWS_AS(synth_music(s, s.bpm_hi + 1.0, 2.0, RngStream(1)), DomainError);
    CHECK_THROWS_AS(synth_music(s, 120.0, 0.5, RngStream(1)), DomainError);
}

TEST_CASE("a one second track at 60 BPM has a single beat")
{
    for (const DanceStyle& s : default_styles(4)) {
        if (s.bpm_lo <= 60.0) {
            const MusicTrack m = synth_music(s, 60.0, 1.0, RngStream(2));
            CHECK(m.beats.beat_times == std::vector<double>{0.1});
        }
    }
}

TEST_CASE("onset envelope of synthesized music peaks on every beat")
{
    for (const DanceStyle& s : default_styles(4)) {
        const double bpm = 0.5 * (s.bpm_lo + s.bpm_hi);
        const MusicTrack m = synth_music(s, bpm, 4.0, RngStream(3));
        const audio::OnsetEnvelope env = audio::onset_envelope(audio::log_mel(m.clip));
        for (double t : m.beats.beat_times) {
            // Largest envelope value within half a period of the beat.
            const double half = 0.5 * 60.0 / bpm;
            double best = -1.0;
            double at = 0.0;
            for (Index i = 0; i < env.size(); ++i) {
                const double ti = env.time_of(static_cast<double>(i));
                if (std::abs(ti - t) < half && env.values[i] > best) {
                    best = env.values[i];
                    at = ti;
                }
            }
            CHECK(std::abs(at - t) <= 0.010 + 0.5 / env.frame_rate);
        }
    }
}

TEST_CASE("styles are distinct and well formed")
{
    const std::vector<DanceStyle> styles = default_styles(6);
    CHECK(styles.size() == 6);
    for (std::size_t i = 0; i < styles.size(); ++i) {
        CHECK(styles[i].keyposes.size() >= 2);
        CHECK(styles[i].bpm_lo >= 60.0);
        CHECK(styles[i].bpm_hi <= 180.0);
        for (std::size_t j = 0; j < i; ++j) {
            const bool timbre_differs = styles[i].timbre.waveform != styles[j].timbre.waveform ||
                                        styles[i].timbre.base_hz != styles[j].timbre.base_hz;
            CHECK(timbre_differs);
            CHECK(styles[i].keyposes[0].angle != styles[j].keyposes[0].angle);
        }
    }
    CHECK_THROWS_AS(default_styles(1), DomainError);
    CHECK_THROWS_AS(default_styles(7), DomainError);
}

TEST_CASE("dance speed minima sit on the beats")
{
    const DanceStyle style = default_styles(4)[1];
    BeatGrid grid;
    grid.tempo_bpm = 120.0;
    for (double t = 0.1; t < 3.0; t += 0.5) {
        grid.beat_times.push_back(t);
    }
    const DanceClip clip = synth_dance(style, grid, 40, 20.0, RngStream(4));
    const metrics::BeatSequence kin = metrics::kinematic_beats(clip.joints);
    // Interior beats at frames 2, 12, 22, 32.
    int hits = 0;
    int interior = 0;
    for (double b : {2.0, 12.0, 22.0, 32.0}) {
        ++interior;
        for (double k : kin) {
            if (std::abs(k - b) <= 1.0) {
                ++hits;
                break;
            }
        }
    }
    CHECK(hits == interior);
    CHECK(kin.size() <= 4);
}

TEST_CASE("rigid skeleton inside the frame, static without beats")
{
    const DanceStyle style = default_styles(4)[2];
    BeatGrid grid;
    grid.tempo_bpm = 100.0;
    for (double t = 0.1; t < 2.5; t += 0.6) {
        grid.beat_times.push_back(t);
    }
    const DanceClip clip = synth_dance(style, grid, 40, 20.0, RngStream(5));
    const JointTrack& j = clip.joints;
    double worst = 0.0;
    for (int b = 1; b < kJoints; ++b) {
        const int p = kParent[static_cast<std::size_t>(b)];
        const double len0 = std::hypot(j.x(0, b) - j.x(0, p), j.y(0, b) - j.y(0, p));
        for (int f = 0; f < j.frames(); ++f) {
            const double len = std::hypot(j.x(f, b) - j.x(f, p), j.y(f, b) - j.y(f, p));
            worst = std::max(worst, std::abs(len - len0));
            CHECK(j.x(f, b) >= 0.0);
            CHECK(j.x(f, b) <= 64.0);
            CHECK(j.y(f, b) >= 0.0);
            CHECK(j.y(f, b) <= 64.0);
        }
    }
    CHECK(worst < 1e-3);

    const DanceClip still = synth_dance(style, BeatGrid{}, 10, 20.0, RngStream(5));
    for (double v : metrics::joint_speed(still.joints)) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("corpus layout, split and invariants")
{
    const fs::path root = scratch_dir("corpus");
    const CorpusConfig config = small_config();
    generate_corpus(config, root);
    const Corpus c(root);
    CHECK(c.samples().size() == 60);
    std::set<std::pair<int, int>> tracks;
    std::set<std::pair<int, int>> train_tracks;
    std::set<std::pair<int, int>> test_tracks;
    for (const SampleMeta& m : c.samples()) {
        tracks.insert({m.style_id, m.track_id});
        (m.split == "train" ? train_tracks : test_tracks).insert({m.style_id, m.track_id});
    }
    CHECK(tracks.size() == 20);
    CHECK(train_tracks.size() == 16);
    CHECK(test_tracks.size() == 4);
    for (const auto& t : test_tracks) {
        CHECK(train_tracks.count(t) == 0);
    }
    for (const SampleMeta& m : c.split("test")) {
        const CorpusSample s = c.load(m);
        CHECK(s.video.frames() == config.n_frames);
        CHECK(std::abs(s.audio.duration() - config.n_frames / config.fps) <= 1.0 / s.audio.sample_rate());
        CHECK(c.music_context(m).duration() == doctest::Approx(config.context_duration).epsilon(1e-4));
        if (!m.beat_times.empty()) {
            const metrics::BeatSequence kin = metrics::kinematic_beats(s.joints);
            if (!kin.empty()) {
                CHECK(metrics::mm_align_2d(kin, metrics::to_frames(m.beat_times, m.fps)) >= 0.9);
            }
        }
    }
    CHECK_THROWS_AS(generate_corpus(config, root), CorpusExistsError);
}

TEST_CASE("corpus regeneration is bit identical")
{
    CorpusConfig config = small_config();
    config.tracks_per_style = 1;
    config.videos_per_track = 2;
    const fs::path a = scratch_dir("corpus_a");
    const fs::path b = scratch_dir("corpus_b");
    generate_corpus(config, a);
    generate_corpus(config, b);
    int files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (entry.is_regular_file()) {
            ++files;
            const fs::path rel = fs::relative(entry.path(), a);
            REQUIRE(fs::exists(b / rel));
            CHECK(read_file(entry.path()) == read_file(b / rel));
        }
    }
    CHECK(files > 0);
}
