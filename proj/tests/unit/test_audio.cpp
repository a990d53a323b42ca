#include "doctest.h"

#include "beatflow/audio/analysis.hpp"
#include "beatflow/core/rng.hpp"

#include <cmath>
#include <functional>
#include <numbers>

using namespace beatflow;
using namespace beatflow::audio;

namespace {

constexpr int kSr = 22050;

AudioClip sine(double hz, double seconds, double amp)
{
    Eigen::VectorXf s(static_cast<Index>(seconds * kSr));
    for (Index i = 0; i < s.size(); ++i) {
        s[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * i / kSr));
    }
    return AudioClip(s, kSr);
}

// Decaying noise bursts (8 ms, 1.5 ms time constant) at each beat time.
AudioClip click_track(double bpm, double seconds, double first, double amp = 0.5, int skip = -1, std::uint64_t seed = 1)
{
    Eigen::VectorXf s = Eigen::VectorXf::Zero(static_cast<Index>(seconds * kSr));
    RngStream rng(seed);
    const double period = 60.0 / bpm;
    int k = 0;
    for (double t = first; t < seconds; t += period, ++k) {
        if (k == skip) {
            continue;
        }
        const auto start = static_cast<Index>(std::llround(t * kSr));
        for (Index n = 0; n < kSr * 8 / 1000 && start + n < s.size(); ++n) {
            s[start + n] += static_cast<float>(amp * std::exp(-static_cast<double>(n) / (0.0015 * kSr)) * rng.uniform(-1.0, 1.0));
        }
    }
    return AudioClip(s, kSr);
}

std::vector<double> click_times(double bpm, double seconds, double first)
{
    std::vector<double> out;
    for (double t = first; t < seconds; t += 60.0 / bpm) {
        out.push_back(t);
    }
    return out;
}

// Fraction of `truth` beats that have a detected beat within `tol` seconds.
double hit_rate(const std::vector<double>& truth, const std::vector<double>& detected, double tol)
{
    int hits = 0;
    for (double t : truth) {
        for (double d : detected) {
            if (std::abs(d - t) <= tol) {
                ++hits;
                break;
            }
        }
    }
    return truth.empty() ? 0.0 : static_cast<double>(hits) / truth.size();
}

}  // namespace

TEST_CASE("mel scale round trip")
{
    for (double hz : {0.0, 100.0, 440.0, 1000.0, 8000.0}) {
        CHECK(mel_to_hz(hz_to_mel(hz)) == doctest::Approx(hz).epsilon(1e-9));
    }
    CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
}

TEST_CASE("pure tone lands in the mel band centred nearest to it")
{
    const MelSpectrogram mel = log_mel(sine(440.0, 1.0, 0.5));
    CHECK(mel.n_mels() == 64);
    CHECK(mel.frames() == (kSr - 1024) / 256 + 1);
    // Band centres from the HTK formula, evaluated here independently.
    const double top = 2595.0 * std::log10(1.0 + (kSr / 2.0) / 700.0);
    int nearest = 0;
    double best = 1e9;
    for (int m = 0; m < 64; ++m) {
        const double centre = 700.0 * (std::pow(10.0, top * (m + 1) / 65.0 / 2595.0) - 1.0);
        if (std::abs(centre - 440.0) < best) {
            best = std::abs(centre - 440.0);
            nearest = m;
        }
    }
    Eigen::Index arg = 0;
    mel.values.row(mel.frames() / 2).maxCoeff(&arg);
    CHECK(static_cast<int>(arg) == nearest);
}

TEST_CASE("silence gives a zero spectrogram and louder tones give larger values")
{
    const MelSpectrogram quiet = log_mel(AudioClip(Eigen::VectorXf::Zero(kSr), kSr));
    CHECK(quiet.values.cwiseAbs().maxCoeff() == 0.0);
    const MelSpectrogram a = log_mel(sine(440.0, 1.0, 0.1));
    const MelSpectrogram b = log_mel(sine(440.0, 1.0, 0.4));
    CHECK((b.values.array() >= a.values.array()).all());
    CHECK(b.values.maxCoeff() > a.values.maxCoeff());
}

TEST_CASE("clip shorter than a window is a domain error")
{
    CHECK_THROWS_AS(log_mel(AudioClip(Eigen::VectorXf::Zero(1000), kSr)), DomainError);
}

TEST_CASE("single click is located within 10 ms")
{
    for (double at : {0.5, 0.7371, 1.0}) {
        const OnsetEnvelope env = onset_envelope(log_mel(click_track(30.0, 2.0, at)));
        Eigen::Index arg = 0;
        env.values.maxCoeff(&arg);
        CHECK(std::abs(env.time_of(static_cast<double>(arg)) - at) <= 0.010);
    }
}

TEST_CASE("two clicks half a second apart give two peaks")
{
    Eigen::VectorXf s = click_track(120.0, 1.6, 0.5).samples();
    // Keep only the clicks at 0.5 s and 1.0 s.
    s.tail(s.size() - static_cast<Index>(1.2 * kSr)).setZero();
    const OnsetEnvelope env = onset_envelope(log_mel(AudioClip(s, kSr)));
    std::vector<double> v(env.values.data(), env.values.data() + env.values.size());
    const std::vector<int> peaks = find_peaks(v, 0.5);
    REQUIRE(peaks.size() == 2);
    CHECK(std::abs(env.time_of(peaks[0]) - 0.5) <= 0.012);
    CHECK(std::abs(env.time_of(peaks[1]) - 1.0) <= 0.012);
}

TEST_CASE("tempo of click tracks")
{
    for (double bpm : {60.0, 90.0, 120.0, 150.0, 177.0}) {
        const TempoEstimate est = estimate_tempo(onset_envelope(log_mel(click_track(bpm, 8.0, 0.3))));
        CHECK(est.bpm == doctest::Approx(bpm).epsilon(2.0 / bpm));
        CHECK_FALSE(est.low_confidence);
    }
}

TEST_CASE("white noise tempo is flagged low confidence")
{
    RngStream rng(11);
    Eigen::VectorXf s(8 * kSr);
    for (Index i = 0; i < s.size(); ++i) {
        s[i] = static_cast<float>(0.3 * rng.uniform(-1.0, 1.0));
    }
    const TempoEstimate est = estimate_tempo(onset_envelope(log_mel(AudioClip(s, kSr))));
    CHECK(est.low_confidence);
}

TEST_CASE("tempo needs two slowest periods of envelope")
{
    CHECK_THROWS_AS(estimate_tempo(onset_envelope(log_mel(click_track(120.0, 1.5, 0.2)))), DomainError);
}

TEST_CASE("beat dynamic programme matches exhaustive search")
{
    RngStream rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 8 + static_cast<int>(rng.uniform_int(0, 4));
        const double period = rng.uniform(2.2, 4.5);
        std::vector<double> onset(static_cast<std::size_t>(n));
        for (double& o : onset) {
            o = rng.uniform() < 0.4 ? rng.uniform(0.0, 3.0) : rng.uniform(0.0, 0.3);
        }
        const double lambda = rng.uniform(0.1, 5.0);
        // Every non-empty subset with feasible gaps.
        double best = -1e300;
        for (int mask = 1; mask < (1 << n); ++mask) {
            std::vector<int> frames;
            for (int i = 0; i < n; ++i) {
                if (mask & (1 << i)) {
                    frames.push_back(i);
                }
            }
            bool ok = true;
            double score = 0.0;
            for (std::size_t k = 0; k < frames.size(); ++k) {
                score += onset[static_cast<std::size_t>(frames[k])];
                if (k > 0) {
                    const double gap = frames[k] - frames[k - 1];
                    ok = ok && gap >= 0.8 * period && gap <= 1.2 * period;
                    score -= lambda * std::pow(std::log(gap / period), 2);
                }
            }
            if (ok) {
                best = std::max(best, score);
            }
        }
        const BeatPath path = best_beat_path(onset, period, lambda);
        CHECK(beat_path_feasible(path.frames, period));
        CHECK(path.score == doctest::Approx(best).epsilon(1e-9));
        CHECK(beat_path_score(onset, path.frames, period, lambda) == doctest::Approx(path.score).epsilon(1e-9));
    }
}

TEST_CASE("beat tracker places beats on clicks and fills a missing one")
{
    const double bpm = 100.0;
    const double first = 0.25;
    const AudioClip clip = click_track(bpm, 8.0, first, 0.5, 6);
    const OnsetEnvelope env = onset_envelope(log_mel(clip));
    const BeatGrid grid = track_beats(env, bpm);
    const std::vector<double> truth = click_times(bpm, 7.7, first);
    CHECK(hit_rate(truth, grid.beat_times, 0.030) >= 0.95);
    const double missing = first + 6 * 60.0 / bpm;
    bool found = false;
    for (double t : grid.beat_times) {
        found = found || std::abs(t - missing) <= 0.030;
    }
    CHECK(found);
    CHECK(grid.is_regular());
}

TEST_CASE("beats move with the audio and ignore its level")
{
    const AudioClip base = click_track(130.0, 6.0, 0.4);
    const BeatGrid a = detect_beats(base);
    const BeatGrid quiet = detect_beats(base.scaled(0.25f));
    REQUIRE(a.beat_times.size() == quiet.beat_times.size());
    for (std::size_t i = 0; i < a.beat_times.size(); ++i) {
        CHECK(std::abs(a.beat_times[i] - quiet.beat_times[i]) <= 1.0 / 86.0);
    }
    // Prepend 0.2 s of silence.
    const Index pad = kSr / 5;
    Eigen::VectorXf shifted = Eigen::VectorXf::Zero(base.length() + pad);
    shifted.tail(base.length()) = base.samples();
    const BeatGrid b = detect_beats(AudioClip(shifted, kSr));
    CHECK(hit_rate(a.beat_times, [&] {
              std::vector<double> back;
              for (double t : b.beat_times) {
                  back.push_back(t - 0.2);
              }
              return back;
          }(),
                   0.012) >= 0.9);
}

TEST_CASE("beat tracking edge cases")
{
    OnsetEnvelope env;
    env.frame_rate = 86.0;
    CHECK(track_beats(env, 120.0).empty());
    env.values = Eigen::VectorXd::Zero(200);
    CHECK(track_beats(env, 120.0).empty());
    CHECK_THROWS_AS(track_beats(env, 40.0), DomainError);
    CHECK_THROWS_AS(track_beats(env, 200.0), DomainError);
}

TEST_CASE("find_peaks")
{
    const std::vector<double> x{0, 1, 0, 2, 0, 0.05, 0};
    const std::vector<int> p = find_peaks(x, 0.1);
    CHECK(p == std::vector<int>{1, 3});
    const std::vector<double> plateau{0, 1, 1, 0};
    CHECK(find_peaks(plateau, 0.0).empty());
    const std::vector<double> flat(5, 1.0);
    CHECK(find_peaks(flat).empty());
}
