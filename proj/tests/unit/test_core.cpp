#include "doctest.h"

#include "beatflow/core/beat_grid.hpp"
#include "beatflow/core/io.hpp"
#include "beatflow/core/rng.hpp"

#include <cmath>
#include <filesystem>

using namespace beatflow;

namespace {

fs::path scratch_dir(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("beatflow_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

VideoTensor ramp_video(int frames, int side)
{
    TensorF data({frames, side, side, 3});
    for (Index i = 0; i < data.size(); ++i) {
        data[i] = static_cast<float>((i * 37) % 256) / 255.0f;
    }
    return VideoTensor(data, 20.0);
}

}  // namespace

TEST_CASE("png round trip is exact at 8-bit depth")
{
    const fs::path dir = scratch_dir("png");
    const VideoTensor v = ramp_video(1, 16);
    save_png(v.frame(0), dir / "a.png");
    const Image back = load_png(dir / "a.png");
    CHECK(back.shape() == Shape{16, 16, 3});
    CHECK((back.vec() - v.frame(0).vec()).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("video frames round trip and gap detection")
{
    const fs::path dir = scratch_dir("frames");
    const VideoTensor v = ramp_video(16, 32);
    save_video_frames(v, dir);
    CHECK(fs::exists(dir / "frame_00000.png"));
    CHECK(fs::exists(dir / "frame_00015.png"));
    CHECK(frame_filename(7) == "frame_00007.png");
    const VideoTensor back = load_video_frames(dir, 20.0);
    CHECK(back.frames() == 16);
    CHECK((back.data().vec() - quantize8(v.data()).vec()).cwiseAbs().maxCoeff() == 0.0f);

    fs::remove(dir / "frame_00005.png");
    CHECK_THROWS_AS(load_video_frames(dir, 20.0), GapError);
}

TEST_CASE("wav round trip within one 16-bit step")
{
    const fs::path dir = scratch_dir("wav");
    Eigen::VectorXf s(2205);
    for (Index i = 0; i < s.size(); ++i) {
        s[i] = 0.8f * static_cast<float>(std::sin(2.0 * 3.14159265358979 * 440.0 * i / 22050.0));
    }
    const AudioClip clip(s, 22050);
    save_audio(clip, dir / "a.wav");
    const AudioClip back = load_audio(dir / "a.wav");
    CHECK(back.sample_rate() == 22050);
    CHECK(back.length() == s.size());
    CHECK((back.samples() - s).cwiseAbs().maxCoeff() <= 1.0f / 32767.0f);
    CHECK((back.samples() - quantize16(s)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("non-pcm wav is rejected")
{
    const fs::path dir = scratch_dir("badwav");
    write_file(dir / "x.wav", std::string("RIFF\x10\x00\x00\x00WAVEjunk", 16));
    CHECK_THROWS(load_audio(dir / "x.wav"));
}

TEST_CASE("json save is canonical")
{
    const fs::path dir = scratch_dir("json");
    Json a;
    a["b"] = 1;
    a["a"] = {1.5, 2.5};
    save_json(a, dir / "a.json");
    Json b;
    b["a"] = {1.5, 2.5};
    b["b"] = 1;
    save_json(b, dir / "b.json");
    CHECK(read_file(dir / "a.json") == read_file(dir / "b.json"));
    CHECK(load_json(dir / "a.json") == a);
}

TEST_CASE("git blob hash matches git hash-object")
{
    // `printf 'hello\n' | git hash-object --stdin`
    CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("video tensor validation")
{
    CHECK_THROWS_AS(VideoTensor(TensorF({2, 16, 16, 3}), 0.0), DomainError);
    CHECK_THROWS_AS(VideoTensor(TensorF({2, 24, 16, 3}), 20.0), DomainError);
    CHECK_THROWS_AS(VideoTensor(TensorF({2, 16, 16}), 20.0), ShapeError);
    TensorF bad({1, 16, 16, 3});
    bad[3] = 1.5f;
    CHECK_THROWS_AS(VideoTensor(bad, 20.0), DomainError);
    bad[3] = std::nanf("");
    CHECK_THROWS_AS(VideoTensor(bad, 20.0), DomainError);
    const VideoTensor v = ramp_video(4, 16);
    CHECK(v.slice(1, 3).frames() == 2);
}

TEST_CASE("rng streams are reproducible and forks are uncorrelated")
{
    RngStream a(42);
    RngStream b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    // Forks depend on the seed only, not on draws already made.
    RngStream c(42);
    c.uniform();
    CHECK(RngStream(42).fork("x").next_u64() == c.fork("x").next_u64());

    RngStream f1 = RngStream(7).fork("left");
    RngStream f2 = RngStream(7).fork("right");
    const int n = 100000;
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        const double x = f1.normal();
        const double y = f2.normal();
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double corr = cov / std::sqrt((sxx / n - sx * sx / n / n) * (syy / n - sy * sy / n / n));
    CHECK(std::abs(corr) < 0.05);
    CHECK(std::abs(sx / n) < 0.02);
    CHECK(std::abs(sxx / n - 1.0) < 0.02);
}

TEST_CASE("uniform_int covers its closed range")
{
    RngStream r(3);
    int lo = 0;
    int hi = 0;
    for (int i = 0; i < 2000; ++i) {
        const auto v = r.uniform_int(2, 5);
        REQUIRE(v >= 2);
        REQUIRE(v <= 5);
        lo += v == 2;
        hi += v == 5;
    }
    CHECK(lo > 0);
    CHECK(hi > 0);
}

TEST_CASE("beat grid regularity")
{
    BeatGrid g{{0.1, 0.6, 1.1, 1.6}, 120.0};
    CHECK(g.period() == doctest::Approx(0.5));
    CHECK(g.is_regular());
    g.beat_times[2] = 1.3;
    CHECK_FALSE(g.is_regular());
}
