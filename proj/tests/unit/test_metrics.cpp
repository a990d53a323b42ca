#include "doctest.h"

#include "beatflow/core/rng.hpp"
#include "beatflow/metrics/metrics.hpp"

#include <cmath>
#include <functional>
#include <numbers>

using namespace beatflow;
using namespace beatflow::metrics;

namespace {

// Largest one-to-one matching within the window, by trying every assignment.
int brute_force_matches(const std::vector<double>& a, const std::vector<double>& b, double window)
{
    std::vector<bool> used(b.size(), false);
    std::function<int(std::size_t)> go = [&](std::size_t i) -> int {
        if (i == a.size()) {
            return 0;
        }
        int best = go(i + 1);
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (!used[j] && std::abs(a[i] - b[j]) <= window) {
                used[j] = true;
                best = std::max(best, 1 + go(i + 1));
                used[j] = false;
            }
        }
        return best;
    };
    return go(0);
}

Image constant_image(int side, float v)
{
    Image img({side, side, 3});
    img.vec().setConstant(v);
    return img;
}

Image noise_image(int side, RngStream& rng)
{
    Image img({side, side, 3});
    for (Index i = 0; i < img.size(); ++i) {
        img[i] = static_cast<float>(rng.uniform());
    }
    return img;
}

}  // namespace

TEST_CASE("mm_align hand-computed cases")
{
    const std::vector<double> same{3.0, 9.0, 14.0};
    CHECK(mm_align_2d(same, same) == 1.0);
    const std::vector<double> fx{10.0, 20.0};
    const std::vector<double> fy{10.0, 22.0};
    CHECK(mm_align_2d(fx, fy, 3.0) == doctest::Approx(0.9003).epsilon(5e-5));
    CHECK(mm_align_2d(fx, fy, 3.0) == doctest::Approx((1.0 + std::exp(-4.0 / 18.0)) / 2.0).epsilon(1e-12));
    const std::vector<double> one{7.0};
    const std::vector<double> off{4.0, 20.0};
    CHECK(mm_align_2d(one, off, 3.0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("mm_align properties")
{
    const std::vector<double> fx{4.0, 11.0, 17.0};
    std::vector<double> fy{5.0, 12.0, 16.0};
    const double base = mm_align_2d(fx, fy);
    CHECK(base > 0.0);
    CHECK(base < 1.0);
    std::vector<double> permuted{16.0, 5.0, 12.0, 12.0};
    CHECK(mm_align_2d(fx, permuted) == doctest::Approx(base).epsilon(1e-15));
    // Moving one kinematic beat away never raises the score.
    double last = mm_align_2d(std::vector<double>{5.0}, fy);
    for (double x = 5.5; x <= 8.5; x += 0.5) {
        const double v = mm_align_2d(std::vector<double>{x}, fy);
        CHECK(v <= last + 1e-15);
        last = v;
    }
    CHECK_THROWS_AS(mm_align_2d(std::vector<double>{}, fy), UndefinedScore);
    CHECK_THROWS_AS(mm_align_2d(fx, std::vector<double>{}), UndefinedScore);
}

TEST_CASE("kinematic beats are prominent speed minima")
{
    std::vector<double> speed;
    for (int i = 0; i <= 20; ++i) {
        speed.push_back(std::abs(std::sin(2.0 * std::numbers::pi * (i + 0.3) / 20.0)));
    }
    const BeatSequence beats = kinematic_beats(speed);
    REQUIRE(beats.size() == 1);
    CHECK(beats[0] == 10.0);
    const std::vector<double> monotone{1, 2, 3, 4, 5};
    CHECK(kinematic_beats(monotone).empty());
    const std::vector<double> flat(8, 2.0);
    CHECK(kinematic_beats(flat).empty());
    // A shallow dip below the prominence floor is ignored.
    const std::vector<double> shallow{0, 10, 9.5, 10, 0};
    CHECK(kinematic_beats(shallow).empty());
}

TEST_CASE("peak matching: documented example, symmetry and limits")
{
    const std::vector<double> a{2, 10, 18};
    const std::vector<double> b{2, 13, 18};
    CHECK(match_peaks(a, b) == 2);
    CHECK(peak_iou(a, b) == doctest::Approx(0.5));
    CHECK(peak_iou(b, a) == doctest::Approx(0.5));
    CHECK(peak_iou(a, a) == 1.0);
    CHECK(peak_iou(a, std::vector<double>{5, 14, 22}) == 0.0);
    CHECK_THROWS_AS(peak_iou(std::vector<double>{}, std::vector<double>{}), UndefinedScore);
}

TEST_CASE("greedy peak matching equals exhaustive matching up to six peaks")
{
    RngStream rng(21);
    for (int trial = 0; trial < 3000; ++trial) {
        auto train = [&] {
            std::vector<double> t;
            const int n = static_cast<int>(rng.uniform_int(0, 6));
            for (int i = 0; i < n; ++i) {
                // Half-frame grid so exact window boundaries occur.
                t.push_back(0.5 * static_cast<double>(rng.uniform_int(0, 24)));
            }
            std::sort(t.begin(), t.end());
            return t;
        };
        const std::vector<double> a = train();
        const std::vector<double> b = train();
        REQUIRE(match_peaks(a, b) == brute_force_matches(a, b, 1.0));
        REQUIRE(match_peaks(b, a) == match_peaks(a, b));
    }
}

TEST_CASE("psnr and ssim closed forms")
{
    const Image zeros = constant_image(16, 0.0f);
    const Image halves = constant_image(16, 0.5f);
    const Psnr p = psnr(zeros, halves);
    CHECK_FALSE(p.exact);
    CHECK(p.db == doctest::Approx(10.0 * std::log10(4.0)));
    CHECK(p.db == doctest::Approx(6.0206).epsilon(1e-5));
    CHECK(psnr(halves, halves).exact);

    RngStream rng(4);
    const Image x = noise_image(32, rng);
    const Image y = noise_image(32, rng);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));
    CHECK(ssim(x, y) >= -1.0);
    CHECK(ssim(x, y) < 0.2);
    // Constant images a and b: luminance term only, (2ab + C1) / (a^2 + b^2 + C1).
    const double c1 = 1e-4;
    const Image a = constant_image(16, 0.2f);
    const Image b = constant_image(16, 0.6f);
    const double expect = (2.0 * 0.2 * 0.6 + c1) / (0.04 + 0.36 + c1);
    CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-6));
    CHECK_THROWS(ssim(a, constant_image(32, 0.2f)));
}

TEST_CASE("ssim is unchanged by a joint translation on interior windows")
{
    RngStream rng(8);
    const Image x = noise_image(40, rng);
    Image y = x;
    for (Index i = 0; i < y.size(); ++i) {
        y[i] = std::clamp(x[i] + 0.1f * static_cast<float>(rng.normal()), 0.0f, 1.0f);
    }
    // Shift both by 4 pixels (one window stride) and crop to 32x32.
    auto crop = [](const Image& img, int dx) {
        Image out({32, 32, 3});
        for (int r = 0; r < 32; ++r) {
            for (int c = 0; c < 32; ++c) {
                for (int k = 0; k < 3; ++k) {
                    out[(static_cast<Index>(r) * 32 + c) * 3 + k] = img[(static_cast<Index>(r + dx) * 40 + c + dx) * 3 + k];
                }
            }
        }
        return out;
    };
    const double s0 = ssim(crop(x, 0), crop(y, 0));
    const double s1 = ssim(crop(x, 4), crop(y, 4));
    CHECK(std::abs(s0 - s1) < 0.05);
    CHECK(ssim(crop(x, 4), crop(y, 4)) == doctest::Approx(ssim(crop(x, 4), crop(y, 4))));
}

TEST_CASE("video motion series")
{
    TensorF still({4, 16, 16, 3});
    still.vec().setConstant(0.3f);
    for (double v : video_motion_series(VideoTensor(still, 20.0))) {
        CHECK(v == 0.0);
    }
    TensorF flip({5, 16, 16, 3});
    for (int f = 0; f < 5; ++f) {
        flip.vec().segment(static_cast<Index>(f) * 768, 768).setConstant(f % 2 == 0 ? 0.0f : 1.0f);
    }
    for (double v : video_motion_series(VideoTensor(flip, 20.0))) {
        CHECK(v == 1.0);
    }
    CHECK_THROWS(video_motion_series(VideoTensor(TensorF({1, 16, 16, 3}), 20.0)));
}

TEST_CASE("frame conversion")
{
    const std::vector<double> s{0.1, 0.6};
    CHECK(to_frames(s, 20.0) == BeatSequence{2.0, 12.0});
}
