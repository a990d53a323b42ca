#include "beatflow/metrics/metrics.hpp"

#include "beatflow/audio/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace beatflow::metrics {

BeatSequence kinematic_beats(std::span<const double> speed, double prominence)
{
    std::vector<double> negated(speed.size());
    std::transform(speed.begin(), speed.end(), negated.begin(), [](double v) { return -v; });
    BeatSequence out;
    for (int i : audio::find_peaks(negated, prominence)) {
        out.push_back(i);
    }
    return out;
}

std::vector<double> joint_speed(const corpus::JointTrack& joints)
{
    const int n = joints.frames();
    std::vector<double> speed(static_cast<std::size_t>(n), 0.0);
    if (n < 2) {
        return speed;
    }
    for (int i = 0; i < n; ++i) {
        const int a = std::max(0, i - 1);
        const int b = std::min(n - 1, i + 1);
        double total = 0.0;
        for (int j = 0; j < corpus::kJoints; ++j) {
            total += std::hypot(joints.x(b, j) - joints.x(a, j), joints.y(b, j) - joints.y(a, j));
        }
        speed[static_cast<std::size_t>(i)] = total / corpus::kJoints / (b - a);
    }
    return speed;
}

BeatSequence kinematic_beats(const corpus::JointTrack& joints, double prominence)
{
    const std::vector<double> speed = joint_speed(joints);
    return kinematic_beats(speed, prominence);
}

std::vector<double> video_motion_series(const VideoTensor& video)
{
    if (video.frames() < 2) {
        throw DomainError("motion series needs at least two frames");
    }
    const Index per = static_cast<Index>(video.height()) * video.width() * 3;
    const auto& v = video.data().vec();
    std::vector<double> series(static_cast<std::size_t>(video.frames() - 1));
    for (int i = 0; i + 1 < video.frames(); ++i) {
        series[static_cast<std::size_t>(i)] =
            (v.segment((i + 1) * per, per) - v.segment(i * per, per)).cwiseAbs().template cast<double>().mean();
    }
    return series;
}

BeatSequence video_kinematic_beats(const VideoTensor& video, double prominence)
{
    BeatSequence out = kinematic_beats(video_motion_series(video), prominence);
    for (double& f : out) {
        f += 0.5;
    }
    return out;
}

BeatSequence to_frames(std::span<const double> seconds, double fps)
{
    BeatSequence out;
    out.reserve(seconds.size());
    for (double t : seconds) {
        out.push_back(t * fps);
    }
    return out;
}

double mm_align_2d(std::span<const double> kinematic, std::span<const double> music, double sigma)
{
    if (kinematic.empty() || music.empty()) {
        throw UndefinedScore("2D-MM Align needs at least one kinematic and one music beat");
    }
    double total = 0.0;
    for (double fx : kinematic) {
        double nearest = std::numeric_limits<double>::infinity();
        for (double fy : music) {
            nearest = std::min(nearest, (fx - fy) * (fx - fy));
        }
        total += std::exp(-nearest / (2.0 * sigma * sigma));
    }
    return total / static_cast<double>(kinematic.size());
}

int match_peaks(std::span<const double> a, std::span<const double> b, double window)
{
    constexpr double eps = 1e-9;
    std::size_t i = 0;
    std::size_t j = 0;
    int matches = 0;
    while (i < a.size() && j < b.size()) {
        if (std::abs(a[i] - b[j]) <= window + eps) {
            ++matches;
            ++i;
            ++j;
        } else if (a[i] < b[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    return matches;
}

double peak_iou(std::span<const double> a, std::span<const double> b, double window)
{
    if (a.empty() && b.empty()) {
        throw UndefinedScore("AV-Align needs at least one audio or visual peak");
    }
    const int m = match_peaks(a, b, window);
    return static_cast<double>(m) / static_cast<double>(static_cast<int>(a.size() + b.size()) - m);
}

BeatSequence audio_peak_frames(const AudioClip& clip, double fps, int n_frames)
{
    const audio::OnsetEnvelope env = audio::onset_envelope(audio::log_mel(clip));
    const std::span<const double> values(env.values.data(), static_cast<std::size_t>(env.values.size()));
    BeatSequence out;
    for (int p : audio::find_peaks(values, kDefaultProminence)) {
        const double f = env.time_of(p) * fps;
        if (f >= 0.0 && f <= n_frames - 1.0) {
            out.push_back(f);
        }
    }
    return out;
}

BeatSequence visual_peak_frames(const VideoTensor& video)
{
    const std::vector<double> series = video_motion_series(video);
    BeatSequence out;
    for (int p : audio::find_peaks(series, kDefaultProminence)) {
        out.push_back(p + 0.5);
    }
    return out;
}

double av_align(const VideoTensor& video, const AudioClip& clip, double window)
{
    if (video.frames() < 3) {
        throw DomainError("AV-Align needs at least three frames");
    }
    if (clip.duration() + 1.0 / clip.sample_rate() < (video.frames() - 1) / video.fps()) {
        throw DomainError("audio does not cover the video");
    }
    return peak_iou(audio_peak_frames(clip, video.fps(), video.frames()), visual_peak_frames(video), window);
}

namespace {

void require_same_shape(const Image& x, const Image& y)
{
    if (x.shape() != y.shape()) {
        throw ShapeError("image shapes differ: " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
    }
}

}  // namespace

double ssim(const Image& x, const Image& y)
{
    require_same_shape(x, y);
    constexpr int kWin = 8;
    constexpr int kStride = 4;
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const int h = x.dim(0);
    const int w = x.dim(1);
    const int channels = x.dim(2);
    if (h < kWin || w < kWin) {
        throw ShapeError("SSIM needs images of at least 8x8");
    }
    double total = 0.0;
    int count = 0;
    for (int c = 0; c < channels; ++c) {
        for (int y0 = 0; y0 + kWin <= h; y0 += kStride) {
            for (int x0 = 0; x0 + kWin <= w; x0 += kStride) {
                double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
                for (int i = y0; i < y0 + kWin; ++i) {
                    for (int j = x0; j < x0 + kWin; ++j) {
                        const Index at = (static_cast<Index>(i) * w + j) * channels + c;
                        const double a = x[at];
                        const double b = y[at];
                        sx += a;
                        sy += b;
                        sxx += a * a;
                        syy += b * b;
                        sxy += a * b;
                    }
                }
                const double n = kWin * kWin;
                const double mx = sx / n;
                const double my = sy / n;
                const double vx = std::max(0.0, sxx / n - mx * mx);
                const double vy = std::max(0.0, syy / n - my * my);
                const double cov = sxy / n - mx * my;
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        }
    }
    return total / count;
}

Psnr psnr(const Image& x, const Image& y)
{
    require_same_shape(x, y);
    const double mse = (x.vec() - y.vec()).template cast<double>().squaredNorm() / static_cast<double>(x.size());
    if (mse == 0.0) {
        return {0.0, true};
    }
    return {10.0 * std::log10(1.0 / mse), false};
}

double video_ssim(const VideoTensor& a, const VideoTensor& b)
{
    if (a.frames() != b.frames()) {
        throw ShapeError("videos differ in length");
    }
    double total = 0.0;
    for (int i = 0; i < a.frames(); ++i) {
        total += ssim(a.frame(i), b.frame(i));
    }
    return total / a.frames();
}

Psnr video_psnr(const VideoTensor& a, const VideoTensor& b)
{
    if (a.data().shape() != b.data().shape()) {
        throw ShapeError("videos differ in shape");
    }
    const double mse = (a.data().vec() - b.data().vec()).template cast<double>().squaredNorm() / static_cast<double>(a.data().size());
    if (mse == 0.0) {
        return {0.0, true};
    }
    return {10.0 * std::log10(1.0 / mse), false};
}

namespace {

struct Accumulator {
    double ssim = 0.0;
    int ssim_n = 0;
    double psnr = 0.0;
    int psnr_n = 0;
    int psnr_exact = 0;
    double mm = 0.0;
    int mm_n = 0;
    double av = 0.0;
    int av_n = 0;
    int count = 0;

    [[nodiscard]] Json to_json() const
    {
        auto mean = [](double s, int n) { return n > 0 ? Json(s / n) : Json(nullptr); };
        Json j;
        j["count"] = count;
        j["ssim"] = mean(ssim, ssim_n);
        if (psnr_n == 0 && psnr_exact > 0) {
            j["psnr"] = "exact";
        } else {
            j["psnr"] = mean(psnr, psnr_n);
        }
        j["psnr_exact_count"] = psnr_exact;
        j["mm_align_2d"] = mean(mm, mm_n);
        j["mm_align_2d_count"] = mm_n;
        j["av_align"] = mean(av, av_n);
        j["av_align_count"] = av_n;
        return j;
    }
};

}  // namespace

Json evaluate_suite(const std::vector<EvalItem>& items, const SuiteConfig& config)
{
    std::vector<std::string> offending;
    for (const EvalItem& item : items) {
        const bool bad_ref = item.reference && item.reference->data().shape() != item.generated.data().shape();
        const bool bad_audio =
            item.music.duration() + 1.0 / item.music.sample_rate() < (item.generated.frames() - 1) / item.generated.fps();
        if (bad_ref || bad_audio) {
            offending.push_back(item.id);
        }
    }
    if (!offending.empty()) {
        std::string list;
        for (const auto& id : offending) {
            list += (list.empty() ? "" : ", ") + id;
        }
        throw std::invalid_argument("misaligned evaluation items: " + list);
    }

    Json per_sample = Json::array();
    Accumulator overall;
    std::map<int, Accumulator> per_style;
    for (const EvalItem& item : items) {
        Json row;
        row["id"] = item.id;
        row["style_id"] = item.style_id;
        Accumulator* accs[2] = {&overall, &per_style[item.style_id]};
        for (Accumulator* a : accs) {
            ++a->count;
        }
        if (item.reference) {
            const double s = video_ssim(item.generated, *item.reference);
            const Psnr p = video_psnr(item.generated, *item.reference);
            row["ssim"] = s;
            row["psnr"] = p.exact ? Json("exact") : Json(p.db);
            for (Accumulator* a : accs) {
                a->ssim += s;
                ++a->ssim_n;
                if (p.exact) {
                    ++a->psnr_exact;
                } else {
                    a->psnr += p.db;
                    ++a->psnr_n;
                }
            }
        } else {
            row["ssim"] = nullptr;
            row["psnr"] = nullptr;
        }
        try {
            const BeatSequence fx = video_kinematic_beats(item.generated, config.prominence);
            const BeatSequence fy = to_frames(item.beat_times, item.generated.fps());
            const double mm = mm_align_2d(fx, fy, config.sigma);
            row["mm_align_2d"] = mm;
            for (Accumulator* a : accs) {
                a->mm += mm;
                ++a->mm_n;
            }
        } catch (const UndefinedScore&) {
            row["mm_align_2d"] = nullptr;
        }
        try {
            const double av = av_align(item.generated, item.music, config.av_window);
            row["av_align"] = av;
            for (Accumulator* a : accs) {
                a->av += av;
                ++a->av_n;
            }
        } catch (const UndefinedScore&) {
            row["av_align"] = nullptr;
        }
        per_sample.push_back(row);
    }

    Json styles = Json::object();
    for (const auto& [id, acc] : per_style) {
        styles[std::to_string(id)] = acc.to_json();
    }
    Json overall_json = overall.to_json();
    // Scores that need large pretrained networks are not computed.
    overall_json["fvd"] = nullptr;
    overall_json["lpips"] = nullptr;
    overall_json["clip_score"] = nullptr;
    return Json{{"config", {{"sigma", config.sigma}, {"av_window_frames", config.av_window}, {"prominence", config.prominence},
                            {"kinematic_beats", "motion-series minima"}, {"ssim_window", 8}, {"ssim_stride", 4}}},
                {"per_sample", per_sample},
                {"aggregates", {{"overall", overall_json}, {"per_style", styles}}}};
}

}  // namespace beatflow::metrics
