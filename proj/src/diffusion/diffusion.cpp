#include "beatflow/diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace beatflow::diffusion {

using nn::Var;

namespace {

int groups_for(int channels)
{
    return std::gcd(channels, 8);
}

void require_step(int t, const NoiseSchedule& schedule)
{
    if (t < 1 || t > schedule.T) {
        throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(schedule.T) + "]");
    }
}

/// Sorted-order quantile with linear interpolation between neighbours.
double quantile_of(std::vector<double> v, double q)
{
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

TensorF FlowVolume::channels_last() const
{
    const int n = values.dim(0);
    const int c = values.dim(1);
    const int h = values.dim(2);
    const int w = values.dim(3);
    TensorF out({n, h, w, c});
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < c; ++k) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    out[((static_cast<Index>(i) * h + y) * w + x) * c + k] =
                        values[((static_cast<Index>(i) * c + k) * h + y) * w + x];
                }
            }
        }
    }
    return out;
}

NoiseSchedule cosine_schedule(int T)
{
    if (T < 2) {
        throw DomainError("cosine schedule needs T >= 2");
    }
    constexpr double s = 0.008;
    const auto f = [&](int t) {
        const double c = std::cos((static_cast<double>(t) / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
    };
    NoiseSchedule sched;
    sched.T = T;
    sched.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
    sched.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
    sched.posterior_variance.assign(static_cast<std::size_t>(T) + 1, 0.0);
    const double f0 = f(0);
    for (int t = 1; t <= T; ++t) {
        const double beta = std::min(1.0 - (f(t) / f0) / (f(t - 1) / f0), 0.999);
        const auto ti = static_cast<std::size_t>(t);
        sched.beta[ti] = beta;
        sched.alpha_bar[ti] = sched.alpha_bar[ti - 1] * (1.0 - beta);
        sched.posterior_variance[ti] = beta * (1.0 - sched.alpha_bar[ti - 1]) / (1.0 - sched.alpha_bar[ti]);
    }
    return sched;
}

TensorF diffuse_forward(const TensorF& a0, int t, const TensorF& eps, const NoiseSchedule& schedule)
{
    require_step(t, schedule);
    if (a0.shape() != eps.shape()) {
        throw ShapeError("noise shape " + shape_string(eps.shape()) + " differs from volume " + shape_string(a0.shape()));
    }
    const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
    TensorF out(a0.shape());
    out.vec() = (std::sqrt(ab) * a0.vec().cast<double>() + std::sqrt(1.0 - ab) * eps.vec().cast<double>()).cast<float>();
    return out;
}

TensorF dynamic_threshold(const TensorF& x0_hat, double quantile)
{
    if (!(quantile > 0.0 && quantile < 1.0)) {
        throw DomainError("threshold quantile must lie in (0, 1)");
    }
    TensorF out = x0_hat;
    if (out.empty()) {
        return out;
    }
    std::vector<double> mags(static_cast<std::size_t>(out.size()));
    for (Index i = 0; i < out.size(); ++i) {
        mags[static_cast<std::size_t>(i)] = std::abs(static_cast<double>(out[i]));
    }
    const double s = quantile_of(std::move(mags), quantile);
    if (s > 1.0) {
        const auto sf = static_cast<float>(s);
        out.vec() = out.vec().cwiseMax(-sf).cwiseMin(sf) / sf;
    } else {
        out.vec() = out.vec().cwiseMax(-1.0f).cwiseMin(1.0f);
    }
    return out;
}

VolumeStats VolumeStats::fit(const std::vector<FlowVolume>& volumes, double quantile)
{
    if (volumes.empty()) {
        throw DomainError("cannot fit volume statistics without volumes");
    }
    VolumeStats st;
    std::vector<double> standardized;
    for (int c = 0; c < kVolumeChannels; ++c) {
        std::vector<double> vals;
        for (const FlowVolume& v : volumes) {
            const int n = v.values.dim(0);
            const Index plane = static_cast<Index>(v.values.dim(2)) * v.values.dim(3);
            for (int i = 0; i < n; ++i) {
                const float* p = v.values.data() + (static_cast<Index>(i) * kVolumeChannels + c) * plane;
                vals.insert(vals.end(), p, p + plane);
            }
        }
        const Eigen::Map<const Eigen::ArrayXd> a(vals.data(), static_cast<Index>(vals.size()));
        const double mu = a.mean();
        const double sd = std::max(std::sqrt((a - mu).square().mean()), 1e-6);
        st.mean[static_cast<std::size_t>(c)] = mu;
        st.scale[static_cast<std::size_t>(c)] = sd;
        for (double x : vals) {
            standardized.push_back(std::abs(x - mu) / sd);
        }
    }
    // Unit variance alone leaves heavy-tailed flow data well outside [-1, 1]
    // at the threshold quantile, so thresholding would shrink every correct
    // prediction. One shared factor maps that quantile of the data to 1.
    const double k = std::max(quantile_of(std::move(standardized), quantile), 1e-6);
    for (double& sc : st.scale) {
        sc *= k;
    }
    return st;
}

TensorF VolumeStats::normalize(const TensorF& v) const
{
    TensorF out = v;
    const int n = v.dim(0);
    const Index plane = static_cast<Index>(v.dim(2)) * v.dim(3);
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < kVolumeChannels; ++c) {
            auto seg = out.vec().segment((static_cast<Index>(i) * kVolumeChannels + c) * plane, plane);
            seg = ((seg.array() - static_cast<float>(mean[static_cast<std::size_t>(c)])) /
                   static_cast<float>(scale[static_cast<std::size_t>(c)]))
                      .matrix();
        }
    }
    return out;
}

TensorF VolumeStats::denormalize(const TensorF& v) const
{
    TensorF out = v;
    const int n = v.dim(0);
    const Index plane = static_cast<Index>(v.dim(2)) * v.dim(3);
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < kVolumeChannels; ++c) {
            auto seg = out.vec().segment((static_cast<Index>(i) * kVolumeChannels + c) * plane, plane);
            seg = (seg.array() * static_cast<float>(scale[static_cast<std::size_t>(c)]) +
                   static_cast<float>(mean[static_cast<std::size_t>(c)]))
                      .matrix();
        }
    }
    return out;
}

Json VolumeStats::to_json() const
{
    return {{"mean", mean}, {"scale", scale}};
}

VolumeStats VolumeStats::from_json(const Json& j)
{
    VolumeStats st;
    st.mean = j.at("mean").get<std::array<double, kVolumeChannels>>();
    st.scale = j.at("scale").get<std::array<double, kVolumeChannels>>();
    return st;
}

Json DenoiserConfig::to_json() const
{
    return {{"frames", frames},   {"height", height},     {"width", width},
            {"latent_channels", latent_channels}, {"cond_dim", cond_dim}, {"channels", channels},
            {"time_dim", time_dim}, {"position_channels", position_channels}};
}

DenoiserConfig DenoiserConfig::from_json(const Json& j)
{
    DenoiserConfig c;
    c.frames = j.at("frames").get<int>();
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.cond_dim = j.at("cond_dim").get<int>();
    c.channels = j.at("channels").get<std::vector<int>>();
    c.time_dim = j.at("time_dim").get<int>();
    c.position_channels = j.at("position_channels").get<int>();
    return c;
}

template <typename S>
Tensor<S> step_embedding(std::span<const int> t, int dim)
{
    const int half = dim / 2;
    Tensor<S> out({static_cast<int>(t.size()), dim});
    for (std::size_t b = 0; b < t.size(); ++b) {
        for (int k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(10000.0) * k / half);
            const double a = t[b] * freq;
            out[static_cast<Index>(b) * dim + k] = static_cast<S>(std::sin(a));
            out[static_cast<Index>(b) * dim + half + k] = static_cast<S>(std::cos(a));
        }
    }
    return out;
}

template <typename S>
Tensor<S> frame_positions(int frames, int channels)
{
    // Periods spread geometrically from 3 to 32 frames.
    const int pairs = channels / 2;
    Tensor<S> out({frames, channels});
    for (int i = 0; i < frames; ++i) {
        for (int k = 0; k < pairs; ++k) {
            const double period = pairs > 1 ? 3.0 * std::pow(32.0 / 3.0, static_cast<double>(k) / (pairs - 1)) : 8.0;
            const double a = 2.0 * std::numbers::pi * i / period;
            out[static_cast<Index>(i) * channels + 2 * k] = static_cast<S>(std::sin(a));
            out[static_cast<Index>(i) * channels + 2 * k + 1] = static_cast<S>(std::cos(a));
        }
    }
    return out;
}

template <typename S>
typename Denoiser<S>::Block Denoiser<S>::make_block(const std::string& name, int in, int out, RngStream& rng)
{
    Block b;
    b.norm1 = nn::GroupNorm<S>(params_, name + ".norm1", in, groups_for(in), 2);
    b.conv_s = nn::Conv2d<S>(params_, name + ".conv_s", in, out, 3, 1, rng);
    b.norm2 = nn::GroupNorm<S>(params_, name + ".norm2", out, groups_for(out), 2);
    b.film = nn::Linear<S>(params_, name + ".film", config_.time_dim, 2 * out, rng, 0.5);
    b.conv_t_w = params_.add(name + ".conv_t.w", nn::init_normal<S>({3, out, out}, 3.0 * out, rng, 0.5));
    b.conv_t_b = params_.add(name + ".conv_t.b", Tensor<S>({out}));
    b.has_skip = in != out;
    if (b.has_skip) {
        b.skip = nn::Conv2d<S>(params_, name + ".skip", in, out, 1, 1, rng, 1.0);
    }
    b.out = out;
    return b;
}

template <typename S>
Denoiser<S>::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config)
{
    if (config.channels.size() != 5) {
        throw DomainError("denoiser needs five channel counts (four down-sampling steps)");
    }
    RngStream rng = RngStream(seed).fork("denoiser");
    const int td = config.time_dim;
    time1_ = nn::Linear<S>(params_, "time.fc1", td, td, rng);
    time2_ = nn::Linear<S>(params_, "time.fc2", td, td, rng, 1.0);
    cond1_ = nn::Linear<S>(params_, "cond.fc1", config.cond_dim, td, rng);
    cond2_ = nn::Linear<S>(params_, "cond.fc2", td, td, rng, 1.0);

    const std::vector<int>& ch = config.channels;
    const int in = kVolumeChannels + config.latent_channels + config.position_channels;
    stem_ = nn::Conv2d<S>(params_, "stem", in, ch[0], 3, 1, rng, 1.0);
    for (int l = 0; l < 4; ++l) {
        down_blocks_.push_back(make_block("down" + std::to_string(l), ch[l], ch[l], rng));
        downsample_.emplace_back(params_, "downsample" + std::to_string(l), ch[l], ch[l + 1], 3, 2, rng, 1.0);
    }
    mid_ = make_block("mid", ch[4], ch[4], rng);
    for (int l = 3; l >= 0; --l) {
        up_blocks_.push_back(make_block("up" + std::to_string(l), ch[l + 1] + ch[l], ch[l], rng));
    }
    out_norm_ = nn::GroupNorm<S>(params_, "out.norm", ch[0], groups_for(ch[0]));
    out_conv_ = nn::Conv2d<S>(params_, "out.conv", ch[0], kVolumeChannels, 3, 1, rng, 0.1);
}

template <typename S>
Var<S> Denoiser<S>::run_block(const Block& b, const Var<S>& x, const Var<S>& emb, int batch) const
{
    // x: [B*N, C, H, W] images.
    const Shape& s = x.shape();
    const int n = s[0] / batch;
    const auto as_volume = [&](const Var<S>& v) { return nn::reshape(v, {batch, n, v.dim(1), v.dim(2), v.dim(3)}); };
    const auto as_images = [&](const Var<S>& v) { return nn::reshape(v, {batch * n, v.dim(2), v.dim(3), v.dim(4)}); };

    Var<S> h = b.conv_s(as_images(nn::silu(b.norm1(as_volume(x)))));
    Var<S> hv = b.norm2(as_volume(h));
    const Var<S> film = b.film(emb);
    const Var<S> gain = nn::add_scalar(nn::slice(film, 1, 0, b.out), S(1));
    const Var<S> shift = nn::slice(film, 1, b.out, 2 * b.out);
    hv = nn::add_per_sample(nn::mul_per_sample(hv, gain, 2), shift, 2);
    hv = nn::conv_time(nn::silu(hv), b.conv_t_w, b.conv_t_b);
    const Var<S> residual = b.has_skip ? b.skip(x) : x;
    return nn::add(residual, as_images(hv));
}

template <typename S>
Var<S> Denoiser<S>::operator()(const Var<S>& a_t, std::span<const int> t, const Var<S>& z0, const Var<S>& e) const
{
    const Shape& s = a_t.shape();
    if (s.size() != 5 || s[2] != kVolumeChannels) {
        throw ShapeError("denoiser expects [B, N, 3, H, W], got " + shape_string(s));
    }
    const int batch = s[0];
    const int n = s[1];
    const int h = s[3];
    const int w = s[4];
    if (z0.shape() != Shape{batch, config_.latent_channels, h, w}) {
        throw ShapeError("z0 must be [" + std::to_string(batch) + ", " + std::to_string(config_.latent_channels) + ", " +
                         std::to_string(h) + ", " + std::to_string(w) + "], got " + shape_string(z0.shape()));
    }
    if (e.shape() != Shape{batch, config_.cond_dim}) {
        throw ShapeError("music embedding must be [" + std::to_string(batch) + ", " + std::to_string(config_.cond_dim) +
                         "], got " + shape_string(e.shape()));
    }
    if (static_cast<int>(t.size()) != batch) {
        throw ShapeError("one diffusion step per batch item required");
    }
    if (h % 16 != 0 || w % 16 != 0) {
        throw ShapeError("denoiser needs spatial sizes divisible by 16");
    }

    const Var<S> temb = time2_(nn::silu(time1_(Var<S>(step_embedding<S>(t, config_.time_dim)))));
    const Var<S> cemb = cond2_(nn::silu(cond1_(e)));
    const Var<S> emb = nn::silu(nn::add(temb, cemb));

    // Frame positions broadcast over batch and space.
    const int pc = config_.position_channels;
    Tensor<S> pos({batch, n, pc, h, w});
    const Tensor<S> table = frame_positions<S>(n, pc);
    const Index plane = static_cast<Index>(h) * w;
    for (int b = 0; b < batch; ++b) {
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < pc; ++k) {
                pos.vec().segment(((static_cast<Index>(b) * n + i) * pc + k) * plane, plane).setConstant(table[i * pc + k]);
            }
        }
    }
    const Var<S> input = nn::concat<S>({a_t, nn::repeat_frames(z0, n), Var<S>(std::move(pos))}, 2);
    Var<S> x = stem_(nn::reshape(input, {batch * n, input.dim(2), h, w}));

    std::vector<Var<S>> skips;
    for (std::size_t l = 0; l < down_blocks_.size(); ++l) {
        x = run_block(down_blocks_[l], x, emb, batch);
        skips.push_back(x);
        x = downsample_[l](x);
    }
    x = run_block(mid_, x, emb, batch);
    for (std::size_t l = 0; l < up_blocks_.size(); ++l) {
        x = nn::upsample2x(x);
        x = run_block(up_blocks_[l], nn::concat<S>({x, skips[skips.size() - 1 - l]}, 1), emb, batch);
    }
    const Var<S> out = out_conv_(nn::silu(out_norm_(x)));
    return nn::reshape(out, {batch, n, kVolumeChannels, h, w});
}

namespace {

template <typename S>
struct Batch {
    Tensor<S> a_t;
    Tensor<S> eps;
    Tensor<S> z0;
    Tensor<S> e;
    std::vector<int> t;
};

template <typename S>
Batch<S> noisy_batch(const std::vector<const TrainingItem*>& items, const NoiseSchedule& schedule,
                     const std::function<RngStream&(std::size_t)>& rng_for)
{
    const TrainingItem& first = *items.front();
    const auto bsz = static_cast<int>(items.size());
    Shape vs{bsz};
    vs.insert(vs.end(), first.a0.shape().begin(), first.a0.shape().end());
    Shape zs{bsz};
    zs.insert(zs.end(), first.z0.shape().begin(), first.z0.shape().end());
    Batch<S> out{Tensor<S>(vs), Tensor<S>(vs), Tensor<S>(zs), Tensor<S>({bsz, static_cast<int>(first.e.size())}), {}};
    const Index vsz = first.a0.size();
    const Index zsz = first.z0.size();
    const Index esz = first.e.size();
    for (std::size_t b = 0; b < items.size(); ++b) {
        const TrainingItem& it = *items[b];
        if (it.a0.shape() != first.a0.shape() || it.z0.shape() != first.z0.shape() || it.e.size() != esz) {
            throw ShapeError("training batch mixes shapes");
        }
        RngStream& rng = rng_for(b);
        const int t = static_cast<int>(rng.uniform_int(1, schedule.T));
        TensorF eps(it.a0.shape());
        for (Index i = 0; i < eps.size(); ++i) {
            eps[i] = static_cast<float>(rng.normal());
        }
        const TensorF at = diffuse_forward(it.a0, t, eps, schedule);
        const auto bi = static_cast<Index>(b);
        out.a_t.vec().segment(bi * vsz, vsz) = at.vec().cast<S>();
        out.eps.vec().segment(bi * vsz, vsz) = eps.vec().cast<S>();
        out.z0.vec().segment(bi * zsz, zsz) = it.z0.vec().cast<S>();
        out.e.vec().segment(bi * esz, esz) = it.e.cast<S>();
        out.t.push_back(t);
    }
    return out;
}

}  // namespace

template <typename S>
Var<S> training_loss(const Denoiser<S>& model, const std::vector<const TrainingItem*>& batch, const NoiseSchedule& schedule,
                     RngStream& rng)
{
    if (batch.empty()) {
        throw DomainError("empty training batch");
    }
    const Batch<S> b = noisy_batch<S>(batch, schedule, [&](std::size_t) -> RngStream& { return rng; });
    const Var<S> pred = model(Var<S>(b.a_t), b.t, Var<S>(b.z0), Var<S>(b.e));
    return nn::mse(pred, Var<S>(b.eps));
}

double validation_loss(const Denoiser<float>& model, const std::vector<TrainingItem>& items, const NoiseSchedule& schedule,
                       std::uint64_t seed, int repeats)
{
    if (items.empty()) {
        throw DomainError("no validation items");
    }
    nn::NoGradGuard guard;
    const RngStream base(seed);
    double total = 0.0;
    int count = 0;
    constexpr std::size_t kChunk = 8;
    for (int r = 0; r < repeats; ++r) {
        for (std::size_t start = 0; start < items.size(); start += kChunk) {
            std::vector<const TrainingItem*> chunk;
            std::vector<RngStream> streams;
            for (std::size_t i = start; i < std::min(items.size(), start + kChunk); ++i) {
                chunk.push_back(&items[i]);
                streams.push_back(base.fork(static_cast<std::uint64_t>(r) * items.size() + i));
            }
            const Batch<float> b =
                noisy_batch<float>(chunk, schedule, [&](std::size_t k) -> RngStream& { return streams[k]; });
            const Var<float> pred = model(Var<float>(b.a_t), b.t, Var<float>(b.z0), Var<float>(b.e));
            total += nn::mse(pred, Var<float>(b.eps)).item() * static_cast<double>(chunk.size());
            count += static_cast<int>(chunk.size());
        }
    }
    return total / count;
}

TargetVolume build_target_volume(const VideoTensor& video, const flow::FlowAutoencoder<float>& ae)
{
    if (!ae.trained()) {
        throw DomainError("stage-1 model has not been trained");
    }
    const int n = video.frames() - 1;
    if (n < 1) {
        throw DomainError("target volume needs at least two frames");
    }
    nn::NoGradGuard guard;
    const std::vector<int> refs(static_cast<std::size_t>(n), 0);
    std::vector<int> later(static_cast<std::size_t>(n));
    std::iota(later.begin(), later.end(), 1);
    const Var<float> x_ref(flow::frames_to_batch(video, refs));
    const Var<float> x_dri(flow::frames_to_batch(video, later));
    const flow::FlowField<float> f = ae.predict_flow(x_ref, x_dri);
    TargetVolume out;
    out.a0.values = nn::concat<float>({f.flow, f.occlusion_logit}, 1).value();
    const Var<float> z = ae.encode(nn::slice(x_ref, 0, 0, 1));
    out.z0 = z.value().reshaped({z.dim(1), z.dim(2), z.dim(3)});
    return out;
}

TensorF sample_flow_volume(const Denoiser<float>& model, const TensorF& z0, const Eigen::VectorXf& e,
                           const NoiseSchedule& schedule, RngStream rng, double quantile)
{
    const DenoiserConfig& cfg = model.config();
    if (e.size() != cfg.cond_dim) {
        throw ShapeError("music embedding has " + std::to_string(e.size()) + " entries, model expects " +
                         std::to_string(cfg.cond_dim));
    }
    nn::NoGradGuard guard;
    const Shape vs{1, cfg.frames, kVolumeChannels, z0.dim(1), z0.dim(2)};
    TensorF x(vs);
    for (Index i = 0; i < x.size(); ++i) {
        x[i] = static_cast<float>(rng.normal());
    }
    const Var<float> zv(z0.reshaped({1, z0.dim(0), z0.dim(1), z0.dim(2)}));
    const Var<float> ev(TensorF({1, static_cast<int>(e.size())}, e));
    for (int t = schedule.T; t >= 1; --t) {
        const std::array<int, 1> step{t};
        const TensorF eps = model(Var<float>(x), step, zv, ev).value();
        const auto ti = static_cast<std::size_t>(t);
        const double ab = schedule.alpha_bar[ti];
        const double ab_prev = schedule.alpha_bar[ti - 1];
        const double beta = schedule.beta[ti];
        TensorF x0(vs);
        x0.vec() = ((x.vec().cast<double>() - std::sqrt(1.0 - ab) * eps.vec().cast<double>()) / std::sqrt(ab)).cast<float>();
        x0 = dynamic_threshold(x0, quantile);
        const double c0 = beta * std::sqrt(ab_prev) / (1.0 - ab);
        const double ct = (1.0 - ab_prev) * std::sqrt(1.0 - beta) / (1.0 - ab);
        Eigen::VectorXd mu = c0 * x0.vec().cast<double>() + ct * x.vec().cast<double>();
        if (t > 1) {
            const double sigma = std::sqrt(schedule.posterior_variance[ti]);
            for (Index i = 0; i < mu.size(); ++i) {
                mu[i] += sigma * rng.normal();
            }
        }
        x.vec() = mu.cast<float>();
        if (!x.all_finite()) {
            throw NumericError("sampler produced non-finite values at step " + std::to_string(t));
        }
    }
    return x.reshaped({cfg.frames, kVolumeChannels, z0.dim(1), z0.dim(2)});
}

void train_stage2(Denoiser<float>& model, const std::vector<TrainingItem>& items, const NoiseSchedule& schedule,
                  const Stage2Config& config, RngStream rng, const std::function<void(const Stage2Epoch&)>& on_epoch)
{
    if (items.empty()) {
        throw DomainError("stage 2 needs training items");
    }
    nn::Adam<float> opt(model.params(), config.lr);
    const int n = static_cast<int>(items.size());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        opt.set_lr(nn::step_lr(config.lr, config.lr_milestones, epoch));
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        for (int i = n - 1; i > 0; --i) {
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
        }
        double total = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += config.batch) {
            std::vector<const TrainingItem*> batch;
            for (int k = start; k < std::min(n, start + config.batch); ++k) {
                batch.push_back(&items[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
            }
            const Var<float> loss = training_loss(model, batch, schedule, rng);
            if (!std::isfinite(loss.item())) {
                throw NumericError("stage 2 loss became non-finite at epoch " + std::to_string(epoch));
            }
            model.params().zero_grad();
            nn::backward(loss);
            opt.step();
            total += loss.item();
            ++batches;
        }
        if (on_epoch) {
            on_epoch({epoch, total / batches, opt.lr()});
        }
    }
    model.set_trained(true);
}

template class Denoiser<float>;
template class Denoiser<double>;
template Tensor<float> step_embedding<float>(std::span<const int>, int);
template Tensor<double> step_embedding<double>(std::span<const int>, int);
template Tensor<float> frame_positions<float>(int, int);
template Tensor<double> frame_positions<double>(int, int);
template Var<float> training_loss(const Denoiser<float>&, const std::vector<const TrainingItem*>&, const NoiseSchedule&,
                                  RngStream&);
template Var<double> training_loss(const Denoiser<double>&, const std::vector<const TrainingItem*>&, const NoiseSchedule&,
                                   RngStream&);

}  // namespace beatflow::diffusion
