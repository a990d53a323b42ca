#include "beatflow/flow/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace beatflow::flow {

using nn::Var;

namespace {

int scaled(int channels, double width)
{
    return std::max(4, static_cast<int>(std::lround(channels * width / 4.0)) * 4);
}

int groups_for(int channels)
{
    return std::gcd(channels, 8);
}

}  // namespace

template <typename S>
typename FlowAutoencoder<S>::Block FlowAutoencoder<S>::block(const std::string& name, int in, int out, int stride,
                                                             RngStream& rng, bool normalized)
{
    Block b;
    b.conv = nn::Conv2d<S>(params_, name + ".conv", in, out, 3, stride, rng);
    if (normalized) {
        b.norm = nn::GroupNorm<S>(params_, name + ".norm", out, groups_for(out));
        b.normalized = true;
    }
    return b;
}

template <typename S>
FlowAutoencoder<S>::FlowAutoencoder(std::uint64_t seed, double width, int latent_channels)
    : width_(width), latent_channels_(latent_channels)
{
    RngStream rng = RngStream(seed).fork("flow-autoencoder");
    const int c1 = scaled(32, width);
    const int c2 = scaled(64, width);
    const int c3 = scaled(48, width);

    enc_.push_back(block("enc0", 3, c1, 1, rng));
    enc_.push_back(block("enc1", c1, c2, 2, rng));
    enc_.push_back(block("enc2", c2, c2, 2, rng));
    enc_out_ = nn::Conv2d<S>(params_, "enc_out", c2, latent_channels, 3, 1, rng, 1.0);

    dec_in_ = block("dec_in", latent_channels, c2, 1, rng);
    dec_mid_ = block("dec_mid", c2, c2, 1, rng);
    dec_up_.push_back(block("dec_up0", c2, c3, 1, rng));
    dec_up_.push_back(block("dec_up1", c3, c1, 1, rng));
    dec_out_ = nn::Conv2d<S>(params_, "dec_out", c1, 3, 3, 1, rng, 1.0);

    flow_.push_back(block("flow0", 6, c1, 1, rng, true));
    flow_.push_back(block("flow1", c1, c2, 2, rng, true));
    flow_.push_back(block("flow2", c2, c2, 2, rng, true));
    flow_.push_back(block("flow3", c2, c2, 1, rng, true));
    flow_.push_back(block("flow4", c2, c2, 1, rng, true));
    flow_out_ = nn::Conv2d<S>(params_, "flow_out", c2, 3, 3, 1, rng, 0.1);
    // Occlusion starts near "fully visible".
    flow_out_.bias.mutable_value()[2] = S(3);
}

template <typename S>
Var<S> FlowAutoencoder<S>::encode(const Var<S>& x) const
{
    Var<S> h = nn::add_scalar(nn::scale(x, S(2)), S(-1));
    for (const Block& b : enc_) {
        h = b(h);
    }
    return enc_out_(h);
}

template <typename S>
Var<S> FlowAutoencoder<S>::decode(const Var<S>& z) const
{
    Var<S> h = dec_mid_(dec_in_(z));
    for (const Block& b : dec_up_) {
        h = b(nn::upsample2x(h));
    }
    return nn::sigmoid(dec_out_(h));
}

template <typename S>
FlowField<S> FlowAutoencoder<S>::predict_flow(const Var<S>& x_ref, const Var<S>& x_dri) const
{
    Var<S> h = nn::add_scalar(nn::scale(nn::concat<S>({x_ref, x_dri}, 1), S(2)), S(-1));
    for (const Block& b : flow_) {
        h = b(h);
    }
    const Var<S> raw = flow_out_(h);
    const S bound = static_cast<S>(kMaxFlow);
    return {nn::scale(nn::tanh(nn::scale(nn::slice(raw, 1, 0, 2), S(1) / bound)), bound), nn::slice(raw, 1, 2, 3)};
}

template <typename S>
Var<S> FlowAutoencoder<S>::reconstruct(const Var<S>& x_ref, const Var<S>& x_dri) const
{
    const FlowField<S> f = predict_flow(x_ref, x_dri);
    return decode(warp_latent(encode(x_ref), f.flow, f.mask()));
}

template <typename S>
Json FlowAutoencoder<S>::arch() const
{
    return {{"module", "flow_autoencoder"}, {"width", width_}, {"latent_channels", latent_channels_},
            {"stride", kLatentStride}, {"max_flow", kMaxFlow}, {"parameters", params_.scalar_count()}};
}

template <typename S>
Var<S> warp_latent(const Var<S>& z, const Var<S>& flow, const Var<S>& mask)
{
    return nn::mul_mask(nn::grid_sample(z, flow), mask);
}

template <typename S>
PerceptualLoss<S>::PerceptualLoss(std::uint64_t seed)
{
    RngStream rng = RngStream(seed).fork("perceptual");
    levels_.emplace_back(params_, "p0", 3, 16, 3, 1, rng);
    levels_.emplace_back(params_, "p1", 16, 32, 3, 2, rng);
    levels_.emplace_back(params_, "p2", 32, 64, 3, 2, rng);
    params_.set_trainable("", false);
}

template <typename S>
Var<S> PerceptualLoss<S>::operator()(const Var<S>& x, const Var<S>& y) const
{
    Var<S> total = nn::scale(nn::channel_l1(x, y), S(1) / S(3));
    Var<S> fx = nn::add_scalar(nn::scale(x, S(2)), S(-1));
    Var<S> fy = nn::add_scalar(nn::scale(y, S(2)), S(-1));
    for (const nn::Conv2d<S>& level : levels_) {
        fx = nn::relu(level(fx));
        fy = nn::relu(level(fy));
        total = nn::add(total, nn::scale(nn::channel_l1(fx, fy), S(1) / static_cast<S>(fx.dim(1))));
    }
    return total;
}

template <typename S>
Var<S> reconstruction_loss(const FlowAutoencoder<S>& model, const PerceptualLoss<S>& loss, const Var<S>& x_ref,
                           const Var<S>& x_dri)
{
    return loss(model.reconstruct(x_ref, x_dri), x_dri);
}

TensorF frames_to_batch(const VideoTensor& video, std::span<const int> indices)
{
    const int h = video.height();
    const int w = video.width();
    const Index plane = static_cast<Index>(h) * w;
    TensorF out({static_cast<int>(indices.size()), 3, h, w});
    const float* src = video.data().data();
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const int i = indices[b];
        if (i < 0 || i >= video.frames()) {
            throw std::out_of_range("frame index " + std::to_string(i) + " out of range");
        }
        const float* f = src + static_cast<Index>(i) * plane * 3;
        float* dst = out.data() + static_cast<Index>(b) * plane * 3;
        for (Index p = 0; p < plane; ++p) {
            for (int c = 0; c < 3; ++c) {
                dst[c * plane + p] = f[p * 3 + c];
            }
        }
    }
    return out;
}

std::vector<Image> batch_to_frames(const TensorF& batch)
{
    if (batch.rank() != 4 || batch.dim(1) != 3) {
        throw ShapeError("expected [B, 3, H, W], got " + shape_string(batch.shape()));
    }
    const int h = batch.dim(2);
    const int w = batch.dim(3);
    const Index plane = static_cast<Index>(h) * w;
    std::vector<Image> frames;
    for (int b = 0; b < batch.dim(0); ++b) {
        Image img({h, w, 3});
        const float* src = batch.data() + static_cast<Index>(b) * plane * 3;
        for (Index p = 0; p < plane; ++p) {
            for (int c = 0; c < 3; ++c) {
                img[p * 3 + c] = std::clamp(src[c * plane + p], 0.0f, 1.0f);
            }
        }
        frames.push_back(std::move(img));
    }
    return frames;
}

namespace {

// Rows [0, n_identity) decode their own latent; the rest go through the warp.
Var<float> mixed_reconstruction(const FlowAutoencoder<float>& model, const Var<float>& ref, const Var<float>& dri,
                                int n_identity)
{
    const int b = ref.dim(0);
    if (n_identity == 0) {
        return model.reconstruct(ref, dri);
    }
    const Var<float> z = model.encode(ref);
    if (n_identity == b) {
        return model.decode(z);
    }
    const FlowField<float> f = model.predict_flow(nn::slice(ref, 0, n_identity, b), nn::slice(dri, 0, n_identity, b));
    const Var<float> warped = warp_latent(nn::slice(z, 0, n_identity, b), f.flow, f.mask());
    return model.decode(nn::concat<float>({nn::slice(z, 0, 0, n_identity), warped}, 0));
}

}  // namespace

void train_stage1(FlowAutoencoder<float>& model, const std::vector<VideoTensor>& videos, const Stage1Config& config,
                  RngStream rng, const std::function<void(const Stage1Epoch&)>& on_epoch)
{
    if (videos.empty()) {
        throw DomainError("stage 1 needs at least one training video");
    }
    const PerceptualLoss<float> loss_fn;
    nn::Adam<float> opt(model.params(), config.lr);
    const int n_videos = static_cast<int>(videos.size());
    const int pairs = n_videos * config.pairs_per_video;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        opt.set_lr(nn::step_lr(config.lr, config.lr_milestones, epoch));
        // Pair list: (video, ref, dri).
        std::vector<std::array<int, 3>> plan;
        plan.reserve(static_cast<std::size_t>(pairs));
        for (int p = 0; p < pairs; ++p) {
            const int v = static_cast<int>(rng.uniform_int(0, n_videos - 1));
            const int n = videos[static_cast<std::size_t>(v)].frames();
            const int ref = static_cast<int>(rng.uniform_int(0, n - 1));
            const int dri = rng.uniform() < config.identity_fraction ? ref : static_cast<int>(rng.uniform_int(0, n - 1));
            plan.push_back({v, ref, dri});
        }
        double total = 0.0;
        int batches = 0;
        for (int start = 0; start < pairs; start += config.batch) {
            const int end = std::min(pairs, start + config.batch);
            // Identity pairs first so the batch splits into two slices.
            std::stable_partition(plan.begin() + start, plan.begin() + end,
                                  [](const std::array<int, 3>& p) { return p[1] == p[2]; });
            int n_identity = 0;
            const VideoTensor& first = videos[static_cast<std::size_t>(plan[static_cast<std::size_t>(start)][0])];
            TensorF ref({end - start, 3, first.height(), first.width()});
            TensorF dri(ref.shape());
            const Index per = ref.size() / (end - start);
            for (int k = start; k < end; ++k) {
                const auto& [v, r, d] = plan[static_cast<std::size_t>(k)];
                n_identity += r == d;
                const std::array<int, 2> idx{r, d};
                const TensorF two = frames_to_batch(videos[static_cast<std::size_t>(v)], idx);
                ref.vec().segment((k - start) * per, per) = two.vec().head(per);
                dri.vec().segment((k - start) * per, per) = two.vec().tail(per);
            }
            const Var<float> loss = loss_fn(mixed_reconstruction(model, Var<float>(ref), Var<float>(dri), n_identity),
                                            Var<float>(dri));
            if (!std::isfinite(loss.item())) {
                throw NumericError("stage 1 loss became non-finite at epoch " + std::to_string(epoch));
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

double autoencoder_psnr(const FlowAutoencoder<float>& model, const std::vector<VideoTensor>& videos)
{
    if (videos.empty()) {
        throw DomainError("no videos to evaluate");
    }
    nn::NoGradGuard guard;
    double total = 0.0;
    for (const VideoTensor& v : videos) {
        std::vector<int> idx(static_cast<std::size_t>(v.frames()));
        std::iota(idx.begin(), idx.end(), 0);
        const TensorF x = frames_to_batch(v, idx);
        const Var<float> y = model.decode(model.encode(Var<float>(x)));
        const double mse = (y.value().vec() - x.vec()).cast<double>().squaredNorm() / static_cast<double>(x.size());
        total += 10.0 * std::log10(1.0 / std::max(mse, 1e-12));
    }
    return total / static_cast<double>(videos.size());
}

template class FlowAutoencoder<float>;
template class FlowAutoencoder<double>;
template class PerceptualLoss<float>;
template class PerceptualLoss<double>;
template Var<float> warp_latent(const Var<float>&, const Var<float>&, const Var<float>&);
template Var<double> warp_latent(const Var<double>&, const Var<double>&, const Var<double>&);
template Var<float> reconstruction_loss(const FlowAutoencoder<float>&, const PerceptualLoss<float>&, const Var<float>&,
                                        const Var<float>&);
template Var<double> reconstruction_loss(const FlowAutoencoder<double>&, const PerceptualLoss<double>&,
                                         const Var<double>&, const Var<double>&);

}  // namespace beatflow::flow
