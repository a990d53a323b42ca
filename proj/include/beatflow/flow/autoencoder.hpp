#pragma once

#include "beatflow/core/media.hpp"
#include "beatflow/nn/module.hpp"

#include <functional>

namespace beatflow::flow {

inline constexpr int kLatentChannels = 32;
/// Encoder downsampling factor.
inline constexpr int kLatentStride = 4;
/// Flow components are bounded to (-kMaxFlow, kMaxFlow) in normalised grid units.
inline constexpr double kMaxFlow = 2.0;

/// Flow and occlusion at latent resolution. `occlusion_logit` passes through a
/// sigmoid to give the mask m.
template <typename S>
struct FlowField {
    nn::Var<S> flow;             // [B, 2, Hz, Wz]
    nn::Var<S> occlusion_logit;  // [B, 1, Hz, Wz]

    [[nodiscard]] nn::Var<S> mask() const { return nn::sigmoid(occlusion_logit); }
};

/// Encoder E, decoder D and flow predictor F. Images are [B, 3, H, W] in [0, 1].
template <typename S>
class FlowAutoencoder {
public:
    /// `width` scales every hidden channel count (1.0 is the default model).
    explicit FlowAutoencoder(std::uint64_t seed, double width = 1.0, int latent_channels = kLatentChannels);

    [[nodiscard]] nn::Var<S> encode(const nn::Var<S>& x) const;
    [[nodiscard]] nn::Var<S> decode(const nn::Var<S>& z) const;
    [[nodiscard]] FlowField<S> predict_flow(const nn::Var<S>& x_ref, const nn::Var<S>& x_dri) const;
    /// D(m * warp(E(x_ref), f)) with (f, m) = F(x_ref, x_dri).
    [[nodiscard]] nn::Var<S> reconstruct(const nn::Var<S>& x_ref, const nn::Var<S>& x_dri) const;

    [[nodiscard]] int latent_channels() const noexcept { return latent_channels_; }
    [[nodiscard]] double width() const noexcept { return width_; }
    [[nodiscard]] Json arch() const;
    [[nodiscard]] bool trained() const noexcept { return trained_; }
    void set_trained(bool t) noexcept { trained_ = t; }
    nn::ParamSet<S>& params() noexcept { return params_; }
    [[nodiscard]] const nn::ParamSet<S>& params() const noexcept { return params_; }

private:
    struct Block {
        nn::Conv2d<S> conv;
        nn::GroupNorm<S> norm;
        bool normalized = false;
        [[nodiscard]] nn::Var<S> operator()(const nn::Var<S>& x) const
        {
            return nn::silu(normalized ? norm(conv(x)) : conv(x));
        }
    };
    Block block(const std::string& name, int in, int out, int stride, RngStream& rng, bool normalized = false);

    double width_;
    int latent_channels_;
    nn::ParamSet<S> params_;
    std::vector<Block> enc_;
    nn::Conv2d<S> enc_out_;
    Block dec_in_;
    Block dec_mid_;
    std::vector<Block> dec_up_;
    nn::Conv2d<S> dec_out_;
    std::vector<Block> flow_;
    nn::Conv2d<S> flow_out_;
    bool trained_ = false;
};

/// m * bilinear_warp(z, f).
template <typename S>
nn::Var<S> warp_latent(const nn::Var<S>& z, const nn::Var<S>& flow, const nn::Var<S>& mask);

/// Fixed random three-level conv pyramid (16, 32, 64 channels) used as a
/// perceptual feature extractor. It has no trainable state.
template <typename S>
class PerceptualLoss {
public:
    explicit PerceptualLoss(std::uint64_t seed = 7);
    /// Sum over levels (pixels included) of the mean absolute feature difference.
    [[nodiscard]] nn::Var<S> operator()(const nn::Var<S>& x, const nn::Var<S>& y) const;

private:
    nn::ParamSet<S> params_;
    std::vector<nn::Conv2d<S>> levels_;
};

template <typename S>
nn::Var<S> reconstruction_loss(const FlowAutoencoder<S>& model, const PerceptualLoss<S>& loss, const nn::Var<S>& x_ref,
                               const nn::Var<S>& x_dri);

/// Frames of a video as a [B, 3, H, W] batch.
TensorF frames_to_batch(const VideoTensor& video, std::span<const int> indices);
/// [B, 3, H, W] in [0, 1] back to H x W x 3 images (clamped).
std::vector<Image> batch_to_frames(const TensorF& batch);

struct Stage1Config {
    int epochs = 60;
    int batch = 16;
    double lr = 2e-4;
    std::vector<int> lr_milestones{24, 36, 48};
    /// Training pairs drawn per training video in one epoch.
    int pairs_per_video = 2;
    /// Probability that a pair uses the same frame twice. Such pairs take the
    /// exact identity warp (f = 0, m = 1) so the decoder stays calibrated to
    /// unscaled latents.
    double identity_fraction = 0.25;
};

struct Stage1Epoch {
    int epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
};

/// Trains on random same-video frame pairs with the perceptual reconstruction
/// loss. Throws DomainError when the loss turns non-finite.
void train_stage1(FlowAutoencoder<float>& model, const std::vector<VideoTensor>& videos, const Stage1Config& config,
                  RngStream rng, const std::function<void(const Stage1Epoch&)>& on_epoch = {});

/// Mean PSNR of decode(encode(x)) over every frame of `videos`.
double autoencoder_psnr(const FlowAutoencoder<float>& model, const std::vector<VideoTensor>& videos);

extern template class FlowAutoencoder<float>;
extern template class FlowAutoencoder<double>;
extern template class PerceptualLoss<float>;
extern template class PerceptualLoss<double>;

}  // namespace beatflow::flow
