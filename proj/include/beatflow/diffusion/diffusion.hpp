#pragma once

#include "beatflow/core/media.hpp"
#include "beatflow/flow/autoencoder.hpp"
#include "beatflow/nn/module.hpp"

#include <array>
#include <functional>

namespace beatflow::diffusion {

inline constexpr int kVolumeChannels = 3;  // flow-x, flow-y, occlusion logit
inline constexpr int kDefaultSteps = 1000;
inline constexpr double kThresholdQuantile = 0.9;

/// Flow volume for one clip, stored [N, 3, Hz, Wz] so a batch of volumes is
/// the [B, N, 3, Hz, Wz] layout the network consumes.
struct FlowVolume {
    TensorF values;

    [[nodiscard]] int frames() const { return values.dim(0); }
    /// N x Hz x Wz x 3 copy.
    [[nodiscard]] TensorF channels_last() const;
};

struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha_bar;           // T + 1 entries, alpha_bar[0] = 1
    std::vector<double> beta;                // beta[t] for t = 1..T (beta[0] unused)
    std::vector<double> posterior_variance;  // beta tilde, same indexing

    [[nodiscard]] double alpha(int t) const { return 1.0 - beta.at(static_cast<std::size_t>(t)); }
};

/// alpha_bar[t] = f(t) / f(0), f(t) = cos^2(((t/T + s) / (1 + s)) pi / 2), s = 0.008,
/// with per-step betas clipped to 0.999 and alpha_bar rebuilt from them.
NoiseSchedule cosine_schedule(int T);

/// sqrt(alpha_bar_t) a0 + sqrt(1 - alpha_bar_t) eps for 1 <= t <= T.
TensorF diffuse_forward(const TensorF& a0, int t, const TensorF& eps, const NoiseSchedule& schedule);

/// One volume: s = quantile of |x| over all entries; if s > 1 clamp to
/// [-s, s] and divide by s, otherwise clamp to [-1, 1].
TensorF dynamic_threshold(const TensorF& x0_hat, double quantile = kThresholdQuantile);

/// Per-channel standardisation fitted on training volumes, then one shared
/// factor so the `quantile` of |x| over the training data is 1.
struct VolumeStats {
    std::array<double, kVolumeChannels> mean{};
    std::array<double, kVolumeChannels> scale{1.0, 1.0, 1.0};

    static VolumeStats fit(const std::vector<FlowVolume>& volumes, double quantile = kThresholdQuantile);
    [[nodiscard]] TensorF normalize(const TensorF& v) const;
    [[nodiscard]] TensorF denormalize(const TensorF& v) const;
    [[nodiscard]] Json to_json() const;
    static VolumeStats from_json(const Json& j);
};

struct DenoiserConfig {
    int frames = 15;
    int height = 16;
    int width = 16;
    int latent_channels = flow::kLatentChannels;
    int cond_dim = 145;
    /// Channels per U-Net level; level i runs at spatial size / 2^i.
    std::vector<int> channels{24, 32, 48, 64, 64};
    int time_dim = 64;
    /// Fixed sinusoidal frame-position channels appended to the input.
    int position_channels = 12;

    [[nodiscard]] Json to_json() const;
    static DenoiserConfig from_json(const Json& j);
};

/// (2+1)D U-Net: spatial 3x3 convolutions on every frame plus temporal
/// convolutions across frames, four down/up levels. z0 is tiled over frames
/// and concatenated with a_t; e passes through a two-layer net and is added
/// to the sinusoidal step embedding, which then scales and shifts every block.
template <typename S>
class Denoiser {
public:
    Denoiser(const DenoiserConfig& config, std::uint64_t seed);

    /// a_t [B, N, 3, H, W], z0 [B, Cz, H, W], e [B, cond_dim] -> predicted noise [B, N, 3, H, W].
    [[nodiscard]] nn::Var<S> operator()(const nn::Var<S>& a_t, std::span<const int> t, const nn::Var<S>& z0,
                                        const nn::Var<S>& e) const;

    [[nodiscard]] const DenoiserConfig& config() const noexcept { return config_; }
    [[nodiscard]] bool trained() const noexcept { return trained_; }
    void set_trained(bool t) noexcept { trained_ = t; }
    nn::ParamSet<S>& params() noexcept { return params_; }
    [[nodiscard]] const nn::ParamSet<S>& params() const noexcept { return params_; }

    struct Block {
        nn::GroupNorm<S> norm1;
        nn::Conv2d<S> conv_s;
        nn::GroupNorm<S> norm2;
        nn::Linear<S> film;
        nn::Var<S> conv_t_w;
        nn::Var<S> conv_t_b;
        nn::Conv2d<S> skip;
        bool has_skip = false;
        int out = 0;
    };

private:
    [[nodiscard]] nn::Var<S> run_block(const Block& b, const nn::Var<S>& x, const nn::Var<S>& emb, int batch) const;
    Block make_block(const std::string& name, int in, int out, RngStream& rng);

    DenoiserConfig config_;
    nn::ParamSet<S> params_;
    bool trained_ = false;
    nn::Linear<S> time1_;
    nn::Linear<S> time2_;
    nn::Linear<S> cond1_;
    nn::Linear<S> cond2_;
    nn::Conv2d<S> stem_;
    std::vector<Block> down_blocks_;
    std::vector<nn::Conv2d<S>> downsample_;
    Block mid_;
    std::vector<Block> up_blocks_;
    nn::GroupNorm<S> out_norm_;
    nn::Conv2d<S> out_conv_;
};

/// Sinusoidal embedding of diffusion steps, [B, dim].
template <typename S>
Tensor<S> step_embedding(std::span<const int> t, int dim);

/// Fixed frame-position features, [N, channels].
template <typename S>
Tensor<S> frame_positions(int frames, int channels);

struct TrainingItem {
    TensorF a0;  // normalised [N, 3, H, W]
    TensorF z0;  // [Cz, H, W]
    Eigen::VectorXf e;
};

/// Mean squared error between drawn noise and the prediction, t uniform in
/// [1, T] per item. Returns the loss node; `rng` supplies t and eps.
template <typename S>
nn::Var<S> training_loss(const Denoiser<S>& model, const std::vector<const TrainingItem*>& batch,
                         const NoiseSchedule& schedule, RngStream& rng);

/// Loss on fixed (t, eps) draws for every item, without gradients.
double validation_loss(const Denoiser<float>& model, const std::vector<TrainingItem>& items, const NoiseSchedule& schedule,
                       std::uint64_t seed, int repeats = 4);

/// Flow of every later frame relative to frame 0 and the latent of frame 0.
struct TargetVolume {
    FlowVolume a0;
    TensorF z0;  // [Cz, Hz, Wz]
};
TargetVolume build_target_volume(const VideoTensor& video, const flow::FlowAutoencoder<float>& ae);

/// Ancestral sampling from pure noise with dynamic thresholding of the
/// predicted clean volume and fixed posterior variance. Returns the
/// normalised volume; the caller denormalises.
TensorF sample_flow_volume(const Denoiser<float>& model, const TensorF& z0, const Eigen::VectorXf& e,
                           const NoiseSchedule& schedule, RngStream rng, double quantile = kThresholdQuantile);

struct Stage2Config {
    int epochs = 100;
    int batch = 8;
    double lr = 2e-4;
    std::vector<int> lr_milestones{40, 60, 80};
    int steps = kDefaultSteps;
};

struct Stage2Epoch {
    int epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
};

void train_stage2(Denoiser<float>& model, const std::vector<TrainingItem>& items, const NoiseSchedule& schedule,
                  const Stage2Config& config, RngStream rng, const std::function<void(const Stage2Epoch&)>& on_epoch = {});

extern template class Denoiser<float>;
extern template class Denoiser<double>;

}  // namespace beatflow::diffusion
