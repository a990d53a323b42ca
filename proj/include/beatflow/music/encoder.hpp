#pragma once

#include "beatflow/audio/analysis.hpp"
#include "beatflow/core/beat_grid.hpp"
#include "beatflow/core/media.hpp"
#include "beatflow/nn/module.hpp"

#include <functional>
#include <memory>
#include <span>

namespace beatflow::music {

inline constexpr int kStyleDim = 64;
inline constexpr int kMovementDim = 64;
inline constexpr int kAdapterHidden = 512;
inline constexpr int kMotionStatDim = 32;
inline constexpr int kMotionGrid = 4;

using beatflow::UntrainedError;

/// [e_c | e_w | e_b]; e_b holds one indicator per frame followed by the tempo entry.
struct MusicEmbedding {
    Eigen::VectorXf e_c;
    Eigen::VectorXf e_w;
    Eigen::VectorXf e_b;

    [[nodiscard]] Eigen::VectorXf concat() const;
    [[nodiscard]] Index dim() const { return e_c.size() + e_w.size() + e_b.size(); }
    /// Splits a concatenated vector at (0, D_c, D_c + D_w).
    static MusicEmbedding split(const Eigen::VectorXf& e, int dc = kStyleDim, int dw = kMovementDim);
};

/// indicator[i] = 1 iff some beat satisfies floor(t * fps + 0.5) == i; last
/// entry is (tempo - 60) / 120 clamped to [0, 1] (0 for an empty grid).
Eigen::VectorXf beat_features(const BeatGrid& beats, int n_frames, double fps);

/// Standardised log-mel as a [1, 1, n_mels, frames] network input.
TensorF mel_input(const AudioClip& clip);

/// Mean and standard deviation of |frame(i+1) - frame(i)| over a 4x4 grid of cells.
Eigen::VectorXf motion_statistics(const VideoTensor& video);

/// Four stride-2 conv blocks over the log-mel image, then global average pooling.
struct Backbone {
    std::array<nn::Conv2d<float>, 4> conv;
    std::array<nn::GroupNorm<float>, 4> norm;

    Backbone() = default;
    Backbone(nn::ParamSet<float>& params, const std::string& prefix, RngStream& rng);
    [[nodiscard]] nn::Var<float> operator()(const nn::Var<float>& mel) const;
};

/// Linear(64, 512) - ReLU - Linear(512, 64).
struct Adapter {
    nn::Linear<float> fc1;
    nn::Linear<float> fc2;

    Adapter() = default;
    Adapter(nn::ParamSet<float>& params, const std::string& prefix, int dim, RngStream& rng);
    [[nodiscard]] nn::Var<float> operator()(const nn::Var<float>& x) const;
};

struct EmbedderConfig {
    int epochs = 100;
    int pretrain_epochs = 40;
    int batch = 16;
    double lr = 1e-3;
    double temperature = 0.07;
};

/// Style arm: frozen backbone plus adapter, L2-normalised output.
class StyleEmbedder {
public:
    StyleEmbedder(int styles, std::uint64_t seed);

    [[nodiscard]] Eigen::VectorXf embed(const AudioClip& clip) const;
    [[nodiscard]] nn::Var<float> embed_batch(const TensorF& mels) const;
    [[nodiscard]] nn::Var<float> logits(const nn::Var<float>& embedding) const { return head_(embedding); }
    /// Pretraining path: backbone straight into a linear classifier.
    [[nodiscard]] nn::Var<float> pretrain_logits(const TensorF& mels) const;

    [[nodiscard]] bool trained() const noexcept { return trained_; }
    void set_trained(bool t) noexcept { trained_ = t; }
    [[nodiscard]] int styles() const noexcept { return styles_; }
    nn::ParamSet<float>& params() noexcept { return params_; }
    [[nodiscard]] const nn::ParamSet<float>& params() const noexcept { return params_; }

private:
    int styles_;
    nn::ParamSet<float> params_;
    Backbone backbone_;
    nn::Linear<float> pre_head_;
    Adapter adapter_;
    nn::Linear<float> head_;
    bool trained_ = false;
};

/// Movement arm: audio tower (frozen backbone plus adapter) contrasted with a
/// tower over per-video motion statistics.
class MovementEmbedder {
public:
    explicit MovementEmbedder(std::uint64_t seed);

    [[nodiscard]] Eigen::VectorXf embed(const AudioClip& clip) const;
    [[nodiscard]] nn::Var<float> embed_batch(const TensorF& mels, bool pretraining = false) const;
    [[nodiscard]] nn::Var<float> embed_motion(const TensorF& stats) const;
    [[nodiscard]] Eigen::VectorXf embed_motion(const VideoTensor& video) const;

    [[nodiscard]] bool trained() const noexcept { return trained_; }
    void set_trained(bool t) noexcept { trained_ = t; }
    nn::ParamSet<float>& params() noexcept { return params_; }
    [[nodiscard]] const nn::ParamSet<float>& params() const noexcept { return params_; }

private:
    nn::ParamSet<float> params_;
    Backbone backbone_;
    nn::Linear<float> pre_proj_;
    Adapter adapter_;
    nn::Linear<float> motion1_;
    nn::Linear<float> motion2_;
    bool trained_ = false;
};

/// Symmetric InfoNCE between row-aligned unit vectors a and b.
nn::Var<float> contrastive_loss(const nn::Var<float>& a, const nn::Var<float>& b, double temperature);

struct StyleExample {
    TensorF mel;  // [1, n_mels, frames]
    int style = 0;
};

struct MovementExample {
    TensorF mel;
    Eigen::VectorXf motion;
};

/// Per-epoch mean loss callback: (stage, epoch, loss, lr).
using EpochLogger = std::function<void(const std::string&, int, double, double)>;

/// Stage A trains backbone and a linear head, stage B freezes the backbone and
/// trains the adapter and a fresh head. Throws DomainError for a single style.
void train_style_embedder(StyleEmbedder& model, const std::vector<StyleExample>& data, const EmbedderConfig& config,
                          RngStream rng, const EpochLogger& log = {});
void train_movement_embedder(MovementEmbedder& model, const std::vector<MovementExample>& data, const EmbedderConfig& config,
                             RngStream rng, const EpochLogger& log = {});

/// Full music representation. The beat arm runs the tempo estimator and beat
/// tracker on `clip`; `use_beats = false` zeroes e_b while keeping its size.
MusicEmbedding encode_music(const AudioClip& clip, int n_frames, double fps, const StyleEmbedder& style,
                            const MovementEmbedder& movement, bool use_beats = true);

}  // namespace beatflow::music
