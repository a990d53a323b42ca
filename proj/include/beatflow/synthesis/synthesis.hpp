#pragma once

#include "beatflow/diffusion/diffusion.hpp"
#include "beatflow/flow/autoencoder.hpp"
#include "beatflow/music/encoder.hpp"

#include <map>

namespace beatflow::synthesis {

/// The trained stages generation needs. Non-owning.
struct Models {
    const flow::FlowAutoencoder<float>& autoencoder;
    const music::StyleEmbedder& style;
    const music::MovementEmbedder& movement;
    const diffusion::Denoiser<float>& denoiser;
    const diffusion::VolumeStats& stats;
    const diffusion::NoiseSchedule& schedule;
};

struct GenerateOptions {
    double fps = 20.0;
    bool use_beat_info = true;
    /// Seconds of music, from its start, the embedding is computed on.
    double music_context = 3.0;
    double threshold_quantile = diffusion::kThresholdQuantile;
};

/// Music embedding used to condition generation: the first `music_context`
/// seconds of `music`, N + 1 beat indicators.
Eigen::VectorXf condition_vector(const AudioClip& music, const Models& models, const GenerateOptions& options);

/// x0 and music to N + 1 frames; frame 0 is x0 itself. N is the denoiser's
/// frame count. Throws UntrainedError naming the first untrained stage.
VideoTensor generate_dance_video(const Image& x0, const AudioClip& music, const Models& models,
                                 const GenerateOptions& options, std::uint64_t seed);

/// Same, with a precomputed music embedding.
VideoTensor generate_dance_video(const Image& x0, const Eigen::VectorXf& embedding, const Models& models,
                                 const GenerateOptions& options, std::uint64_t seed);

/// Decodes warps of x0's latent by a denormalised flow volume [N, 3, Hz, Wz].
VideoTensor render_flow_volume(const Image& x0, const TensorF& volume, const flow::FlowAutoencoder<float>& ae, double fps);

/// mask * subject + (1 - mask) * background; mask is [H, W] or [H, W, 1].
Image composite_subject(const Image& subject, const TensorF& mask, const Image& background);

struct ExportMeta {
    std::uint64_t seed = 0;
    std::map<std::string, std::string> model_hashes;
};

/// out_dir/{frames/frame_XXXXX.png, audio.wav, meta.json}; audio is trimmed
/// (or zero-padded) to the video's duration.
void export_result(const VideoTensor& video, const AudioClip& music, const fs::path& out_dir, const ExportMeta& meta);

}  // namespace beatflow::synthesis
