#include "beatflow/synthesis/synthesis.hpp"

#include <cmath>

namespace beatflow::synthesis {

using nn::Var;

namespace {

void require_trained(const Models& m)
{
    if (!m.autoencoder.trained()) {
        throw UntrainedError("stage 1 (flow autoencoder) has not been trained");
    }
    if (!m.style.trained()) {
        throw UntrainedError("music encoder style arm has not been trained");
    }
    if (!m.movement.trained()) {
        throw UntrainedError("music encoder movement arm has not been trained");
    }
    if (!m.denoiser.trained()) {
        throw UntrainedError("stage 2 (flow diffusion) has not been trained");
    }
}

TensorF image_batch(const Image& x)
{
    const std::array<int, 1> first{0};
    return flow::frames_to_batch(VideoTensor(x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}), 1.0), first);
}

}  // namespace

Eigen::VectorXf condition_vector(const AudioClip& music, const Models& models, const GenerateOptions& options)
{
    const int frames = models.denoiser.config().frames + 1;
    if (music.duration() + 1e-9 < frames / options.fps) {
        throw DomainError("music lasts " + std::to_string(music.duration()) + " s, shorter than the " +
                          std::to_string(frames) + "-frame video");
    }
    const auto want = static_cast<Index>(std::llround(options.music_context * music.sample_rate()));
    const AudioClip context = music.length() > want ? music.segment(0, want) : music;
    const music::MusicEmbedding e =
        music::encode_music(context, frames, options.fps, models.style, models.movement, options.use_beat_info);
    return e.concat();
}

VideoTensor render_flow_volume(const Image& x0, const TensorF& volume, const flow::FlowAutoencoder<float>& ae, double fps)
{
    if (volume.rank() != 4 || volume.dim(1) != diffusion::kVolumeChannels) {
        throw ShapeError("flow volume must be [N, 3, Hz, Wz], got " + shape_string(volume.shape()));
    }
    nn::NoGradGuard guard;
    const int n = volume.dim(0);
    const Var<float> z0 = ae.encode(Var<float>(image_batch(x0)));
    if (z0.dim(2) != volume.dim(2) || z0.dim(3) != volume.dim(3)) {
        throw ShapeError("flow volume " + shape_string(volume.shape()) + " does not match latent " +
                         shape_string(z0.shape()));
    }
    const Var<float> v(volume);
    const Var<float> flow = nn::slice(v, 1, 0, 2);
    const Var<float> mask = nn::sigmoid(nn::slice(v, 1, 2, 3));
    const Var<float> z = nn::reshape(nn::repeat_frames(z0, n), {n, z0.dim(1), z0.dim(2), z0.dim(3)});
    const std::vector<Image> decoded = flow::batch_to_frames(ae.decode(flow::warp_latent(z, flow, mask)).value());

    std::vector<Image> frames;
    frames.reserve(decoded.size() + 1);
    frames.push_back(x0);
    frames.insert(frames.end(), decoded.begin(), decoded.end());
    return VideoTensor::from_frames(frames, fps);
}

VideoTensor generate_dance_video(const Image& x0, const Eigen::VectorXf& embedding, const Models& models,
                                 const GenerateOptions& options, std::uint64_t seed)
{
    require_trained(models);
    TensorF z0;
    {
        nn::NoGradGuard guard;
        const Var<float> z = models.autoencoder.encode(Var<float>(image_batch(x0)));
        z0 = z.value().reshaped({z.dim(1), z.dim(2), z.dim(3)});
    }
    const TensorF normalised = diffusion::sample_flow_volume(models.denoiser, z0, embedding, models.schedule,
                                                             RngStream(seed).fork("sample"), options.threshold_quantile);
    return render_flow_volume(x0, models.stats.denormalize(normalised), models.autoencoder, options.fps);
}

VideoTensor generate_dance_video(const Image& x0, const AudioClip& music, const Models& models,
                                 const GenerateOptions& options, std::uint64_t seed)
{
    require_trained(models);
    return generate_dance_video(x0, condition_vector(music, models, options), models, options, seed);
}

Image composite_subject(const Image& subject, const TensorF& mask, const Image& background)
{
    if (subject.shape() != background.shape() || subject.rank() != 3) {
        throw ShapeError("subject " + shape_string(subject.shape()) + " and background " +
                         shape_string(background.shape()) + " differ");
    }
    const int h = subject.dim(0);
    const int w = subject.dim(1);
    const int c = subject.dim(2);
    const bool ok = (mask.rank() == 2 && mask.shape() == Shape{h, w}) || (mask.rank() == 3 && mask.shape() == Shape{h, w, 1});
    if (!ok) {
        throw ShapeError("mask " + shape_string(mask.shape()) + " does not cover a " + std::to_string(h) + "x" +
                         std::to_string(w) + " frame");
    }
    if (mask.vec().minCoeff() < 0.0f || mask.vec().maxCoeff() > 1.0f) {
        throw DomainError("mask values must lie in [0, 1]");
    }
    Image out(subject.shape());
    for (Index p = 0; p < static_cast<Index>(h) * w; ++p) {
        const float m = mask[p];
        for (int k = 0; k < c; ++k) {
            const Index i = p * c + k;
            out[i] = m * subject[i] + (1.0f - m) * background[i];
        }
    }
    return out;
}

void export_result(const VideoTensor& video, const AudioClip& music, const fs::path& out_dir, const ExportMeta& meta)
{
    fs::create_directories(out_dir);
    save_video_frames(video, out_dir / "frames");
    const auto count = static_cast<Index>(std::llround(video.frames() / video.fps() * music.sample_rate()));
    Eigen::VectorXf samples = Eigen::VectorXf::Zero(count);
    const Index keep = std::min(count, music.length());
    samples.head(keep) = music.samples().head(keep);
    save_audio(AudioClip(samples, music.sample_rate()), out_dir / "audio.wav");

    Json hashes = Json::object();
    for (const auto& [name, hash] : meta.model_hashes) {
        hashes[name] = hash;
    }
    save_json({{"fps", video.fps()},
               {"N", video.frames() - 1},
               {"frames", video.frames()},
               {"seed", meta.seed},
               {"model_hashes", hashes}},
              out_dir / "meta.json");
}

}  // namespace beatflow::synthesis
