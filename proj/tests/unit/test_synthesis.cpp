#include "doctest.h"

#include "beatflow/synthesis/synthesis.hpp"

#include <cmath>

using namespace beatflow;
using namespace beatflow::synthesis;

namespace {

Image noise_image(int side, RngStream& rng)
{
    Image img({side, side, 3});
    for (Index i = 0; i < img.size(); ++i) {
        img[i] = static_cast<float>(rng.uniform());
    }
    return img;
}

diffusion::DenoiserConfig small_denoiser(int frames)
{
    diffusion::DenoiserConfig c;
    c.frames = frames;
    c.cond_dim = music::kStyleDim + music::kMovementDim + frames + 2;
    c.channels = {8, 8, 8, 8, 8};
    c.time_dim = 16;
    c.position_channels = 4;
    return c;
}

}  // namespace

TEST_CASE("compositing with constant masks")
{
    RngStream rng(1);
    const Image s = noise_image(8, rng);
    const Image b = noise_image(8, rng);
    TensorF ones({8, 8});
    ones.vec().setOnes();
    CHECK(composite_subject(s, ones, b).vec() == s.vec());
    CHECK(composite_subject(s, TensorF({8, 8}), b).vec() == b.vec());
    TensorF half({8, 8, 1});
    half.vec().setConstant(0.5f);
    CHECK((composite_subject(s, half, b).vec() - 0.5f * (s.vec() + b.vec())).cwiseAbs().maxCoeff() < 1e-7f);
    CHECK_THROWS_AS(composite_subject(s, TensorF({4, 4}), b), ShapeError);
    TensorF bad({8, 8});
    bad.vec().setConstant(1.5f);
    CHECK_THROWS_AS(composite_subject(s, bad, b), DomainError);
}

TEST_CASE("rendered flow volumes keep x0 as frame 0 and stay in range")
{
    RngStream rng(2);
    const Image x0 = quantize8(noise_image(64, rng));
    const flow::FlowAutoencoder<float> ae(3);
    TensorF volume({5, 3, 16, 16});
    for (Index i = 0; i < volume.size(); ++i) {
        volume[i] = static_cast<float>(0.1 * rng.normal());
    }
    const VideoTensor v = render_flow_volume(x0, volume, ae, 20.0);
    CHECK(v.frames() == 6);
    CHECK(v.frame(0).vec() == x0.vec());
    CHECK(v.data().vec().minCoeff() >= 0.0f);
    CHECK(v.data().vec().maxCoeff() <= 1.0f);
    CHECK(render_flow_volume(x0, volume, ae, 20.0).data().vec() == v.data().vec());
    CHECK_THROWS_AS(render_flow_volume(x0, TensorF({5, 3, 8, 8}), ae, 20.0), ShapeError);
}

TEST_CASE("generation names the first untrained stage")
{
    flow::FlowAutoencoder<float> ae(1);
    music::StyleEmbedder style(4, 1);
    music::MovementEmbedder movement(1);
    diffusion::Denoiser<float> denoiser(small_denoiser(3), 1);
    const diffusion::VolumeStats stats;
    const diffusion::NoiseSchedule schedule = diffusion::cosine_schedule(10);
    const Models models{ae, style, movement, denoiser, stats, schedule};
    RngStream rng(3);
    const Image x0 = noise_image(64, rng);
    const AudioClip music(Eigen::VectorXf::Zero(22050 * 3), 22050);
    auto message = [&] {
        try {
            (void)generate_dance_video(x0, music, models, GenerateOptions{}, 1);
        } catch (const UntrainedError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message().find("stage 1") != std::string::npos);
    ae.set_trained(true);
    CHECK(message().find("style") != std::string::npos);
    style.set_trained(true);
    CHECK(message().find("movement") != std::string::npos);
    movement.set_trained(true);
    CHECK(message().find("stage 2") != std::string::npos);
}

TEST_CASE("export writes frames, trimmed audio and meta")
{
    const fs::path dir = fs::temp_directory_path() / "beatflow_test_export";
    fs::remove_all(dir);
    RngStream rng(4);
    std::vector<Image> frames;
    for (int i = 0; i < 5; ++i) {
        frames.push_back(noise_image(16, rng));
    }
    const VideoTensor v = VideoTensor::from_frames(frames, 20.0);
    const AudioClip music(Eigen::VectorXf::Constant(22050, 0.25f), 22050);
    export_result(v, music, dir, {42, {{"stage1", "abc"}}});
    const VideoTensor back = load_video_frames(dir / "frames", 20.0);
    CHECK(back.data().vec() == quantize8(v.data()).vec());
    const AudioClip audio = load_audio(dir / "audio.wav");
    CHECK(std::abs(audio.duration() - 5.0 / 20.0) <= 1.0 / 22050.0);
    const Json meta = load_json(dir / "meta.json");
    CHECK(meta.at("seed").get<std::uint64_t>() == 42);
    CHECK(meta.at("N").get<int>() == 4);
    CHECK(meta.at("model_hashes").at("stage1") == "abc");
}
