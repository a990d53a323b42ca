#include "doctest.h"
#include "gradcheck.hpp"

#include "beatflow/corpus/synth.hpp"
#include "beatflow/diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>

using namespace beatflow;
using namespace beatflow::diffusion;
using nn::Var;

namespace {

DenoiserConfig tiny_config(int frames, int cond_dim = 9)
{
    DenoiserConfig c;
    c.frames = frames;
    c.height = 16;
    c.width = 16;
    c.latent_channels = 4;
    c.cond_dim = cond_dim;
    c.channels = {8, 8, 8, 8, 8};
    c.time_dim = 16;
    c.position_channels = 4;
    return c;
}

TensorF normal_tensor(const Shape& shape, RngStream& rng, double scale = 1.0)
{
    TensorF t(shape);
    for (Index i = 0; i < t.size(); ++i) {
        t[i] = static_cast<float>(scale * rng.normal());
    }
    return t;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and monotonicity")
{
    const NoiseSchedule s = cosine_schedule(1000);
    CHECK(s.alpha_bar[0] == 1.0);
    CHECK(s.alpha_bar[1000] < 1e-3);
    CHECK(s.alpha_bar.size() == 1001);
    for (int t = 1; t <= 1000; ++t) {
        CHECK(s.beta[static_cast<std::size_t>(t)] > 0.0);
        CHECK(s.beta[static_cast<std::size_t>(t)] <= 0.999);
        CHECK(s.alpha_bar[static_cast<std::size_t>(t)] < s.alpha_bar[static_cast<std::size_t>(t) - 1]);
    }
    // Early steps follow f(t)/f(0) before any clipping takes effect.
    const double sh = 0.008;
    const auto f = [&](double t) {
        const double c = std::cos((t / 1000.0 + sh) / (1.0 + sh) * std::numbers::pi / 2.0);
        return c * c;
    };
    CHECK(s.alpha_bar[500] == doctest::Approx(f(500.0) / f(0.0)).epsilon(1e-9));
    CHECK_THROWS_AS(cosine_schedule(1), DomainError);
}

TEST_CASE("closed-form forward process equals iterated single steps")
{
    const NoiseSchedule s = cosine_schedule(32);
    // Iterate the per-step map on the mean coefficient and the noise variance.
    double coef = 1.0;
    double var = 0.0;
    for (int t = 1; t <= 32; ++t) {
        const double a = s.alpha(t);
        coef *= std::sqrt(a);
        var = a * var + (1.0 - a);
        CHECK(std::abs(coef - std::sqrt(s.alpha_bar[static_cast<std::size_t>(t)])) < 1e-4);
        CHECK(std::abs(var - (1.0 - s.alpha_bar[static_cast<std::size_t>(t)])) < 1e-4);
    }
    RngStream rng(1);
    const TensorF a0 = normal_tensor({4, 3, 4, 4}, rng);
    const TensorF zero(a0.shape());
    const TensorF mean = diffuse_forward(a0, 7, zero, s);
    CHECK((mean.vec() - std::sqrt(s.alpha_bar[7]) * a0.vec()).cwiseAbs().maxCoeff() < 1e-6f);
    CHECK_THROWS_AS(diffuse_forward(a0, 0, zero, s), std::out_of_range);
    CHECK_THROWS_AS(diffuse_forward(a0, 33, zero, s), std::out_of_range);
}

TEST_CASE("a_T is close to unit variance")
{
    const NoiseSchedule s = cosine_schedule(1000);
    RngStream rng(2);
    const TensorF a0 = normal_tensor({15, 3, 16, 16}, rng);
    const TensorF eps = normal_tensor(a0.shape(), rng);
    const TensorF at = diffuse_forward(a0, 1000, eps, s);
    const double m = at.vec().cast<double>().mean();
    const double v = (at.vec().cast<double>().array() - m).square().mean();
    CHECK(v == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("dynamic threshold")
{
    TensorF c({2, 3, 4, 4});
    c.vec().setConstant(4.0f);
    CHECK((dynamic_threshold(c).vec().array() == 1.0f).all());
    RngStream rng(3);
    const TensorF wide = normal_tensor({4, 3, 8, 8}, rng, 5.0);
    const TensorF thr = dynamic_threshold(wide);
    CHECK(thr.vec().cwiseAbs().maxCoeff() <= 1.0f);
    const TensorF narrow = normal_tensor({4, 3, 8, 8}, rng, 0.2);
    const TensorF kept = dynamic_threshold(narrow);
    CHECK(kept.vec().cwiseAbs().maxCoeff() <= 1.0f);
    for (Index i = 0; i < narrow.size(); ++i) {
        if (std::abs(narrow[i]) <= 1.0f) {
            CHECK(kept[i] == narrow[i]);
        }
    }
    CHECK_THROWS_AS(dynamic_threshold(c, 1.5), DomainError);
}

TEST_CASE("volume statistics normalise and invert")
{
    RngStream rng(4);
    std::vector<FlowVolume> vols;
    for (int i = 0; i < 3; ++i) {
        TensorF v = normal_tensor({5, 3, 4, 4}, rng, 0.1);
        for (Index k = 2 * 16; k < v.size(); k += 48) {
            v.vec().segment(k, 16).array() += 3.0f;
        }
        vols.push_back({v});
    }
    const VolumeStats st = VolumeStats::fit(vols);
    CHECK(st.mean[2] == doctest::Approx(3.0).epsilon(0.05));
    const TensorF n = st.normalize(vols[0].values);
    // Channels share one variance, and the threshold quantile of |x| is 1.
    std::array<double, 3> sq{};
    std::vector<double> mags;
    for (const FlowVolume& v : vols) {
        const TensorF x = st.normalize(v.values);
        for (Index k = 0; k < x.size(); ++k) {
            sq[static_cast<std::size_t>((k / 16) % 3)] += static_cast<double>(x[k]) * x[k];
            mags.push_back(std::abs(x[k]));
        }
    }
    CHECK(sq[0] == doctest::Approx(sq[1]).epsilon(1e-4));
    CHECK(sq[0] == doctest::Approx(sq[2]).epsilon(1e-4));
    std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(0.9 * mags.size()), mags.end());
    CHECK(mags[static_cast<std::size_t>(0.9 * mags.size())] == doctest::Approx(1.0).epsilon(0.02));
    CHECK((st.denormalize(n).vec() - vols[0].values.vec()).cwiseAbs().maxCoeff() < 1e-5f);
    const VolumeStats back = VolumeStats::from_json(st.to_json());
    CHECK(back.mean == st.mean);
    CHECK(back.scale == st.scale);
    CHECK(vols[0].channels_last().shape() == Shape{5, 4, 4, 3});
}

TEST_CASE("denoiser keeps the volume shape for several clip lengths")
{
    for (int n : {8, 16, 40}) {
        const Denoiser<float> model(tiny_config(n), 1);
        RngStream rng(5);
        const TensorF a = normal_tensor({2, n, 3, 16, 16}, rng);
        const TensorF z = normal_tensor({2, 4, 16, 16}, rng);
        const TensorF e = normal_tensor({2, 9}, rng);
        const std::array<int, 2> t{3, 700};
        nn::NoGradGuard guard;
        const Var<float> out = model(Var<float>(a), t, Var<float>(z), Var<float>(e));
        CHECK(out.shape() == a.shape());
        CHECK(out.value().all_finite());
    }
}

TEST_CASE("denoiser responds to the music embedding and the first-frame latent")
{
    const Denoiser<float> model(tiny_config(6), 2);
    RngStream rng(6);
    const TensorF a = normal_tensor({1, 6, 3, 16, 16}, rng);
    const TensorF z = normal_tensor({1, 4, 16, 16}, rng);
    const TensorF e = normal_tensor({1, 9}, rng);
    const std::array<int, 1> t{100};
    nn::NoGradGuard guard;
    const TensorF base = model(Var<float>(a), t, Var<float>(z), Var<float>(e)).value();
    const TensorF e2 = normal_tensor({1, 9}, rng);
    const TensorF z2 = normal_tensor({1, 4, 16, 16}, rng);
    CHECK((model(Var<float>(a), t, Var<float>(z), Var<float>(e2)).value().vec() - base.vec()).cwiseAbs().maxCoeff() > 1e-4f);
    CHECK((model(Var<float>(a), t, Var<float>(z2), Var<float>(e)).value().vec() - base.vec()).cwiseAbs().maxCoeff() > 1e-4f);
    CHECK(model(Var<float>(a), t, Var<float>(z), Var<float>(e)).value().vec() == base.vec());
    CHECK_THROWS_AS((void)model(Var<float>(a), t, Var<float>(z), Var<float>(TensorF({1, 8}))), ShapeError);
    CHECK_THROWS_AS((void)model(Var<float>(a), t, Var<float>(TensorF({1, 4, 8, 8})), Var<float>(e)), ShapeError);
}

TEST_CASE("denoiser loss gradients match central differences")
{
    DenoiserConfig c = tiny_config(3, 5);
    c.latent_channels = 2;
    c.channels = {4, 4, 4, 4, 4};
    c.time_dim = 8;
    c.position_channels = 2;
    Denoiser<double> model(c, 3);
    RngStream rng(7);
    TrainingItem item{normal_tensor({3, 3, 16, 16}, rng), normal_tensor({2, 16, 16}, rng), Eigen::VectorXf::Random(5)};
    const NoiseSchedule s = cosine_schedule(50);
    const std::vector<const TrainingItem*> batch{&item};
    auto loss = [&] {
        RngStream draw(11);
        return training_loss(model, batch, s, draw);
    };
    const auto r = test::grad_check(model.params(), loss, 16, rng.fork("fd"));
    CHECK(r.checked >= 10);
    CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("zero predictor scores unit loss")
{
    Denoiser<float> model(tiny_config(4), 4);
    for (const char* name : {"out.conv.w", "out.conv.b"}) {
        Var<float> p = model.params().get(name);
        p.mutable_value().vec().setZero();
    }
    RngStream rng(8);
    std::vector<TrainingItem> items;
    for (int i = 0; i < 16; ++i) {
        items.push_back({normal_tensor({4, 3, 16, 16}, rng), normal_tensor({4, 16, 16}, rng), Eigen::VectorXf::Zero(9)});
    }
    const double v = validation_loss(model, items, cosine_schedule(100), 1, 2);
    CHECK(v == doctest::Approx(1.0).epsilon(0.03));
    CHECK(validation_loss(model, items, cosine_schedule(100), 1, 2) == v);
}

TEST_CASE("short stage-2 run lowers validation loss")
{
    Denoiser<float> model(tiny_config(4), 5);
    RngStream rng(9);
    std::vector<TrainingItem> items;
    // Structured volumes: a smooth flow field that depends on z0.
    for (int i = 0; i < 16; ++i) {
        TensorF z = normal_tensor({4, 16, 16}, rng);
        TensorF a({4, 3, 16, 16});
        for (int f = 0; f < 4; ++f) {
            for (int c = 0; c < 3; ++c) {
                for (Index p = 0; p < 256; ++p) {
                    a[((static_cast<Index>(f) * 3 + c) * 256) + p] = 0.8f * std::tanh(z[static_cast<Index>(c) * 256 + p]) * (f + 1) / 4.0f;
                }
            }
        }
        items.push_back({a, z, Eigen::VectorXf::Zero(9)});
    }
    const NoiseSchedule s = cosine_schedule(100);
    const double before = validation_loss(model, items, s, 3);
    Stage2Config config;
    config.epochs = 40;
    config.batch = 4;
    config.lr = 2e-3;
    config.lr_milestones = {};
    train_stage2(model, items, s, config, RngStream(10));
    CHECK(validation_loss(model, items, s, 3) < 0.6 * before);
}

TEST_CASE("sampler is deterministic, finite and checks the embedding size")
{
    const Denoiser<float> model(tiny_config(4), 6);
    RngStream rng(12);
    const TensorF z = normal_tensor({4, 16, 16}, rng);
    const Eigen::VectorXf e = Eigen::VectorXf::Random(9);
    const NoiseSchedule s = cosine_schedule(20);
    const TensorF a = sample_flow_volume(model, z, e, s, RngStream(1));
    const TensorF b = sample_flow_volume(model, z, e, s, RngStream(1));
    CHECK(a.shape() == Shape{4, 3, 16, 16});
    CHECK(a.all_finite());
    CHECK(a.vec() == b.vec());
    CHECK_THROWS_AS(sample_flow_volume(model, z, Eigen::VectorXf::Zero(5), s, RngStream(1)), ShapeError);
}

TEST_CASE("target volumes need a trained stage 1 and are static for a still video")
{
    flow::FlowAutoencoder<float> ae(1, 0.5);
    TensorF frames({5, 32, 32, 3});
    frames.vec().setConstant(0.4f);
    const VideoTensor still(frames, 20.0);
    CHECK_THROWS_AS(build_target_volume(still, ae), DomainError);
    ae.set_trained(true);
    const TargetVolume tv = build_target_volume(still, ae);
    CHECK(tv.a0.values.shape() == Shape{4, 3, 8, 8});
    CHECK(tv.z0.shape() == Shape{flow::kLatentChannels, 8, 8});
}

TEST_CASE("denoiser config round trips through json")
{
    const DenoiserConfig c = tiny_config(7);
    const DenoiserConfig back = DenoiserConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
}
