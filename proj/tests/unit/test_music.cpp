#include "doctest.h"

#include "beatflow/corpus/synth.hpp"
#include "beatflow/music/encoder.hpp"

#include <cmath>

using namespace beatflow;
using namespace beatflow::music;

namespace {

struct StyleData {
    std::vector<StyleExample> train;
    std::vector<StyleExample> test;
    std::vector<AudioClip> test_clips;
};

// Three-second clips per style at spread tempos; every fourth clip is held out.
StyleData style_data(int per_style)
{
    StyleData d;
    const std::vector<corpus::DanceStyle> styles = corpus::default_styles(4);
    RngStream rng(31);
    for (const corpus::DanceStyle& s : styles) {
        for (int k = 0; k < per_style; ++k) {
            const double bpm = s.bpm_lo + (s.bpm_hi - s.bpm_lo) * (k + 0.5) / per_style;
            const corpus::MusicTrack m = corpus::synth_music(s, bpm, 3.0, rng.fork(s.name + std::to_string(k)));
            StyleExample ex{mel_input(m.clip), s.id};
            if (k % 4 == 3) {
                d.test.push_back(ex);
                d.test_clips.push_back(m.clip);
            } else {
                d.train.push_back(ex);
            }
        }
    }
    return d;
}

}  // namespace

TEST_CASE("beat features: rounding, tempo entry, empty grid")
{
    const Eigen::VectorXf e = beat_features(BeatGrid{{0.1, 0.6}, 120.0}, 16, 20.0);
    REQUIRE(e.size() == 17);
    for (int i = 0; i < 16; ++i) {
        CHECK(e[i] == ((i == 2 || i == 12) ? 1.0f : 0.0f));
    }
    CHECK(e[16] == 0.5f);
    const Eigen::VectorXf empty = beat_features(BeatGrid{}, 16, 20.0);
    CHECK(empty.cwiseAbs().maxCoeff() == 0.0f);
    // 0.5 / fps rounds up to frame 1.
    const Eigen::VectorXf tie = beat_features(BeatGrid{{0.025}, 200.0}, 4, 20.0);
    CHECK(tie[0] == 0.0f);
    CHECK(tie[1] == 1.0f);
    CHECK(tie[4] == 1.0f);
    CHECK(beat_features(BeatGrid{{0.1}, 30.0}, 4, 20.0)[4] == 0.0f);
}

TEST_CASE("embedding concatenation splits back exactly")
{
    MusicEmbedding m;
    m.e_c = Eigen::VectorXf::LinSpaced(kStyleDim, 0.0f, 1.0f);
    m.e_w = Eigen::VectorXf::LinSpaced(kMovementDim, 2.0f, 3.0f);
    m.e_b = Eigen::VectorXf::LinSpaced(17, 4.0f, 5.0f);
    CHECK(m.dim() == 145);
    const MusicEmbedding back = MusicEmbedding::split(m.concat());
    CHECK(back.e_c == m.e_c);
    CHECK(back.e_w == m.e_w);
    CHECK(back.e_b == m.e_b);
}

TEST_CASE("untrained embedders refuse to embed")
{
    const StyleEmbedder style(4, 1);
    const MovementEmbedder movement(1);
    const AudioClip clip(Eigen::VectorXf::Zero(22050 * 2), 22050);
    CHECK_THROWS_AS((void)style.embed(clip), UntrainedError);
    CHECK_THROWS_AS((void)movement.embed(clip), UntrainedError);
    CHECK_THROWS_AS(encode_music(clip, 16, 20.0, style, movement), UntrainedError);
    CHECK_THROWS_AS(StyleEmbedder(1, 1), DomainError);
}

TEST_CASE("contrastive loss is log B for uninformative embeddings")
{
    const int b = 8;
    TensorF same({b, 4});
    for (int i = 0; i < b; ++i) {
        same.vec().segment(i * 4, 4) << 0.5f, 0.5f, 0.5f, 0.5f;
    }
    const nn::Var<float> x(same);
    CHECK(contrastive_loss(x, x, 0.07).item() == doctest::Approx(std::log(b)).epsilon(1e-5));
}

TEST_CASE("contrastive loss at initialization is near log B")
{
    const std::vector<corpus::DanceStyle> styles = corpus::default_styles(4);
    const int b = 16;
    TensorF mels;
    TensorF stats({b, kMotionStatDim});
    std::vector<TensorF> items;
    RngStream rng(2);
    for (int i = 0; i < b; ++i) {
        const corpus::DanceStyle& s = styles[static_cast<std::size_t>(i % 4)];
        const double bpm = s.bpm_lo + (s.bpm_hi - s.bpm_lo) * rng.uniform();
        const corpus::MusicTrack m = corpus::synth_music(s, bpm, 3.0, rng.fork(std::to_string(i)));
        items.push_back(mel_input(m.clip));
        const corpus::DanceClip d = corpus::synth_dance(s, m.beats, 16, 20.0, rng.fork("d" + std::to_string(i)), 0.0, 32);
        stats.vec().segment(static_cast<Index>(i) * kMotionStatDim, kMotionStatDim) = motion_statistics(d.video);
    }
    Shape shape = items[0].shape();
    shape.insert(shape.begin(), b);
    mels = TensorF(shape);
    for (int i = 0; i < b; ++i) {
        mels.vec().segment(static_cast<Index>(i) * items[0].size(), items[0].size()) = items[static_cast<std::size_t>(i)].vec();
    }
    const MovementEmbedder model(3);
    nn::NoGradGuard guard;
    const double loss = contrastive_loss(model.embed_batch(mels), model.embed_motion(stats), 0.07).item();
    CHECK(loss == doctest::Approx(std::log(b)).epsilon(0.1));
}

TEST_CASE("style embedder separates styles and keeps the backbone frozen")
{
    const StyleData d = style_data(8);
    EmbedderConfig config;
    config.pretrain_epochs = 15;
    config.epochs = 0;
    StyleEmbedder pretrained(4, 5);
    train_style_embedder(pretrained, d.train, config, RngStream(9));
    config.epochs = 15;
    StyleEmbedder model(4, 5);
    train_style_embedder(model, d.train, config, RngStream(9));

    int frozen = 0;
    for (const auto& [name, v] : model.params().entries()) {
        if (name.rfind("backbone.", 0) == 0) {
            ++frozen;
            CHECK(v.value().vec() == pretrained.params().get(name).value().vec());
        }
    }
    CHECK(frozen > 0);

    int correct = 0;
    std::vector<Eigen::VectorXf> embeddings;
    for (std::size_t i = 0; i < d.test_clips.size(); ++i) {
        const Eigen::VectorXf e = model.embed(d.test_clips[i]);
        CHECK(e.norm() == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(e == model.embed(d.test_clips[i]));
        embeddings.push_back(e);
        TensorF row({1, kStyleDim});
        row.vec() = e;
        nn::NoGradGuard guard;
        const nn::Var<float> logits = model.logits(nn::Var<float>(row));
        Eigen::Index arg = 0;
        logits.value().vec().maxCoeff(&arg);
        correct += static_cast<int>(arg) == d.test[i].style;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(d.test_clips.size()) >= 0.9);

    double intra = 0.0;
    double inter = 0.0;
    int n_intra = 0;
    int n_inter = 0;
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const double c = embeddings[i].dot(embeddings[j]);
            if (d.test[i].style == d.test[j].style) {
                intra += c;
                ++n_intra;
            } else {
                inter += c;
                ++n_inter;
            }
        }
    }
    CHECK(intra / n_intra - inter / n_inter > 0.1);

    std::vector<StyleExample> one_style;
    for (const StyleExample& ex : d.train) {
        if (ex.style == 0) {
            one_style.push_back(ex);
        }
    }
    StyleEmbedder other(4, 5);
    CHECK_THROWS_AS(train_style_embedder(other, one_style, config, RngStream(1)), DomainError);
}
