#include "beatflow/music/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace beatflow::music {

using nn::Var;

namespace {

constexpr std::array<int, 5> kBackboneChannels{1, 8, 16, 32, 64};

void require_finite(double loss, const std::string& stage, int epoch)
{
    if (!std::isfinite(loss)) {
        throw NumericError(stage + " loss became non-finite at epoch " + std::to_string(epoch));
    }
}

std::vector<int> shuffled(int n, RngStream& rng)
{
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    }
    return order;
}

/// Stacks [1, M, T] examples into [B, 1, M, T].
template <typename Get>
TensorF stack_mels(std::span<const int> idx, Get get)
{
    const TensorF& first = get(idx[0]);
    Shape shape{static_cast<int>(idx.size())};
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    TensorF out(shape);
    const Index per = first.size();
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const TensorF& m = get(idx[b]);
        if (m.shape() != first.shape()) {
            throw ShapeError("mel batch mixes shapes " + shape_string(first.shape()) + " and " + shape_string(m.shape()));
        }
        out.vec().segment(static_cast<Index>(b) * per, per) = m.vec();
    }
    return out;
}

TensorF motion_input(std::span<const Eigen::VectorXf* const> stats)
{
    TensorF out({static_cast<int>(stats.size()), kMotionStatDim});
    for (std::size_t b = 0; b < stats.size(); ++b) {
        if (stats[b]->size() != kMotionStatDim) {
            throw ShapeError("motion statistics must have " + std::to_string(kMotionStatDim) + " entries");
        }
        // Relative to the clip's mean motion, so figure/background contrast drops out.
        const Eigen::VectorXf& s = *stats[b];
        const float scale = s.head(kMotionStatDim / 2).mean() + 1e-6f;
        for (int k = 0; k < kMotionStatDim; ++k) {
            out[static_cast<Index>(b) * kMotionStatDim + k] = std::log(s[k] / scale + 1e-2f);
        }
    }
    return out;
}

Eigen::VectorXf row(const Var<float>& v)
{
    return v.value().vec();
}

void require_trained(bool trained, const char* what)
{
    if (!trained) {
        throw UntrainedError(std::string(what) + " has not been trained");
    }
}

}  // namespace

Eigen::VectorXf MusicEmbedding::concat() const
{
    Eigen::VectorXf out(dim());
    out << e_c, e_w, e_b;
    return out;
}

MusicEmbedding MusicEmbedding::split(const Eigen::VectorXf& e, int dc, int dw)
{
    if (e.size() <= dc + dw) {
        throw ShapeError("embedding of size " + std::to_string(e.size()) + " has no beat part");
    }
    return {e.head(dc), e.segment(dc, dw), e.tail(e.size() - dc - dw)};
}

Eigen::VectorXf beat_features(const BeatGrid& beats, int n_frames, double fps)
{
    if (n_frames < 1 || fps <= 0.0) {
        throw DomainError("beat_features needs n_frames >= 1 and fps > 0");
    }
    Eigen::VectorXf e = Eigen::VectorXf::Zero(n_frames + 1);
    for (double t : beats.beat_times) {
        const double i = std::floor(t * fps + 0.5);
        if (i >= 0.0 && i < n_frames) {
            e[static_cast<Index>(i)] = 1.0f;
        }
    }
    if (!beats.empty() && beats.tempo_bpm > 0.0) {
        e[n_frames] = static_cast<float>(std::clamp((beats.tempo_bpm - 60.0) / 120.0, 0.0, 1.0));
    }
    return e;
}

TensorF mel_input(const AudioClip& clip)
{
    const audio::MelSpectrogram mel = audio::log_mel(clip);
    const Index frames = mel.frames();
    const Index mels = mel.n_mels();
    const double mu = mel.values.mean();
    const double var = (mel.values.array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + 1e-8);
    TensorF out({1, static_cast<int>(mels), static_cast<int>(frames)});
    for (Index m = 0; m < mels; ++m) {
        for (Index t = 0; t < frames; ++t) {
            out[m * frames + t] = static_cast<float>((mel.values(t, m) - mu) * inv);
        }
    }
    return out;
}

Eigen::VectorXf motion_statistics(const VideoTensor& video)
{
    const int n = video.frames();
    const int h = video.height();
    const int w = video.width();
    if (n < 2) {
        throw DomainError("motion statistics need at least two frames");
    }
    const int cells = kMotionGrid * kMotionGrid;
    Eigen::MatrixXd per(n - 1, cells);
    const float* d = video.data().data();
    const Index frame = static_cast<Index>(h) * w * 3;
    for (int i = 0; i + 1 < n; ++i) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(cells);
        Eigen::VectorXd cnt = Eigen::VectorXd::Zero(cells);
        for (int y = 0; y < h; ++y) {
            const int cy = y * kMotionGrid / h;
            for (int x = 0; x < w; ++x) {
                const int c = cy * kMotionGrid + x * kMotionGrid / w;
                const Index base = (static_cast<Index>(y) * w + x) * 3;
                double s = 0.0;
                for (int ch = 0; ch < 3; ++ch) {
                    s += std::abs(d[(i + 1) * frame + base + ch] - d[i * frame + base + ch]);
                }
                acc[c] += s / 3.0;
                cnt[c] += 1.0;
            }
        }
        per.row(i) = (acc.array() / cnt.array()).transpose();
    }
    Eigen::VectorXf out(2 * cells);
    for (int c = 0; c < cells; ++c) {
        const double mu = per.col(c).mean();
        out[c] = static_cast<float>(mu);
        out[cells + c] = static_cast<float>(std::sqrt((per.col(c).array() - mu).square().mean()));
    }
    return out;
}

Backbone::Backbone(nn::ParamSet<float>& params, const std::string& prefix, RngStream& rng)
{
    for (std::size_t i = 0; i < conv.size(); ++i) {
        const std::string name = prefix + "conv" + std::to_string(i);
        conv[i] = nn::Conv2d<float>(params, name, kBackboneChannels[i], kBackboneChannels[i + 1], 3, 2, rng);
        norm[i] = nn::GroupNorm<float>(params, prefix + "norm" + std::to_string(i), kBackboneChannels[i + 1], 4);
    }
}

Var<float> Backbone::operator()(const Var<float>& mel) const
{
    Var<float> h = mel;
    for (std::size_t i = 0; i < conv.size(); ++i) {
        h = nn::silu(norm[i](conv[i](h)));
    }
    return nn::global_avg_pool(h);
}

Adapter::Adapter(nn::ParamSet<float>& params, const std::string& prefix, int dim, RngStream& rng)
    : fc1(params, prefix + "fc1", dim, kAdapterHidden, rng), fc2(params, prefix + "fc2", kAdapterHidden, dim, rng, 1.0)
{
}

Var<float> Adapter::operator()(const Var<float>& x) const
{
    return fc2(nn::relu(fc1(x)));
}

StyleEmbedder::StyleEmbedder(int styles, std::uint64_t seed) : styles_(styles)
{
    if (styles < 2) {
        throw DomainError("style embedder needs at least two styles");
    }
    RngStream rng = RngStream(seed).fork("style-embedder");
    backbone_ = Backbone(params_, "backbone.", rng);
    pre_head_ = nn::Linear<float>(params_, "pre_head", kStyleDim, styles, rng, 1.0);
    adapter_ = Adapter(params_, "adapter.", kStyleDim, rng);
    head_ = nn::Linear<float>(params_, "head", kStyleDim, styles, rng, 1.0);
}

Var<float> StyleEmbedder::embed_batch(const TensorF& mels) const
{
    return nn::l2_normalize(adapter_(backbone_(Var<float>(mels))));
}

Var<float> StyleEmbedder::pretrain_logits(const TensorF& mels) const
{
    return pre_head_(backbone_(Var<float>(mels)));
}

Eigen::VectorXf StyleEmbedder::embed(const AudioClip& clip) const
{
    require_trained(trained_, "style embedder");
    nn::NoGradGuard guard;
    const TensorF mel = mel_input(clip);
    return row(embed_batch(mel.reshaped({1, 1, mel.dim(1), mel.dim(2)})));
}

MovementEmbedder::MovementEmbedder(std::uint64_t seed)
{
    RngStream rng = RngStream(seed).fork("movement-embedder");
    backbone_ = Backbone(params_, "backbone.", rng);
    pre_proj_ = nn::Linear<float>(params_, "pre_proj", kMovementDim, kMovementDim, rng, 1.0);
    adapter_ = Adapter(params_, "adapter.", kMovementDim, rng);
    motion1_ = nn::Linear<float>(params_, "motion.fc1", kMotionStatDim, 128, rng);
    motion2_ = nn::Linear<float>(params_, "motion.fc2", 128, kMovementDim, rng, 1.0);
}

Var<float> MovementEmbedder::embed_batch(const TensorF& mels, bool pretraining) const
{
    const Var<float> feat = backbone_(Var<float>(mels));
    return nn::l2_normalize(pretraining ? pre_proj_(feat) : adapter_(feat));
}

Var<float> MovementEmbedder::embed_motion(const TensorF& stats) const
{
    return nn::l2_normalize(motion2_(nn::relu(motion1_(Var<float>(stats)))));
}

Eigen::VectorXf MovementEmbedder::embed(const AudioClip& clip) const
{
    require_trained(trained_, "movement embedder");
    nn::NoGradGuard guard;
    const TensorF mel = mel_input(clip);
    return row(embed_batch(mel.reshaped({1, 1, mel.dim(1), mel.dim(2)})));
}

Eigen::VectorXf MovementEmbedder::embed_motion(const VideoTensor& video) const
{
    require_trained(trained_, "movement embedder");
    nn::NoGradGuard guard;
    const Eigen::VectorXf stats = motion_statistics(video);
    const Eigen::VectorXf* p = &stats;
    return row(embed_motion(motion_input(std::span<const Eigen::VectorXf* const>(&p, 1))));
}

Var<float> contrastive_loss(const Var<float>& a, const Var<float>& b, double temperature)
{
    if (a.shape() != b.shape() || a.value().rank() != 2) {
        throw ShapeError("contrastive loss needs two [B, D] inputs of equal shape");
    }
    const Var<float> logits = nn::scale(nn::matmul_nt(a, b), static_cast<float>(1.0 / temperature));
    std::vector<int> labels(static_cast<std::size_t>(a.dim(0)));
    std::iota(labels.begin(), labels.end(), 0);
    return nn::scale(nn::add(nn::cross_entropy(logits, labels), nn::cross_entropy(nn::transpose(logits), labels)), 0.5f);
}

void train_style_embedder(StyleEmbedder& model, const std::vector<StyleExample>& data, const EmbedderConfig& config,
                          RngStream rng, const EpochLogger& log)
{
    if (data.size() < 2) {
        throw DomainError("style training needs at least two examples");
    }
    std::vector<int> seen(static_cast<std::size_t>(model.styles()), 0);
    for (const StyleExample& ex : data) {
        if (ex.style < 0 || ex.style >= model.styles()) {
            throw DomainError("style label " + std::to_string(ex.style) + " out of range");
        }
        seen[static_cast<std::size_t>(ex.style)] = 1;
    }
    if (std::accumulate(seen.begin(), seen.end(), 0) < 2) {
        throw DomainError("style training data covers a single style");
    }
    const int n = static_cast<int>(data.size());
    const auto get = [&](int i) -> const TensorF& { return data[static_cast<std::size_t>(i)].mel; };

    auto run_stage = [&](const std::string& stage, int epochs, bool pretrain) {
        nn::Adam<float> opt(model.params(), config.lr);
        for (int epoch = 0; epoch < epochs; ++epoch) {
            const std::vector<int> order = shuffled(n, rng);
            double total = 0.0;
            int batches = 0;
            for (int start = 0; start < n; start += config.batch) {
                const int end = std::min(n, start + config.batch);
                const std::span<const int> idx(order.data() + start, static_cast<std::size_t>(end - start));
                std::vector<int> labels;
                for (int i : idx) {
                    labels.push_back(data[static_cast<std::size_t>(i)].style);
                }
                const TensorF batch = stack_mels(idx, get);
                const Var<float> logits = pretrain ? model.pretrain_logits(batch) : model.logits(model.embed_batch(batch));
                const Var<float> loss = nn::cross_entropy(logits, labels);
                require_finite(loss.item(), stage, epoch);
                model.params().zero_grad();
                nn::backward(loss);
                opt.step();
                total += loss.item();
                ++batches;
            }
            if (log) {
                log(stage, epoch, total / batches, opt.lr());
            }
        }
    };

    model.params().set_trainable("", true);
    model.params().set_trainable("adapter.", false);
    model.params().set_trainable("head", false);
    run_stage("style_pretrain", config.pretrain_epochs, true);

    model.params().set_trainable("", false);
    model.params().set_trainable("adapter.", true);
    model.params().set_trainable("head", true);
    run_stage("style_adapter", config.epochs, false);
    model.params().set_trainable("", true);
    model.set_trained(true);
}

void train_movement_embedder(MovementEmbedder& model, const std::vector<MovementExample>& data, const EmbedderConfig& config,
                             RngStream rng, const EpochLogger& log)
{
    if (data.size() < 2) {
        throw DomainError("movement training needs at least two examples");
    }
    const int n = static_cast<int>(data.size());
    const auto get = [&](int i) -> const TensorF& { return data[static_cast<std::size_t>(i)].mel; };

    auto run_stage = [&](const std::string& stage, int epochs, bool pretrain) {
        nn::Adam<float> opt(model.params(), config.lr);
        for (int epoch = 0; epoch < epochs; ++epoch) {
            const std::vector<int> order = shuffled(n, rng);
            double total = 0.0;
            int batches = 0;
            for (int start = 0; start + 1 < n; start += config.batch) {
                const int end = std::min(n, start + config.batch);
                const std::span<const int> idx(order.data() + start, static_cast<std::size_t>(end - start));
                std::vector<const Eigen::VectorXf*> stats;
                for (int i : idx) {
                    stats.push_back(&data[static_cast<std::size_t>(i)].motion);
                }
                const Var<float> audio_side = model.embed_batch(stack_mels(idx, get), pretrain);
                const Var<float> motion_side = model.embed_motion(motion_input(stats));
                const Var<float> loss = contrastive_loss(audio_side, motion_side, config.temperature);
                require_finite(loss.item(), stage, epoch);
                model.params().zero_grad();
                nn::backward(loss);
                opt.step();
                total += loss.item();
                ++batches;
            }
            if (log) {
                log(stage, epoch, total / batches, opt.lr());
            }
        }
    };

    model.params().set_trainable("", true);
    model.params().set_trainable("adapter.", false);
    run_stage("movement_pretrain", config.pretrain_epochs, true);

    model.params().set_trainable("", false);
    model.params().set_trainable("adapter.", true);
    model.params().set_trainable("motion.", true);
    run_stage("movement_adapter", config.epochs, false);
    model.params().set_trainable("", true);
    model.set_trained(true);
}

MusicEmbedding encode_music(const AudioClip& clip, int n_frames, double fps, const StyleEmbedder& style,
                            const MovementEmbedder& movement, bool use_beats)
{
    MusicEmbedding e;
    e.e_c = style.embed(clip);
    e.e_w = movement.embed(clip);
    e.e_b = use_beats ? beat_features(audio::detect_beats(clip), n_frames, fps) : Eigen::VectorXf::Zero(n_frames + 1);
    if (!e.e_c.allFinite() || !e.e_w.allFinite()) {
        throw DomainError("music embedding is not finite");
    }
    return e;
}

}  // namespace beatflow::music
