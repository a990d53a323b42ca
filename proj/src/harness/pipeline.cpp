#include "beatflow/harness/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace beatflow::harness {

namespace {

constexpr int kMinAblationPairs = 20;

std::string command_for(const std::string& stage)
{
    if (stage == "corpus") {
        return "corpus";
    }
    if (stage == "stage1") {
        return "train-ae";
    }
    if (stage == "music") {
        return "train-music";
    }
    if (stage == "stage2") {
        return "train-diffusion";
    }
    if (stage == "stage2_nobeat") {
        return "train-diffusion --no-beat";
    }
    if (stage == "generated/nobeat") {
        return "generate --no-beat";
    }
    if (stage.starts_with("generated")) {
        return "generate";
    }
    return "evaluate";
}

std::string stage_dir(bool use_beat_info)
{
    return use_beat_info ? "stage2" : "stage2_nobeat";
}

/// Hash over every file below `dir` (relative path and blob hash, sorted),
/// skipping stage bookkeeping.
std::string tree_hash(const fs::path& dir)
{
    std::vector<std::string> lines;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) {
            continue;
        }
        const std::string name = entry.path().filename().string();
        if (name == "stage.json" || name == "log.jsonl") {
            continue;
        }
        lines.push_back(fs::relative(entry.path(), dir).generic_string() + " " + git_blob_hash_file(entry.path()));
    }
    std::sort(lines.begin(), lines.end());
    std::string manifest;
    for (const auto& l : lines) {
        manifest += l + "\n";
    }
    return git_blob_hash(manifest);
}

/// Appends (stage, epoch, loss, lr, elapsed) records, one JSON object per line.
class JsonlLog {
public:
    explicit JsonlLog(const fs::path& path)
        : out_(path, std::ios::trunc), start_(std::chrono::steady_clock::now())
    {
        if (!out_) {
            throw IoError("cannot write " + path.string());
        }
    }

    void write(Json record)
    {
        record["elapsed"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        out_ << record.dump() << '\n';
        out_.flush();
    }

    void epoch(const std::string& stage, int epoch, double loss, double lr)
    {
        write({{"stage", stage}, {"epoch", epoch}, {"loss", loss}, {"lr", lr}});
    }

private:
    std::ofstream out_;
    std::chrono::steady_clock::time_point start_;
};

/// Bookkeeping for one stage directory.
class Stage {
public:
    Stage(fs::path dir, std::string name, Json settings, Json inputs, std::string config_hash)
        : dir_(std::move(dir)), name_(std::move(name)), settings_(std::move(settings)), inputs_(std::move(inputs)),
          config_hash_(std::move(config_hash))
    {
        key_ = git_blob_hash(Json{{"stage", name_}, {"settings", settings_}, {"inputs", inputs_}}.dump());
    }

    [[nodiscard]] const fs::path& dir() const noexcept { return dir_; }

    /// The recorded stage.json when it matches the current key and its outputs are intact.
    [[nodiscard]] std::optional<Json> completed() const
    {
        const fs::path record = dir_ / "stage.json";
        if (!fs::exists(record)) {
            return std::nullopt;
        }
        Json j = load_json(record);
        if (j.value("key", "") != key_) {
            return std::nullopt;
        }
        for (const auto& [file, hash] : j.at("outputs").items()) {
            const fs::path p = dir_ / file;
            if (!fs::exists(p)) {
                return std::nullopt;
            }
            const std::string actual = fs::is_directory(p) ? tree_hash(p) : git_blob_hash_file(p);
            if (actual != hash.get<std::string>()) {
                return std::nullopt;
            }
        }
        return j;
    }

    void begin() const
    {
        fs::remove(dir_ / "stage.json");
        fs::create_directories(dir_);
    }

    Json finish(const std::vector<std::string>& outputs, const Json& summary) const
    {
        Json hashes = Json::object();
        for (const auto& file : outputs) {
            const fs::path p = dir_ / file;
            hashes[file] = fs::is_directory(p) ? tree_hash(p) : git_blob_hash_file(p);
        }
        const Json j{{"stage", name_},       {"key", key_},       {"config_hash", config_hash_}, {"settings", settings_},
                     {"inputs", inputs_},    {"outputs", hashes}, {"summary", summary}};
        save_json(j, dir_ / "stage.json");
        return j;
    }

private:
    fs::path dir_;
    std::string name_;
    Json settings_;
    Json inputs_;
    std::string config_hash_;
    std::string key_;
};

std::uint64_t derive_seed(std::uint64_t seed, const std::string& key)
{
    RngStream r = RngStream(seed).fork(key);
    return r.next_u64();
}

std::vector<VideoTensor> load_videos(const corpus::Corpus& c, const std::vector<corpus::SampleMeta>& metas)
{
    std::vector<VideoTensor> out;
    out.reserve(metas.size());
    for (const auto& m : metas) {
        out.push_back(c.load_video(m));
    }
    return out;
}

/// Test samples visited round-robin over tracks so a short list still covers every track.
std::vector<corpus::SampleMeta> generation_selection(const corpus::Corpus& c, int count)
{
    std::map<std::pair<int, int>, std::vector<corpus::SampleMeta>> by_track;
    for (const auto& m : c.split("test")) {
        by_track[{m.style_id, m.track_id}].push_back(m);
    }
    std::vector<corpus::SampleMeta> out;
    for (std::size_t round = 0; static_cast<int>(out.size()) < count; ++round) {
        bool any = false;
        for (const auto& [track, list] : by_track) {
            if (round < list.size() && static_cast<int>(out.size()) < count) {
                out.push_back(list[round]);
                any = true;
            }
        }
        if (!any) {
            break;
        }
    }
    return out;
}

std::optional<double> optional_score(const Json& row, const std::string& key)
{
    if (!row.contains(key) || row.at(key).is_null()) {
        return std::nullopt;
    }
    return row.at(key).get<double>();
}

nn::Checkpoint read_checkpoint(const fs::path& path, const std::string& stage)
{
    if (!fs::exists(path)) {
        throw MissingArtifactError(stage, "missing checkpoint " + path.string() + " from stage '" + stage +
                                              "'; run `beatflow " + command_for(stage) + "` first");
    }
    return nn::load_checkpoint(path);
}

void check_arch(const Json& header, const Json& arch, const fs::path& path)
{
    if (header.at("arch_hash").get<std::string>() != nn::arch_hash(arch)) {
        throw FormatError("checkpoint " + path.string() + " does not match the architecture it declares");
    }
}

}  // namespace

fs::path output_root(const fs::path& fallback)
{
    const char* env = std::getenv("BEATFLOW_OUTPUT_ROOT");
    return (env != nullptr && *env != '\0') ? fs::path(env) : fallback;
}

double sign_test_p(int wins, int losses)
{
    const int n = wins + losses;
    if (n == 0) {
        return 1.0;
    }
    // Sum of C(n, k) / 2^n for k >= wins, in log space.
    double p = 0.0;
    for (int k = wins; k <= n; ++k) {
        p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
    }
    return std::min(1.0, p);
}

Json PairedComparison::to_json() const
{
    return {{"pairs", pairs},   {"wins", wins},       {"losses", losses},   {"ties", ties},
            {"mean_a", mean_a}, {"mean_b", mean_b},   {"p_value", p_value}, {"test", "one-sided sign test"}};
}

PairedComparison compare_paired(const std::vector<std::optional<double>>& a, const std::vector<std::optional<double>>& b)
{
    if (a.size() != b.size()) {
        throw std::invalid_argument("paired score lists differ in length");
    }
    PairedComparison r;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i] || !b[i]) {
            continue;
        }
        ++r.pairs;
        r.mean_a += *a[i];
        r.mean_b += *b[i];
        if (*a[i] > *b[i]) {
            ++r.wins;
        } else if (*a[i] < *b[i]) {
            ++r.losses;
        } else {
            ++r.ties;
        }
    }
    if (r.pairs > 0) {
        r.mean_a /= r.pairs;
        r.mean_b /= r.pairs;
    }
    r.p_value = sign_test_p(r.wins, r.losses);
    return r;
}

synthesis::Models TrainedModels::view() const
{
    if (!autoencoder || !style || !movement || !denoiser) {
        throw std::logic_error("models are not loaded");
    }
    return {*autoencoder, *style, *movement, *denoiser, stats, schedule};
}

Pipeline::Pipeline(ExperimentConfig config, fs::path root, std::ostream* notices)
    : config_(std::move(config)), root_(std::move(root)), notices_(notices)
{
    config_.validate();
}

void Pipeline::notice(const std::string& text) const
{
    if (notices_ != nullptr) {
        *notices_ << text << std::endl;
    }
}

Json Pipeline::require_stage(const std::string& stage) const
{
    const fs::path record = root_ / stage / "stage.json";
    if (!fs::exists(record)) {
        throw MissingArtifactError(stage, "missing artifact " + record.string() + " from stage '" + stage +
                                              "'; run `beatflow " + command_for(stage) + "` first");
    }
    return load_json(record);
}

Json Pipeline::run_corpus()
{
    Json settings = config_.corpus.to_json();
    const Stage stage(root_ / "corpus", "corpus", settings, Json::object(), config_.hash());
    if (auto done = stage.completed()) {
        notice("corpus: up to date, nothing to do");
        return *done;
    }
    stage.begin();
    notice("corpus: generating " + std::to_string(config_.corpus.styles * config_.corpus.tracks_per_style *
                                                  config_.corpus.videos_per_track) +
           " videos");
    corpus::generate_corpus(config_.corpus, corpus_dir(), true);
    const corpus::Corpus c(corpus_dir());
    return stage.finish({"data"}, {{"samples", c.samples().size()},
                                   {"train", c.split("train").size()},
                                   {"test", c.split("test").size()}});
}

Json Pipeline::run_autoencoder()
{
    const Json corpus_stage = require_stage("corpus");
    Json settings = config_.to_json().at("autoencoder");
    settings["seed"] = config_.seed;
    const Json inputs{{"corpus", corpus_stage.at("outputs")}};
    const Stage stage(root_ / "stage1", "stage1", settings, inputs, config_.hash());
    if (auto done = stage.completed()) {
        notice("stage1: up to date, nothing to do");
        return *done;
    }
    stage.begin();
    const corpus::Corpus c(corpus_dir());
    const std::vector<VideoTensor> train = load_videos(c, c.split("train"));
    const std::vector<VideoTensor> test = load_videos(c, c.split("test"));

    flow::FlowAutoencoder<float> ae(derive_seed(config_.seed, "stage1.init"), config_.ae_width, config_.latent_channels);
    JsonlLog log(stage.dir() / "log.jsonl");
    double last = 0.0;
    flow::train_stage1(ae, train, config_.stage1, RngStream(config_.seed).fork("stage1.train"),
                       [&](const flow::Stage1Epoch& e) {
                           log.epoch("stage1", e.epoch, e.loss, e.lr);
                           last = e.loss;
                           notice("stage1: epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.loss));
                       });
    ae.set_trained(true);
    const double psnr = flow::autoencoder_psnr(ae, test);
    log.write({{"stage", "stage1"}, {"heldout_psnr_db", psnr}});
    notice("stage1: held-out PSNR " + std::to_string(psnr) + " dB");

    const Json header{{"kind", "autoencoder"},       {"arch", ae.arch()},    {"arch_hash", nn::arch_hash(ae.arch())},
                      {"config_hash", config_.hash()}, {"inputs", inputs}, {"heldout_psnr_db", psnr}};
    nn::save_checkpoint(stage.dir() / "autoencoder.bfck", header, ae.params());
    return stage.finish({"autoencoder.bfck"}, {{"heldout_psnr_db", psnr}, {"final_loss", last}});
}

Json Pipeline::run_music()
{
    const Json corpus_stage = require_stage("corpus");
    Json settings = config_.to_json().at("music");
    settings["seed"] = config_.seed;
    const Json inputs{{"corpus", corpus_stage.at("outputs")}};
    const Stage stage(root_ / "music", "music", settings, inputs, config_.hash());
    if (auto done = stage.completed()) {
        notice("music: up to date, nothing to do");
        return *done;
    }
    stage.begin();
    const corpus::Corpus c(corpus_dir());
    std::vector<music::StyleExample> style_data;
    std::vector<music::MovementExample> movement_data;
    for (const auto& m : c.split("train")) {
        TensorF mel = music::mel_input(c.music_context(m));
        style_data.push_back({mel, m.style_id});
        movement_data.push_back({std::move(mel), music::motion_statistics(c.load_video(m))});
    }

    JsonlLog log(stage.dir() / "log.jsonl");
    const music::EpochLogger logger = [&](const std::string& name, int epoch, double loss, double lr) {
        log.epoch(name, epoch, loss, lr);
    };
    music::StyleEmbedder style(config_.corpus.styles, derive_seed(config_.seed, "music.style.init"));
    music::train_style_embedder(style, style_data, config_.music, RngStream(config_.seed).fork("music.style.train"), logger);
    music::MovementEmbedder movement(derive_seed(config_.seed, "music.movement.init"));
    music::train_movement_embedder(movement, movement_data, config_.music,
                                   RngStream(config_.seed).fork("music.movement.train"), logger);

    // Held-out checks: style classification and top-3 retrieval of a clip's own
    // motion among 20 candidates.
    const std::vector<corpus::SampleMeta> test = c.split("test");
    int correct = 0;
    std::vector<Eigen::VectorXf> audio_side;
    std::vector<Eigen::VectorXf> motion_side;
    {
        nn::NoGradGuard guard;
        for (const auto& m : test) {
            const AudioClip clip = c.music_context(m);
            const Eigen::VectorXf e = style.embed(clip);
            const TensorF logits = style.logits(nn::Var<float>(TensorF({1, static_cast<int>(e.size())}, e))).value();
            Index arg = 0;
            logits.vec().maxCoeff(&arg);
            correct += static_cast<int>(arg) == m.style_id;
            audio_side.push_back(movement.embed(clip));
            motion_side.push_back(movement.embed_motion(c.load_video(m)));
        }
    }
    const int n = static_cast<int>(test.size());
    const int candidates = std::min(20, n);
    int top3 = 0;
    for (int i = 0; i < n; ++i) {
        const double own = audio_side[static_cast<std::size_t>(i)].dot(motion_side[static_cast<std::size_t>(i)]);
        int better = 0;
        for (int k = 1; k < candidates; ++k) {
            const int j = (i + 5 * k) % n;
            if (j != i && audio_side[static_cast<std::size_t>(i)].dot(motion_side[static_cast<std::size_t>(j)]) > own) {
                ++better;
            }
        }
        top3 += better < 3;
    }
    const double accuracy = n > 0 ? static_cast<double>(correct) / n : 0.0;
    const double retrieval = n > 0 ? static_cast<double>(top3) / n : 0.0;
    log.write({{"stage", "music"}, {"style_accuracy", accuracy}, {"movement_top3", retrieval}});
    notice("music: style accuracy " + std::to_string(accuracy) + ", movement top-3 retrieval " + std::to_string(retrieval));

    const Json common{{"config_hash", config_.hash()}, {"inputs", inputs}};
    Json style_header = common;
    style_header["kind"] = "style_embedder";
    style_header["arch"] = {{"module", "style_embedder"}, {"styles", style.styles()}, {"dim", music::kStyleDim}};
    style_header["arch_hash"] = nn::arch_hash(style_header["arch"]);
    nn::save_checkpoint(stage.dir() / "style.bfck", style_header, style.params());
    Json movement_header = common;
    movement_header["kind"] = "movement_embedder";
    movement_header["arch"] = {{"module", "movement_embedder"}, {"dim", music::kMovementDim}};
    movement_header["arch_hash"] = nn::arch_hash(movement_header["arch"]);
    nn::save_checkpoint(stage.dir() / "movement.bfck", movement_header, movement.params());
    return stage.finish({"style.bfck", "movement.bfck"}, {{"style_accuracy", accuracy}, {"movement_top3", retrieval}});
}

Json Pipeline::run_diffusion(bool use_beat_info)
{
    const Json corpus_stage = require_stage("corpus");
    const Json ae_stage = require_stage("stage1");
    const Json music_stage = require_stage("music");
    const std::string name = stage_dir(use_beat_info);
    Json settings = config_.to_json().at("diffusion");
    settings["seed"] = config_.seed;
    settings["use_beat_info"] = use_beat_info;
    settings["music_context"] = config_.music_context;
    const Json inputs{{"corpus", corpus_stage.at("outputs")},
                      {"stage1", ae_stage.at("outputs")},
                      {"music", music_stage.at("outputs")}};
    const Stage stage(root_ / name, name, settings, inputs, config_.hash());
    if (auto done = stage.completed()) {
        notice(name + ": up to date, nothing to do");
        return *done;
    }
    stage.begin();

    TrainedModels m = load_models(use_beat_info);
    const corpus::Corpus c(corpus_dir());
    const synthesis::GenerateOptions options{config_.corpus.fps, use_beat_info, config_.music_context,
                                             config_.threshold_quantile};
    const diffusion::DenoiserConfig dc = config_.denoiser();

    auto targets = [&](const std::vector<corpus::SampleMeta>& metas) {
        std::vector<std::pair<diffusion::TargetVolume, Eigen::VectorXf>> out;
        for (const auto& meta : metas) {
            diffusion::TargetVolume tv = diffusion::build_target_volume(c.load_video(meta), *m.autoencoder);
            const AudioClip clip = c.music_context(meta);
            const auto want = static_cast<Index>(std::llround(options.music_context * clip.sample_rate()));
            const AudioClip context = clip.length() > want ? clip.segment(0, want) : clip;
            Eigen::VectorXf e = music::encode_music(context, config_.n_frames, options.fps, *m.style, *m.movement,
                                                    use_beat_info)
                                    .concat();
            out.emplace_back(std::move(tv), std::move(e));
        }
        return out;
    };
    notice(name + ": building flow volumes");
    const auto train_targets = targets(c.split("train"));
    const auto test_targets = targets(c.split("test"));
    std::vector<diffusion::FlowVolume> volumes;
    for (const auto& [tv, e] : train_targets) {
        volumes.push_back(tv.a0);
    }
    const diffusion::VolumeStats stats = diffusion::VolumeStats::fit(volumes, config_.threshold_quantile);
    auto items = [&](const auto& list) {
        std::vector<diffusion::TrainingItem> out;
        for (const auto& [tv, e] : list) {
            out.push_back({stats.normalize(tv.a0.values), tv.z0, e});
        }
        return out;
    };
    const std::vector<diffusion::TrainingItem> train_items = items(train_targets);
    const std::vector<diffusion::TrainingItem> test_items = items(test_targets);

    // Both arms share the initial weights and the training stream.
    diffusion::Denoiser<float> model(dc, derive_seed(config_.seed, "stage2.init"));
    const diffusion::NoiseSchedule schedule = diffusion::cosine_schedule(config_.stage2.steps);
    JsonlLog log(stage.dir() / "log.jsonl");
    double last = 0.0;
    diffusion::train_stage2(model, train_items, schedule, config_.stage2, RngStream(config_.seed).fork("stage2.train"),
                            [&](const diffusion::Stage2Epoch& e) {
                                log.epoch(name, e.epoch, e.loss, e.lr);
                                last = e.loss;
                                notice(name + ": epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.loss));
                            });
    const double val = diffusion::validation_loss(model, test_items, schedule, derive_seed(config_.seed, "stage2.validation"));
    log.write({{"stage", name}, {"validation_loss", val}});
    notice(name + ": validation loss " + std::to_string(val));

    const Json arch = dc.to_json();
    const Json header{{"kind", "denoiser"},
                      {"arch", arch},
                      {"arch_hash", nn::arch_hash(arch)},
                      {"config_hash", config_.hash()},
                      {"inputs", inputs},
                      {"T", schedule.T},
                      {"schedule", "cosine"},
                      {"threshold_quantile", config_.threshold_quantile},
                      {"stats", stats.to_json()},
                      {"cond_dims", {{"style", music::kStyleDim}, {"movement", music::kMovementDim},
                                     {"beat", config_.n_frames + 1}}},
                      {"N", dc.frames},
                      {"use_beat_info", use_beat_info},
                      {"validation_loss", val}};
    nn::save_checkpoint(stage.dir() / "denoiser.bfck", header, model.params());
    return stage.finish({"denoiser.bfck"}, {{"validation_loss", val}, {"final_loss", last}});
}

TrainedModels Pipeline::load_models(bool use_beat_info) const
{
    TrainedModels m;
    {
        const fs::path path = root_ / "stage1" / "autoencoder.bfck";
        const nn::Checkpoint ck = read_checkpoint(path, "stage1");
        const Json& arch = ck.header.at("arch");
        m.autoencoder = std::make_unique<flow::FlowAutoencoder<float>>(0, arch.at("width").get<double>(),
                                                                       arch.at("latent_channels").get<int>());
        check_arch(ck.header, m.autoencoder->arch(), path);
        m.autoencoder->params().load(ck.tensors);
        m.autoencoder->set_trained(true);
        m.hashes["stage1"] = git_blob_hash_file(path);
    }
    {
        const fs::path path = root_ / "music" / "style.bfck";
        const nn::Checkpoint ck = read_checkpoint(path, "music");
        m.style = std::make_unique<music::StyleEmbedder>(ck.header.at("arch").at("styles").get<int>(), 0);
        m.style->params().load(ck.tensors);
        m.style->set_trained(true);
        m.hashes["music.style"] = git_blob_hash_file(path);
    }
    {
        const fs::path path = root_ / "music" / "movement.bfck";
        const nn::Checkpoint ck = read_checkpoint(path, "music");
        m.movement = std::make_unique<music::MovementEmbedder>(0);
        m.movement->params().load(ck.tensors);
        m.movement->set_trained(true);
        m.hashes["music.movement"] = git_blob_hash_file(path);
    }
    const std::string name = stage_dir(use_beat_info);
    const fs::path path = root_ / name / "denoiser.bfck";
    if (!fs::exists(path)) {
        // Generation needs every stage; training stage 2 only the first three.
        return m;
    }
    const nn::Checkpoint ck = read_checkpoint(path, name);
    const diffusion::DenoiserConfig dc = diffusion::DenoiserConfig::from_json(ck.header.at("arch"));
    check_arch(ck.header, dc.to_json(), path);
    m.denoiser = std::make_unique<diffusion::Denoiser<float>>(dc, 0);
    m.denoiser->params().load(ck.tensors);
    m.denoiser->set_trained(true);
    m.stats = diffusion::VolumeStats::from_json(ck.header.at("stats"));
    m.schedule = diffusion::cosine_schedule(ck.header.at("T").get<int>());
    m.hashes[name] = git_blob_hash_file(path);
    return m;
}

Json Pipeline::run_generate(bool use_beat_info)
{
    const std::string arm = arm_name(use_beat_info);
    const std::string model_stage = stage_dir(use_beat_info);
    const Json corpus_stage = require_stage("corpus");
    const Json ae_stage = require_stage("stage1");
    const Json music_stage = require_stage("music");
    const Json diffusion_stage = require_stage(model_stage);
    const Json settings{{"count", config_.generations},
                        {"seed", config_.seed},
                        {"music_context", config_.music_context},
                        {"threshold_quantile", config_.threshold_quantile},
                        {"use_beat_info", use_beat_info}};
    const Json inputs{{"corpus", corpus_stage.at("outputs")},
                      {"stage1", ae_stage.at("outputs")},
                      {"music", music_stage.at("outputs")},
                      {model_stage, diffusion_stage.at("outputs")}};
    const std::string name = "generated/" + arm;
    const Stage stage(root_ / "generated" / arm, name, settings, inputs, config_.hash());
    if (auto done = stage.completed()) {
        notice(name + ": up to date, nothing to do");
        return *done;
    }
    stage.begin();
    fs::remove_all(stage.dir() / "samples");

    const TrainedModels m = load_models(use_beat_info);
    if (!m.denoiser) {
        throw MissingArtifactError(model_stage, "missing checkpoint " + (root_ / model_stage / "denoiser.bfck").string());
    }
    const synthesis::Models models = m.view();
    const corpus::Corpus c(corpus_dir());
    const std::vector<corpus::SampleMeta> selection = generation_selection(c, config_.generations);
    if (static_cast<int>(selection.size()) < config_.generations) {
        notice(name + ": only " + std::to_string(selection.size()) + " test videos available");
    }
    const synthesis::GenerateOptions options{config_.corpus.fps, use_beat_info, config_.music_context,
                                             config_.threshold_quantile};
    Json index = Json::array();
    for (const auto& meta : selection) {
        // Seeds depend on the sample only, so the arms are paired.
        const std::uint64_t seed = derive_seed(config_.seed, "generate." + meta.id);
        const corpus::CorpusSample sample = c.load(meta);
        const VideoTensor video =
            synthesis::generate_dance_video(sample.video.frame(0), c.music_context(meta), models, options, seed);
        synthesis::export_result(video, sample.audio, stage.dir() / "samples" / meta.id, {seed, m.hashes});
        index.push_back({{"id", meta.id}, {"seed", seed}});
        notice(name + ": " + meta.id + " (" + std::to_string(index.size()) + "/" + std::to_string(selection.size()) + ")");
    }
    save_json({{"arm", arm}, {"samples", index}, {"model_hashes", m.hashes}, {"config_hash", config_.hash()}},
              stage.dir() / "index.json");
    return stage.finish({"samples", "index.json"}, {{"count", index.size()}});
}

Json Pipeline::evaluate_directory(const fs::path& generated, const fs::path& corpus_root) const
{
    const fs::path index_path = generated / "index.json";
    if (!fs::exists(index_path)) {
        throw MissingArtifactError("generate", "missing " + index_path.string() + "; run `beatflow generate` first");
    }
    const Json index = load_json(index_path);
    const corpus::Corpus c(corpus_root);
    std::map<std::string, corpus::SampleMeta> by_id;
    for (const auto& meta : c.samples()) {
        by_id[meta.id] = meta;
    }
    std::vector<metrics::EvalItem> items;
    std::vector<metrics::EvalItem> truth;
    for (const Json& entry : index.at("samples")) {
        const std::string id = entry.at("id").get<std::string>();
        const auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw std::invalid_argument("generated sample " + id + " is not in corpus " + corpus_root.string());
        }
        const corpus::SampleMeta& meta = it->second;
        const corpus::CorpusSample sample = c.load(meta);
        const VideoTensor video = load_video_frames(generated / "samples" / id / "frames", meta.fps);
        items.push_back({id, meta.style_id, video, sample.video, sample.audio, meta.beat_times});
        truth.push_back({id, meta.style_id, sample.video, sample.video, sample.audio, meta.beat_times});
    }
    const Json gen = metrics::evaluate_suite(items, config_.metrics);
    const Json gt = metrics::evaluate_suite(truth, config_.metrics);
    const Json& gen_mm = gen.at("aggregates").at("overall").at("mm_align_2d");
    const Json& gt_mm = gt.at("aggregates").at("overall").at("mm_align_2d");
    const Json ratio = (gen_mm.is_number() && gt_mm.is_number() && gt_mm.get<double>() > 0.0)
                           ? Json(gen_mm.get<double>() / gt_mm.get<double>())
                           : Json(nullptr);
    return {{"generated", gen}, {"ground_truth", gt}, {"mm_align_ratio", ratio}, {"config", gen.at("config")}};
}

Json Pipeline::run_evaluate(bool use_beat_info)
{
    const std::string arm = arm_name(use_beat_info);
    const Json gen_stage = require_stage("generated/" + arm);
    const Json settings = config_.to_json().at("metrics");
    const Json inputs{{"generated/" + arm, gen_stage.at("outputs")}};
    const std::string name = "eval/" + arm;
    const Stage stage(root_ / "eval" / arm, name, settings, inputs, config_.hash());
    if (auto done = stage.completed()) {
        notice(name + ": up to date, nothing to do");
        return *done;
    }
    stage.begin();
    Json report = evaluate_directory(root_ / "generated" / arm, corpus_dir());
    report["config_hash"] = config_.hash();
    report["inputs"] = inputs;
    save_json(report, stage.dir() / "report.json");
    const Json& overall = report.at("generated").at("aggregates").at("overall");
    const Json summary{{"mm_align_2d", overall.at("mm_align_2d")},
                       {"av_align", overall.at("av_align")},
                       {"ssim", overall.at("ssim")},
                       {"psnr", overall.at("psnr")},
                       {"ground_truth_mm_align_2d", report.at("ground_truth").at("aggregates").at("overall").at("mm_align_2d")},
                       {"mm_align_ratio", report.at("mm_align_ratio")}};
    notice(name + ": " + summary.dump());
    return stage.finish({"report.json"}, summary);
}

Json Pipeline::run_all()
{
    run_corpus();
    run_autoencoder();
    run_music();
    run_diffusion(config_.use_beat_info);
    run_generate(config_.use_beat_info);
    return run_evaluate(config_.use_beat_info);
}

Json Pipeline::ablate_beat()
{
    if (config_.generations < kMinAblationPairs) {
        throw ConfigError("the beat ablation needs at least " + std::to_string(kMinAblationPairs) +
                          " paired generations, generation.count is " + std::to_string(config_.generations));
    }
    run_corpus();
    run_autoencoder();
    run_music();
    for (const bool arm : {true, false}) {
        run_diffusion(arm);
        run_generate(arm);
        run_evaluate(arm);
    }
    const Json with = load_json(root_ / "eval" / "beat" / "report.json");
    const Json without = load_json(root_ / "eval" / "nobeat" / "report.json");
    const Json& rows_with = with.at("generated").at("per_sample");
    const Json& rows_without = without.at("generated").at("per_sample");
    if (rows_with.size() != rows_without.size()) {
        throw std::logic_error("beat ablation arms differ in sample count");
    }
    std::vector<std::optional<double>> mm_a, mm_b, av_a, av_b;
    for (std::size_t i = 0; i < rows_with.size(); ++i) {
        if (rows_with[i].at("id") != rows_without[i].at("id")) {
            throw std::logic_error("beat ablation arms are not paired");
        }
        mm_a.push_back(optional_score(rows_with[i], "mm_align_2d"));
        mm_b.push_back(optional_score(rows_without[i], "mm_align_2d"));
        av_a.push_back(optional_score(rows_with[i], "av_align"));
        av_b.push_back(optional_score(rows_without[i], "av_align"));
    }
    const PairedComparison mm = compare_paired(mm_a, mm_b);
    const PairedComparison av = compare_paired(av_a, av_b);

    // Cross-conditioning probe: each with-beat generation scored against the
    // beats of its own track and of the next selected sample from another track.
    const corpus::Corpus c(corpus_dir());
    std::map<std::string, corpus::SampleMeta> by_id;
    for (const auto& meta : c.samples()) {
        by_id[meta.id] = meta;
    }
    std::vector<corpus::SampleMeta> metas;
    for (const Json& row : rows_with) {
        metas.push_back(by_id.at(row.at("id").get<std::string>()));
    }
    std::vector<std::optional<double>> own, swapped;
    Json probe_rows = Json::array();
    for (std::size_t i = 0; i < metas.size(); ++i) {
        std::size_t j = (i + 1) % metas.size();
        while (j != i && metas[j].track_id == metas[i].track_id && metas[j].style_id == metas[i].style_id) {
            j = (j + 1) % metas.size();
        }
        const VideoTensor video = load_video_frames(root_ / "generated" / "beat" / "samples" / metas[i].id / "frames", metas[i].fps);
        const metrics::BeatSequence kin = metrics::video_kinematic_beats(video, config_.metrics.prominence);
        auto score = [&](const corpus::SampleMeta& m) -> std::optional<double> {
            try {
                return metrics::mm_align_2d(kin, metrics::to_frames(m.beat_times, video.fps()), config_.metrics.sigma);
            } catch (const metrics::UndefinedScore&) {
                return std::nullopt;
            }
        };
        own.push_back(score(metas[i]));
        swapped.push_back(score(metas[j]));
        probe_rows.push_back({{"id", metas[i].id},
                              {"swapped_with", metas[j].id},
                              {"own", own.back() ? Json(*own.back()) : Json(nullptr)},
                              {"swapped", swapped.back() ? Json(*swapped.back()) : Json(nullptr)}});
    }
    const PairedComparison probe = compare_paired(own, swapped);

    const bool enough = mm.pairs >= kMinAblationPairs && av.pairs >= kMinAblationPairs;
    const Json report{
        {"axis", "beat"},
        {"config_hash", config_.hash()},
        {"arms", {{"a", "beat"}, {"b", "nobeat"}, {"difference", "e_b zeroed in training and generation"}}},
        {"mm_align_2d", mm.to_json()},
        {"av_align", av.to_json()},
        {"probe", {{"comparison", probe.to_json()}, {"own_above_swapped_on_average", probe.mean_a > probe.mean_b},
                   {"rows", probe_rows}}},
        {"enough_pairs", enough},
        {"directional", {{"mm_align_2d", mm.mean_a > mm.mean_b && mm.p_value < 0.05},
                         {"av_align", av.mean_a > av.mean_b && av.p_value < 0.05}}},
    };
    fs::create_directories(root_ / "eval");
    save_json(report, root_ / "eval" / "ablation_beat.json");
    if (!enough) {
        throw std::runtime_error("beat ablation: fewer than " + std::to_string(kMinAblationPairs) +
                                 " paired generations with defined scores");
    }
    return report;
}

Json Pipeline::ablate_length()
{
    ExperimentConfig long_config = config_;
    const int frames = config_.ablation_long_frames;
    const double seconds = frames / config_.corpus.fps;
    long_config.n_frames = frames;
    long_config.corpus.n_frames = frames;
    long_config.corpus.context_duration = std::max(config_.corpus.context_duration, seconds);
    long_config.music_context = std::max(config_.music_context, seconds);
    long_config.corpus.track_duration =
        std::max(config_.corpus.track_duration, long_config.corpus.context_duration + 2.0 * seconds);
    long_config.ablation_long_frames = frames + 1;

    const Json short_eval = run_all();
    Pipeline long_arm(long_config, root_ / ("length_" + std::to_string(frames)), notices_);
    const Json long_eval = long_arm.run_all();

    const Json short_report = load_json(root_ / "eval" / arm_name(config_.use_beat_info) / "report.json");
    const Json long_report = load_json(long_arm.root() / "eval" / arm_name(config_.use_beat_info) / "report.json");
    std::map<std::string, Json> short_rows;
    for (const Json& row : short_report.at("generated").at("per_sample")) {
        short_rows[row.at("id").get<std::string>()] = row;
    }
    std::vector<std::optional<double>> a, b;
    for (const Json& row : long_report.at("generated").at("per_sample")) {
        const auto it = short_rows.find(row.at("id").get<std::string>());
        if (it == short_rows.end()) {
            continue;
        }
        a.push_back(optional_score(row, "mm_align_2d"));
        b.push_back(optional_score(it->second, "mm_align_2d"));
    }
    const PairedComparison mm = compare_paired(a, b);
    const Json report{{"axis", "length"},
                      {"config_hash", config_.hash()},
                      {"arms", {{"a", frames}, {"b", config_.n_frames}}},
                      {"mm_align_2d", mm.to_json()},
                      {"long_not_below_short", mm.mean_a >= mm.mean_b},
                      {"short", short_eval.at("summary")},
                      {"long", long_eval.at("summary")}};
    fs::create_directories(root_ / "eval");
    save_json(report, root_ / "eval" / "ablation_length.json");
    return report;
}

}  // namespace beatflow::harness
