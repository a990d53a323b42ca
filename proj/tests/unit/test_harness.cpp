#include "doctest.h"

#include "beatflow/harness/pipeline.hpp"

#include <cmath>
#include <sstream>

using namespace beatflow;
using namespace beatflow::harness;

namespace {

fs::path source_dir()
{
    return fs::path(__FILE__).parent_path().parent_path().parent_path();
}

ExperimentConfig tiny_config()
{
    return parse_config(R"(
preset = "desk"
corpus.styles = 2
corpus.tracks_per_style = 5
corpus.videos_per_track = 2
autoencoder.epochs = 1
autoencoder.width = 0.25
music.epochs = 1
music.pretrain_epochs = 1
diffusion.epochs = 1
diffusion.steps = 8
diffusion.channels = [8, 8, 8, 8, 8]
generation.count = 2
)");
}

}  // namespace

TEST_CASE("config parsing: comments, presets and overrides")
{
    const ExperimentConfig c = parse_config(R"(
# comment line
seed = 7   # trailing comment
autoencoder.lr_milestones = [1, 2]
corpus.styles = 3
preset = "paper"
)");
    CHECK(c.preset == "paper");
    CHECK(c.seed == 7);
    CHECK(c.corpus.seed == 7);
    CHECK(c.corpus.styles == 3);
    CHECK(c.stage1.lr_milestones == std::vector<int>{1, 2});
    CHECK(c.stage1.batch == 100);
    CHECK(c.n_frames == 40);
    CHECK(c.denoiser().frames == 39);
    CHECK(c.denoiser().height == 32);
    CHECK(c.denoiser().cond_dim == music::kStyleDim + music::kMovementDim + 41);

    CHECK_THROWS_AS(parse_config("nonsense.key = 1"), ConfigError);
    CHECK_THROWS_AS(parse_config("seed = \"seven\""), ConfigError);
    CHECK_THROWS_AS(parse_config("autoencoder.epochs = 1.5"), ConfigError);
    CHECK_THROWS_AS(parse_config("seed 7"), ConfigError);
    CHECK_THROWS_AS(parse_config("preset = \"huge\""), ConfigError);
    CHECK_THROWS_AS(parse_config("corpus.styles = 9"), ConfigError);
    // Integers are accepted where floats are expected.
    CHECK(parse_config("autoencoder.lr = 1").stage1.lr == 1.0);
}

TEST_CASE("preset files match the built-in presets")
{
    for (const std::string name : {"desk", "paper"}) {
        const ExperimentConfig file = load_config(source_dir() / "configs" / (name + ".toml"));
        CHECK(file.to_json() == preset(name).to_json());
        CHECK(parse_config(format_config(file)).hash() == file.hash());
    }
    CHECK(preset("desk").hash() != preset("paper").hash());
}

TEST_CASE("sign test and paired comparison")
{
    CHECK(sign_test_p(15, 5) == doctest::Approx(0.020695).epsilon(1e-4));
    CHECK(sign_test_p(14, 6) == doctest::Approx(0.057659).epsilon(1e-4));
    CHECK(sign_test_p(0, 0) == 1.0);
    CHECK(sign_test_p(0, 10) == doctest::Approx(1.0));
    const PairedComparison r = compare_paired({1.0, 2.0, std::nullopt, 3.0, 1.0}, {0.5, 2.5, 1.0, 1.0, 1.0});
    CHECK(r.pairs == 4);
    CHECK(r.wins == 2);
    CHECK(r.losses == 1);
    CHECK(r.ties == 1);
    CHECK(r.mean_a == doctest::Approx(1.75));
    CHECK(r.mean_b == doctest::Approx(1.25));
    CHECK_THROWS_AS(compare_paired({1.0}, {}), std::invalid_argument);
}

TEST_CASE("pipeline stages: ordering, idempotence and provenance")
{
    const fs::path root = fs::temp_directory_path() / "beatflow_test_pipeline";
    fs::remove_all(root);
    const ExperimentConfig config = tiny_config();
    Pipeline p(config, root);

    CHECK_THROWS_AS(p.run_autoencoder(), MissingArtifactError);
    try {
        (void)p.run_music();
    } catch (const MissingArtifactError& e) {
        CHECK(e.stage() == "corpus");
    }
    (void)p.run_corpus();
    CHECK_THROWS_AS(p.run_diffusion(true), MissingArtifactError);
    const Json ae = p.run_autoencoder();
    CHECK(ae.at("config_hash") == config.hash());
    const std::string ckpt = read_file(root / "stage1" / "autoencoder.bfck");
    CHECK(p.run_autoencoder() == ae);
    CHECK(read_file(root / "stage1" / "autoencoder.bfck") == ckpt);

    (void)p.run_music();
    (void)p.run_diffusion(true);
    const nn::Checkpoint ck = nn::load_checkpoint(root / "stage2" / "denoiser.bfck");
    CHECK(ck.header.at("T") == 8);
    CHECK(ck.header.at("N") == config.n_frames - 1);
    CHECK(ck.header.at("config_hash") == config.hash());
    CHECK(ck.header.at("inputs").at("stage1").at("autoencoder.bfck") == git_blob_hash(ckpt));

    // Every epoch line carries the configured learning rate.
    std::stringstream log(read_file(root / "stage1" / "log.jsonl"));
    std::string line;
    int epochs = 0;
    while (std::getline(log, line)) {
        const Json j = Json::parse(line);
        if (j.contains("epoch")) {
            ++epochs;
            CHECK(j.at("lr").get<double>() == doctest::Approx(config.stage1.lr));
        }
    }
    CHECK(epochs == config.stage1.epochs);

    const Json gen = p.run_generate(true);
    CHECK(gen.at("summary").at("count") == 2);
    const Json index = load_json(root / "generated" / "beat" / "index.json");
    const std::string first = index.at("samples")[0].at("id").get<std::string>();
    const VideoTensor v = load_video_frames(root / "generated" / "beat" / "samples" / first / "frames", 20.0);
    CHECK(v.frames() == config.n_frames);
    CHECK(load_json(root / "generated" / "beat" / "samples" / first / "meta.json").at("model_hashes").contains("stage2"));

    const Json eval = p.run_evaluate(true);
    const Json report = load_json(root / "eval" / "beat" / "report.json");
    CHECK(report.at("config").at("sigma") == config.metrics.sigma);
    CHECK(report.at("config").at("av_window_frames") == config.metrics.av_window);
    for (const Json& row : report.at("ground_truth").at("per_sample")) {
        CHECK(row.at("ssim").get<double>() == doctest::Approx(1.0));
        CHECK(row.at("psnr") == "exact");
    }
    CHECK(p.run_evaluate(true) == eval);

    // A changed stage setting reruns that stage only.
    ExperimentConfig changed = config;
    changed.stage2.epochs = 2;
    Pipeline q(changed, root);
    CHECK(q.run_autoencoder().at("key") == ae.at("key"));
    CHECK(q.run_diffusion(true).at("settings").at("epochs") == 2);
    CHECK_THROWS_AS(q.run_generate(false), MissingArtifactError);
    CHECK_THROWS_AS(q.ablate_beat(), ConfigError);
}
