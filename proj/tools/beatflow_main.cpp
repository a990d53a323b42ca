#include "beatflow/audio/analysis.hpp"
#include "beatflow/harness/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace beatflow;
using namespace beatflow::harness;

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kMissingArtifact = 2, kNumeric = 3 };

ExperimentConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides)
{
    ExperimentConfig config = path.empty() ? preset("desk") : load_config(path);
    for (const std::string& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + o + "'");
        }
        Json value;
        try {
            value = Json::parse(o.substr(eq + 1));
        } catch (const Json::parse_error&) {
            throw ConfigError("--set " + o + ": value is not a number, bool, quoted string or array");
        }
        set_option(config, o.substr(0, eq), value);
    }
    return config;
}

int fail(const std::string& text, int code)
{
    std::cerr << "error: " << text << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"beatflow: music-conditioned dance video synthesis"};
    app.require_subcommand(1);
    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("-c,--config", config_path, "Config file (flat key = value; default: desk preset)");
    app.add_option("--set", overrides, "Override a config key, e.g. --set diffusion.epochs=10");
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress notices");

    auto* corpus_cmd = app.add_subcommand("corpus", "Generate the synthetic corpus");
    auto* ae_cmd = app.add_subcommand("train-ae", "Train stage 1 (flow autoencoder)");
    auto* music_cmd = app.add_subcommand("train-music", "Train the style and movement music encoders");

    auto* diff_cmd = app.add_subcommand("train-diffusion", "Train stage 2 (flow diffusion)");
    bool diff_no_beat = false;
    diff_cmd->add_flag("--no-beat", diff_no_beat, "Zero the beat embedding (ablation arm)");

    auto* gen_cmd = app.add_subcommand("generate", "Generate videos for the test set, or one video from --image/--wav");
    bool gen_no_beat = false;
    std::string gen_image;
    std::string gen_wav;
    std::string gen_out;
    std::uint64_t gen_seed = 0;
    gen_cmd->add_flag("--no-beat", gen_no_beat, "Use the arm trained without beat information");
    auto* image_opt = gen_cmd->add_option("--image", gen_image, "Reference frame (PNG)")->check(CLI::ExistingFile);
    auto* wav_opt = gen_cmd->add_option("--wav", gen_wav, "Music (16-bit mono WAV)")->check(CLI::ExistingFile);
    auto* out_opt = gen_cmd->add_option("--out", gen_out, "Export directory");
    gen_cmd->add_option("--seed", gen_seed, "Sampling seed");
    image_opt->needs(wav_opt)->needs(out_opt);
    wav_opt->needs(image_opt);

    auto* eval_cmd = app.add_subcommand("evaluate", "Score generations against the corpus");
    bool eval_no_beat = false;
    std::string eval_generated;
    std::string eval_corpus;
    std::string eval_out;
    eval_cmd->add_flag("--no-beat", eval_no_beat, "Evaluate the arm trained without beat information");
    auto* eval_gen_opt = eval_cmd->add_option("--generated", eval_generated, "Generation directory (with index.json)");
    eval_cmd->add_option("--corpus", eval_corpus, "Corpus directory")->needs(eval_gen_opt);
    eval_cmd->add_option("--out", eval_out, "Report path for --generated")->needs(eval_gen_opt);

    auto* ablate_cmd = app.add_subcommand("ablate", "Run an ablation: beat or length");
    std::string axis;
    ablate_cmd->add_option("--axis", axis, "beat | length")->required()->check(CLI::IsMember({"beat", "length"}));

    auto* beats_cmd = app.add_subcommand("beats", "Estimate tempo and beat times of a WAV file");
    std::string beats_wav;
    beats_cmd->add_option("wav", beats_wav, "Input WAV")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (beats_cmd->parsed()) {
            const BeatGrid grid = audio::detect_beats(load_audio(beats_wav));
            std::cout << Json{{"tempo_bpm", grid.tempo_bpm}, {"beat_times", grid.beat_times}}.dump(2) << '\n';
            return kOk;
        }

        const ExperimentConfig config = resolve_config(config_path, overrides);
        const fs::path root = output_root(fs::path("runs") / config.preset);
        Pipeline pipeline(config, root, quiet ? nullptr : &std::cerr);
        Json result;
        if (corpus_cmd->parsed()) {
            result = pipeline.run_corpus();
        } else if (ae_cmd->parsed()) {
            result = pipeline.run_autoencoder();
        } else if (music_cmd->parsed()) {
            result = pipeline.run_music();
        } else if (diff_cmd->parsed()) {
            result = pipeline.run_diffusion(!diff_no_beat);
        } else if (gen_cmd->parsed()) {
            if (gen_image.empty()) {
                result = pipeline.run_generate(!gen_no_beat);
            } else {
                const TrainedModels models = pipeline.load_models(!gen_no_beat);
                if (!models.denoiser) {
                    throw MissingArtifactError(gen_no_beat ? "stage2_nobeat" : "stage2",
                                               "missing stage 2 checkpoint; run `beatflow train-diffusion` first");
                }
                const synthesis::GenerateOptions options{config.corpus.fps, !gen_no_beat, config.music_context,
                                                         config.threshold_quantile};
                const AudioClip music = load_audio(gen_wav);
                const VideoTensor video =
                    synthesis::generate_dance_video(load_png(gen_image), music, models.view(), options, gen_seed);
                synthesis::export_result(video, music, gen_out, {gen_seed, models.hashes});
                result = {{"out", gen_out}, {"frames", video.frames()}, {"seed", gen_seed}};
            }
        } else if (eval_cmd->parsed()) {
            if (eval_generated.empty()) {
                result = pipeline.run_evaluate(!eval_no_beat);
            } else {
                result = pipeline.evaluate_directory(eval_generated,
                                                     eval_corpus.empty() ? pipeline.corpus_dir() : fs::path(eval_corpus));
                save_json(result, eval_out.empty() ? fs::path(eval_generated) / "report.json" : fs::path(eval_out));
                result = result.at("generated").at("aggregates").at("overall");
            }
        } else if (ablate_cmd->parsed()) {
            result = axis == "beat" ? pipeline.ablate_beat() : pipeline.ablate_length();
            result.erase("probe");
        }
        if (result.contains("summary")) {
            result = result.at("summary");
        }
        std::cout << result.dump(2) << '\n';
        return kOk;
    } catch (const MissingArtifactError& e) {
        return fail(e.what(), kMissingArtifact);
    } catch (const UntrainedError& e) {
        return fail(e.what(), kMissingArtifact);
    } catch (const NumericError& e) {
        return fail(e.what(), kNumeric);
    } catch (const std::exception& e) {
        return fail(e.what(), kValidation);
    }
}
