#pragma once

#include "beatflow/harness/config.hpp"
#include "beatflow/synthesis/synthesis.hpp"

#include <iosfwd>
#include <memory>

namespace beatflow::harness {

/// A stage ran before the artifacts it depends on exist.
class MissingArtifactError : public std::runtime_error {
public:
    MissingArtifactError(std::string stage, const std::string& what)
        : std::runtime_error(what), stage_(std::move(stage))
    {
    }
    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// Output root: $BEATFLOW_OUTPUT_ROOT if set, otherwise `fallback`.
fs::path output_root(const fs::path& fallback = "runs");

/// One-sided exact sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
double sign_test_p(int wins, int losses);

/// Paired comparison of two score lists; null entries drop the pair.
struct PairedComparison {
    int pairs = 0;
    int wins = 0;
    int losses = 0;
    int ties = 0;
    double mean_a = 0.0;
    double mean_b = 0.0;
    double p_value = 1.0;

    [[nodiscard]] Json to_json() const;
};
PairedComparison compare_paired(const std::vector<std::optional<double>>& a, const std::vector<std::optional<double>>& b);

/// Loaded checkpoints of one conditioning arm.
struct TrainedModels {
    std::unique_ptr<flow::FlowAutoencoder<float>> autoencoder;
    std::unique_ptr<music::StyleEmbedder> style;
    std::unique_ptr<music::MovementEmbedder> movement;
    std::unique_ptr<diffusion::Denoiser<float>> denoiser;
    diffusion::VolumeStats stats;
    diffusion::NoiseSchedule schedule;
    std::map<std::string, std::string> hashes;

    [[nodiscard]] synthesis::Models view() const;
};

/// Stage runner over one output root:
///   corpus/ stage1/ music/ stage2/ stage2_nobeat/ generated/<arm>/ eval/<arm>/
/// Every stage writes stage.json with the config hash, a key over its
/// settings and input hashes, and the hashes of its outputs. A stage whose
/// stage.json matches the current key is skipped with a notice.
class Pipeline {
public:
    Pipeline(ExperimentConfig config, fs::path root, std::ostream* notices = nullptr);

    [[nodiscard]] const ExperimentConfig& config() const noexcept { return config_; }
    [[nodiscard]] const fs::path& root() const noexcept { return root_; }
    [[nodiscard]] fs::path corpus_dir() const { return root_ / "corpus" / "data"; }
    [[nodiscard]] static std::string arm_name(bool use_beat_info) { return use_beat_info ? "beat" : "nobeat"; }

    Json run_corpus();
    Json run_autoencoder();
    Json run_music();
    Json run_diffusion(bool use_beat_info);
    /// Test-set generations for one arm.
    Json run_generate(bool use_beat_info);
    /// report.json for one arm's generations plus the ground-truth rows.
    Json run_evaluate(bool use_beat_info);
    /// Every stage for the configured arm.
    Json run_all();

    /// With and without e_b: sign tests on 2D-MM Align and AV-Align and the
    /// cross-conditioning probe. Writes eval/ablation_beat.json.
    Json ablate_beat();
    /// n_frames against config.ablation_long_frames on the same test tracks.
    /// Writes eval/ablation_length.json.
    Json ablate_length();

    [[nodiscard]] TrainedModels load_models(bool use_beat_info) const;
    /// Evaluation of an arbitrary generation directory against a corpus.
    [[nodiscard]] Json evaluate_directory(const fs::path& generated, const fs::path& corpus_root) const;

private:
    Json require_stage(const std::string& stage) const;
    void notice(const std::string& text) const;

    ExperimentConfig config_;
    fs::path root_;
    std::ostream* notices_;
};

}  // namespace beatflow::harness
