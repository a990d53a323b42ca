#pragma once

#include "beatflow/corpus/synth.hpp"
#include "beatflow/diffusion/diffusion.hpp"
#include "beatflow/flow/autoencoder.hpp"
#include "beatflow/metrics/metrics.hpp"
#include "beatflow/music/encoder.hpp"

#include <string>

namespace beatflow::harness {

/// Bad config file, unknown key, wrong value type or a broken invariant.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    std::string preset = "desk";
    std::uint64_t seed = 2024;
    /// Video length in frames (N + 1); overrides corpus.n_frames.
    int n_frames = 16;
    bool use_beat_info = true;

    corpus::CorpusConfig corpus;

    double ae_width = 1.0;
    int latent_channels = flow::kLatentChannels;
    flow::Stage1Config stage1;

    music::EmbedderConfig music;

    std::vector<int> denoiser_channels{24, 32, 48, 64, 64};
    int denoiser_time_dim = 64;
    int denoiser_position_channels = 12;
    diffusion::Stage2Config stage2;
    double threshold_quantile = diffusion::kThresholdQuantile;

    int generations = 20;
    double music_context = 3.0;
    /// Frame count of the long arm of the length ablation.
    int ablation_long_frames = 32;
    metrics::SuiteConfig metrics;

    /// Nested JSON; the flat config keys are its dotted paths.
    [[nodiscard]] Json to_json() const;
    static ExperimentConfig from_json(const Json& j);
    /// git blob hash of the canonical JSON.
    [[nodiscard]] std::string hash() const;
    /// Throws ConfigError on an invariant violation.
    void validate() const;

    /// Derived model shapes.
    [[nodiscard]] diffusion::DenoiserConfig denoiser() const;
    [[nodiscard]] int latent_size() const { return corpus.frame_size / flow::kLatentStride; }
};

/// "desk" (scaled for one CPU) or "paper" (the published schedule).
ExperimentConfig preset(const std::string& name);

/// Flat `key = value` lines, `#` comments. Values are JSON scalars or arrays.
/// A `preset = "..."` line selects the base the other keys override, wherever
/// it appears.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const fs::path& path);
/// Dotted `key = value` dump of every setting, sorted by key.
std::string format_config(const ExperimentConfig& config);

/// Applies one dotted override to `config`.
void set_option(ExperimentConfig& config, const std::string& key, const Json& value);

}  // namespace beatflow::harness
