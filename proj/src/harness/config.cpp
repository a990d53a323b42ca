#include "beatflow/harness/config.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace beatflow::harness {

namespace {

Json corpus_json(const corpus::CorpusConfig& c)
{
    Json j = c.to_json();
    // Both come from the top level.
    j.erase("n_frames");
    j.erase("seed");
    return j;
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// Drops a `#` comment that is not inside a string.
std::string strip_comment(const std::string& line)
{
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) {
            quoted = !quoted;
        } else if (line[i] == '#' && !quoted) {
            return line.substr(0, i);
        }
    }
    return line;
}

Json::json_pointer pointer(const std::string& key)
{
    std::string p;
    std::stringstream in(key);
    std::string part;
    while (std::getline(in, part, '.')) {
        if (part.empty()) {
            throw ConfigError("malformed key '" + key + "'");
        }
        p += "/" + part;
    }
    return Json::json_pointer(p);
}

bool same_kind(const Json& a, const Json& b)
{
    if (a.is_number() && b.is_number()) {
        return !(a.is_number_integer() && b.is_number_float());
    }
    return a.type() == b.type();
}

void apply(Json& j, const std::string& key, const Json& value)
{
    if (key == "preset") {
        throw ConfigError("preset can only be chosen in the config file");
    }
    const Json::json_pointer p = pointer(key);
    if (!j.contains(p) || j.at(p).is_object()) {
        throw ConfigError("unknown config key '" + key + "'");
    }
    if (!same_kind(j.at(p), value)) {
        throw ConfigError("config key '" + key + "' expects " + std::string(j.at(p).type_name()) + ", got " +
                          value.dump());
    }
    j[p] = value;
}

}  // namespace

Json ExperimentConfig::to_json() const
{
    return Json{
        {"preset", preset},
        {"seed", seed},
        {"n_frames", n_frames},
        {"use_beat_info", use_beat_info},
        {"corpus", corpus_json(corpus)},
        {"autoencoder",
         {{"width", ae_width},
          {"latent_channels", latent_channels},
          {"epochs", stage1.epochs},
          {"batch", stage1.batch},
          {"lr", stage1.lr},
          {"lr_milestones", stage1.lr_milestones},
          {"pairs_per_video", stage1.pairs_per_video},
          {"identity_fraction", stage1.identity_fraction}}},
        {"music",
         {{"epochs", music.epochs},
          {"pretrain_epochs", music.pretrain_epochs},
          {"batch", music.batch},
          {"lr", music.lr},
          {"temperature", music.temperature},
          {"context", music_context}}},
        {"diffusion",
         {{"channels", denoiser_channels},
          {"time_dim", denoiser_time_dim},
          {"position_channels", denoiser_position_channels},
          {"epochs", stage2.epochs},
          {"batch", stage2.batch},
          {"lr", stage2.lr},
          {"lr_milestones", stage2.lr_milestones},
          {"steps", stage2.steps},
          {"schedule", "cosine"},
          {"threshold_quantile", threshold_quantile}}},
        {"generation", {{"count", generations}, {"ablation_long_frames", ablation_long_frames}}},
        {"metrics", {{"sigma", metrics.sigma}, {"av_window", metrics.av_window}, {"prominence", metrics.prominence}}},
    };
}

ExperimentConfig ExperimentConfig::from_json(const Json& j)
{
    ExperimentConfig c;
    try {
        c.preset = j.at("preset").get<std::string>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.n_frames = j.at("n_frames").get<int>();
        c.use_beat_info = j.at("use_beat_info").get<bool>();

        Json cj = j.at("corpus");
        cj["n_frames"] = c.n_frames;
        cj["seed"] = c.seed;
        c.corpus = corpus::CorpusConfig::from_json(cj);

        const Json& a = j.at("autoencoder");
        c.ae_width = a.at("width").get<double>();
        c.latent_channels = a.at("latent_channels").get<int>();
        c.stage1.epochs = a.at("epochs").get<int>();
        c.stage1.batch = a.at("batch").get<int>();
        c.stage1.lr = a.at("lr").get<double>();
        c.stage1.lr_milestones = a.at("lr_milestones").get<std::vector<int>>();
        c.stage1.pairs_per_video = a.at("pairs_per_video").get<int>();
        c.stage1.identity_fraction = a.at("identity_fraction").get<double>();

        const Json& m = j.at("music");
        c.music.epochs = m.at("epochs").get<int>();
        c.music.pretrain_epochs = m.at("pretrain_epochs").get<int>();
        c.music.batch = m.at("batch").get<int>();
        c.music.lr = m.at("lr").get<double>();
        c.music.temperature = m.at("temperature").get<double>();
        c.music_context = m.at("context").get<double>();

        const Json& d = j.at("diffusion");
        c.denoiser_channels = d.at("channels").get<std::vector<int>>();
        c.denoiser_time_dim = d.at("time_dim").get<int>();
        c.denoiser_position_channels = d.at("position_channels").get<int>();
        c.stage2.epochs = d.at("epochs").get<int>();
        c.stage2.batch = d.at("batch").get<int>();
        c.stage2.lr = d.at("lr").get<double>();
        c.stage2.lr_milestones = d.at("lr_milestones").get<std::vector<int>>();
        c.stage2.steps = d.at("steps").get<int>();
        if (d.at("schedule").get<std::string>() != "cosine") {
            throw ConfigError("diffusion.schedule must be \"cosine\"");
        }
        c.threshold_quantile = d.at("threshold_quantile").get<double>();

        const Json& g = j.at("generation");
        c.generations = g.at("count").get<int>();
        c.ablation_long_frames = g.at("ablation_long_frames").get<int>();

        const Json& mt = j.at("metrics");
        c.metrics.sigma = mt.at("sigma").get<double>();
        c.metrics.av_window = mt.at("av_window").get<double>();
        c.metrics.prominence = mt.at("prominence").get<double>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string ExperimentConfig::hash() const
{
    return git_blob_hash(to_json().dump());
}

void ExperimentConfig::validate() const
{
    auto require = [](bool ok, const std::string& what) {
        if (!ok) {
            throw ConfigError("config: " + what);
        }
    };
    require(n_frames >= 4, "n_frames must be at least 4");
    require(corpus.n_frames == n_frames, "corpus frame count must equal n_frames");
    require(corpus.styles >= 2 && corpus.styles <= 6, "corpus.styles must lie in [2, 6]");
    require(corpus.frame_size % 64 == 0, "corpus.frame_size must be a multiple of 64");
    require(corpus.fps > 0.0, "corpus.fps must be positive");
    require(music_context >= n_frames / corpus.fps, "music.context must cover the video");
    require(music_context <= corpus.context_duration, "music.context must not exceed corpus.context_duration");
    require(ae_width > 0.0 && latent_channels > 0, "autoencoder width and latent channels must be positive");
    require(stage1.epochs > 0 && stage1.batch > 0 && stage1.lr > 0.0, "autoencoder schedule must be positive");
    require(music.epochs > 0 && music.batch > 1 && music.lr > 0.0, "music schedule must be positive");
    require(denoiser_channels.size() == 5, "diffusion.channels needs five levels");
    require(stage2.epochs > 0 && stage2.batch > 0 && stage2.lr > 0.0 && stage2.steps >= 2,
            "diffusion schedule must be positive");
    require(threshold_quantile > 0.0 && threshold_quantile <= 1.0, "diffusion.threshold_quantile must lie in (0, 1]");
    require(generations > 0, "generation.count must be positive");
    require(ablation_long_frames > n_frames, "generation.ablation_long_frames must exceed n_frames");
    require(metrics.sigma > 0.0 && metrics.av_window >= 0.0, "metric parameters out of range");
}

diffusion::DenoiserConfig ExperimentConfig::denoiser() const
{
    diffusion::DenoiserConfig d;
    d.frames = n_frames - 1;
    d.height = latent_size();
    d.width = latent_size();
    d.latent_channels = latent_channels;
    // e_c, e_w, one beat indicator per frame and the tempo entry.
    d.cond_dim = music::kStyleDim + music::kMovementDim + n_frames + 1;
    d.channels = denoiser_channels;
    d.time_dim = denoiser_time_dim;
    d.position_channels = denoiser_position_channels;
    return d;
}

ExperimentConfig preset(const std::string& name)
{
    ExperimentConfig c;
    c.corpus.n_frames = c.n_frames;
    c.corpus.seed = c.seed;
    c.stage1.batch = 8;
    c.stage1.lr = 1e-3;
    c.stage2.lr = 1e-3;
    if (name == "desk") {
        return c;
    }
    if (name != "paper") {
        throw ConfigError("unknown preset '" + name + "' (expected \"desk\" or \"paper\")");
    }
    c.preset = "paper";
    c.n_frames = 40;
    c.corpus.n_frames = 40;
    c.corpus.styles = 6;
    c.corpus.videos_per_track = 40;
    c.corpus.frame_size = 128;
    c.corpus.test_fraction = 1.0 / 6.0;
    c.stage1.epochs = 150;
    c.stage1.batch = 100;
    c.stage1.lr = 2e-4;
    c.stage1.lr_milestones = {60, 90, 120};
    c.stage2.epochs = 250;
    c.stage2.lr = 2e-4;
    c.stage2.lr_milestones = {100, 150, 200};
    c.generations = 100;
    c.ablation_long_frames = 80;
    return c;
}

void set_option(ExperimentConfig& config, const std::string& key, const Json& value)
{
    Json j = config.to_json();
    apply(j, key, value);
    config = ExperimentConfig::from_json(j);
}

ExperimentConfig parse_config(const std::string& text)
{
    std::vector<std::pair<std::string, Json>> entries;
    std::string base = "desk";
    std::stringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        Json value;
        try {
            value = Json::parse(trim(line.substr(eq + 1)));
        } catch (const Json::parse_error&) {
            throw ConfigError("config line " + std::to_string(line_no) + ": cannot parse value of '" + key + "'");
        }
        if (key == "preset") {
            if (!value.is_string()) {
                throw ConfigError("preset must be a string");
            }
            base = value.get<std::string>();
        } else {
            entries.emplace_back(key, value);
        }
    }
    Json j = preset(base).to_json();
    for (const auto& [key, value] : entries) {
        apply(j, key, value);
    }
    return ExperimentConfig::from_json(j);
}

ExperimentConfig load_config(const fs::path& path)
{
    if (!fs::exists(path)) {
        throw ConfigError("config file " + path.string() + " does not exist");
    }
    return parse_config(read_file(path));
}

std::string format_config(const ExperimentConfig& config)
{
    const Json flat = config.to_json().flatten();
    std::string out = "preset = " + Json(config.preset).dump() + "\n";
    std::map<std::string, Json> sorted;
    for (const auto& [ptr, value] : flat.items()) {
        std::string key = ptr.substr(1);
        std::replace(key.begin(), key.end(), '/', '.');
        sorted[key] = value;
    }
    // flatten() splits arrays into elements; rebuild them from the nested form.
    const Json nested = config.to_json();
    std::map<std::string, Json> lines;
    for (const auto& [key, value] : sorted) {
        const auto dot = key.find_last_of('.');
        const std::string parent = dot == std::string::npos ? std::string() : key.substr(0, dot);
        if (!parent.empty() && nested.at(pointer(parent)).is_array()) {
            lines[parent] = nested.at(pointer(parent));
        } else if (key != "preset") {
            lines[key] = value;
        }
    }
    for (const auto& [key, value] : lines) {
        out += key + " = " + value.dump() + "\n";
    }
    return out;
}

}  // namespace beatflow::harness
