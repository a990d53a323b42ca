#pragma once

#include "beatflow/core/media.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>

namespace beatflow {

namespace fs = std::filesystem;
using Json = nlohmann::json;

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Audio file is not 16-bit PCM mono.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Frame sequence has a missing index.
class GapError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Image load_png(const fs::path& path);
void save_png(const Image& image, const fs::path& path);

/// Loads frame_00000.png, frame_00001.png, ... in index order.
VideoTensor load_video_frames(const fs::path& dir, double fps);
/// Writes one lossless 8-bit PNG per frame. Creates `dir` if needed.
void save_video_frames(const VideoTensor& video, const fs::path& dir);
std::string frame_filename(int index);

AudioClip load_audio(const fs::path& path);
void save_audio(const AudioClip& clip, const fs::path& path);

Json load_json(const fs::path& path);
/// Pretty-printed, key-sorted output so identical content gives identical bytes.
void save_json(const Json& value, const fs::path& path);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& bytes);

/// git blob id (SHA-1 over "blob <len>\0" + content), lowercase hex.
std::string git_blob_hash(const std::string& bytes);
std::string git_blob_hash_file(const fs::path& path);

}  // namespace beatflow
