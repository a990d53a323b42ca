#include "beatflow/core/io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <regex>
#include <sstream>

namespace beatflow {

Image load_png(const fs::path& path)
{
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw IoError("cannot read PNG " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    Image out({static_cast<int>(image.height), static_cast<int>(image.width), 3});
    for (std::size_t i = 0; i < buffer.size(); ++i) {
        out[static_cast<Index>(i)] = static_cast<float>(buffer[i]) / 255.0f;
    }
    return out;
}

void save_png(const Image& image, const fs::path& path)
{
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw ShapeError("PNG frame must be H x W x 3");
    }
    std::vector<unsigned char> buffer(static_cast<std::size_t>(image.size()));
    for (Index i = 0; i < image.size(); ++i) {
        const float v = std::clamp(image[i], 0.0f, 1.0f);
        buffer[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::nearbyint(v * 255.0f));
    }
    png_image out{};
    out.version = PNG_IMAGE_VERSION;
    out.width = static_cast<png_uint_32>(image.dim(1));
    out.height = static_cast<png_uint_32>(image.dim(0));
    out.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&out, path.c_str(), 0, buffer.data(), 0, nullptr)) {
        throw IoError("cannot write PNG " + path.string() + ": " + out.message);
    }
}

std::string frame_filename(int index)
{
    std::ostringstream name;
    name << "frame_" << std::setw(5) << std::setfill('0') << index << ".png";
    return name.str();
}

VideoTensor load_video_frames(const fs::path& dir, double fps)
{
    if (!fs::is_directory(dir)) {
        throw IoError("not a directory: " + dir.string());
    }
    static const std::regex pattern(R"(frame_(\d{5})\.png)");
    std::map<int, fs::path> indexed;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch match;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, match, pattern)) {
            indexed.emplace(std::stoi(match[1].str()), entry.path());
        }
    }
    if (indexed.empty()) {
        throw IoError("no frame_%05d.png files in " + dir.string());
    }
    std::vector<Image> frames;
    int expected = 0;
    for (const auto& [index, path] : indexed) {
        if (index != expected) {
            throw GapError("missing frame index " + std::to_string(expected) + " in " + dir.string());
        }
        frames.push_back(load_png(path));
        ++expected;
    }
    return VideoTensor::from_frames(frames, fps);
}

void save_video_frames(const VideoTensor& video, const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    for (int i = 0; i < video.frames(); ++i) {
        save_png(video.frame(i), dir / frame_filename(i));
    }
}

namespace {

template <typename T>
void put_le(std::string& out, T value)
{
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
    }
}

template <typename T>
T get_le(const std::string& in, std::size_t at)
{
    if (at + sizeof(T) > in.size()) {
        throw FormatError("truncated WAV");
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    }
    return static_cast<T>(v);
}

}  // namespace

AudioClip load_audio(const fs::path& path)
{
    const std::string bytes = read_file(path);
    if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
        throw FormatError(path.string() + " is not a RIFF/WAVE file");
    }
    std::size_t at = 12;
    bool have_fmt = false;
    int sample_rate = 0;
    while (at + 8 <= bytes.size()) {
        const std::string id = bytes.substr(at, 4);
        const auto size = get_le<std::uint32_t>(bytes, at + 4);
        const std::size_t body = at + 8;
        if (id == "fmt ") {
            const auto format = get_le<std::uint16_t>(bytes, body);
            const auto channels = get_le<std::uint16_t>(bytes, body + 2);
            sample_rate = static_cast<int>(get_le<std::uint32_t>(bytes, body + 4));
            const auto bits = get_le<std::uint16_t>(bytes, body + 14);
            if (format != 1 || bits != 16) {
                throw FormatError(path.string() + ": only 16-bit PCM is supported");
            }
            if (channels != 1) {
                throw FormatError(path.string() + ": only mono audio is supported");
            }
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) {
                throw FormatError(path.string() + ": data chunk before fmt chunk");
            }
            const std::size_t count = std::min<std::size_t>(size, bytes.size() - body) / 2;
            Eigen::VectorXf samples(static_cast<Index>(count));
            for (std::size_t i = 0; i < count; ++i) {
                const auto q = static_cast<std::int16_t>(get_le<std::uint16_t>(bytes, body + 2 * i));
                samples[static_cast<Index>(i)] = std::max(-1.0f, static_cast<float>(q) / 32767.0f);
            }
            return AudioClip(std::move(samples), sample_rate);
        }
        at = body + size + (size & 1u);
    }
    throw FormatError(path.string() + ": no data chunk");
}

void save_audio(const AudioClip& clip, const fs::path& path)
{
    const auto count = static_cast<std::uint32_t>(clip.length());
    std::string out;
    out.reserve(44 + 2 * static_cast<std::size_t>(count));
    out += "RIFF";
    put_le<std::uint32_t>(out, 36 + 2 * count);
    out += "WAVEfmt ";
    put_le<std::uint32_t>(out, 16);
    put_le<std::uint16_t>(out, 1);
    put_le<std::uint16_t>(out, 1);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate()) * 2);
    put_le<std::uint16_t>(out, 2);
    put_le<std::uint16_t>(out, 16);
    out += "data";
    put_le<std::uint32_t>(out, 2 * count);
    for (Index i = 0; i < clip.length(); ++i) {
        const float v = std::clamp(clip.samples()[i], -1.0f, 1.0f);
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::nearbyint(v * 32767.0f))));
    }
    write_file(path, out);
}

Json load_json(const fs::path& path)
{
    try {
        return Json::parse(read_file(path));
    } catch (const Json::parse_error& e) {
        throw IoError("cannot parse JSON " + path.string() + ": " + e.what());
    }
}

void save_json(const Json& value, const fs::path& path)
{
    write_file(path, value.dump(2) + "\n");
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const fs::path& path, const std::string& bytes)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("short write to " + path.string());
    }
}

std::string git_blob_hash(const std::string& bytes)
{
    const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
    EVP_DigestUpdate(ctx, header.data(), header.size());
    EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
    EVP_DigestFinal_ex(ctx, digest.data(), &length);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < length; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return hex.str();
}

std::string git_blob_hash_file(const fs::path& path)
{
    return git_blob_hash(read_file(path));
}

}  // namespace beatflow
