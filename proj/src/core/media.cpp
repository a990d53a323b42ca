#include "beatflow/core/media.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace beatflow {

std::string shape_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? ", " : "") << shape[i];
    }
    out << ']';
    return out.str();
}

VideoTensor::VideoTensor(TensorF frames, double fps) : data_(std::move(frames)), fps_(fps)
{
    if (data_.rank() != 4 || data_.dim(3) != 3) {
        throw ShapeError("video must be N x H x W x 3, got " + shape_string(data_.shape()));
    }
    if (data_.dim(0) < 1) {
        throw DomainError("video needs at least one frame");
    }
    for (int side : {data_.dim(1), data_.dim(2)}) {
        if (!is_power_of_two(side) || side < 16 || side > 256) {
            throw DomainError("frame side " + std::to_string(side) + " must be a power of two in [16, 256]");
        }
    }
    if (!data_.all_finite()) {
        throw DomainError("video contains non-finite values");
    }
    if (data_.vec().minCoeff() < 0.0f || data_.vec().maxCoeff() > 1.0f) {
        throw DomainError("video values must lie in [0, 1]");
    }
    if (!(fps > 0.0)) {
        throw DomainError("fps must be positive");
    }
}

VideoTensor VideoTensor::from_frames(const std::vector<Image>& frames, double fps)
{
    if (frames.empty()) {
        throw DomainError("video needs at least one frame");
    }
    const Shape& fs = frames.front().shape();
    if (fs.size() != 3) {
        throw ShapeError("frame must be H x W x 3");
    }
    const Index per = frames.front().size();
    TensorF data({static_cast<int>(frames.size()), fs[0], fs[1], fs[2]});
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (frames[i].shape() != fs) {
            throw ShapeError("mixed frame sizes: " + shape_string(fs) + " vs " + shape_string(frames[i].shape()));
        }
        data.vec().segment(static_cast<Index>(i) * per, per) = frames[i].vec();
    }
    return VideoTensor(std::move(data), fps);
}

Image VideoTensor::frame(int i) const
{
    if (i < 0 || i >= frames()) {
        throw std::out_of_range("frame index " + std::to_string(i));
    }
    const Index per = static_cast<Index>(height()) * width() * 3;
    return Image({height(), width(), 3}, data_.vec().segment(i * per, per));
}

VideoTensor VideoTensor::slice(int begin, int end) const
{
    if (begin < 0 || end > frames() || begin >= end) {
        throw std::out_of_range("bad frame range");
    }
    const Index per = static_cast<Index>(height()) * width() * 3;
    TensorF out({end - begin, height(), width(), 3}, data_.vec().segment(begin * per, (end - begin) * per));
    return VideoTensor(std::move(out), fps_);
}

LatentMap::LatentMap(TensorF values) : values_(std::move(values))
{
    if (values_.rank() != 3) {
        throw ShapeError("latent map must be Cz x Hz x Wz, got " + shape_string(values_.shape()));
    }
    if (!values_.all_finite()) {
        throw DomainError("latent map contains non-finite values");
    }
}

AudioClip::AudioClip(Eigen::VectorXf samples, int sample_rate)
    : samples_(std::move(samples)), sample_rate_(sample_rate)
{
    if (samples_.size() < 1) {
        throw DomainError("audio clip needs at least one sample");
    }
    if (sample_rate_ <= 0) {
        throw DomainError("sample rate must be positive");
    }
    if (!samples_.allFinite()) {
        throw DomainError("audio contains non-finite samples");
    }
    if (samples_.cwiseAbs().maxCoeff() > 1.0f) {
        throw DomainError("audio samples must lie in [-1, 1]");
    }
}

AudioClip AudioClip::segment(Index begin, Index count) const
{
    begin = std::clamp<Index>(begin, 0, length() - 1);
    count = std::clamp<Index>(count, 1, length() - begin);
    return AudioClip(samples_.segment(begin, count), sample_rate_);
}

AudioClip AudioClip::scaled(float gain) const
{
    return AudioClip((samples_ * gain).cwiseMax(-1.0f).cwiseMin(1.0f), sample_rate_);
}

TensorF quantize8(const TensorF& values)
{
    TensorF out = values;
    for (Index i = 0; i < out.size(); ++i) {
        const float v = std::clamp(out[i], 0.0f, 1.0f);
        out[i] = std::nearbyint(v * 255.0f) / 255.0f;
    }
    return out;
}

Eigen::VectorXf quantize16(const Eigen::VectorXf& samples)
{
    Eigen::VectorXf out(samples.size());
    for (Index i = 0; i < samples.size(); ++i) {
        const float v = std::clamp(samples[i], -1.0f, 1.0f);
        out[i] = static_cast<float>(std::nearbyint(v * 32767.0f)) / 32767.0f;
    }
    return out;
}

}  // namespace beatflow
