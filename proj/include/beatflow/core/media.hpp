#pragma once

#include "beatflow/core/tensor.hpp"

#include <Eigen/Dense>

namespace beatflow {

/// A single H x W x 3 frame with values in [0, 1].
using Image = TensorF;

/// Validated N x H x W x 3 frame stack.
inline constexpr int kDefaultSampleRate = 22050;

class VideoTensor {
public:
    VideoTensor() = default;
    /// Throws DomainError on NaN/Inf, out-of-range pixels or an unsupported size.
    VideoTensor(TensorF frames, double fps);

    static VideoTensor from_frames(const std::vector<Image>& frames, double fps);

    [[nodiscard]] int frames() const { return data_.dim(0); }
    [[nodiscard]] int height() const { return data_.dim(1); }
    [[nodiscard]] int width() const { return data_.dim(2); }
    [[nodiscard]] double fps() const noexcept { return fps_; }
    [[nodiscard]] const TensorF& data() const noexcept { return data_; }

    [[nodiscard]] Image frame(int i) const;
    /// Frames [begin, end).
    [[nodiscard]] VideoTensor slice(int begin, int end) const;

private:
    TensorF data_;
    double fps_ = 0.0;
};

/// Latent feature map, stored channel-first as Cz x Hz x Wz.
class LatentMap {
public:
    LatentMap() = default;
    explicit LatentMap(TensorF values);

    [[nodiscard]] int channels() const { return values_.dim(0); }
    [[nodiscard]] int height() const { return values_.dim(1); }
    [[nodiscard]] int width() const { return values_.dim(2); }
    [[nodiscard]] const TensorF& values() const noexcept { return values_; }

private:
    TensorF values_;
};

/// Mono audio with samples in [-1, 1].
class AudioClip {
public:


    AudioClip() = default;
    AudioClip(Eigen::VectorXf samples, int sample_rate = kDefaultSampleRate);

    [[nodiscard]] const Eigen::VectorXf& samples() const noexcept { return samples_; }
    [[nodiscard]] int sample_rate() const noexcept { return sample_rate_; }
    [[nodiscard]] Index length() const noexcept { return samples_.size(); }
    [[nodiscard]] double duration() const { return static_cast<double>(samples_.size()) / sample_rate_; }

    /// Samples [begin, begin + count), clipped to the clip.
    [[nodiscard]] AudioClip segment(Index begin, Index count) const;
    [[nodiscard]] AudioClip scaled(float gain) const;

private:
    Eigen::VectorXf samples_;
    int sample_rate_ = kDefaultSampleRate;
};

/// Round to the nearest 8-bit level, as a PNG round-trip would.
TensorF quantize8(const TensorF& values);
/// Round to the nearest 16-bit PCM level, as a WAV round-trip would.
Eigen::VectorXf quantize16(const Eigen::VectorXf& samples);

inline bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace beatflow
