#pragma once

#include "beatflow/core/io.hpp"
#include "beatflow/core/rng.hpp"
#include "beatflow/nn/ops.hpp"

#include <string>
#include <utility>
#include <vector>

namespace beatflow::nn {

/// Named, ordered collection of trainable tensors. Order is registration order,
/// which fixes both the checkpoint layout and the order of random initialisation.
template <typename S>
class ParamSet {
public:
    Var<S> add(const std::string& name, Tensor<S> value);

    [[nodiscard]] const Var<S>& get(const std::string& name) const;
    [[nodiscard]] bool contains(const std::string& name) const;
    [[nodiscard]] const std::vector<std::pair<std::string, Var<S>>>& entries() const noexcept { return entries_; }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] Index scalar_count() const;

    void zero_grad();
    /// Marks every parameter whose name starts with `prefix` as (non-)trainable.
    void set_trainable(const std::string& prefix, bool trainable);

    /// Copies values from `other` by name; shapes must agree.
    void assign(const ParamSet& other);
    /// Loads values from a name -> tensor table; every parameter must be present.
    void load(const std::vector<std::pair<std::string, Tensor<S>>>& values);

private:
    std::vector<std::pair<std::string, Var<S>>> entries_;
};

/// Gaussian initialisation with standard deviation gain / sqrt(fan_in).
template <typename S>
Tensor<S> init_normal(const Shape& shape, double fan_in, RngStream& rng, double gain = 1.0);

template <typename S>
struct Conv2d {
    Var<S> weight;
    Var<S> bias;
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    Conv2d(ParamSet<S>& params, const std::string& name, int in, int out, int k, int stride, RngStream& rng,
           double gain = 1.4142135623730951);
    [[nodiscard]] Var<S> operator()(const Var<S>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

template <typename S>
struct Linear {
    Var<S> weight;
    Var<S> bias;

    Linear() = default;
    Linear(ParamSet<S>& params, const std::string& name, int in, int out, RngStream& rng, double gain = 1.4142135623730951);
    [[nodiscard]] Var<S> operator()(const Var<S>& x) const { return linear(x, weight, bias); }
};

template <typename S>
struct GroupNorm {
    Var<S> gamma;
    Var<S> beta;
    int groups = 1;
    int channel_axis = 1;

    GroupNorm() = default;
    GroupNorm(ParamSet<S>& params, const std::string& name, int channels, int groups, int channel_axis = 1);
    [[nodiscard]] Var<S> operator()(const Var<S>& x) const { return group_norm(x, gamma, beta, groups, channel_axis); }
};

/// Adam with bias correction.
template <typename S>
class Adam {
public:
    explicit Adam(ParamSet<S>& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step();
    void set_lr(double lr) noexcept { lr_ = lr; }
    [[nodiscard]] double lr() const noexcept { return lr_; }
    [[nodiscard]] long steps() const noexcept { return t_; }

private:
    ParamSet<S>* params_;
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    long t_ = 0;
    std::vector<typename Tensor<S>::Vec> m_;
    std::vector<typename Tensor<S>::Vec> v_;
};

/// Step schedule: base_lr * factor^(number of milestones <= epoch).
double step_lr(double base_lr, const std::vector<int>& milestones, int epoch, double factor = 0.1);

/// Checkpoint file: "BFCK" magic, u32 format version, u64 header length, JSON
/// header, then float32 little-endian tensors in header order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Json header;
    std::vector<std::pair<std::string, TensorF>> tensors;
};

void save_checkpoint(const fs::path& path, Json header, const ParamSet<float>& params);
Checkpoint load_checkpoint(const fs::path& path);
/// Stable hash of a module architecture description (FNV-1a of its JSON dump, hex).
std::string arch_hash(const Json& arch);

}  // namespace beatflow::nn
