#include "beatflow/nn/module.hpp"

#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>

namespace beatflow::nn {

template <typename S>
Var<S> ParamSet<S>::add(const std::string& name, Tensor<S> value)
{
    if (contains(name)) {
        throw std::invalid_argument("duplicate parameter name " + name);
    }
    Var<S> v = Var<S>::parameter(std::move(value));
    entries_.emplace_back(name, v);
    return v;
}

template <typename S>
const Var<S>& ParamSet<S>::get(const std::string& name) const
{
    for (const auto& [n, v] : entries_) {
        if (n == name) {
            return v;
        }
    }
    throw std::out_of_range("no parameter named " + name);
}

template <typename S>
bool ParamSet<S>::contains(const std::string& name) const
{
    for (const auto& entry : entries_) {
        if (entry.first == name) {
            return true;
        }
    }
    return false;
}

template <typename S>
Index ParamSet<S>::scalar_count() const
{
    Index n = 0;
    for (const auto& entry : entries_) {
        n += entry.second.value().size();
    }
    return n;
}

template <typename S>
void ParamSet<S>::zero_grad()
{
    for (auto& entry : entries_) {
        entry.second.zero_grad();
    }
}

template <typename S>
void ParamSet<S>::set_trainable(const std::string& prefix, bool trainable)
{
    for (auto& [name, v] : entries_) {
        if (name.rfind(prefix, 0) == 0) {
            v.set_requires_grad(trainable);
        }
    }
}

template <typename S>
void ParamSet<S>::assign(const ParamSet& other)
{
    for (auto& [name, v] : entries_) {
        const Var<S>& src = other.get(name);
        if (src.shape() != v.shape()) {
            throw ShapeError("parameter " + name + ": shape " + shape_string(src.shape()) + " vs " + shape_string(v.shape()));
        }
        v.mutable_value().vec() = src.value().vec();
    }
}

template <typename S>
void ParamSet<S>::load(const std::vector<std::pair<std::string, Tensor<S>>>& values)
{
    for (auto& [name, v] : entries_) {
        bool found = false;
        for (const auto& [n, t] : values) {
            if (n != name) {
                continue;
            }
            if (t.shape() != v.shape()) {
                throw ShapeError("parameter " + name + ": checkpoint shape " + shape_string(t.shape()) + " vs model " +
                                 shape_string(v.shape()));
            }
            v.mutable_value().vec() = t.vec();
            found = true;
            break;
        }
        if (!found) {
            throw std::out_of_range("checkpoint lacks parameter " + name);
        }
    }
}

template <typename S>
Tensor<S> init_normal(const Shape& shape, double fan_in, RngStream& rng, double gain)
{
    Tensor<S> t(shape);
    const double stdev = gain / std::sqrt(fan_in);
    for (Index i = 0; i < t.size(); ++i) {
        t[i] = static_cast<S>(rng.normal() * stdev);
    }
    return t;
}

template <typename S>
Conv2d<S>::Conv2d(ParamSet<S>& params, const std::string& name, int in, int out, int k, int stride_, RngStream& rng,
                  double gain)
    : stride(stride_), pad(k / 2)
{
    weight = params.add(name + ".w", init_normal<S>({out, in, k, k}, static_cast<double>(in) * k * k, rng, gain));
    bias = params.add(name + ".b", Tensor<S>({out}));
}

template <typename S>
Linear<S>::Linear(ParamSet<S>& params, const std::string& name, int in, int out, RngStream& rng, double gain)
{
    weight = params.add(name + ".w", init_normal<S>({out, in}, in, rng, gain));
    bias = params.add(name + ".b", Tensor<S>({out}));
}

template <typename S>
GroupNorm<S>::GroupNorm(ParamSet<S>& params, const std::string& name, int channels, int groups_, int channel_axis_)
    : groups(groups_), channel_axis(channel_axis_)
{
    gamma = params.add(name + ".g", Tensor<S>::filled({channels}, S(1)));
    beta = params.add(name + ".b", Tensor<S>({channels}));
}

template <typename S>
Adam<S>::Adam(ParamSet<S>& params, double lr, double beta1, double beta2, double eps)
    : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps)
{
    for (const auto& entry : params.entries()) {
        m_.push_back(Tensor<S>::Vec::Zero(entry.second.value().size()));
        v_.push_back(Tensor<S>::Vec::Zero(entry.second.value().size()));
    }
}

template <typename S>
void Adam<S>::step()
{
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const S step = static_cast<S>(lr_ * std::sqrt(c2) / c1);
    const auto b1 = static_cast<S>(beta1_);
    const auto b2 = static_cast<S>(beta2_);
    const auto eps = static_cast<S>(eps_ * std::sqrt(c2));
    std::size_t i = 0;
    for (const auto& entry : params_->entries()) {
        Var<S> p = entry.second;
        if (p.requires_grad() && p.has_grad()) {
            const auto& g = p.grad().vec();
            m_[i] = b1 * m_[i] + (S(1) - b1) * g;
            v_[i] = b2 * v_[i] + (S(1) - b2) * g.cwiseProduct(g);
            p.mutable_value().vec().array() -= step * m_[i].array() / (v_[i].array().sqrt() + eps);
        }
        ++i;
    }
}

double step_lr(double base_lr, const std::vector<int>& milestones, int epoch, double factor)
{
    double lr = base_lr;
    for (int m : milestones) {
        if (epoch >= m) {
            lr *= factor;
        }
    }
    return lr;
}

namespace {
constexpr char kMagic[4] = {'B', 'F', 'C', 'K'};

template <typename T>
void append_raw(std::string& out, T value)
{
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}
}  // namespace

void save_checkpoint(const fs::path& path, Json header, const ParamSet<float>& params)
{
    Json layout = Json::array();
    for (const auto& [name, v] : params.entries()) {
        layout.push_back({{"name", name}, {"shape", v.shape()}});
    }
    header["tensors"] = layout;
    header["format_version"] = kCheckpointVersion;
    const std::string text = header.dump();
    std::string out(kMagic, 4);
    append_raw<std::uint32_t>(out, kCheckpointVersion);
    append_raw<std::uint64_t>(out, text.size());
    out += text;
    for (const auto& entry : params.entries()) {
        const auto& t = entry.second.value();
        out.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(float));
    }
    write_file(path, out);
}

Checkpoint load_checkpoint(const fs::path& path)
{
    const std::string bytes = read_file(path);
    if (bytes.size() < 16 || bytes.compare(0, 4, std::string(kMagic, 4)) != 0) {
        throw IoError(path.string() + " is not a checkpoint");
    }
    std::uint32_t version = 0;
    std::uint64_t length = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&length, bytes.data() + 8, 8);
    if (version != kCheckpointVersion) {
        throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    if (16 + length > bytes.size()) {
        throw IoError(path.string() + ": truncated header");
    }
    Checkpoint ck;
    ck.header = Json::parse(bytes.substr(16, length));
    std::size_t at = 16 + length;
    for (const auto& entry : ck.header.at("tensors")) {
        const Shape shape = entry.at("shape").get<Shape>();
        TensorF t(shape);
        const std::size_t n = static_cast<std::size_t>(t.size()) * sizeof(float);
        if (at + n > bytes.size()) {
            throw IoError(path.string() + ": truncated tensor data");
        }
        std::memcpy(t.data(), bytes.data() + at, n);
        at += n;
        ck.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    return ck;
}

std::string arch_hash(const Json& arch)
{
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(arch.dump());
    return hex.str();
}

template class ParamSet<float>;
template class ParamSet<double>;
template Tensor<float> init_normal<float>(const Shape&, double, RngStream&, double);
template Tensor<double> init_normal<double>(const Shape&, double, RngStream&, double);
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct GroupNorm<float>;
template struct GroupNorm<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace beatflow::nn
