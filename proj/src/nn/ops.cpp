#include "beatflow/nn/ops.hpp"

#include <algorithm>
#include <cmath>

namespace beatflow::nn {

namespace {

template <typename S>
using Vec = typename Tensor<S>::Vec;
template <typename S>
using RowMat = typename Tensor<S>::RowMat;
template <typename S>
using Map = Eigen::Map<RowMat<S>>;
template <typename S>
using CMap = Eigen::Map<const RowMat<S>>;

void require_same_shape(const Shape& a, const Shape& b, const char* op)
{
    if (a != b) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
}

void require_rank(const Shape& s, int rank, const char* op)
{
    if (static_cast<int>(s.size()) != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
    }
}

Index prod(const Shape& s, int begin, int end)
{
    Index p = 1;
    for (int i = begin; i < end; ++i) {
        p *= s[static_cast<std::size_t>(i)];
    }
    return p;
}

int normalize_axis(int axis, int rank)
{
    return axis < 0 ? axis + rank : axis;
}

template <typename S, typename F, typename G>
Var<S> unary(const Var<S>& x, F&& forward, G&& derivative)
{
    Tensor<S> out(x.shape(), x.value().vec().unaryExpr(forward));
    return Var<S>::from_op(std::move(out), {x}, [derivative](Node<S>& self) {
        Node<S>& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        const Vec<S>& xv = in.value.vec();
        const Vec<S>& yv = self.value.vec();
        Vec<S>& g = in.grad_buffer().vec();
        const Vec<S>& go = self.grad.vec();
        for (Index i = 0; i < xv.size(); ++i) {
            g[i] += go[i] * derivative(xv[i], yv[i]);
        }
    });
}

}  // namespace

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b)
{
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<S> out(a.shape(), a.value().vec() + b.value().vec());
    return Var<S>::from_op(std::move(out), {a, b}, [](Node<S>& self) {
        accumulate(*self.inputs[0], self.grad.vec());
        accumulate(*self.inputs[1], self.grad.vec());
    });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b)
{
    require_same_shape(a.shape(), b.shape(), "sub");
    Tensor<S> out(a.shape(), a.value().vec() - b.value().vec());
    return Var<S>::from_op(std::move(out), {a, b}, [](Node<S>& self) {
        accumulate(*self.inputs[0], self.grad.vec());
        accumulate(*self.inputs[1], -self.grad.vec());
    });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b)
{
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor<S> out(a.shape(), a.value().vec().cwiseProduct(b.value().vec()));
    return Var<S>::from_op(std::move(out), {a, b}, [](Node<S>& self) {
        Node<S>& na = *self.inputs[0];
        Node<S>& nb = *self.inputs[1];
        accumulate(na, self.grad.vec().cwiseProduct(nb.value.vec()));
        accumulate(nb, self.grad.vec().cwiseProduct(na.value.vec()));
    });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor)
{
    Tensor<S> out(a.shape(), a.value().vec() * factor);
    return Var<S>::from_op(std::move(out), {a}, [factor](Node<S>& self) {
        accumulate(*self.inputs[0], self.grad.vec() * factor);
    });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S value)
{
    Tensor<S> out(a.shape(), (a.value().vec().array() + value).matrix());
    return Var<S>::from_op(std::move(out), {a}, [](Node<S>& self) {
        accumulate(*self.inputs[0], self.grad.vec());
    });
}

template <typename S>
Var<S> relu(const Var<S>& x)
{
    return unary<S>(
        x, [](S v) { return v > S(0) ? v : S(0); }, [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Var<S> silu(const Var<S>& x)
{
    const auto xa = x.value().vec().array();
    Tensor<S> out(x.shape(), (xa / (S(1) + (-xa).exp())).matrix());
    return Var<S>::from_op(std::move(out), {x}, [](Node<S>& self) {
        Node<S>& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        const auto v = in.value.vec().array();
        const auto sg = (S(1) + (-v).exp()).inverse();
        in.grad_buffer().vec().array() += self.grad.vec().array() * (sg * (S(1) + v * (S(1) - sg)));
    });
}

template <typename S>
Var<S> sigmoid(const Var<S>& x)
{
    Tensor<S> out(x.shape(), (S(1) + (-x.value().vec().array()).exp()).inverse().matrix());
    return Var<S>::from_op(std::move(out), {x}, [](Node<S>& self) {
        Node<S>& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        const auto y = self.value.vec().array();
        in.grad_buffer().vec().array() += self.grad.vec().array() * y * (S(1) - y);
    });
}

template <typename S>
Var<S> tanh(const Var<S>& x)
{
    Tensor<S> out(x.shape(), x.value().vec().array().tanh().matrix());
    return Var<S>::from_op(std::move(out), {x}, [](Node<S>& self) {
        Node<S>& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        const auto y = self.value.vec().array();
        in.grad_buffer().vec().array() += self.grad.vec().array() * (S(1) - y.square());
    });
}

template <typename S>
Var<S> sum(const Var<S>& x)
{
    Tensor<S> out({1});
    out[0] = x.value().vec().sum();
    return Var<S>::from_op(std::move(out), {x}, [](Node<S>& self) {
        Node<S>& in = *self.inputs[0];
        if (in.requires_grad) {
            in.grad_buffer().vec().array() += self.grad[0];
        }
    });
}

template <typename S>
Var<S> mean(const Var<S>& x)
{
    const auto n = static_cast<S>(x.value().size());
    return scale(sum(x), S(1) / n);
}

template <typename S>
Var<S> add_bias(const Var<S>& x, const Var<S>& bias, int axis)
{
    const Shape& s = x.shape();
    axis = normalize_axis(axis, static_cast<int>(s.size()));
    const int channels = s[static_cast<std::size_t>(axis)];
    if (bias.value().size() != channels) {
        throw ShapeError("add_bias: bias size " + std::to_string(bias.value().size()) + " vs channels " + std::to_string(channels));
    }
    const Index outer = prod(s, 0, axis);
    const Index inner = prod(s, axis + 1, static_cast<int>(s.size()));
    Tensor<S> out = x.value();
    for (Index o = 0; o < outer; ++o) {
        for (int c = 0; c < channels; ++c) {
            out.vec().segment((o * channels + c) * inner, inner).array() += bias.value()[c];
        }
    }
    return Var<S>::from_op(std::move(out), {x, bias}, [outer, inner, channels](Node<S>& self) {
        accumulate(*self.inputs[0], self.grad.vec());
        Node<S>& nb = *self.inputs[1];
        if (nb.requires_grad) {
            Vec<S>& gb = nb.grad_buffer().vec();
            for (Index o = 0; o < outer; ++o) {
                for (int c = 0; c < channels; ++c) {
                    gb[c] += self.grad.vec().segment((o * channels + c) * inner, inner).sum();
                }
            }
        }
    });
}

template <typename S>
Var<S> add_per_sample(const Var<S>& x, const Var<S>& e, int axis)
{
    const Shape& s = x.shape();
    axis = normalize_axis(axis, static_cast<int>(s.size()));
    const int batch = s[0];
    const int channels = s[static_cast<std::size_t>(axis)];
    if (e.shape() != Shape{batch, channels}) {
        throw ShapeError("add_per_sample: expected [" + std::to_string(batch) + ", " + std::to_string(channels) +
                         "], got " + shape_string(e.shape()));
    }
    const Index middle = prod(s, 1, axis);
    const Index inner = prod(s, axis + 1, static_cast<int>(s.size()));
    Tensor<S> out = x.value();
    for (int b = 0; b < batch; ++b) {
        for (Index m = 0; m < middle; ++m) {
            for (int c = 0; c < channels; ++c) {
                const Index at = ((b * middle + m) * channels + c) * inner;
                out.vec().segment(at, inner).array() += e.value()[b * channels + c];
            }
        }
    }
    return Var<S>::from_op(std::move(out), {x, e}, [batch, middle, channels, inner](Node<S>& self) {
        accumulate(*self.inputs[0], self.grad.vec());
        Node<S>& ne = *self.inputs[1];
        if (ne.requires_grad) {
            Vec<S>& ge = ne.grad_buffer().vec();
            for (int b = 0; b < batch; ++b) {
                for (Index m = 0; m < middle; ++m) {
                    for (int c = 0; c < channels; ++c) {
                        const Index at = ((b * middle + m) * channels + c) * inner;
                        ge[b * channels + c] += self.grad.vec().segment(at, inner).sum();
                    }
                }
            }
        }
    });
}

template <typename S>
Var<S> mul_per_sample(const Var<S>& x, const Var<S>& g, int axis)
{
    const Shape& s = x.shape();
    axis = normalize_axis(axis, static_cast<int>(s.size()));
    const int batch = s[0];
    const int channels = s[static_cast<std::size_t>(axis)];
    if (g.shape() != Shape{batch, channels}) {
        throw ShapeError("mul_per_sample: expected [" + std::to_string(batch) + ", " + std::to_string(channels) +
                         "], got " + shape_string(g.shape()));
    }
    const Index middle = prod(s, 1, axis);
    const Index inner = prod(s, axis + 1, static_cast<int>(s.size()));
    Tensor<S> out = x.value();
    for (int b = 0; b < batch; ++b) {
        for (Index m = 0; m < middle; ++m) {
            for (int c = 0; c < channels; ++c) {
                const Index at = ((b * middle + m) * channels + c) * inner;
                out.vec().segment(at, inner) *= g.value()[b * channels + c];
            }
        }
    }
    return Var<S>::from_op(std::move(out), {x, g}, [batch, middle, channels, inner](Node<S>& self) {
        Node<S>& nx = *self.inputs[0];
        Node<S>& ng = *self.inputs[1];
        for (int b = 0; b < batch; ++b) {
            for (Index m = 0; m < middle; ++m) {
                for (int c = 0; c < channels; ++c) {
                    const Index at = ((b * middle + m) * channels + c) * inner;
                    const auto dy = self.grad.vec().segment(at, inner);
                    if (nx.requires_grad) {
                        nx.grad_buffer().vec().segment(at, inner) += dy * ng.value[b * channels + c];
                    }
                    if (ng.requires_grad) {
                        ng.grad_buffer()[b * channels + c] += dy.dot(nx.value.vec().segment(at, inner));
                    }
                }
            }
        }
    });
}

template <typename S>
Var<S> mul_mask(const Var<S>& x, const Var<S>& mask)
{
    const Shape& s = x.shape();
    require_rank(s, 4, "mul_mask");
    if (mask.shape() != Shape{s[0], 1, s[2], s[3]}) {
        throw ShapeError("mul_mask: mask must be [B, 1, H, W], got " + shape_string(mask.shape()));
    }
    const int batch = s[0];
    const int channels = s[1];
    const Index plane = static_cast<Index>(s[2]) * s[3];
    Tensor<S> out = x.value();
    for (int b = 0; b < batch; ++b) {
        const auto m = mask.value().vec().segment(b * plane, plane).array();
        for (int c = 0; c < channels; ++c) {
            out.vec().segment((b * channels + c) * plane, plane).array() *= m;
        }
    }
    return Var<S>::from_op(std::move(out), {x, mask}, [batch, channels, plane](Node<S>& self) {
        Node<S>& nx = *self.inputs[0];
        Node<S>& nm = *self.inputs[1];
        for (int b = 0; b < batch; ++b) {
            for (int c = 0; c < channels; ++c) {
                const Index at = (b * channels + c) * plane;
                const auto go = self.grad.vec().segment(at, plane).array();
                if (nx.requires_grad) {
                    nx.grad_buffer().vec().segment(at, plane).array() += go * nm.value.vec().segment(b * plane, plane).array();
                }
                if (nm.requires_grad) {
                    nm.grad_buffer().vec().segment(b * plane, plane).array() += go * nx.value.vec().segment(at, plane).array();
                }
            }
        }
    });
}

template <typename S>
Var<S> repeat_frames(const Var<S>& x, int frames)
{
    const Shape& s = x.shape();
    require_rank(s, 4, "repeat_frames");
    const int batch = s[0];
    const Index per = prod(s, 1, 4);
    Tensor<S> out({batch, frames, s[1], s[2], s[3]});
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < frames; ++t) {
            out.vec().segment((static_cast<Index>(b) * frames + t) * per, per) = x.value().vec().segment(b * per, per);
        }
    }
    return Var<S>::from_op(std::move(out), {x}, [batch, frames, per](Node<S>& self) {
        Node<S>& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        Vec<S>& g = in.grad_buffer().vec();
        for (int b = 0; b < batch; ++b) {
            for (int t = 0; t < frames; ++t) {
                g.segment(b * per, per) += self.grad.vec().segment((static_cast<Index>(b) * frames + t) * per, per);
            }
        }
    });
}

template <typename S>
Var<S> reshape(const Var<S>& x, Shape shape)
{
    Tensor<S> out = x.value().reshaped(std::move(shape));
    return Var<S>::from_op(std::move(out), {x}, [](Node<S>& self) {
        accumulate(*self.inputs[0], self.grad.vec());
    });
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts, int axis)
{
    if (parts.empty()) {
        throw ShapeError("concat: no inputs");
    }
    const Shape& s0 = parts.front().shape();
    const int rank = static_cast<int>(s0.size());
    axis = normalize_axis(axis, rank);
    const Index outer = prod(s0, 0, axis);
    const Index inner = prod(s0, axis + 1, rank);
    std::vector<int> sizes;
    int total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (static_cast<int>(s.size()) != rank) {
            throw ShapeError("concat: rank mismatch");
        }
        for (int d = 0; d < rank; ++d) {
            if (d != axis && s[static_cast<std::size_t>(d)] != s0[static_cast<std::size_t>(d)]) {
                throw ShapeError("concat: shape mismatch " + shape_string(s) + " vs " + shape_string(s0));
            }
        }
        sizes.push_back(s[static_cast<std::size_t>(axis)]);
        total += sizes.back();
    }
    Shape out_shape = s0;
    out_shape[static_cast<std::size_t>(axis)] = total;
    Tensor<S> out(out_shape);
    for (Index o = 0; o < outer; ++o) {
        Index offset = o * total * inner;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const Index n = sizes[i] * inner;
            out.vec().segment(offset, n) = parts[i].value().vec().segment(o * n, n);
            offset += n;
        }
    }
    return Var<S>::from_op(std::move(out), parts, [outer, inner, total, sizes](Node<S>& self) {
        for (Index o = 0; o < outer; ++o) {
            Index offset = o * total * inner;
            for (std::size_t i = 0; i < sizes.size(); ++i) {
                const Index n = sizes[i] * inner;
                Node<S>& in = *self.inputs[i];
                if (in.requires_grad) {
                    in.grad_buffer().vec().segment(o * n, n) += self.grad.vec().segment(offset, n);
                }
                offset += n;
            }
        }
    });
}

template <typename S>
Var<S> slice(const Var<S>& x, int axis, int begin, int end)
{
    const Shape& s = x.shape();
    const int rank = static_cast<int>(s.size());
    axis = normalize_axis(axis, rank);
    const int full = s[static_cast<std::size_t>(axis)];
    if (begin < 0 || end > full || begin >= end) {
        throw ShapeError("slice: bad range");
    }
    const Index outer = prod(s, 0, axis);
    const Index inner = prod(s, axis + 1, rank);
    Shape out_shape = s;
    out_shape[static_cast<std::size_t>(axis)] = end - begin;
    Tensor<S> out(out_shape);
    const Index n = static_cast<Index>(end - begin) * inner;
    for (Index o = 0; o < outer; ++o) {
        out.vec().segment(o * n, n) = x.value().vec().segment((o * full + begin) * inner, n);
    }
    return Var<S>::from_op(std::move(out), {x}, [outer, inner, full, begin, n](Node<S>& self) {
        Node<S>& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        for (Index o = 0; o < outer; ++o) {
            in.grad_buffer().vec().segment((o * full + begin) * inner, n) += self.grad.vec().segment(o * n, n);
        }
    });
}

template <typename S>
Var<S> transpose(const Var<S>& x)
{
    require_rank(x.shape(), 2, "transpose");
    const int r = x.dim(0);
    const int c = x.dim(1);
    Tensor<S> out({c, r});
    out.matrix(c, r) = x.value().matrix(r, c).transpose();
    return Var<S>::from_op(std::move(out), {x}, [r, c](Node<S>& self) {
        Node<S>& in = *self.inputs[0];
        if (in.requires_grad) {
            in.grad_buffer().matrix(r, c) += self.grad.matrix(c, r).transpose();
        }
    });
}

namespace {

struct ConvGeometry {
    int ci, h, w, k, stride, pad, ho, wo;
    [[nodiscard]] Index rows() const { return static_cast<Index>(ci) * k * k; }
    [[nodiscard]] Index cols() const { return static_cast<Index>(ho) * wo; }
    [[nodiscard]] bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) read inside the input row for kernel offset kx.
inline void valid_range(const ConvGeometry& g, int kx, int& lo, int& hi)
{
    const int off = kx - g.pad;
    lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
    hi = g.w - 1 - off < 0 ? 0 : std::min(g.wo, (g.w - 1 - off) / g.stride + 1);
    lo = std::min(lo, hi);
}

template <typename S>
void im2col(const S* x, const ConvGeometry& g, S* cols)
{
    for (int c = 0; c < g.ci; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                S* row = cols + ((static_cast<Index>(c) * g.k + ky) * g.k + kx) * g.cols();
                int lo = 0;
                int hi = 0;
                valid_range(g, kx, lo, hi);
                const int off = kx - g.pad;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    S* dst = row + static_cast<Index>(oy) * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wo, S(0));
                        continue;
                    }
                    const S* src = x + (static_cast<Index>(c) * g.h + iy) * g.w + off;
                    std::fill(dst, dst + lo, S(0));
                    if (g.stride == 1) {
                        std::copy(src + lo, src + hi, dst + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) {
                            dst[ox] = src[ox * g.stride];
                        }
                    }
                    std::fill(dst + hi, dst + g.wo, S(0));
                }
            }
        }
    }
}

template <typename S>
void col2im(const S* cols, const ConvGeometry& g, S* dx)
{
    for (int c = 0; c < g.ci; ++c) {
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                const S* row = cols + ((static_cast<Index>(c) * g.k + ky) * g.k + kx) * g.cols();
                int lo = 0;
                int hi = 0;
                valid_range(g, kx, lo, hi);
                const int off = kx - g.pad;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) {
                        continue;
                    }
                    const S* src = row + static_cast<Index>(oy) * g.wo;
                    S* dst = dx + (static_cast<Index>(c) * g.h + iy) * g.w + off;
                    if (g.stride == 1) {
                        for (int ox = lo; ox < hi; ++ox) {
                            dst[ox] += src[ox];
                        }
                    } else {
                        for (int ox = lo; ox < hi; ++ox) {
                            dst[ox * g.stride] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, int pad)
{
    const Shape& s = x.shape();
    require_rank(s, 4, "conv2d");
    const Shape& ws = weight.shape();
    require_rank(ws, 4, "conv2d weight");
    if (ws[1] != s[1] || ws[2] != ws[3]) {
        throw ShapeError("conv2d: input " + shape_string(s) + " incompatible with weight " + shape_string(ws));
    }
    const int batch = s[0];
    const int co = ws[0];
    ConvGeometry g{s[1], s[2], s[3], ws[2], stride, pad, 0, 0};
    g.ho = (g.h + 2 * pad - g.k) / stride + 1;
    g.wo = (g.w + 2 * pad - g.k) / stride + 1;
    const bool has_bias = bias.defined();

    Tensor<S> out({batch, co, g.ho, g.wo});
    const Index in_per = static_cast<Index>(g.ci) * g.h * g.w;
    const Index out_per = co * g.cols();
    const CMap<S> wm(weight.value().data(), co, g.rows());
    Vec<S> cols(g.pointwise() ? 0 : g.rows() * g.cols());
    for (int b = 0; b < batch; ++b) {
        const S* xb = x.value().data() + b * in_per;
        Map<S> ob(out.data() + b * out_per, co, g.cols());
        if (g.pointwise()) {
            ob.noalias() = wm * CMap<S>(xb, g.rows(), g.cols());
        } else {
            im2col(xb, g, cols.data());
            ob.noalias() = wm * CMap<S>(cols.data(), g.rows(), g.cols());
        }
        if (has_bias) {
            ob.colwise() += bias.value().vec();
        }
    }

    std::vector<Var<S>> inputs{x, weight};
    if (has_bias) {
        inputs.push_back(bias);
    }
    return Var<S>::from_op(std::move(out), std::move(inputs), [g, batch, co, in_per, out_per, has_bias](Node<S>& self) {
        Node<S>& nx = *self.inputs[0];
        Node<S>& nw = *self.inputs[1];
        const CMap<S> wm(nw.value.data(), co, g.rows());
        Vec<S> cols(g.pointwise() ? 0 : g.rows() * g.cols());
        RowMat<S> dcols;
        for (int b = 0; b < batch; ++b) {
            const CMap<S> gob(self.grad.data() + b * out_per, co, g.cols());
            const S* xb = nx.value.data() + b * in_per;
            if (nw.requires_grad) {
                Map<S> gw(nw.grad_buffer().data(), co, g.rows());
                if (g.pointwise()) {
                    gw.noalias() += gob * CMap<S>(xb, g.rows(), g.cols()).transpose();
                } else {
                    im2col(xb, g, cols.data());
                    gw.noalias() += gob * CMap<S>(cols.data(), g.rows(), g.cols()).transpose();
                }
            }
            if (has_bias && self.inputs[2]->requires_grad) {
                self.inputs[2]->grad_buffer().vec() += gob.rowwise().sum();
            }
            if (nx.requires_grad) {
                S* gx = nx.grad_buffer().data() + b * in_per;
                if (g.pointwise()) {
                    Map<S>(gx, g.rows(), g.cols()).noalias() += wm.transpose() * gob;
                } else {
                    dcols.noalias() = wm.transpose() * gob;
                    col2im(dcols.data(), g, gx);
                }
            }
        }
    });
}

template <typename S>
Var<S> conv_time(const Var<S>& x, const Var<S>& weight, const Var<S>& bias)
{
    const Shape& s = x.shape();
    require_rank(s, 5, "conv_time");
    const Shape& ws = weight.shape();
    require_rank(ws, 3, "conv_time weight");
    const int batch = s[0];
    const int frames = s[1];
    const int ci = s[2];
    const Index plane = static_cast<Index>(s[3]) * s[4];
    const int k = ws[0];
    const int co = ws[1];
    if (ws[2] != ci || k % 2 == 0) {
        throw ShapeError("conv_time: input " + shape_string(s) + " incompatible with weight " + shape_string(ws));
    }
    const int pad = k / 2;
    const bool has_bias = bias.defined();
    Tensor<S> out({batch, frames, co, s[3], s[4]});
    const Index in_frame = ci * plane;
    const Index out_frame = co * plane;
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < frames; ++t) {
            Map<S> ot(out.data() + (static_cast<Index>(b) * frames + t) * out_frame, co, plane);
            for (int j = 0; j < k; ++j) {
                const int src = t + j - pad;
                if (src < 0 || src >= frames) {
                    continue;
                }
                const CMap<S> wj(weight.value().data() + static_cast<Index>(j) * co * ci, co, ci);
                ot.noalias() += wj * CMap<S>(x.value().data() + (static_cast<Index>(b) * frames + src) * in_frame, ci, plane);
            }
            if (has_bias) {
                ot.colwise() += bias.value().vec();
            }
        }
    }
    std::vector<Var<S>> inputs{x, weight};
    if (has_bias) {
        inputs.push_back(bias);
    }
    return Var<S>::from_op(std::move(out), std::move(inputs),
                           [batch, frames, ci, co, plane, k, pad, in_frame, out_frame, has_bias](Node<S>& self) {
        Node<S>& nx = *self.inputs[0];
        Node<S>& nw = *self.inputs[1];
        for (int b = 0; b < batch; ++b) {
            for (int t = 0; t < frames; ++t) {
                const CMap<S> got(self.grad.data() + (static_cast<Index>(b) * frames + t) * out_frame, co, plane);
                if (has_bias && self.inputs[2]->requires_grad) {
                    self.inputs[2]->grad_buffer().vec() += got.rowwise().sum();
                }
                for (int j = 0; j < k; ++j) {
                    const int src = t + j - pad;
                    if (src < 0 || src >= frames) {
                        continue;
                    }
                    const Index src_at = (static_cast<Index>(b) * frames + src) * in_frame;
                    if (nw.requires_grad) {
                        Map<S> gw(nw.grad_buffer().data() + static_cast<Index>(j) * co * ci, co, ci);
                        gw.noalias() += got * CMap<S>(nx.value.data() + src_at, ci, plane).transpose();
                    }
                    if (nx.requires_grad) {
                        const CMap<S> wj(nw.value.data() + static_cast<Index>(j) * co * ci, co, ci);
                        Map<S>(nx.grad_buffer().data() + src_at, ci, plane).noalias() += wj.transpose() * got;
                    }
                }
            }
        }
    });
}

template <typename S>
Var<S> upsample2x(const Var<S>& x)
{
    const Shape& s = x.shape();
    require_rank(s, 4, "upsample2x");
    const Index planes = static_cast<Index>(s[0]) * s[1];
    const int h = s[2];
    const int w = s[3];
    Tensor<S> out({s[0], s[1], 2 * h, 2 * w});
    for (Index p = 0; p < planes; ++p) {
        for (int y = 0; y < h; ++y) {
            const S* src = x.value().data() + (p * h + y) * w;
            S* dst = out.data() + (p * 2 * h + 2 * y) * 2 * w;
            for (int xx = 0; xx < w; ++xx) {
                dst[2 * xx] = src[xx];
                dst[2 * xx + 1] = src[xx];
            }
            std::copy(dst, dst + 2 * w, dst + 2 * w);
        }
    }
    return Var<S>::from_op(std::move(out), {x}, [planes, h, w](Node<S>& self) {
        Node<S>& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        S* base = in.grad_buffer().data();
        for (Index p = 0; p < planes; ++p) {
            for (int y = 0; y < h; ++y) {
                const S* r0 = self.grad.data() + (p * 2 * h + 2 * y) * 2 * w;
                const S* r1 = r0 + 2 * w;
                S* dst = base + (p * h + y) * w;
                for (int xx = 0; xx < w; ++xx) {
                    dst[xx] += r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1];
                }
            }
        }
    });
}

template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias)
{
    require_rank(x.shape(), 2, "linear");
    const int batch = x.dim(0);
    const int in = x.dim(1);
    const int outf = weight.dim(0);
    if (weight.shape() != Shape{outf, in}) {
        throw ShapeError("linear: input " + shape_string(x.shape()) + " incompatible with weight " + shape_string(weight.shape()));
    }
    const bool has_bias = bias.defined();
    Tensor<S> out({batch, outf});
    out.matrix(batch, outf).noalias() = x.value().matrix(batch, in) * weight.value().matrix(outf, in).transpose();
    if (has_bias) {
        out.matrix(batch, outf).rowwise() += bias.value().vec().transpose();
    }
    std::vector<Var<S>> inputs{x, weight};
    if (has_bias) {
        inputs.push_back(bias);
    }
    return Var<S>::from_op(std::move(out), std::move(inputs), [batch, in, outf, has_bias](Node<S>& self) {
        Node<S>& nx = *self.inputs[0];
        Node<S>& nw = *self.inputs[1];
        const auto go = self.grad.matrix(batch, outf);
        if (nx.requires_grad) {
            nx.grad_buffer().matrix(batch, in).noalias() += go * nw.value.matrix(outf, in);
        }
        if (nw.requires_grad) {
            nw.grad_buffer().matrix(outf, in).noalias() += go.transpose() * nx.value.matrix(batch, in);
        }
        if (has_bias && self.inputs[2]->requires_grad) {
            self.inputs[2]->grad_buffer().vec() += go.colwise().sum().transpose();
        }
    });
}

template <typename S>
Var<S> matmul_nt(const Var<S>& a, const Var<S>& b)
{
    require_rank(a.shape(), 2, "matmul_nt");
    require_rank(b.shape(), 2, "matmul_nt");
    const int n = a.dim(0);
    const int d = a.dim(1);
    const int k = b.dim(0);
    if (b.dim(1) != d) {
        throw ShapeError("matmul_nt: inner dimension mismatch");
    }
    Tensor<S> out({n, k});
    out.matrix(n, k).noalias() = a.value().matrix(n, d) * b.value().matrix(k, d).transpose();
    return Var<S>::from_op(std::move(out), {a, b}, [n, d, k](Node<S>& self) {
        Node<S>& na = *self.inputs[0];
        Node<S>& nb = *self.inputs[1];
        const auto go = self.grad.matrix(n, k);
        if (na.requires_grad) {
            na.grad_buffer().matrix(n, d).noalias() += go * nb.value.matrix(k, d);
        }
        if (nb.requires_grad) {
            nb.grad_buffer().matrix(k, d).noalias() += go.transpose() * na.value.matrix(n, d);
        }
    });
}

template <typename S>
Var<S> group_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, int groups, int channel_axis, S eps)
{
    const Shape& s = x.shape();
    const int rank = static_cast<int>(s.size());
    channel_axis = normalize_axis(channel_axis, rank);
    const int batch = s[0];
    const int channels = s[static_cast<std::size_t>(channel_axis)];
    if (channels % groups != 0) {
        throw ShapeError("group_norm: channels not divisible by groups");
    }
    if (gamma.value().size() != channels || beta.value().size() != channels) {
        throw ShapeError("group_norm: affine size mismatch");
    }
    const Index middle = prod(s, 1, channel_axis);
    const Index inner = prod(s, channel_axis + 1, rank);
    const int per_group = channels / groups;
    const Index count = middle * per_group * inner;

    Tensor<S> xhat(s);
    Vec<S> inv_std(static_cast<Index>(batch) * groups);
    Tensor<S> out(s);
    for (int b = 0; b < batch; ++b) {
        for (int gidx = 0; gidx < groups; ++gidx) {
            S total = 0;
            for (Index m = 0; m < middle; ++m) {
                const Index at = ((b * middle + m) * channels + gidx * per_group) * inner;
                total += x.value().vec().segment(at, per_group * inner).sum();
            }
            const S mu = total / static_cast<S>(count);
            S var = 0;
            for (Index m = 0; m < middle; ++m) {
                const Index at = ((b * middle + m) * channels + gidx * per_group) * inner;
                var += (x.value().vec().segment(at, per_group * inner).array() - mu).square().sum();
            }
            var /= static_cast<S>(count);
            const S istd = S(1) / std::sqrt(var + eps);
            inv_std[b * groups + gidx] = istd;
            for (Index m = 0; m < middle; ++m) {
                for (int c = gidx * per_group; c < (gidx + 1) * per_group; ++c) {
                    const Index at = ((b * middle + m) * channels + c) * inner;
                    auto xh = xhat.vec().segment(at, inner).array();
                    xh = (x.value().vec().segment(at, inner).array() - mu) * istd;
                    out.vec().segment(at, inner).array() = xh * gamma.value()[c] + beta.value()[c];
                }
            }
        }
    }
    return Var<S>::from_op(std::move(out), {x, gamma, beta},
                           [xhat = std::move(xhat), inv_std = std::move(inv_std), batch, groups, per_group, channels, middle,
                            inner, count](Node<S>& self) {
        Node<S>& nx = *self.inputs[0];
        Node<S>& ng = *self.inputs[1];
        Node<S>& nb = *self.inputs[2];
        const Vec<S>& go = self.grad.vec();
        for (int b = 0; b < batch; ++b) {
            for (int gidx = 0; gidx < groups; ++gidx) {
                S sum_d = 0;
                S sum_dx = 0;
                for (Index m = 0; m < middle; ++m) {
                    for (int c = gidx * per_group; c < (gidx + 1) * per_group; ++c) {
                        const Index at = ((b * middle + m) * channels + c) * inner;
                        const auto g = go.segment(at, inner).array();
                        const auto xh = xhat.vec().segment(at, inner).array();
                        if (ng.requires_grad) {
                            ng.grad_buffer()[c] += (g * xh).sum();
                        }
                        if (nb.requires_grad) {
                            nb.grad_buffer()[c] += g.sum();
                        }
                        const S gam = ng.value[c];
                        sum_d += g.sum() * gam;
                        sum_dx += (g * xh).sum() * gam;
                    }
                }
                if (!nx.requires_grad) {
                    continue;
                }
                const S istd = inv_std[b * groups + gidx];
                const S n = static_cast<S>(count);
                for (Index m = 0; m < middle; ++m) {
                    for (int c = gidx * per_group; c < (gidx + 1) * per_group; ++c) {
                        const Index at = ((b * middle + m) * channels + c) * inner;
                        const S gam = ng.value[c];
                        nx.grad_buffer().vec().segment(at, inner).array() +=
                            istd / n *
                            (n * gam * go.segment(at, inner).array() - sum_d - xhat.vec().segment(at, inner).array() * sum_dx);
                    }
                }
            }
        }
    });
}

template <typename S>
Var<S> global_avg_pool(const Var<S>& x)
{
    const Shape& s = x.shape();
    require_rank(s, 4, "global_avg_pool");
    const int batch = s[0];
    const int channels = s[1];
    const Index plane = static_cast<Index>(s[2]) * s[3];
    Tensor<S> out({batch, channels});
    out.vec() = x.value().matrix(static_cast<Index>(batch) * channels, plane).rowwise().mean();
    return Var<S>::from_op(std::move(out), {x}, [batch, channels, plane](Node<S>& self) {
        Node<S>& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        auto g = in.grad_buffer().matrix(static_cast<Index>(batch) * channels, plane);
        g.colwise() += self.grad.vec() / static_cast<S>(plane);
    });
}

template <typename S>
Var<S> l2_normalize(const Var<S>& x, S eps)
{
    require_rank(x.shape(), 2, "l2_normalize");
    const int n = x.dim(0);
    const int d = x.dim(1);
    Tensor<S> out(x.shape());
    Vec<S> norms(n);
    for (int i = 0; i < n; ++i) {
        norms[i] = std::max(x.value().matrix(n, d).row(i).norm(), eps);
        out.matrix(n, d).row(i) = x.value().matrix(n, d).row(i) / norms[i];
    }
    return Var<S>::from_op(std::move(out), {x}, [n, d, norms](Node<S>& self) {
        Node<S>& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        for (int i = 0; i < n; ++i) {
            const auto y = self.value.matrix(n, d).row(i);
            const auto g = self.grad.matrix(n, d).row(i);
            in.grad_buffer().matrix(n, d).row(i) += (g - y * g.dot(y)) / norms[i];
        }
    });
}

template <typename S>
Var<S> cross_entropy(const Var<S>& logits, std::span<const int> labels)
{
    require_rank(logits.shape(), 2, "cross_entropy");
    const int n = logits.dim(0);
    const int k = logits.dim(1);
    if (static_cast<int>(labels.size()) != n) {
        throw ShapeError("cross_entropy: label count mismatch");
    }
    RowMat<S> probs(n, k);
    S loss = 0;
    std::vector<int> lab(labels.begin(), labels.end());
    for (int i = 0; i < n; ++i) {
        const auto row = logits.value().matrix(n, k).row(i);
        const S mx = row.maxCoeff();
        const auto e = (row.array() - mx).exp();
        const S z = e.sum();
        probs.row(i) = e / z;
        loss += -(row[lab[static_cast<std::size_t>(i)]] - mx - std::log(z));
    }
    Tensor<S> out({1});
    out[0] = loss / static_cast<S>(n);
    return Var<S>::from_op(std::move(out), {logits}, [probs = std::move(probs), lab, n, k](Node<S>& self) {
        Node<S>& in = *self.inputs[0];
        if (!in.requires_grad) {
            return;
        }
        RowMat<S> g = probs;
        for (int i = 0; i < n; ++i) {
            g(i, lab[static_cast<std::size_t>(i)]) -= S(1);
        }
        in.grad_buffer().matrix(n, k) += g * (self.grad[0] / static_cast<S>(n));
    });
}

template <typename S>
Var<S> mse(const Var<S>& a, const Var<S>& b)
{
    require_same_shape(a.shape(), b.shape(), "mse");
    const Vec<S> diff = a.value().vec() - b.value().vec();
    const auto n = static_cast<S>(diff.size());
    Tensor<S> out({1});
    out[0] = diff.squaredNorm() / n;
    return Var<S>::from_op(std::move(out), {a, b}, [diff, n](Node<S>& self) {
        const S g = S(2) * self.grad[0] / n;
        accumulate(*self.inputs[0], diff * g);
        accumulate(*self.inputs[1], -diff * g);
    });
}

template <typename S>
Var<S> channel_l1(const Var<S>& a, const Var<S>& b)
{
    require_same_shape(a.shape(), b.shape(), "channel_l1");
    const Shape& s = a.shape();
    // Per-channel mean over batch and spatial axes, summed over channels:
    // equivalently the total absolute difference divided by the element count per channel.
    const Index per_channel = a.value().size() / s[1];
    const Vec<S> diff = a.value().vec() - b.value().vec();
    Tensor<S> out({1});
    out[0] = diff.cwiseAbs().sum() / static_cast<S>(per_channel);
    return Var<S>::from_op(std::move(out), {a, b}, [diff, per_channel](Node<S>& self) {
        const Vec<S> g = diff.unaryExpr([](S v) { return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0)); }) *
                         (self.grad[0] / static_cast<S>(per_channel));
        accumulate(*self.inputs[0], g);
        accumulate(*self.inputs[1], -g);
    });
}

template <typename S>
Var<S> grid_sample(const Var<S>& z, const Var<S>& flow)
{
    const Shape& s = z.shape();
    require_rank(s, 4, "grid_sample");
    const int batch = s[0];
    const int channels = s[1];
    const int h = s[2];
    const int w = s[3];
    if (flow.shape() != Shape{batch, 2, h, w}) {
        throw ShapeError("grid_sample: flow must be [B, 2, H, W] matching " + shape_string(s) + ", got " +
                         shape_string(flow.shape()));
    }
    const Index plane = static_cast<Index>(h) * w;
    const S half_w = S(w - 1) / S(2);
    const S half_h = S(h - 1) / S(2);
    // Positions within this distance of a grid line snap onto it, so whole-cell
    // flows reproduce an exact shift despite rounding in the normalised units.
    const S snap = S(1e-5);

    struct Sample {
        int x0, x1, y0, y1;
        S wx, wy;
        bool clamp_x, clamp_y;
    };
    std::vector<Sample> samples(static_cast<std::size_t>(batch * plane));
    Tensor<S> out(s);
    for (int b = 0; b < batch; ++b) {
        const S* fx = flow.value().data() + (static_cast<Index>(b) * 2) * plane;
        const S* fy = fx + plane;
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                const Index p = static_cast<Index>(i) * w + j;
                S sx = S(j) + fx[p] * half_w;
                S sy = S(i) + fy[p] * half_h;
                Sample smp{};
                smp.clamp_x = sx < S(0) || sx > S(w - 1);
                smp.clamp_y = sy < S(0) || sy > S(h - 1);
                sx = std::clamp(sx, S(0), S(w - 1));
                sy = std::clamp(sy, S(0), S(h - 1));
                if (std::abs(sx - std::round(sx)) < snap) {
                    sx = std::round(sx);
                }
                if (std::abs(sy - std::round(sy)) < snap) {
                    sy = std::round(sy);
                }
                smp.x0 = std::min(static_cast<int>(std::floor(sx)), w - 1);
                smp.y0 = std::min(static_cast<int>(std::floor(sy)), h - 1);
                smp.x1 = std::min(smp.x0 + 1, w - 1);
                smp.y1 = std::min(smp.y0 + 1, h - 1);
                smp.wx = sx - S(smp.x0);
                smp.wy = sy - S(smp.y0);
                samples[static_cast<std::size_t>(b * plane + p)] = smp;
                for (int c = 0; c < channels; ++c) {
                    const S* zc = z.value().data() + (static_cast<Index>(b) * channels + c) * plane;
                    const S top = (S(1) - smp.wx) * zc[smp.y0 * w + smp.x0] + smp.wx * zc[smp.y0 * w + smp.x1];
                    const S bot = (S(1) - smp.wx) * zc[smp.y1 * w + smp.x0] + smp.wx * zc[smp.y1 * w + smp.x1];
                    out.data()[(static_cast<Index>(b) * channels + c) * plane + p] = (S(1) - smp.wy) * top + smp.wy * bot;
                }
            }
        }
    }
    return Var<S>::from_op(std::move(out), {z, flow},
                           [samples = std::move(samples), batch, channels, h, w, plane, half_w, half_h](Node<S>& self) {
        Node<S>& nz = *self.inputs[0];
        Node<S>& nf = *self.inputs[1];
        for (int b = 0; b < batch; ++b) {
            for (Index p = 0; p < plane; ++p) {
                const Sample& smp = samples[static_cast<std::size_t>(b * plane + p)];
                S dsx = 0;
                S dsy = 0;
                for (int c = 0; c < channels; ++c) {
                    const Index zoff = (static_cast<Index>(b) * channels + c) * plane;
                    const S go = self.grad.data()[zoff + p];
                    if (go == S(0)) {
                        continue;
                    }
                    const S* zc = nz.value.data() + zoff;
                    const S v00 = zc[smp.y0 * w + smp.x0];
                    const S v01 = zc[smp.y0 * w + smp.x1];
                    const S v10 = zc[smp.y1 * w + smp.x0];
                    const S v11 = zc[smp.y1 * w + smp.x1];
                    if (nz.requires_grad) {
                        S* gz = nz.grad_buffer().data() + zoff;
                        gz[smp.y0 * w + smp.x0] += go * (S(1) - smp.wx) * (S(1) - smp.wy);
                        gz[smp.y0 * w + smp.x1] += go * smp.wx * (S(1) - smp.wy);
                        gz[smp.y1 * w + smp.x0] += go * (S(1) - smp.wx) * smp.wy;
                        gz[smp.y1 * w + smp.x1] += go * smp.wx * smp.wy;
                    }
                    dsx += go * ((S(1) - smp.wy) * (v01 - v00) + smp.wy * (v11 - v10));
                    dsy += go * ((S(1) - smp.wx) * (v10 - v00) + smp.wx * (v11 - v01));
                }
                if (nf.requires_grad) {
                    S* gf = nf.grad_buffer().data() + static_cast<Index>(b) * 2 * plane;
                    if (!smp.clamp_x) {
                        gf[p] += dsx * half_w;
                    }
                    if (!smp.clamp_y) {
                        gf[plane + p] += dsy * half_h;
                    }
                }
            }
        }
    });
}

#define BEATFLOW_INSTANTIATE_OPS(S)                                                                          \
    template Var<S> add(const Var<S>&, const Var<S>&);                                                     \
    template Var<S> sub(const Var<S>&, const Var<S>&);                                                     \
    template Var<S> mul(const Var<S>&, const Var<S>&);                                                     \
    template Var<S> scale(const Var<S>&, S);                                                               \
    template Var<S> add_scalar(const Var<S>&, S);                                                          \
    template Var<S> relu(const Var<S>&);                                                                   \
    template Var<S> silu(const Var<S>&);                                                                   \
    template Var<S> sigmoid(const Var<S>&);                                                                \
    template Var<S> tanh(const Var<S>&);                                                                   \
    template Var<S> sum(const Var<S>&);                                                                    \
    template Var<S> mean(const Var<S>&);                                                                   \
    template Var<S> add_bias(const Var<S>&, const Var<S>&, int);                                           \
    template Var<S> add_per_sample(const Var<S>&, const Var<S>&, int);                                     \
    template Var<S> mul_per_sample(const Var<S>&, const Var<S>&, int);                                     \
    template Var<S> mul_mask(const Var<S>&, const Var<S>&);                                                \
    template Var<S> repeat_frames(const Var<S>&, int);                                                     \
    template Var<S> reshape(const Var<S>&, Shape);                                                         \
    template Var<S> concat(const std::vector<Var<S>>&, int);                                               \
    template Var<S> slice(const Var<S>&, int, int, int);                                                   \
    template Var<S> transpose(const Var<S>&);                                                              \
    template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, int, int);                         \
    template Var<S> conv_time(const Var<S>&, const Var<S>&, const Var<S>&);                                \
    template Var<S> upsample2x(const Var<S>&);                                                             \
    template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                                   \
    template Var<S> matmul_nt(const Var<S>&, const Var<S>&);                                               \
    template Var<S> group_norm(const Var<S>&, const Var<S>&, const Var<S>&, int, int, S);                  \
    template Var<S> global_avg_pool(const Var<S>&);                                                        \
    template Var<S> l2_normalize(const Var<S>&, S);                                                        \
    template Var<S> cross_entropy(const Var<S>&, std::span<const int>);                                    \
    template Var<S> mse(const Var<S>&, const Var<S>&);                                                     \
    template Var<S> channel_l1(const Var<S>&, const Var<S>&);                                              \
    template Var<S> grid_sample(const Var<S>&, const Var<S>&);

BEATFLOW_INSTANTIATE_OPS(float)
BEATFLOW_INSTANTIATE_OPS(double)

#undef BEATFLOW_INSTANTIATE_OPS

}  // namespace beatflow::nn
