#include "doctest.h"
#include "gradcheck.hpp"

#include <filesystem>

using namespace beatflow;
using namespace beatflow::nn;

namespace {

Tensor<double> random_tensor(const Shape& shape, RngStream& rng, double scale = 1.0)
{
    Tensor<double> t(shape);
    for (Index i = 0; i < t.size(); ++i) {
        t[i] = rng.normal() * scale;
    }
    return t;
}

// Weighted sum with fixed random weights so every output element matters.
Var<double> probe(const Var<double>& y, const Tensor<double>& w)
{
    return sum(mul(y, Var<double>(w)));
}

}  // namespace

TEST_CASE("elementwise and reduction gradients")
{
    RngStream rng(1);
    ParamSet<double> ps;
    auto a = ps.add("a", random_tensor({3, 4}, rng));
    auto b = ps.add("b", random_tensor({3, 4}, rng));
    const auto w = random_tensor({3, 4}, rng);
    auto loss = [&] {
        auto y = add(mul(silu(a), sigmoid(b)), sub(tanh(a), scale(b, 0.3)));
        y = add_scalar(y, 0.5);
        return add(probe(y, w), mean(mul(y, y)));
    };
    const auto r = test::grad_check(ps, loss, 20, rng.fork("fd"));
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("broadcast and shape op gradients")
{
    RngStream rng(2);
    ParamSet<double> ps;
    auto x = ps.add("x", random_tensor({2, 3, 4, 4}, rng));
    auto bias = ps.add("bias", random_tensor({3}, rng));
    auto e = ps.add("e", random_tensor({2, 3}, rng));
    auto m = ps.add("m", random_tensor({2, 1, 4, 4}, rng));
    auto g = ps.add("g", random_tensor({2, 3}, rng));
    const auto w1 = random_tensor({2, 5, 3, 4, 4}, rng);
    const auto w2 = random_tensor({2, 6, 4, 4}, rng);
    auto loss = [&] {
        auto y = add_per_sample(add_bias(x, bias, 1), e, 1);
        y = mul_per_sample(mul_mask(y, m), g, 1);
        auto v = repeat_frames(y, 5);
        auto cat = concat<double>({slice(y, 1, 0, 2), y, slice(y, 1, 2, 3)}, 1);
        auto r = reshape(cat, {2, 6, 16});
        return add(probe(v, w1), probe(reshape(r, {2, 6, 4, 4}), w2));
    };
    const auto r = test::grad_check(ps, loss, 30, rng.fork("fd"));
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("convolution, linear and pooling gradients")
{
    RngStream rng(3);
    ParamSet<double> ps;
    auto x = ps.add("x", random_tensor({2, 3, 8, 8}, rng));
    auto w3 = ps.add("w3", random_tensor({4, 3, 3, 3}, rng, 0.3));
    auto b3 = ps.add("b3", random_tensor({4}, rng));
    auto w1 = ps.add("w1", random_tensor({5, 4, 1, 1}, rng, 0.3));
    auto wl = ps.add("wl", random_tensor({3, 5}, rng, 0.3));
    auto bl = ps.add("bl", random_tensor({3}, rng));
    auto wt = ps.add("wt", random_tensor({3, 5, 5}, rng, 0.3));
    const auto probe_w = random_tensor({2, 3}, rng);
    const auto probe_v = random_tensor({1, 2, 5, 4, 4}, rng);
    auto loss = [&] {
        auto h = silu(conv2d(x, w3, b3, 2, 1));               // [2, 4, 4, 4]
        auto u = upsample2x(conv2d(h, w1, Var<double>(), 1, 0));  // [2, 5, 8, 8]
        auto pooled = global_avg_pool(u);
        auto out = linear(pooled, wl, bl);
        auto vol = reshape(conv2d(h, w1, Var<double>(), 1, 0), {1, 2, 5, 4, 4});
        auto tv = conv_time(vol, wt, Var<double>());
        return add(probe(out, probe_w), probe(tv, probe_v));
    };
    const auto r = test::grad_check(ps, loss, 40, rng.fork("fd"));
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("normalisation and loss gradients")
{
    RngStream rng(4);
    ParamSet<double> ps;
    auto x = ps.add("x", random_tensor({2, 4, 3, 3}, rng));
    auto g = ps.add("g", random_tensor({4}, rng));
    auto b = ps.add("b", random_tensor({4}, rng));
    auto v = ps.add("v", random_tensor({2, 3, 4, 2, 2}, rng));
    auto gv = ps.add("gv", random_tensor({4}, rng));
    auto bv = ps.add("bv", random_tensor({4}, rng));
    auto q = ps.add("q", random_tensor({3, 5}, rng));
    auto k = ps.add("k", random_tensor({4, 5}, rng));
    const auto target = random_tensor({2, 4, 3, 3}, rng);
    const auto pw = random_tensor({2, 3, 4, 2, 2}, rng);
    const std::vector<int> labels{1, 3, 0};
    auto loss = [&] {
        auto y = group_norm(x, g, b, 2, 1);
        auto yv = group_norm(v, gv, bv, 2, 2);
        auto logits = matmul_nt(l2_normalize(q), transpose(transpose(k)));
        auto ce = cross_entropy(logits, std::span<const int>(labels));
        auto l1 = channel_l1(y, Var<double>(target));
        return add(add(add(mse(y, Var<double>(target)), ce), l1), probe(yv, pw));
    };
    const auto r = test::grad_check(ps, loss, 40, rng.fork("fd"));
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("grid_sample gradients away from cell boundaries")
{
    RngStream rng(5);
    ParamSet<double> ps;
    auto z = ps.add("z", random_tensor({2, 3, 6, 6}, rng));
    Tensor<double> f({2, 2, 6, 6});
    for (Index i = 0; i < f.size(); ++i) {
        f[i] = rng.uniform(-0.3, 0.3);
    }
    auto flow = ps.add("flow", f);
    const auto w = random_tensor({2, 3, 6, 6}, rng);
    auto loss = [&] { return probe(grid_sample(z, flow), w); };
    const auto r = test::grad_check(ps, loss, 40, rng.fork("fd"), 1e-7);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("backward accumulates through shared inputs and releases the graph")
{
    ParamSet<double> ps;
    auto a = ps.add("a", Tensor<double>::filled({1}, 3.0));
    auto y = mul(a, a);
    backward(y);
    CHECK(a.grad()[0] == doctest::Approx(6.0));
    CHECK(y.node()->inputs.empty());
}

TEST_CASE("no-grad guard records nothing")
{
    ParamSet<double> ps;
    auto a = ps.add("a", Tensor<double>::filled({2}, 1.0));
    NoGradGuard guard;
    auto y = sum(mul(a, a));
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam minimises a quadratic")
{
    ParamSet<float> ps;
    auto x = ps.add("x", TensorF::filled({3}, 5.0f));
    Adam<float> opt(ps, 0.1);
    for (int i = 0; i < 500; ++i) {
        ps.zero_grad();
        backward(sum(mul(x, x)));
        opt.step();
    }
    CHECK(x.value().vec().cwiseAbs().maxCoeff() < 1e-2f);
}

TEST_CASE("step schedule decays at milestones")
{
    const std::vector<int> ms{24, 36, 48};
    CHECK(step_lr(2e-4, ms, 0) == doctest::Approx(2e-4));
    CHECK(step_lr(2e-4, ms, 23) == doctest::Approx(2e-4));
    CHECK(step_lr(2e-4, ms, 24) == doctest::Approx(2e-5));
    CHECK(step_lr(2e-4, ms, 48) == doctest::Approx(2e-7));
}

TEST_CASE("frozen parameters are untouched by the optimiser")
{
    ParamSet<float> ps;
    auto a = ps.add("backbone.w", TensorF::filled({2}, 1.0f));
    auto b = ps.add("adapter.w", TensorF::filled({2}, 1.0f));
    ps.set_trainable("backbone.", false);
    Adam<float> opt(ps, 0.1);
    backward(sum(mul(mul(a, b), b)));
    opt.step();
    CHECK(a.value()[0] == 1.0f);
    CHECK(b.value()[0] != 1.0f);
    CHECK_FALSE(a.has_grad());
}

TEST_CASE("checkpoint round trip")
{
    RngStream rng(9);
    ParamSet<float> ps;
    ps.add("conv.w", init_normal<float>({4, 3, 3, 3}, 27, rng));
    ps.add("conv.b", TensorF::filled({4}, 0.25f));
    const auto path = std::filesystem::temp_directory_path() / "beatflow_ckpt_test.bin";
    save_checkpoint(path, Json{{"stage", "test"}}, ps);
    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.header.at("stage") == "test");
    ParamSet<float> other;
    other.add("conv.w", TensorF({4, 3, 3, 3}));
    other.add("conv.b", TensorF({4}));
    other.load(ck.tensors);
    CHECK(other.get("conv.w").value().vec() == ps.get("conv.w").value().vec());
    CHECK(other.get("conv.b").value()[3] == 0.25f);
    std::filesystem::remove(path);
}
