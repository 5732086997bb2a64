#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cyclevae/grad_check.hpp"
#include "cyclevae/gradcheck_suite.hpp"
#include "cyclevae/ops.hpp"
#include "cyclevae/rng.hpp"
#include "cyclevae/tensor.hpp"

using namespace cyclevae;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, Real lo = -1.0, Real hi = 1.0,
                     bool requires_grad = false) {
    std::vector<Real> v(shape_numel(shape));
    for (Real& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

Real dot(std::span<const Real> a, std::span<const Real> b) {
    Real s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("linear: zero input yields bias rows") {
    Tensor x = Tensor::zeros({3, 4});
    Tensor w = Tensor::from_data({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor b = Tensor::from_data({2}, {0.5, -1.5});
    Tensor y = linear(x, w, b);
    for (int r = 0; r < 3; ++r) {
        CHECK(y.data()[r * 2 + 0] == 0.5);
        CHECK(y.data()[r * 2 + 1] == -1.5);
    }
}

TEST_CASE("linear: identity times identity is identity") {
    Tensor x = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor w = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::zeros({2});
    Tensor y = linear(x, w, b);
    CHECK(y.data()[0] == 1.0);
    CHECK(y.data()[1] == 0.0);
    CHECK(y.data()[2] == 0.0);
    CHECK(y.data()[3] == 1.0);
}

TEST_CASE("linear: hand-computed dot product") {
    Tensor x = Tensor::from_data({1, 2}, {1, 2});
    Tensor w = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    Tensor b = Tensor::from_data({2}, {1, 1});
    Tensor y = linear(x, w, b);
    CHECK(y.data()[0] == doctest::Approx(12.0));
    CHECK(y.data()[1] == doctest::Approx(18.0));
}

TEST_CASE("linear: shape mismatches raise errors naming the shapes") {
    Tensor x = Tensor::zeros({1, 3});
    Tensor w = Tensor::zeros({2, 4});
    Tensor b = Tensor::zeros({2});
    CHECK_THROWS_AS(linear(x, w, b), ShapeError);
    CHECK_THROWS_AS(linear(Tensor::zeros({1, 4}), w, Tensor::zeros({3})), ShapeError);
    CHECK_THROWS_WITH_AS(linear(x, w, b), doctest::Contains("[1, 3]"), ShapeError);
}

TEST_CASE("conv2d: 28x28 with k=5 s=2 p=2 gives 14x14") {
    Tensor x = Tensor::zeros({1, 1, 28, 28});
    Tensor k = Tensor::zeros({1, 1, 5, 5});
    Tensor y = conv2d(x, k, 2, 2);
    CHECK(y.shape() == Shape{1, 1, 14, 14});
}

TEST_CASE("conv2d: all-ones 3x3 against all-ones 3x3 kernel sums to 9") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor y = conv2d(x, k, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.value() == doctest::Approx(9.0));
}

TEST_CASE("conv2d: zero input gives zero output for any kernel") {
    Rng rng(7);
    Tensor x = Tensor::zeros({2, 3, 8, 8});
    Tensor k = random_tensor(rng, {4, 3, 5, 5});
    Tensor y = conv2d(x, k, 2, 2);
    for (Real v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d: kernel exceeding the padded input is rejected") {
    Tensor x = Tensor::zeros({1, 1, 3, 3});
    Tensor k = Tensor::zeros({1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(x, k, 1, 0), ShapeError);
    CHECK_NOTHROW(conv2d(x, k, 1, 1));
}

TEST_CASE("conv2d_transpose: 14x14 with k=5 s=2 p=2 gives 27, output_padding 1 gives 28") {
    Tensor x = Tensor::zeros({1, 1, 14, 14});
    Tensor k = Tensor::zeros({1, 1, 5, 5});
    CHECK(conv2d_transpose(x, k, 2, 2, 0).shape() == Shape{1, 1, 27, 27});
    CHECK(conv2d_transpose(x, k, 2, 2, 1).shape() == Shape{1, 1, 28, 28});
}

TEST_CASE("conv2d_transpose: 1x1 kernel of value c scales the input") {
    Rng rng(11);
    Tensor x = random_tensor(rng, {1, 1, 3, 3});
    Tensor k = Tensor::full({1, 1, 1, 1}, 2.5);
    Tensor y = conv2d_transpose(x, k, 1, 0, 0);
    CHECK(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(2.5 * x.data()[i]));
}

TEST_CASE("conv2d_transpose: zero input gives zero output") {
    Rng rng(13);
    Tensor x = Tensor::zeros({1, 2, 4, 4});
    Tensor k = random_tensor(rng, {2, 3, 3, 3});
    Tensor y = conv2d_transpose(x, k, 2, 1, 1);
    for (Real v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d_transpose: empty computed output is rejected") {
    Tensor x = Tensor::zeros({1, 1, 1, 1});
    Tensor k = Tensor::zeros({1, 1, 1, 1});
    CHECK_THROWS_AS(conv2d_transpose(x, k, 1, 1, 0), ShapeError);
    CHECK_THROWS_AS(conv2d_transpose(x, k, 2, 0, 2), ShapeError);
}

TEST_CASE("instance_norm: constant slice maps to zeros") {
    Tensor x = Tensor::full({1, 2, 3, 3}, 7.0);
    Tensor y = instance_norm(x);
    for (Real v : y.data()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("instance_norm: [-1, 1] slice stays approximately [-1, 1]") {
    Tensor x = Tensor::from_data({1, 1, 1, 2}, {-1.0, 1.0});
    Tensor y = instance_norm(x);
    CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("instance_norm: nearly idempotent") {
    Rng rng(17);
    Tensor x = random_tensor(rng, {2, 2, 4, 4});
    Tensor once = instance_norm(x);
    Tensor twice = instance_norm(once);
    for (std::size_t i = 0; i < once.numel(); ++i)
        CHECK(std::abs(twice.data()[i] - once.data()[i]) < 1e-4);
}

TEST_CASE("relu: clamps negatives, passes positives, zero gradient at zero") {
    Tensor x = Tensor::from_data({3}, {-1.0, 2.0, 0.0}, true);
    Tensor y = relu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 2.0);
    CHECK(y.data()[2] == 0.0);
    backward(sum(y));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("grad_check: sum of squares is accurate to 1e-6") {
    Rng rng(19);
    Tensor x = random_tensor(rng, {6}, -2.0, 2.0, true);
    auto f = [](const std::vector<Tensor>& in) { return sum(square(in[0])); };
    GradCheckResult res = grad_check(f, {x});
    CHECK(res.max_rel_error < 1e-6);
    CHECK(res.coords_checked == 6);
}

TEST_CASE("grad_check: constant function has zero error") {
    Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
    Tensor c = Tensor::full({1}, 5.0);
    auto f = [c](const std::vector<Tensor>&) { return c; };
    GradCheckResult res = grad_check(f, {x});
    CHECK(res.max_rel_error == 0.0);
    CHECK(res.max_abs_error == 0.0);
}

TEST_CASE("grad_check: conv2d composed with relu and sum on 1x2x8x8") {
    Rng rng(23);
    Tensor x = random_tensor(rng, {1, 2, 8, 8}, -1.0, 1.0, true);
    Tensor k = random_tensor(rng, {3, 2, 3, 3}, -0.5, 0.5, true);
    auto f = [](const std::vector<Tensor>& in) {
        return sum(relu(conv2d(in[0], in[1], 2, 1)));
    };
    GradCheckResult res = grad_check(f, {x, k});
    CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("grad_check: eps outside [1e-6, 1e-3] is rejected") {
    Tensor x = Tensor::from_data({1}, {1.0}, true);
    auto f = [](const std::vector<Tensor>& in) { return sum(in[0]); };
    CHECK_THROWS_AS(grad_check(f, {x}, 1e-7), UsageError);
    CHECK_THROWS_AS(grad_check(f, {x}, 1e-2), UsageError);
}

TEST_CASE("grad_check: non-scalar function is rejected") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    auto f = [](const std::vector<Tensor>& in) { return square(in[0]); };
    CHECK_THROWS_AS(grad_check(f, {x}), UsageError);
}

TEST_CASE("every differentiable op passes its gradient check under 1e-4") {
    auto checks = run_op_gradchecks(20240817);
    CHECK(checks.size() == 19);
    for (const auto& check : checks) {
        INFO(check.name, " rel err ", check.result.max_rel_error);
        CHECK(check.result.max_rel_error < 1e-4);
        CHECK(check.result.coords_checked > 0);
    }
}

TEST_CASE("fault injection makes exactly the named op fail its check") {
    detail::set_backward_fault("conv2d", 1.01);
    auto checks = run_op_gradchecks(20240817);
    detail::set_backward_fault("", 1.0);
    bool conv_failed = false;
    for (const auto& check : checks) {
        if (check.name == "conv2d") {
            conv_failed = check.result.max_rel_error >= 1e-4;
        } else {
            CHECK(check.result.max_rel_error < 1e-4);
        }
    }
    CHECK(conv_failed);
}

TEST_CASE("conv2d and conv2d_transpose are adjoint") {
    Rng rng(29);
    struct Geometry {
        int h, k, stride, padding, out_padding;
    };
    // out_padding restores the exact input extent when the conv output
    // extent loses a remainder to the floor.
    const Geometry geoms[] = {
        {9, 5, 2, 2, 0}, {9, 5, 1, 0, 0}, {8, 3, 2, 1, 1}, {7, 3, 1, 1, 0}, {16, 5, 2, 2, 1},
    };
    for (const auto& g : geoms) {
        const int cin = 3, cout = 2, batch = 2;
        Tensor x = random_tensor(rng, {batch, cin, g.h, g.h});
        Tensor kernel = random_tensor(rng, {cout, cin, g.k, g.k});
        Tensor cx = conv2d(x, kernel, g.stride, g.padding);
        Tensor y = random_tensor(rng, cx.shape());
        // The same buffer serves both layouts: conv reads [cout, cin, k, k],
        // the transpose reads it as [cin', cout', k, k] with cin' = cout.
        Tensor ty = conv2d_transpose(y, kernel, g.stride, g.padding, g.out_padding);
        REQUIRE(ty.shape() == x.shape());
        const Real lhs = dot(cx.data(), y.data());
        const Real rhs = dot(x.data(), ty.data());
        CHECK(std::abs(lhs - rhs) <= 1e-8 * std::max({std::abs(lhs), std::abs(rhs), 1.0}));
    }
}

TEST_CASE("shape formulas hold over the swept grid") {
    for (int h = 7; h <= 32; ++h) {
        for (int k : {3, 5}) {
            for (int stride : {1, 2}) {
                for (int padding : {0, 1, 2}) {
                    if (h + 2 * padding < k) continue;
                    Tensor x = Tensor::zeros({1, 1, h, h});
                    Tensor kernel = Tensor::zeros({1, 1, k, k});
                    Tensor y = conv2d(x, kernel, stride, padding);
                    const int expect = (h + 2 * padding - k) / stride + 1;
                    CHECK(y.dim(2) == expect);
                    CHECK(y.dim(3) == expect);
                    for (int op = 0; op < stride; ++op) {
                        const int back = (expect - 1) * stride - 2 * padding + k + op;
                        if (back < 1) continue;
                        Tensor t = conv2d_transpose(y, kernel, stride, padding, op);
                        CHECK(t.dim(2) == back);
                    }
                }
            }
        }
    }
}

TEST_CASE("elementwise ops validate matching shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({3, 2});
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(sub(a, b), ShapeError);
    CHECK_THROWS_AS(mul(a, b), ShapeError);
    CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeError);
    CHECK_THROWS_AS(concat_cols(a, b), ShapeError);
}

TEST_CASE("softmax_cross_entropy validates labels") {
    Tensor logits = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {0}), UsageError);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 3}), UsageError);
    // Uniform logits over 3 classes: loss is ln 3 for any labels.
    Tensor loss = softmax_cross_entropy(logits, {0, 2});
    CHECK(loss.value() == doctest::Approx(std::log(3.0)));
}

TEST_CASE("results are independent of the worker thread count") {
    Rng rng(31);
    Tensor x = random_tensor(rng, {3, 2, 9, 9}, -1.0, 1.0, true);
    Tensor k = random_tensor(rng, {4, 2, 5, 5}, -0.5, 0.5, true);
    Tensor y = conv2d(x, k, 2, 2);
    backward(sum(square(y)));
    // A second identical graph must agree bitwise: the parallel kernels
    // partition disjoint output rows, so scheduling cannot reorder sums.
    Tensor x2 = Tensor::from_data(x.shape(), {x.data().begin(), x.data().end()}, true);
    Tensor k2 = Tensor::from_data(k.shape(), {k.data().begin(), k.data().end()}, true);
    Tensor y2 = conv2d(x2, k2, 2, 2);
    backward(sum(square(y2)));
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == y2.data()[i]);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == x2.grad()[i]);
    for (std::size_t i = 0; i < k.numel(); ++i) CHECK(k.grad()[i] == k2.grad()[i]);
}
