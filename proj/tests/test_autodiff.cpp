#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ctml/errors.hpp"
#include "ctml/gradcheck.hpp"
#include "ctml/tape.hpp"
#include "helpers.hpp"

using namespace ctml;
using namespace ctml::testing;

TEST_CASE("conv2d with a 1x1 identity kernel is the identity")
{
    Rng rng(1);
    Tape<double> t;
    const int x = t.leaf(random_tensor(Shape{2, 1, 6, 7}, rng), false);
    Tensor<double> w(Shape{1, 1, 1, 1});
    w.v[0] = 1.0;
    const int y = t.conv2d(x, t.leaf(w, false), t.leaf(Tensor<double>(Shape{1, 1, 1, 1}), false));
    CHECK(t.value(y).v == t.value(x).v);
}

TEST_CASE("all-ones 3x3 kernel on constant input with reflect padding gives 9c per channel")
{
    Tape<double> t;
    const double c = 0.37;
    const int x = t.leaf(Tensor<double>::full(Shape{1, 2, 8, 8}, c), false);
    const int w = t.leaf(Tensor<double>::full(Shape{1, 2, 3, 3}, 1.0), false);
    const int b = t.leaf(Tensor<double>(Shape{1, 1, 1, 1}), false);
    const int y = t.conv2d(x, w, b, 1, PadMode::reflect);
    // two input channels summed: every output value, boundary included, is 18c
    for (double v : t.value(y).v) CHECK(v == doctest::Approx(18.0 * c).epsilon(1e-14));
}

TEST_CASE("relu of a non-positive tensor is zero, and composites hold")
{
    Rng rng(2);
    Tape<double> t;
    Tensor<double> neg = random_tensor(Shape{1, 1, 5, 5}, rng);
    for (auto& v : neg.v) v = -std::abs(v);
    const int y = t.relu(t.leaf(neg, false));
    for (double v : t.value(y).v) CHECK(v == 0.0);

    const double c = 1.25;
    const int cst = t.leaf(Tensor<double>::full(Shape{1, 1, 8, 8}, c), false);
    const int round = t.upsample2(t.downsample2(cst));
    for (double v : t.value(round).v) CHECK(v == c);
}

TEST_CASE("mse closed forms and gradient")
{
    Rng rng(3);
    Tape<double> t;
    const Tensor<double> xv = random_tensor(Shape{1, 1, 8, 8}, rng);
    const int x = t.leaf(xv, true);
    const int same = t.leaf(xv, false);
    CHECK(t.value(t.mse(x, same)).scalar() == 0.0);

    const double c = 0.8;
    Tensor<double> shifted = xv;
    for (auto& v : shifted.v) v += c;
    const int y = t.leaf(shifted, false);
    const int loss = t.mse(x, y);
    CHECK(t.value(loss).scalar() == doctest::Approx(c * c).epsilon(1e-12));

    t.backward(loss);
    const double n = static_cast<double>(xv.v.size());
    for (size_t i = 0; i < xv.v.size(); ++i)
        CHECK(t.grad(x).v[i] == doctest::Approx(2.0 * (xv.v[i] - shifted.v[i]) / n).epsilon(1e-12));
}

TEST_CASE("backward is idempotent and unused leaves get zero gradients")
{
    Rng rng(4);
    Tape<double> t;
    const int x = t.leaf(random_tensor(Shape{1, 1, 4, 4}, rng), true);
    const int unused = t.leaf(random_tensor(Shape{1, 1, 4, 4}, rng), true);
    const int target = t.leaf(random_tensor(Shape{1, 1, 4, 4}, rng), false);
    const int loss = t.mse(t.relu(x), target);

    t.backward(loss);
    const std::vector<double> g1 = t.grad(x).v;
    t.backward(loss);
    CHECK(t.grad(x).v == g1);
    for (double v : t.grad(unused).v) CHECK(v == 0.0);
}

TEST_CASE("gradients are linear in the loss combination")
{
    Rng rng(5);
    const Tensor<double> xv = random_tensor(Shape{1, 1, 6, 6}, rng);
    const Tensor<double> t1 = random_tensor(Shape{1, 1, 6, 6}, rng);
    const Tensor<double> t2 = random_tensor(Shape{1, 1, 6, 6}, rng);
    const double a = 1.7, b = -2.3;

    auto grad_of = [&](double wa, double wb) {
        Tape<double> t;
        const int x = t.leaf(xv, true);
        const int l1 = t.mse(x, t.leaf(t1, false));
        const int l2 = t.mse(t.relu(x), t.leaf(t2, false));
        const int loss = t.add(t.scale_shift(l1, wa, 0.0), t.scale_shift(l2, wb, 0.0));
        t.backward(loss);
        return t.grad(x).v;
    };
    const auto ga = grad_of(1.0, 0.0);
    const auto gb = grad_of(0.0, 1.0);
    const auto gc = grad_of(a, b);
    for (size_t i = 0; i < ga.size(); ++i)
        CHECK(gc[i] == doctest::Approx(a * ga[i] + b * gb[i]).epsilon(1e-12));
}

TEST_CASE("tape replay is bitwise deterministic")
{
    Rng rng(6);
    const Tensor<double> xv = random_tensor(Shape{1, 2, 8, 8}, rng);
    const Tensor<double> wv = random_tensor(Shape{3, 2, 3, 3}, rng);
    const Tensor<double> bv = random_tensor(Shape{1, 3, 1, 1}, rng);
    const Tensor<double> tv = random_tensor(Shape{1, 3, 4, 4}, rng);

    auto run = [&] {
        Tape<double> t;
        const int x = t.leaf(xv, true);
        const int w = t.leaf(wv, true);
        const int b = t.leaf(bv, true);
        const int y = t.downsample2(t.relu(t.conv2d(x, w, b, 1, PadMode::reflect)));
        const int loss = t.mse(y, t.leaf(tv, false));
        t.backward(loss);
        return std::tuple{t.value(loss).scalar(), t.grad(x).v, t.grad(w).v, t.grad(b).v};
    };
    const auto r1 = run();
    const auto r2 = run();
    CHECK(std::get<0>(r1) == std::get<0>(r2));
    CHECK(std::get<1>(r1) == std::get<1>(r2));
    CHECK(std::get<2>(r1) == std::get<2>(r2));
    CHECK(std::get<3>(r1) == std::get<3>(r2));
}

TEST_CASE("gradient of sum(fp_layer(mu)) equals back_project(ones)")
{
    Rng rng(7);
    const ScanGeometry g = default_geometry(BeamMode::parallel, 20, 24, 16);
    const Tensor<double> mu = random_tensor(Shape{1, 1, 16, 16}, rng);

    Tape<double> t;
    const int x = t.leaf(mu, true);
    const int loss = t.sum(t.fp_layer(x, g));
    t.backward(loss);

    Sinogram ones = Sinogram::zeros(g);
    for (auto& v : ones.v) v = 1.0;
    const ImageGrid want = back_project(ones, g);
    CHECK(t.grad(x).v == want.v);
}

TEST_CASE("fbp_layer backward on zero upstream gradient is zero")
{
    Rng rng(8);
    const ScanGeometry g = default_geometry(BeamMode::parallel, 16, 16, 16);
    Tape<double> t;
    const int p = t.leaf(random_tensor(Shape{1, 1, 16, 16}, rng), true);
    const int img = t.fbp_layer(p, g, Window::hann);
    // loss that ignores the fbp output entirely
    const int other = t.leaf(random_tensor(Shape{1, 1, 4, 4}, rng), true);
    const int loss = t.mse(other, t.leaf(random_tensor(Shape{1, 1, 4, 4}, rng), false));
    t.backward(loss);
    (void)img;
    for (double v : t.grad(p).v) CHECK(v == 0.0);
}

TEST_CASE("finite differences validate every primitive and the projector layers")
{
    const GradCheckReport report = run_gradcheck(true);
    for (const auto& c : report.categories) {
        INFO(c.name, " worst ", c.worst_rel_err, " tol ", c.tolerance);
        CHECK(c.pass);
    }
}

TEST_CASE("shape and usage errors are rejected")
{
    Rng rng(9);
    Tape<double> t;
    const int x = t.leaf(random_tensor(Shape{1, 2, 4, 4}, rng), true);
    const int w_bad = t.leaf(random_tensor(Shape{1, 3, 3, 3}, rng), false); // wrong in_c
    const int b = t.leaf(Tensor<double>(Shape{1, 1, 1, 1}), false);
    CHECK_THROWS_AS(t.conv2d(x, w_bad, b), dimension_error);

    const int even = t.leaf(random_tensor(Shape{2, 2, 2, 2}, rng), false); // even kernel
    CHECK_THROWS_AS(t.conv2d(x, even, b), dimension_error);

    const int y = t.leaf(random_tensor(Shape{1, 2, 4, 5}, rng), false);
    CHECK_THROWS_AS(t.add(x, y), dimension_error);
    CHECK_THROWS_AS(t.mse(x, y), dimension_error);
    CHECK_THROWS_AS(t.slice_channels(x, 1, 5), dimension_error);
    CHECK_THROWS_AS(t.downsample2(t.leaf(random_tensor(Shape{1, 1, 5, 4}, rng), false)),
                    dimension_error);

    // non-scalar backward root
    CHECK_THROWS_AS(t.backward(x), config_error);

    ViewMask mask;
    mask.kept = {1, 0};
    CHECK_THROWS_AS(t.row_blend(x, x, mask), dimension_error);
}
