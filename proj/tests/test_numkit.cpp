#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "numkit/fdcheck.hpp"
#include "numkit/rng.hpp"
#include "numkit/tensor.hpp"

using numkit::Rng;
using numkit::Shape;
using numkit::Tape;
using numkit::TapeScope;
using Tf = numkit::Tensor<float>;
using Td = numkit::Tensor<double>;

namespace {

Td random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Td t = Td::zeros(std::move(shape));
    rng.fill_gaussian(t.mutable_values(), scale);
    return t;
}

}  // namespace

TEST_CASE("rng determinism and substreams") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng s1 = Rng(42).stream(1);
    Rng s2 = Rng(42).stream(2);
    int differ = 0;
    for (int i = 0; i < 32; ++i) differ += (s1.next_u64() != s2.next_u64());
    CHECK(differ == 32);

    // substream of the same id replays regardless of what was drawn before
    Rng base(7);
    base.next_u64();
    base.next_u64();
    Rng r1 = base.stream(5);
    Rng r2 = Rng(7).stream(5);
    CHECK(r1.next_u64() == r2.next_u64());
}

TEST_CASE("rng gaussian moments") {
    Rng rng(123);
    const int n = 200000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        sum += g;
        sq += g * g;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("matmul identity, zero, direct") {
    Tf eye = Tf::from_vector({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tf a = Tf::from_vector({3, 2}, {1, 2, 3, 4, 5, 6});
    Tf r = numkit::matmul(eye, a);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(r.at(i) == a.at(i));

    Tf z = Tf::zeros({2, 4});
    Tf az = numkit::matmul(Tf::from_vector({2, 2}, {1, 2, 3, 4}), z);
    for (std::size_t i = 0; i < az.numel(); ++i) CHECK(az.at(i) == 0.0f);

    Tf m = Tf::from_vector({2, 2}, {1, 2, 3, 4});
    Tf v = Tf::from_vector({2, 1}, {1, 1});
    Tf mv = numkit::matmul(m, v);
    CHECK(mv.at(0) == 3.0f);
    CHECK(mv.at(1) == 7.0f);

    CHECK_THROWS_AS(numkit::matmul(Tf::zeros({2, 3}), Tf::zeros({4, 5})),
                    std::invalid_argument);
}

TEST_CASE("batched matmul matches per-slice") {
    Rng rng(5);
    Td a = random_tensor({3, 2, 4}, rng);
    Td b = random_tensor({3, 4, 5}, rng);
    Td out = numkit::matmul(a, b);
    for (std::size_t bi = 0; bi < 3; ++bi) {
        Td as = Td::from_vector({2, 4}, std::vector<double>(a.data() + bi * 8,
                                                            a.data() + (bi + 1) * 8));
        Td bs = Td::from_vector({4, 5}, std::vector<double>(b.data() + bi * 20,
                                                            b.data() + (bi + 1) * 20));
        Td os = numkit::matmul(as, bs);
        for (std::size_t i = 0; i < 10; ++i) {
            CHECK(out.at(bi * 10 + i) == doctest::Approx(os.at(i)).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax examples") {
    Tf u = numkit::softmax(Tf::from_vector({3}, {0, 0, 0}), 0);
    for (int i = 0; i < 3; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-6));

    Tf big = numkit::softmax(Tf::from_vector({2}, {1000, 0}), 0);
    CHECK(big.at(0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(big.at(1) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(std::isfinite(big.at(0)));

    Tf ln = numkit::softmax(Tf::from_vector({2}, {std::log(2.0f), 0}), 0);
    CHECK(ln.at(0) == doctest::Approx(2.0 / 3).epsilon(1e-6));
    CHECK(ln.at(1) == doctest::Approx(1.0 / 3).epsilon(1e-6));

    CHECK_THROWS_AS(
        numkit::softmax(Tf::from_vector({2}, {std::nanf(""), 0.0f}), 0),
        std::domain_error);
}

TEST_CASE("softmax rows sum to one up to 1e4 magnitude") {
    Rng rng(9);
    for (double scale : {1.0, 100.0, 1e4}) {
        Td x = random_tensor({8, 16}, rng, scale);
        Td s = numkit::softmax(x, 1);
        for (std::size_t r = 0; r < 8; ++r) {
            double sum = 0;
            for (std::size_t j = 0; j < 16; ++j) sum += s.at(r * 16 + j);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("conv2d zero, identity, direct") {
    Rng rng(11);
    Td x = random_tensor({2, 4, 4}, rng);

    Td wz = Td::zeros({3, 2, 1, 1});
    Td bz = Td::zeros({3});
    Td out = numkit::conv2d(x, wz, bz);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == 0.0);

    // identity channel map
    Td wi = Td::zeros({2, 2, 1, 1});
    wi.mutable_data()[0] = 1.0;  // out0 <- in0
    wi.mutable_data()[3] = 1.0;  // out1 <- in1
    Td id = numkit::conv2d(x, wi, Td::zeros({2}));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(id.at(i) == doctest::Approx(x.at(i)));

    Td ones_x = Td::full({1, 3, 3}, 1.0);
    Td ones_w = Td::full({1, 1, 3, 3}, 1.0);
    Td nine = numkit::conv2d(ones_x, ones_w, Td::zeros({1}));
    CHECK(nine.numel() == 1);
    CHECK(nine.at(0) == doctest::Approx(9.0));

    // strict output extent
    CHECK_THROWS_AS(numkit::conv2d(Td::zeros({1, 5, 5}), Td::zeros({1, 1, 2, 2}), Td(), 2, 0),
                    std::invalid_argument);
}

TEST_CASE("backward sum gives ones; half square gives x") {
    Rng rng(13);
    Tf x = Tf::zeros({3, 4});
    rng.fill_gaussian(x.mutable_values());
    x.set_requires_grad(true);

    {
        Tape<float> tape;
        TapeScope<float> scope(tape);
        Tf loss = numkit::sum_all(x);
        tape.backward(loss);
    }
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0f);

    x.zero_grad();
    {
        Tape<float> tape;
        TapeScope<float> scope(tape);
        Tf loss = numkit::mul_scalar(numkit::sum_all(numkit::mul(x, x)), 0.5f);
        tape.backward(loss);
    }
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(x.grad()[i] == doctest::Approx(x.at(i)).epsilon(1e-6));
    }
}

TEST_CASE("backward requires scalar loss on the tape") {
    Tf x = Tf::zeros({2, 2});
    x.set_requires_grad(true);
    Tape<float> tape;
    TapeScope<float> scope(tape);
    Tf y = numkit::mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
    Tf loss = numkit::sum_all(y);
    Tape<float> other;
    CHECK_THROWS_AS(other.backward(loss), std::invalid_argument);
}

TEST_CASE("repeated backward accumulates leaf grads") {
    Tf x = Tf::from_vector({2}, {1, 2});
    x.set_requires_grad(true);
    Tape<float> tape;
    TapeScope<float> scope(tape);
    Tf loss = numkit::sum_all(x);
    tape.backward(loss);
    tape.backward(loss);
    CHECK(x.grad()[0] == 2.0f);
    CHECK(x.grad()[1] == 2.0f);
}

TEST_CASE("two losses on one tape backward independently") {
    // shared intermediate, two heads: grads must not leak between calls
    Td x = Td::from_vector({2}, {0.5, -0.25});
    x.set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Td h = numkit::mul(x, x);               // shared
    Td l1 = numkit::sum_all(h);             // dl1/dx = 2x
    Td l2 = numkit::sum_all(numkit::mul(h, h));  // dl2/dx = 4x^3
    tape.backward(l1);
    tape.backward(l2);
    for (int i = 0; i < 2; ++i) {
        const double expect = 2 * x.at(i) + 4 * std::pow(x.at(i), 3);
        CHECK(x.grad()[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("composite MLP gradient matches finite differences") {
    Rng rng(17);
    Td w1 = random_tensor({6, 8}, rng, 0.5);
    Td b1 = random_tensor({8}, rng, 0.1);
    Td w2 = random_tensor({8, 3}, rng, 0.5);
    Td x = random_tensor({4, 6}, rng);
    w1.set_requires_grad(true);
    b1.set_requires_grad(true);
    w2.set_requires_grad(true);

    auto f = [&]() {
        Td h = numkit::add_rowvec(numkit::matmul(x, w1), b1);
        h = numkit::silu(h);
        Td y = numkit::matmul(h, w2);
        return numkit::mean_all(numkit::mul(y, y));
    };
    auto report = numkit::finite_diff_check(f, {{"w1", w1}, {"b1", b1}, {"w2", w2}});
    CHECK(report.pass());
    CHECK(report.worst < 1e-3);
}

TEST_CASE("finite_diff_check basics") {
    // f(x) = x^2 at x=3: analytic 6
    Td x = Td::scalar(3.0);
    x.set_requires_grad(true);
    auto f = [&]() { return numkit::mul(x, x); };
    auto report = numkit::finite_diff_check(f, {{"x", x}});
    CHECK(report.pass());

    // linear f: numeric gradient exact to round-off
    Td y = Td::from_vector({4}, {1, 2, 3, 4});
    y.set_requires_grad(true);
    auto lin = [&]() { return numkit::sum_all(numkit::mul_scalar(y, 2.5)); };
    auto rep2 = numkit::finite_diff_check(lin, {{"y", y}});
    CHECK(rep2.worst < 1e-9);
}

TEST_CASE("every differentiable op matches finite differences") {
    Rng rng(23);

    auto check_op = [&](const char* name, auto&& build, std::vector<std::pair<std::string, Td>> params) {
        for (auto& [n, p] : params) p.set_requires_grad(true);
        auto f = [&]() { return build(); };
        auto report = numkit::finite_diff_check(f, params);
        INFO(name);
        CHECK(report.pass());
    };

    {
        Td a = random_tensor({3, 5}, rng), b = random_tensor({3, 5}, rng);
        check_op("add/mul/sub", [&]() {
            return numkit::mean_all(numkit::mul(numkit::add(a, b), numkit::sub(a, b)));
        }, {{"a", a}, {"b", b}});
    }
    {
        Td a = random_tensor({4, 3}, rng), b = random_tensor({3, 6}, rng);
        check_op("matmul", [&]() {
            Td y = numkit::matmul(a, b);
            return numkit::mean_all(numkit::mul(y, y));
        }, {{"a", a}, {"b", b}});
    }
    {
        Td a = random_tensor({2, 4, 3}, rng), b = random_tensor({2, 3, 5}, rng);
        check_op("bmm", [&]() {
            Td y = numkit::matmul(a, b);
            return numkit::mean_all(numkit::mul(y, y));
        }, {{"a", a}, {"b", b}});
    }
    {
        Td x = random_tensor({5, 7}, rng);
        Td c = random_tensor({5, 7}, rng);
        check_op("softmax", [&]() {
            return numkit::mean_all(numkit::mul(numkit::softmax(x, 1), c));
        }, {{"x", x}});
    }
    {
        Td x = random_tensor({3, 6, 6}, rng);
        Td w = random_tensor({4, 3, 3, 3}, rng, 0.4);
        Td b = random_tensor({4}, rng, 0.1);
        check_op("conv2d s1p1", [&]() {
            Td y = numkit::conv2d(x, w, b, 1, 1);
            return numkit::mean_all(numkit::mul(y, y));
        }, {{"x", x}, {"w", w}, {"b", b}});
    }
    {
        Td x = random_tensor({2, 6, 6}, rng);
        Td w = random_tensor({3, 2, 2, 2}, rng, 0.4);
        Td b = random_tensor({3}, rng, 0.1);
        check_op("conv2d s2p0", [&]() {
            Td y = numkit::conv2d(x, w, b, 2, 0);
            return numkit::mean_all(numkit::mul(y, y));
        }, {{"x", x}, {"w", w}, {"b", b}});
    }
    {
        Td x = random_tensor({4, 3, 3}, rng);
        Td g = random_tensor({4}, rng, 0.3);
        Td bt = random_tensor({4}, rng, 0.3);
        check_op("group_norm", [&]() {
            Td y = numkit::group_norm(x, 2, g, bt);
            Td z = numkit::silu(y);
            return numkit::mean_all(numkit::mul(z, z));
        }, {{"x", x}, {"g", g}, {"b", bt}});
    }
    {
        Td x = random_tensor({5, 8}, rng);
        Td g = random_tensor({8}, rng, 0.3);
        Td bt = random_tensor({8}, rng, 0.3);
        check_op("layer_norm", [&]() {
            Td y = numkit::layer_norm(x, g, bt);
            return numkit::mean_all(numkit::mul(y, y));
        }, {{"x", x}, {"g", g}, {"b", bt}});
    }
    {
        Td x = random_tensor({3, 4, 4}, rng);
        check_op("upsample+resize", [&]() {
            Td y = numkit::upsample_nearest2x(x);
            y = numkit::resize_bilinear(y, 5, 7);
            return numkit::mean_all(numkit::mul(y, y));
        }, {{"x", x}});
    }
    {
        Td a = random_tensor({2, 3, 3}, rng), b = random_tensor({4, 3, 3}, rng);
        check_op("concat0+slice0", [&]() {
            Td y = numkit::concat0(a, b);
            Td s = numkit::slice0(y, 1, 4);
            return numkit::mean_all(numkit::mul(s, s));
        }, {{"a", a}, {"b", b}});
    }
    {
        Td x = random_tensor({6, 4}, rng);
        check_op("permute+reshape", [&]() {
            Td y = numkit::permute(numkit::reshape(x, {2, 3, 4}), {2, 0, 1});
            Td z = numkit::tanh_act(y);
            return numkit::mean_all(numkit::mul(z, z));
        }, {{"x", x}});
    }
    {
        Td x = random_tensor({4, 5}, rng);
        Td v = random_tensor({4}, rng);
        Td rv = random_tensor({5}, rng);
        check_op("axis broadcasts", [&]() {
            Td y = numkit::mul_axis0(x, v);
            y = numkit::add_axis0(y, v);
            y = numkit::add_rowvec(y, rv);
            Td z = numkit::gelu(y);
            return numkit::mean_all(numkit::mul(z, z));
        }, {{"x", x}, {"v", v}, {"rv", rv}});
    }
}

TEST_CASE("tape determinism: same seed bit-identical forward and grads") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tf w = Tf::zeros({8, 8});
        rng.fill_gaussian(w.mutable_values(), 0.2);
        w.set_requires_grad(true);
        Tf x = Tf::zeros({4, 8});
        rng.fill_gaussian(x.mutable_values());
        Tape<float> tape;
        TapeScope<float> scope(tape);
        Tf y = numkit::silu(numkit::matmul(x, w));
        Tf loss = numkit::mean_all(numkit::mul(y, y));
        tape.backward(loss);
        return std::make_pair(loss.item(), w.grad());
    };
    auto [l1, g1] = run(99);
    auto [l2, g2] = run(99);
    CHECK(l1 == l2);
    CHECK(g1 == g2);
}

TEST_CASE("no tape means no recording") {
    Tf x = Tf::from_vector({2}, {1, 2});
    x.set_requires_grad(true);
    Tf y = numkit::mul(x, x);  // no active tape
    CHECK_FALSE(y.node()->requires_grad);
    CHECK(y.is_leaf());
}

TEST_CASE("bilinear resize identity when extents match") {
    Rng rng(31);
    Td x = random_tensor({2, 5, 5}, rng);
    Td y = numkit::resize_bilinear(x, 5, 5);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));
}
