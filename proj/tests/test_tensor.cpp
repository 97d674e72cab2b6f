#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "lowpass/autograd.hpp"
#include "lowpass/conv.hpp"
#include "lowpass/spectral.hpp"
#include "lowpass/tensor.hpp"
#include "lowpass/tensor_io.hpp"
#include "oracles.hpp"

using namespace lowpass;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("lowpass_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Checks reverse-mode gradient of a scalar graph function against central differences.
double gradient_error(const VarFn& f, const Tensor& x) {
    auto [value, grad] = value_and_grad(f, x);
    (void)value;
    auto scalar = [&](const Tensor& t) {
        Graph g;
        return f(g, g.leaf(t)).value().item();
    };
    Tensor fd = oracle::finite_difference(scalar, x);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        num += (grad[i] - fd[i]) * (grad[i] - fd[i]);
        den += fd[i] * fd[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

}  // namespace

TEST_CASE("tensor construction keeps shape and data consistent") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK(numel({2, 3, 4}) == 24);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    CHECK_THROWS(Tensor({1}, std::vector<double>{std::numeric_limits<double>::quiet_NaN()}));
    CHECK_THROWS(Tensor({1}, std::vector<double>{std::numeric_limits<double>::infinity()}));
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
    CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
}

TEST_CASE("shape errors name the offending axis") {
    Tensor a({2, 3}), b({2, 4});
    try {
        (void)(a + b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
    }
}

TEST_CASE("conv2d identity and constant kernels") {
    Rng rng(1);
    Tensor x = Tensor::randn({1, 1, 4, 4}, rng);
    Tensor id({1, 1, 1, 1}, 1.0);
    CHECK(conv2d(x, id) == x);

    Tensor ones = Tensor::ones({1, 1, 4, 4});
    Tensor k = Tensor::ones({1, 1, 3, 3});
    Tensor y = conv2d(ones, k, 1, Padding::same_circular);
    for (double v : y.data()) CHECK(v == doctest::Approx(9.0));
}

TEST_CASE("conv2d matches the loop oracle") {
    Rng rng(2);
    for (auto pad : {Padding::same_circular, Padding::same_zero}) {
        Tensor x = Tensor::randn({1, 2, 8, 8}, rng);
        Tensor k = Tensor::randn({3, 2, 3, 3}, rng);
        for (std::size_t s : {1u, 2u}) {
            Tensor got = conv2d(x, k, s, pad);
            Tensor want = oracle::conv2d(x, k, s, pad == Padding::same_circular);
            CHECK(got.shape() == want.shape());
            CHECK(oracle::max_abs_diff(got, want) <= 1e-10);
        }
    }
}

TEST_CASE("conv2d rejects bad shapes") {
    Tensor x({1, 2, 8, 8});
    CHECK_THROWS_AS(conv2d(x, Tensor({1, 3, 3, 3})), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor({1, 2, 2, 3})), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor({1, 2, 2, 2}), Tensor({1, 2, 3, 3})), ShapeError);
    CHECK_THROWS(conv2d(x, Tensor({1, 2, 3, 3}), 0));
}

TEST_CASE("conv2d adjoint satisfies <Kx, y> = <x, K^T y>") {
    Rng rng(3);
    for (auto pad : {Padding::same_circular, Padding::same_zero})
        for (std::size_t s : {1u, 2u}) {
            Tensor x = Tensor::randn({2, 2, 8, 8}, rng);
            Tensor k = Tensor::randn({3, 2, 3, 3}, rng);
            Tensor y = Tensor::randn({2, 3, 8 / s, 8 / s}, rng);
            double lhs = dot(conv2d(x, k, s, pad), y);
            double rhs = dot(x, conv2d_adjoint(y, k, x.shape(), s, pad));
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
        }
}

TEST_CASE("relu examples") {
    Tensor x({3}, std::vector<double>{-1, 0, 2});
    CHECK(relu(x) == Tensor({3}, std::vector<double>{0, 0, 2}));
    Rng rng(4);
    Tensor p = Tensor::uniform({10}, rng, 0.1, 1.0);
    CHECK(relu(p) == p);
    Tensor r = Tensor::randn({50}, rng);
    Tensor m = positive_mask(r);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(relu(r)[i] == r[i] * m[i]);
}

TEST_CASE("relu is 1-Lipschitz") {
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        Tensor a = Tensor::randn({20}, rng), b = Tensor::randn({20}, rng);
        CHECK(l2dist(relu(a), relu(b)) <= l2dist(a, b) + 1e-15);
    }
}

TEST_CASE("batchnorm eval and train modes") {
    Rng rng(6);
    Tensor x = Tensor::randn({4, 2, 3, 3}, rng, 2.0);
    {
        Graph g;
        BatchNormState st = BatchNormState::identity(2);
        Var y = ops::batchnorm2d(g.leaf(x), g.constant(Tensor::ones({2})), g.constant(Tensor::zeros({2})), st,
                                 BatchNormMode::eval);
        CHECK(oracle::max_abs_diff(y.value(), x) <= 1e-4);
    }
    {
        Graph g;
        BatchNormState st = BatchNormState::identity(2);
        st.eps = 0.0;
        Var y = ops::batchnorm2d(g.leaf(x), g.constant(Tensor({2}, 2.0)), g.constant(Tensor({2}, 3.0)), st,
                                 BatchNormMode::eval);
        Tensor want = x * 2.0;
        for (double& v : want.data()) v += 3.0;
        CHECK(oracle::max_abs_diff(y.value(), want) <= 1e-12);
    }
    {
        Graph g;
        BatchNormState st = BatchNormState::identity(2);
        Var y = ops::batchnorm2d(g.leaf(x), g.constant(Tensor::ones({2})), g.constant(Tensor::zeros({2})), st,
                                 BatchNormMode::train);
        for (std::size_t c = 0; c < 2; ++c) {
            double mx = 0, my = 0, vx = 0, vy = 0;
            const double n = 4 * 9;
            for (std::size_t b = 0; b < 4; ++b)
                for (std::size_t i = 0; i < 3; ++i)
                    for (std::size_t j = 0; j < 3; ++j) {
                        mx += x.at(b, c, i, j) / n;
                        my += y.value().at(b, c, i, j) / n;
                    }
            for (std::size_t b = 0; b < 4; ++b)
                for (std::size_t i = 0; i < 3; ++i)
                    for (std::size_t j = 0; j < 3; ++j) {
                        vx += std::pow(x.at(b, c, i, j) - mx, 2) / n;
                        vy += std::pow(y.value().at(b, c, i, j) - my, 2) / n;
                    }
            CHECK(std::abs(my) <= 1e-12);
            CHECK(vy == doctest::Approx(vx / (vx + st.eps)).epsilon(1e-10));
            CHECK(st.running_mean[c] == doctest::Approx(0.1 * mx));
        }
    }
}

TEST_CASE("backward basics") {
    Rng rng(7);
    Tensor x = Tensor::randn({5}, rng);
    auto [v, g] = value_and_grad([](Graph&, Var a) { return ops::sum_squares(a); }, x);
    CHECK(v == doctest::Approx(dot(x, x)));
    CHECK(oracle::max_abs_diff(g, x * 2.0) <= 1e-14);

    auto [c, gc] = value_and_grad([](Graph& gr, Var) { return gr.constant(Tensor::scalar(3.0)); }, x);
    CHECK(c == 3.0);
    CHECK(l2norm(gc) == 0.0);

    Graph gr;
    Var a = gr.leaf(x);
    CHECK_THROWS_AS(gr.backward(a), ShapeError);
}

TEST_CASE("gradient of |relu(Wx)|^2 matches finite differences") {
    Rng rng(8);
    Tensor w = Tensor::randn({4, 6}, rng);
    VarFn f = [&](Graph& g, Var x) {
        Var h = ops::linear(ops::reshape(x, {1, 6}), g.constant(w), g.constant(Tensor::zeros({4})));
        return ops::sum_squares(ops::relu(h));
    };
    for (int t = 0; t < 10; ++t) CHECK(gradient_error(f, Tensor::randn({6}, rng)) <= 1e-4);
}

TEST_CASE("every differentiable op matches finite differences") {
    Rng rng(9);
    Tensor k = Tensor::randn({2, 2, 3, 3}, rng);
    Tensor w = Tensor::randn({3, 32}, rng);
    Tensor bias = Tensor::randn({3}, rng);
    Tensor other = Tensor::randn({1, 2, 4, 4}, rng);
    Tensor weights = Tensor::randn({1, 2, 4, 4}, rng);
    const std::vector<int> labels{2};

    // Each op is wrapped so the output is a scalar with a generic linear readout.
    std::vector<std::pair<std::string, VarFn>> cases = {
        {"add", [&](Graph& g, Var x) { return ops::sum(ops::mul(ops::add(x, g.constant(other)), g.constant(weights))); }},
        {"sub", [&](Graph& g, Var x) { return ops::sum(ops::mul(ops::sub(x, g.constant(other)), g.constant(weights))); }},
        {"scale", [&](Graph& g, Var x) { return ops::sum(ops::mul(ops::scale(x, -1.7), g.constant(weights))); }},
        {"mul", [&](Graph&, Var x) { return ops::sum(ops::mul(x, x)); }},
        {"l2norm", [&](Graph&, Var x) { return ops::l2norm(x); }},
        {"l2dist", [&](Graph& g, Var x) { return ops::l2dist(x, g.constant(other)); }},
        {"tanh", [&](Graph& g, Var x) { return ops::sum(ops::mul(ops::tanh(x), g.constant(weights))); }},
        {"relu", [&](Graph& g, Var x) { return ops::sum(ops::mul(ops::relu(x), g.constant(weights))); }},
        {"conv", [&](Graph& g, Var x) { return ops::sum_squares(ops::conv2d(x, g.constant(k))); }},
        {"conv-zero-s2", [&](Graph& g, Var x) {
             return ops::sum_squares(ops::conv2d(x, g.constant(k), 2, Padding::same_zero));
         }},
        {"lowpass", [&](Graph& g, Var x) { return ops::sum(ops::mul(ops::lowpass(x, 1), g.constant(weights))); }},
        {"decimate", [&](Graph&, Var x) { return ops::sum_squares(ops::decimate(x, 2)); }},
        {"blur", [&](Graph& g, Var x) { return ops::sum(ops::mul(ops::binomial_blur(x), g.constant(weights))); }},
        {"pad", [&](Graph&, Var x) { return ops::sum_squares(ops::scale(ops::zero_pad_channels(x, 3), 2.0)); }},
        {"bn-train", [&](Graph& g, Var x) {
             BatchNormState st = BatchNormState::identity(2);
             Var y = ops::batchnorm2d(x, g.constant(Tensor({2}, 1.3)), g.constant(Tensor({2}, 0.2)), st,
                                      BatchNormMode::train);
             return ops::sum(ops::mul(y, g.constant(weights)));
         }},
        {"linear+xent", [&](Graph& g, Var x) {
             Var logits = ops::linear(ops::reshape(x, {1, 32}), g.constant(w), g.constant(bias));
             return ops::cross_entropy(logits, labels);
         }},
    };
    for (auto& [name, f] : cases) {
        CAPTURE(name);
        for (int t = 0; t < 100 / static_cast<int>(cases.size()) + 1; ++t) {
            Tensor x = Tensor::randn({1, 2, 4, 4}, rng);
            CHECK(gradient_error(f, x) <= 1e-4);
        }
    }
}

TEST_CASE("parameter gradients flow through conv kernels and batchnorm affine") {
    Rng rng(10);
    Tensor x = Tensor::randn({2, 2, 4, 4}, rng);
    Tensor k = Tensor::randn({2, 2, 3, 3}, rng);
    auto f = [&](const Tensor& kk) {
        Graph g;
        return ops::sum_squares(ops::relu(ops::conv2d(g.constant(x), g.leaf(kk)))).value().item();
    };
    Graph g;
    Var kv = g.leaf(k);
    g.backward(ops::sum_squares(ops::relu(ops::conv2d(g.constant(x), kv))));
    CHECK(oracle::relative_error(g.grad(kv), oracle::finite_difference(f, k)) <= 1e-4);
}

TEST_CASE("jacobian of linear map and relu") {
    Rng rng(11);
    Tensor a = Tensor::randn({3, 5}, rng);
    VarFn f = [&](Graph& g, Var x) {
        return ops::linear(ops::reshape(x, {1, 5}), g.constant(a), g.constant(Tensor::zeros({3})));
    };
    Eigen::MatrixXd J = jacobian(f, Tensor::randn({5}, rng));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j) CHECK(J(i, j) == a[static_cast<std::size_t>(i * 5 + j)]);

    Tensor x({4}, std::vector<double>{-1.0, 2.0, 0.5, -0.3});
    Eigen::MatrixXd R = jacobian([](Graph&, Var v) { return ops::relu(v); }, x);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(R(i, j) == (i == j && x[static_cast<std::size_t>(i)] > 0 ? 1.0 : 0.0));
}

TEST_CASE("jacobian of a conv-relu net matches finite differences") {
    Rng rng(12);
    Tensor k = Tensor::randn({2, 1, 3, 3}, rng);
    VarFn f = [&](Graph& g, Var x) { return ops::relu(ops::conv2d(x, g.constant(k))); };
    Tensor x = Tensor::randn({1, 1, 6, 6}, rng);
    Eigen::MatrixXd J = jacobian(f, x);
    const double h = 1e-5;
    Eigen::MatrixXd F(J.rows(), J.cols());
    for (std::size_t j = 0; j < x.size(); ++j) {
        Tensor xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        Graph g1, g2;
        Tensor d = f(g1, g1.leaf(xp)).value() - f(g2, g2.leaf(xm)).value();
        for (std::size_t i = 0; i < d.size(); ++i) F(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d[i] / (2 * h);
    }
    CHECK((J - F).norm() / F.norm() <= 1e-4);
}

TEST_CASE("l2 distance") {
    Rng rng(13);
    Tensor x = Tensor::randn({7}, rng);
    CHECK(l2dist(x, x) == 0.0);
    CHECK(l2dist(Tensor({2}, std::vector<double>{3, 4}), Tensor({2})) == 5.0);
    Tensor y = Tensor::randn({7}, rng);
    double s = 0;
    for (std::size_t i = 0; i < 7; ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    CHECK(l2dist(x, y) == doctest::Approx(std::sqrt(s)).epsilon(1e-15));
    CHECK_THROWS_AS(l2dist(x, Tensor({6})), ShapeError);
}

TEST_CASE("same seed gives identical bytes") {
    Rng a(99), b(99);
    Tensor x = Tensor::randn({1, 2, 8, 8}, a), y = Tensor::randn({1, 2, 8, 8}, b);
    CHECK(x == y);
    Tensor k = Tensor::randn({2, 2, 3, 3}, a), l = Tensor::randn({2, 2, 3, 3}, b);
    CHECK(conv2d(x, k) == conv2d(y, l));
}

TEST_CASE("tensor files round trip and reject bad sidecars") {
    auto dir = scratch_dir("io");
    Rng rng(14);
    Tensor t = Tensor::randn({2, 3, 4}, rng);
    save_tensor(dir / "t.bin", t);
    CHECK(std::filesystem::file_size(dir / "t.bin") == t.size() * 8);
    CHECK(load_tensor(dir / "t.bin") == t);

    auto meta = nlohmann::json::parse(std::ifstream(sidecar_path(dir / "t.bin")));
    CHECK(meta["shape"] == nlohmann::json::array({2, 3, 4}));
    CHECK(meta["order"] == "row-major");

    // First payload bytes are the little-endian encoding of t[0].
    std::ifstream raw(dir / "t.bin", std::ios::binary);
    unsigned char bytes[8];
    raw.read(reinterpret_cast<char*>(bytes), 8);
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | bytes[i];
    double first;
    std::memcpy(&first, &bits, 8);
    CHECK(first == t[0]);

    CHECK_THROWS_AS(load_tensor(dir / "missing.bin"), IoError);

    meta["shape"] = nlohmann::json::array({5, 5});
    std::ofstream(sidecar_path(dir / "t.bin")) << meta.dump();
    CHECK_THROWS_AS(load_tensor(dir / "t.bin"), IoError);

    meta["shape"] = nlohmann::json::array({2, 3, 4});
    meta["order"] = "column-major";
    std::ofstream(sidecar_path(dir / "t.bin")) << meta.dump();
    CHECK_THROWS_AS(load_tensor(dir / "t.bin"), IoError);

    meta["order"] = "row-major";
    meta["dtype"] = "float32";
    std::ofstream(sidecar_path(dir / "t.bin")) << meta.dump();
    CHECK_THROWS_AS(load_tensor(dir / "t.bin"), IoError);

    meta["dtype"] = "float64";
    meta["endian"] = "big";
    std::ofstream(sidecar_path(dir / "t.bin")) << meta.dump();
    CHECK_THROWS_AS(load_tensor(dir / "t.bin"), IoError);
}
