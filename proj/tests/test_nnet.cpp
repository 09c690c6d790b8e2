#include <doctest.h>

#include <cmath>
#include <random>

#include "prefsearch/nnet.hpp"

using namespace prefsearch::nnet;

namespace {

DenseNet identity_net(int n) {
    DenseLayer l;
    l.weight = Matrix::Identity(n, n);
    l.bias = Vector::Zero(n);
    l.activation = Activation::Identity;
    return DenseNet({l});
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

}  // namespace

TEST_SUITE("forward") {
    TEST_CASE("identity layer passes input through") {
        std::mt19937_64 rng(1);
        const Matrix x = random_matrix(4, 3, rng);
        CHECK(forward(identity_net(4), x).output == x);
    }

    TEST_CASE("relu on negative pre-activations is zero") {
        DenseLayer l{Matrix::Identity(3, 3), Vector::Constant(3, -10.0), Activation::Relu};
        const Matrix x = Matrix::Constant(3, 2, 1.0);
        CHECK(forward(DenseNet({l}), x).output.isZero());
    }

    TEST_CASE("two layers on a 2x2 case match hand arithmetic") {
        DenseLayer a{(Matrix(2, 2) << 1, -2, 3, 0.5).finished(), (Vector(2) << 0.5, -1).finished(), Activation::Relu};
        DenseLayer b{(Matrix(2, 2) << 2, 1, -1, 1).finished(), (Vector(2) << 0, 1).finished(), Activation::Identity};
        const Matrix x = (Matrix(2, 1) << 1, 2).finished();
        // layer a: [1-4+0.5, 3+1-1] = [-2.5, 3] -> relu [0, 3]
        // layer b: [0+3+0, 0+3+1] = [3, 4]
        const auto out = forward(DenseNet({a, b}), x).output;
        CHECK(out(0, 0) == doctest::Approx(3.0));
        CHECK(out(1, 0) == doctest::Approx(4.0));
    }

    TEST_CASE("dimension mismatch") {
        CHECK_THROWS_AS(forward(identity_net(3), Matrix::Zero(4, 1)), std::invalid_argument);
    }
}

TEST_SUITE("backward") {
    TEST_CASE("sum of a linear layer gives outer(1, input)") {
        std::mt19937_64 rng(2);
        auto net = DenseNet::glorot(3, {{2, Activation::Identity}}, rng);
        const Matrix x = random_matrix(3, 1, rng);
        const auto f = forward(net, x);
        const auto b = backward(net, f.cache, Matrix::Ones(2, 1));
        CHECK(b.grads.layers[0].weight.isApprox(Matrix::Ones(2, 1) * x.transpose()));
        CHECK(b.grads.layers[0].bias.isApprox(Vector::Ones(2)));
    }

    TEST_CASE("zero output gradient gives zero gradients") {
        std::mt19937_64 rng(3);
        auto net = DenseNet::glorot(5, {{4, Activation::Relu}, {2, Activation::Identity}}, rng);
        const auto f = forward(net, random_matrix(5, 3, rng));
        const auto b = backward(net, f.cache, Matrix::Zero(2, 3));
        CHECK(b.grads.squared_norm() == 0.0);
        CHECK(b.input_gradient.isZero());
    }

    TEST_CASE("stale cache is rejected") {
        std::mt19937_64 rng(4);
        auto small = DenseNet::glorot(3, {{2, Activation::Identity}}, rng);
        auto big = DenseNet::glorot(5, {{4, Activation::Relu}, {2, Activation::Identity}}, rng);
        const auto f = forward(small, random_matrix(3, 1, rng));
        CHECK_THROWS_AS(backward(big, f.cache, Matrix::Zero(2, 1)), std::invalid_argument);
    }

    TEST_CASE("matches central differences on random small nets") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            std::mt19937_64 rng(seed);
            auto net = DenseNet::glorot(6, {{8, Activation::Relu}, {5, Activation::Relu}, {3, Activation::Identity}}, rng);
            const Matrix x = random_matrix(6, 4, rng);
            const Matrix target = random_matrix(3, 4, rng);
            auto loss = [&] { return 0.5 * (forward(net, x).output - target).squaredNorm(); };
            const auto f = forward(net, x);
            const auto b = backward(net, f.cache, f.output - target);
            const auto probes = sample_probes(net, b.grads, 500, rng);
            CHECK(probes.size() >= 100);
            CHECK(grad_check(loss, probes, 1e-4) <= 1e-4);

            // Input gradient too.
            Matrix xi = x;
            const double h = 1e-5;
            double worst = 0.0;
            for (Eigen::Index i = 0; i < xi.size(); ++i) {
                const double keep = xi.data()[i];
                xi.data()[i] = keep + h;
                const double up = 0.5 * (forward(net, xi).output - target).squaredNorm();
                xi.data()[i] = keep - h;
                const double down = 0.5 * (forward(net, xi).output - target).squaredNorm();
                xi.data()[i] = keep;
                const double num = (up - down) / (2 * h);
                const double ana = b.input_gradient.data()[i];
                worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}));
            }
            CHECK(worst <= 1e-4);
        }
    }

    TEST_CASE("grad_check on the identity layer is exact") {
        auto net = identity_net(3);
        const Matrix x = Matrix::Constant(3, 1, 2.0);
        auto loss = [&] { return forward(net, x).output.sum(); };
        const auto f = forward(net, x);
        const auto b = backward(net, f.cache, Matrix::Ones(3, 1));
        std::mt19937_64 rng(0);
        CHECK(grad_check(loss, sample_probes(net, b.grads, 100, rng)) <= 1e-8);
    }
}

TEST_SUITE("adam") {
    TEST_CASE("zero gradient leaves parameters unchanged") {
        std::mt19937_64 rng(5);
        auto net = DenseNet::glorot(4, {{3, Activation::Relu}}, rng);
        const auto before = net;
        auto state = AdamState::for_net(net, 1e-3);
        for (int i = 0; i < 3; ++i) adam_step(net, GradientSet::zeros_like(net), state);
        CHECK(net == before);
        CHECK(state.step == 3);
    }

    TEST_CASE("first step moves each parameter by about lr against its gradient sign") {
        std::mt19937_64 rng(6);
        auto net = DenseNet::glorot(4, {{3, Activation::Identity}}, rng);
        const auto before = net;
        auto grads = GradientSet::zeros_like(net);
        grads.layers[0].weight = random_matrix(3, 4, rng);
        grads.layers[0].bias = Vector::Constant(3, -0.5);
        auto state = AdamState::for_net(net, 1e-3);
        adam_step(net, grads, state);
        const Matrix dw = net.layers()[0].weight - before.layers()[0].weight;
        for (Eigen::Index i = 0; i < dw.size(); ++i) {
            const double g = grads.layers[0].weight.data()[i];
            CHECK(dw.data()[i] == doctest::Approx(-1e-3 * (g > 0 ? 1.0 : -1.0)).epsilon(1e-4));
        }
        CHECK((net.layers()[0].bias - before.layers()[0].bias).isApprox(Vector::Constant(3, 1e-3), 1e-4));
    }

    TEST_CASE("1-d quadratic decreases monotonically for 100 steps") {
        DenseLayer l{Matrix::Constant(1, 1, 3.0), Vector::Zero(1), Activation::Identity};
        DenseNet net({l});
        auto state = AdamState::for_net(net, 1e-3);
        double prev = 9.0;
        for (int i = 0; i < 100; ++i) {
            auto grads = GradientSet::zeros_like(net);
            const double w = net.layers()[0].weight(0, 0);
            grads.layers[0].weight(0, 0) = 2.0 * w;
            adam_step(net, grads, state);
            const double now = std::pow(net.layers()[0].weight(0, 0), 2);
            CHECK(now < prev);
            prev = now;
        }
    }
}

TEST_SUITE("DenseNet") {
    TEST_CASE("glorot bounds, zero biases, deterministic") {
        std::mt19937_64 a(7), b(7);
        auto n1 = DenseNet::glorot(784, {{256, Activation::Relu}, {64, Activation::Relu}}, a);
        auto n2 = DenseNet::glorot(784, {{256, Activation::Relu}, {64, Activation::Relu}}, b);
        CHECK(n1 == n2);
        CHECK(n1.parameter_count() == 784 * 256 + 256 + 256 * 64 + 64);
        const double bound = std::sqrt(6.0 / (784 + 256));
        CHECK(n1.layers()[0].weight.cwiseAbs().maxCoeff() <= bound);
        CHECK(n1.layers()[0].bias.isZero());
        CHECK(n1.all_finite());
    }

    TEST_CASE("incompatible adjacent layers are rejected") {
        DenseLayer a{Matrix::Zero(3, 2), Vector::Zero(3), Activation::Relu};
        DenseLayer b{Matrix::Zero(2, 4), Vector::Zero(2), Activation::Identity};
        CHECK_THROWS_AS(DenseNet({a, b}), std::invalid_argument);
    }

    TEST_CASE("json round trip is exact") {
        std::mt19937_64 rng(8);
        auto net = DenseNet::glorot(5, {{4, Activation::Relu}, {2, Activation::Identity}}, rng);
        const auto back = dense_net_from_json(nlohmann::json::parse(to_json(net).dump()));
        CHECK(back == net);
    }
}
