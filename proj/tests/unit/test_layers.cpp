#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "twostream/layers.hpp"

using namespace twostream;
using namespace twostream::testing;

namespace {

LayerStack dense_softmax_stack(int in_dim, int classes, std::vector<float> weights,
                               std::vector<float> bias, Shape3 input) {
    DenseLayer dense{in_dim, classes, std::move(weights), std::move(bias)};
    std::vector<Layer> layers;
    layers.emplace_back(std::move(dense));
    layers.emplace_back(SoftmaxLayer{});
    return LayerStack(input, std::move(layers));
}

} // namespace

TEST_CASE("zero weights give a uniform distribution") {
    const int classes = 7;
    const LayerStack stack = dense_softmax_stack(
        12, classes, std::vector<float>(12 * classes, 0.0f), std::vector<float>(classes, 0.0f),
        {2, 2, 3});
    Rng rng(3);
    const Tensor3 img = random_image({2, 2, 3}, rng);
    const auto probs = forward(stack, img);
    REQUIRE(static_cast<int>(probs.size()) == classes);
    double sum = 0.0;
    for (const double p : probs) {
        CHECK(p == doctest::Approx(1.0 / classes).epsilon(1e-9));
        sum += p;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-5);
}

TEST_CASE("identity-like dense on a one-hot input reproduces hand softmax") {
    // 4-dim input, 4 classes, W = 2*I: logits = 2 * onehot.
    const int n = 4;
    std::vector<float> w(n * n, 0.0f);
    for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i * n + i)] = 2.0f;
    const LayerStack stack =
        dense_softmax_stack(n, n, std::move(w), std::vector<float>(n, 0.0f), {1, 1, n});

    Tensor3 img(1, 1, n);
    img.at(0, 0, 2) = 1.0f;
    const auto probs = forward(stack, img);

    // softmax of (0, 0, 2, 0), computed by hand: e^2 / (e^2 + 3), 1 / (e^2 + 3)
    const double e2 = std::exp(2.0);
    const double z = e2 + 3.0;
    CHECK(probs[2] == doctest::Approx(e2 / z).epsilon(1e-9));
    CHECK(probs[0] == doctest::Approx(1.0 / z).epsilon(1e-9));
    CHECK(probs[1] == doctest::Approx(1.0 / z).epsilon(1e-9));
    CHECK(probs[3] == doctest::Approx(1.0 / z).epsilon(1e-9));
}

TEST_CASE("uniform output loss is ln(K)") {
    const int classes = 5;
    const LayerStack stack = dense_softmax_stack(
        8, classes, std::vector<float>(8 * classes, 0.0f), std::vector<float>(classes, 0.0f),
        {2, 2, 2});
    Rng rng(11);
    const Tensor3 img = random_image({2, 2, 2}, rng);
    const auto bundle = loss_and_gradients(stack, img, 3);
    CHECK(std::abs(bundle.loss - std::log(static_cast<double>(classes))) <= 1e-5);
    // loss == -log(p_label)
    const auto probs = forward(stack, img);
    CHECK(bundle.loss == doctest::Approx(-std::log(probs[3])).epsilon(1e-9));
}

TEST_CASE("input gradients match central finite differences") {
    Rng rng(2024);
    const LayerStack stack = small_random_stack(rng);
    const Tensor3 img = random_image(stack.input_shape(), rng);
    const auto stats = check_input_gradient(stack, img, 1, 120, rng);
    CHECK(stats.checked >= 120);
    CHECK(stats.max_rel_err <= kFdRelTol);
}

TEST_CASE("parameter gradients match central finite differences") {
    Rng rng(77);
    const LayerStack stack = small_random_stack(rng);
    const Tensor3 img = random_image(stack.input_shape(), rng);
    const auto stats = check_parameter_gradients(stack, img, 2, 120, rng);
    CHECK(stats.checked >= 120);
    CHECK(stats.max_rel_err <= kFdRelTol);
}

TEST_CASE("gradient errors") {
    Rng rng(5);
    const LayerStack stack = small_random_stack(rng);
    const Tensor3 img = random_image(stack.input_shape(), rng);
    CHECK_THROWS_AS(loss_and_gradients(stack, img, -1), InvalidInputError);
    CHECK_THROWS_AS(loss_and_gradients(stack, img, stack.class_count()), InvalidInputError);
    const Tensor3 wrong(4, 4, 2);
    CHECK_THROWS_AS(loss_and_gradients(stack, wrong, 0), InvalidInputError);
    CHECK_THROWS_AS(forward(stack, wrong), InvalidInputError);
}

TEST_CASE("sgd_step") {
    SUBCASE("learning rate zero leaves parameters unchanged") {
        Rng rng(6);
        const LayerStack stack = small_random_stack(rng);
        const Tensor3 img = random_image(stack.input_shape(), rng);
        const auto bundle = loss_and_gradients(stack, img, 0);
        const LayerStack stepped = sgd_step(stack, bundle, 0.0);
        CHECK(export_parameters(stepped) == export_parameters(stack));
    }

    SUBCASE("scalar parameter arithmetic: w=1, g=2, lr=0.1 -> 0.8") {
        const LayerStack stack =
            dense_softmax_stack(1, 1, {1.0f}, {0.0f}, {1, 1, 1});
        GradientBundle bundle;
        bundle.parameter_gradients.resize(2);
        Tensor3 wg(1, 1, 1);
        wg.at(0, 0, 0) = 2.0f;
        Tensor3 bg(1, 1, 1);
        bundle.parameter_gradients[0] = {wg, bg};
        const LayerStack stepped = sgd_step(stack, bundle, 0.1);
        const auto params = export_parameters(stepped);
        CHECK(params[0][0].at(0, 0, 0) == doctest::Approx(0.8).epsilon(1e-7));
    }

    SUBCASE("non-finite gradient is a training fault") {
        Rng rng(8);
        const LayerStack stack = small_random_stack(rng);
        const Tensor3 img = random_image(stack.input_shape(), rng);
        auto bundle = loss_and_gradients(stack, img, 0);
        bundle.parameter_gradients[0][0].at(0, 0, 0) =
            std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS(sgd_step(stack, bundle, 0.1), TrainError);
    }

    SUBCASE("one small step does not increase the loss in >= 90% of random trials") {
        Rng rng(99);
        int non_increasing = 0;
        const int trials = 100;
        for (int t = 0; t < trials; ++t) {
            const LayerStack stack = small_random_stack(rng);
            const Tensor3 img = random_image(stack.input_shape(), rng);
            const int label = rng.uniform_int(stack.class_count());
            const auto bundle = loss_and_gradients(stack, img, label);
            const LayerStack stepped = sgd_step(stack, bundle, 1e-3);
            const double after = loss_probe(stepped, img, label).loss;
            if (after <= bundle.loss + 1e-12) ++non_increasing;
        }
        CHECK(non_increasing >= 90);
    }
}

TEST_CASE("softmax is permutation-equivariant under class relabeling") {
    Rng rng(31);
    const int in_dim = 6, classes = 5;
    std::vector<float> w = random_params(static_cast<std::size_t>(in_dim) * classes, rng);
    std::vector<float> b = random_params(static_cast<std::size_t>(classes), rng);
    const LayerStack stack = dense_softmax_stack(in_dim, classes, w, b, {1, 2, 3});

    // cyclic permutation of the class rows
    std::vector<float> wp(w.size());
    std::vector<float> bp(b.size());
    for (int o = 0; o < classes; ++o) {
        const int po = (o + 1) % classes;
        bp[static_cast<std::size_t>(po)] = b[static_cast<std::size_t>(o)];
        for (int i = 0; i < in_dim; ++i)
            wp[static_cast<std::size_t>(po * in_dim + i)] =
                w[static_cast<std::size_t>(o * in_dim + i)];
    }
    const LayerStack permuted = dense_softmax_stack(in_dim, classes, wp, bp, {1, 2, 3});

    const Tensor3 img = random_image({1, 2, 3}, rng);
    const auto p = forward(stack, img);
    const auto pp = forward(permuted, img);
    for (int o = 0; o < classes; ++o)
        CHECK(pp[static_cast<std::size_t>((o + 1) % classes)] ==
              doctest::Approx(p[static_cast<std::size_t>(o)]).epsilon(1e-12));
}

TEST_CASE("forward is deterministic") {
    Rng rng(55);
    const LayerStack stack = small_random_stack(rng);
    const Tensor3 img = random_image(stack.input_shape(), rng);
    const auto a = forward(stack, img);
    const auto b = forward(stack, img);
    CHECK(a == b);
}

TEST_CASE("stack construction validation") {
    SUBCASE("softmax must be last and unique") {
        std::vector<Layer> layers;
        layers.emplace_back(SoftmaxLayer{});
        layers.emplace_back(ReluLayer{});
        CHECK_THROWS_AS(LayerStack({1, 1, 3}, std::move(layers)), InvalidInputError);
    }
    SUBCASE("shape chaining is validated") {
        DenseLayer dense{10, 3, std::vector<float>(30, 0.0f), std::vector<float>(3, 0.0f)};
        std::vector<Layer> layers;
        layers.emplace_back(std::move(dense));
        layers.emplace_back(SoftmaxLayer{});
        CHECK_THROWS_AS(LayerStack({2, 2, 3}, std::move(layers)), InvalidInputError);
    }
    SUBCASE("non-finite parameters are rejected") {
        DenseLayer dense{4, 2, std::vector<float>(8, 0.0f), std::vector<float>(2, 0.0f)};
        dense.weights[3] = std::numeric_limits<float>::infinity();
        std::vector<Layer> layers;
        layers.emplace_back(std::move(dense));
        layers.emplace_back(SoftmaxLayer{});
        CHECK_THROWS_AS(LayerStack({1, 1, 4}, std::move(layers)), InvalidInputError);
    }
}
