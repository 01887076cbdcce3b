#pragma once

// Test-side oracles kept independent of the library's gradient path: central
// finite differences over the forward-only loss, plus small random stacks.

#include <cmath>
#include <optional>
#include <vector>

#include "twostream/classifier.hpp"
#include "twostream/layers.hpp"
#include "twostream/rng.hpp"

namespace twostream::testing {

constexpr double kFdStep = 1e-3;
constexpr double kFdRelTol = 1e-4;

inline double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / denom;
}

// Central difference at one input pixel. Returns nullopt when the two probes
// land in different ReLU regions (the quotient is meaningless across a kink).
inline std::optional<double> fd_input(const LayerStack& stack, const Tensor3& image, int label,
                                      int flat_index) {
    Tensor3 plus = image;
    Tensor3 minus = image;
    const float base = image.data()[static_cast<std::size_t>(flat_index)];
    plus.data()[static_cast<std::size_t>(flat_index)] = static_cast<float>(base + kFdStep);
    minus.data()[static_cast<std::size_t>(flat_index)] = static_cast<float>(base - kFdStep);
    const EvalProbe hi = loss_probe(stack, plus, label);
    const EvalProbe lo = loss_probe(stack, minus, label);
    if (hi.relu_signature != lo.relu_signature) return std::nullopt;
    const double dx = static_cast<double>(plus.data()[static_cast<std::size_t>(flat_index)]) -
                      static_cast<double>(minus.data()[static_cast<std::size_t>(flat_index)]);
    return (hi.loss - lo.loss) / dx;
}

// Central difference at one parameter coordinate (layer li, tensor pi, index).
inline std::optional<double> fd_param(const LayerStack& stack, const Tensor3& image, int label,
                                      std::size_t li, std::size_t pi, int flat_index) {
    auto params = export_parameters(stack);
    const float base = params[li][pi].data()[static_cast<std::size_t>(flat_index)];
    params[li][pi].data()[static_cast<std::size_t>(flat_index)] =
        static_cast<float>(base + kFdStep);
    const double stored_plus = params[li][pi].data()[static_cast<std::size_t>(flat_index)];
    const EvalProbe hi = loss_probe(with_parameters(stack, params), image, label);
    params[li][pi].data()[static_cast<std::size_t>(flat_index)] =
        static_cast<float>(base - kFdStep);
    const double stored_minus = params[li][pi].data()[static_cast<std::size_t>(flat_index)];
    const EvalProbe lo = loss_probe(with_parameters(stack, params), image, label);
    if (hi.relu_signature != lo.relu_signature) return std::nullopt;
    return (hi.loss - lo.loss) / (stored_plus - stored_minus);
}

struct GradCheckStats {
    int checked = 0;
    int skipped = 0; // kink-straddling probes, resampled
    double max_rel_err = 0.0;
};

// Checks `count` random input coordinates of loss_and_gradients against the
// finite-difference oracle. Coordinates whose probes straddle a kink are
// resampled.
inline GradCheckStats check_input_gradient(const LayerStack& stack, const Tensor3& image,
                                           int label, int count, Rng& rng) {
    const GradientBundle bundle = loss_and_gradients(stack, image, label);
    GradCheckStats stats;
    int guard = 0;
    while (stats.checked < count && guard++ < count * 20) {
        const int idx = rng.uniform_int(image.size());
        const auto fd = fd_input(stack, image, label, idx);
        if (!fd) {
            ++stats.skipped;
            continue;
        }
        const double analytic = bundle.input_gradient.data()[static_cast<std::size_t>(idx)];
        stats.max_rel_err = std::max(stats.max_rel_err, rel_err(analytic, *fd));
        ++stats.checked;
    }
    return stats;
}

inline GradCheckStats check_parameter_gradients(const LayerStack& stack, const Tensor3& image,
                                                int label, int count, Rng& rng) {
    const GradientBundle bundle = loss_and_gradients(stack, image, label);
    // Enumerate addressable parameter coordinates.
    struct Coord {
        std::size_t li, pi;
        int idx;
    };
    std::vector<Coord> all;
    for (std::size_t li = 0; li < bundle.parameter_gradients.size(); ++li)
        for (std::size_t pi = 0; pi < bundle.parameter_gradients[li].size(); ++pi)
            for (int idx = 0; idx < bundle.parameter_gradients[li][pi].size(); ++idx)
                all.push_back({li, pi, idx});

    GradCheckStats stats;
    int guard = 0;
    while (stats.checked < count && guard++ < count * 20) {
        const Coord c = all[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(all.size())))];
        const auto fd = fd_param(stack, image, label, c.li, c.pi, c.idx);
        if (!fd) {
            ++stats.skipped;
            continue;
        }
        const double analytic =
            bundle.parameter_gradients[c.li][c.pi].data()[static_cast<std::size_t>(c.idx)];
        stats.max_rel_err = std::max(stats.max_rel_err, rel_err(analytic, *fd));
        ++stats.checked;
    }
    return stats;
}

inline Tensor3 random_image(Shape3 shape, Rng& rng) {
    Tensor3 t(shape.height, shape.width, shape.channels);
    for (float& v : t.data()) v = static_cast<float>(rng.uniform());
    return t;
}

inline std::vector<float> random_params(std::size_t n, Rng& rng, double scale = 0.3) {
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.uniform(-scale, scale));
    return v;
}

// Small conv-relu-pool-dense stack over an 8x8x2 input, random parameters.
inline LayerStack small_random_stack(Rng& rng, int classes = 4) {
    ConvLayer conv{2, 4, 3, 1, 1, {}, {}};
    conv.weights = random_params(4 * 3 * 3 * 2, rng);
    conv.bias = random_params(4, rng, 0.1);
    DenseLayer dense{4 * 4 * 4, classes, {}, {}};
    dense.weights = random_params(static_cast<std::size_t>(dense.in_dim) * classes, rng);
    dense.bias = random_params(static_cast<std::size_t>(classes), rng, 0.1);
    std::vector<Layer> layers;
    layers.emplace_back(std::move(conv));
    layers.emplace_back(ReluLayer{});
    layers.emplace_back(BoxPoolLayer{2});
    layers.emplace_back(std::move(dense));
    layers.emplace_back(SoftmaxLayer{});
    return LayerStack({8, 8, 2}, std::move(layers));
}

} // namespace twostream::testing
