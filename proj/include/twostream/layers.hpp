#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "twostream/tensor.hpp"

namespace twostream {

// Fixed layer vocabulary with hand-written backward passes. The attacks only
// need loss gradients with respect to the input image, so a small closed set
// of layers beats a general autodiff graph here.

struct ConvLayer {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    std::vector<float> weights; // [oc][ky][kx][ic]
    std::vector<float> bias;    // [oc]
};

struct ReluLayer {};

struct BoxPoolLayer {
    int factor = 2; // non-overlapping f x f mean pooling
};

struct DenseLayer {
    int in_dim = 0;
    int out_dim = 0;
    std::vector<float> weights; // [out][in], row-major
    std::vector<float> bias;    // [out]
};

struct SoftmaxLayer {};

using Layer = std::variant<ConvLayer, ReluLayer, BoxPoolLayer, DenseLayer, SoftmaxLayer>;

// Ordered layer descriptors with a validated shape chain. Exactly one softmax
// head, last. Immutable after construction; safe to share across threads.
class LayerStack {
public:
    LayerStack(Shape3 input_shape, std::vector<Layer> layers);

    Shape3 input_shape() const { return input_shape_; }
    int class_count() const { return class_count_; }
    const std::vector<Layer>& layers() const { return layers_; }

    // Shape entering layer i (shape_at(0) == input_shape, shape_at(n) == 1x1xK).
    Shape3 shape_at(std::size_t i) const { return shapes_[i]; }

    std::size_t parameter_count() const;

private:
    Shape3 input_shape_;
    std::vector<Layer> layers_;
    std::vector<Shape3> shapes_; // size layers_.size() + 1
    int class_count_ = 0;
};

struct GradientBundle {
    double loss = 0.0;
    // One entry per layer: conv -> {weight (oc, k*k, ic), bias (1, 1, oc)},
    // dense -> {weight (out, in, 1), bias (1, 1, out)}, others -> {}.
    std::vector<std::vector<Tensor3>> parameter_gradients;
    Tensor3 input_gradient;
};

// Full forward pass; returns the softmax probability vector (length K).
std::vector<double> forward(const LayerStack& stack, const Tensor3& image);

// Cross-entropy loss at `label` plus analytic gradients for every parameter
// and for the input image.
GradientBundle loss_and_gradients(const LayerStack& stack, const Tensor3& image, int label);

// Forward-only loss evaluation together with a fingerprint of the rectifier
// on/off pattern. Finite-difference harnesses use the fingerprint to discard
// probe pairs that straddle a ReLU kink, where central differences are
// ill-defined.
struct EvalProbe {
    double loss = 0.0;
    std::uint64_t relu_signature = 0;
};
EvalProbe loss_probe(const LayerStack& stack, const Tensor3& image, int label);

// Returns a stack with every parameter decreased by learning_rate * gradient.
LayerStack sgd_step(const LayerStack& stack, const GradientBundle& gradients,
                    double learning_rate);

// Parameter access helpers shared by training, serialization and tests.
// Parameters are exposed in layer order as tensors with the same shapes used
// by GradientBundle.
std::vector<std::vector<Tensor3>> export_parameters(const LayerStack& stack);
LayerStack with_parameters(const LayerStack& stack,
                           const std::vector<std::vector<Tensor3>>& params);

} // namespace twostream
