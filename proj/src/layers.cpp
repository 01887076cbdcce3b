#include "twostream/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "twostream/errors.hpp"

namespace twostream {

namespace {

bool params_finite(const Layer& layer) {
    const auto finite = [](const std::vector<float>& v) {
        return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
    };
    if (const auto* conv = std::get_if<ConvLayer>(&layer))
        return finite(conv->weights) && finite(conv->bias);
    if (const auto* dense = std::get_if<DenseLayer>(&layer))
        return finite(dense->weights) && finite(dense->bias);
    return true;
}

Shape3 conv_output_shape(const ConvLayer& conv, Shape3 in) {
    if (conv.in_channels != in.channels)
        throw InvalidInputError("conv: input channel mismatch");
    if (conv.kernel <= 0 || conv.stride <= 0 || conv.pad < 0 || conv.out_channels <= 0)
        throw InvalidInputError("conv: bad geometry");
    const int eh = in.height + 2 * conv.pad - conv.kernel;
    const int ew = in.width + 2 * conv.pad - conv.kernel;
    if (eh < 0 || ew < 0 || eh % conv.stride != 0 || ew % conv.stride != 0)
        throw InvalidInputError("conv: kernel does not tile the input");
    const std::size_t wsize = static_cast<std::size_t>(conv.out_channels) * conv.kernel *
                              conv.kernel * conv.in_channels;
    if (conv.weights.size() != wsize ||
        conv.bias.size() != static_cast<std::size_t>(conv.out_channels))
        throw InvalidInputError("conv: parameter size mismatch");
    return {eh / conv.stride + 1, ew / conv.stride + 1, conv.out_channels};
}

Shape3 layer_output_shape(const Layer& layer, Shape3 in) {
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) return conv_output_shape(*conv, in);
    if (std::holds_alternative<ReluLayer>(layer)) return in;
    if (const auto* pool = std::get_if<BoxPoolLayer>(&layer)) {
        if (pool->factor <= 0) throw InvalidInputError("pool: factor must be positive");
        if (in.height % pool->factor != 0 || in.width % pool->factor != 0)
            throw InvalidInputError("pool: dimensions not divisible by factor");
        return {in.height / pool->factor, in.width / pool->factor, in.channels};
    }
    if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
        if (dense->in_dim != in.count()) throw InvalidInputError("dense: input size mismatch");
        if (dense->out_dim <= 0) throw InvalidInputError("dense: bad output size");
        if (dense->weights.size() !=
                static_cast<std::size_t>(dense->out_dim) * dense->in_dim ||
            dense->bias.size() != static_cast<std::size_t>(dense->out_dim))
            throw InvalidInputError("dense: parameter size mismatch");
        return {1, 1, dense->out_dim};
    }
    // softmax
    if (in.height != 1 || in.width != 1)
        throw InvalidInputError("softmax: expects a 1x1xK logit vector");
    return in;
}

// Flat activation buffer, double precision.
struct Buf {
    Shape3 shape;
    std::vector<double> v;

    explicit Buf(Shape3 s) : shape(s), v(static_cast<std::size_t>(s.count()), 0.0) {}
};

void conv_forward(const ConvLayer& conv, const Buf& in, Buf& out) {
    const int ih = in.shape.height, iw = in.shape.width, ic = in.shape.channels;
    const int oh = out.shape.height, ow = out.shape.width, oc = conv.out_channels;
    const int k = conv.kernel, stride = conv.stride, pad = conv.pad;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double* orow = &out.v[(static_cast<std::size_t>(oy) * ow + ox) * oc];
            for (int o = 0; o < oc; ++o) {
                double acc = conv.bias[o];
                for (int ky = 0; ky < k; ++ky) {
                    const int y = oy * stride - pad + ky;
                    if (y < 0 || y >= ih) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int x = ox * stride - pad + kx;
                        if (x < 0 || x >= iw) continue;
                        const double* irow = &in.v[(static_cast<std::size_t>(y) * iw + x) * ic];
                        const float* wrow =
                            &conv.weights[((static_cast<std::size_t>(o) * k + ky) * k + kx) * ic];
                        for (int c = 0; c < ic; ++c) acc += irow[c] * wrow[c];
                    }
                }
                orow[o] = acc;
            }
        }
    }
}

void conv_backward(const ConvLayer& conv, const Buf& in, const Buf& dout, Buf& din,
                   std::vector<double>& dweights, std::vector<double>& dbias) {
    const int ih = in.shape.height, iw = in.shape.width, ic = in.shape.channels;
    const int oh = dout.shape.height, ow = dout.shape.width, oc = conv.out_channels;
    const int k = conv.kernel, stride = conv.stride, pad = conv.pad;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const double* grow = &dout.v[(static_cast<std::size_t>(oy) * ow + ox) * oc];
            for (int o = 0; o < oc; ++o) {
                const double g = grow[o];
                dbias[o] += g;
                for (int ky = 0; ky < k; ++ky) {
                    const int y = oy * stride - pad + ky;
                    if (y < 0 || y >= ih) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int x = ox * stride - pad + kx;
                        if (x < 0 || x >= iw) continue;
                        const std::size_t ioff = (static_cast<std::size_t>(y) * iw + x) * ic;
                        const std::size_t woff =
                            ((static_cast<std::size_t>(o) * k + ky) * k + kx) * ic;
                        for (int c = 0; c < ic; ++c) {
                            dweights[woff + c] += g * in.v[ioff + c];
                            din.v[ioff + c] += g * conv.weights[woff + c];
                        }
                    }
                }
            }
        }
    }
}

void relu_forward(const Buf& in, Buf& out) {
    for (std::size_t i = 0; i < in.v.size(); ++i) out.v[i] = in.v[i] > 0.0 ? in.v[i] : 0.0;
}

void pool_forward(int factor, const Buf& in, Buf& out) {
    const int iw = in.shape.width, ch = in.shape.channels;
    const int oh = out.shape.height, ow = out.shape.width;
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            for (int c = 0; c < ch; ++c) {
                double sum = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        sum += in.v[(static_cast<std::size_t>(y * factor + dy) * iw +
                                     (x * factor + dx)) *
                                        ch +
                                    c];
                out.v[(static_cast<std::size_t>(y) * ow + x) * ch + c] = sum * inv;
            }
        }
    }
}

void pool_backward(int factor, const Buf& dout, Buf& din) {
    const int iw = din.shape.width, ch = din.shape.channels;
    const int oh = dout.shape.height, ow = dout.shape.width;
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            for (int c = 0; c < ch; ++c) {
                const double g = dout.v[(static_cast<std::size_t>(y) * ow + x) * ch + c] * inv;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        din.v[(static_cast<std::size_t>(y * factor + dy) * iw +
                               (x * factor + dx)) *
                                  ch +
                              c] = g;
            }
        }
    }
}

void dense_forward(const DenseLayer& dense, const Buf& in, Buf& out) {
    for (int o = 0; o < dense.out_dim; ++o) {
        double acc = dense.bias[o];
        const float* wrow = &dense.weights[static_cast<std::size_t>(o) * dense.in_dim];
        for (int i = 0; i < dense.in_dim; ++i) acc += in.v[i] * wrow[i];
        out.v[o] = acc;
    }
}

void dense_backward(const DenseLayer& dense, const Buf& in, const Buf& dout, Buf& din,
                    std::vector<double>& dweights, std::vector<double>& dbias) {
    for (int o = 0; o < dense.out_dim; ++o) {
        const double g = dout.v[o];
        dbias[o] += g;
        const std::size_t off = static_cast<std::size_t>(o) * dense.in_dim;
        for (int i = 0; i < dense.in_dim; ++i) {
            dweights[off + i] += g * in.v[i];
            din.v[i] += g * dense.weights[off + i];
        }
    }
}

std::vector<double> softmax(const std::vector<double>& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

Buf image_to_buf(const Tensor3& image) {
    Buf buf(image.shape());
    const auto data = image.data();
    for (std::size_t i = 0; i < buf.v.size(); ++i) buf.v[i] = data[i];
    return buf;
}

// Runs the stack up to (not including) the softmax head. When `trace` is
// non-null every layer input is kept for the backward pass. When `signature`
// is non-null it accumulates the ReLU on/off pattern.
std::vector<double> run_body(const LayerStack& stack, const Tensor3& image,
                             std::vector<Buf>* trace, std::uint64_t* signature) {
    if (!(image.shape() == stack.input_shape()))
        throw InvalidInputError("forward: image shape does not match stack input shape");
    Buf cur = image_to_buf(image);
    std::uint64_t sig = 0xCBF29CE484222325ull;
    const auto& layers = stack.layers();
    for (std::size_t li = 0; li + 1 < layers.size(); ++li) {
        Buf next(stack.shape_at(li + 1));
        if (const auto* conv = std::get_if<ConvLayer>(&layers[li])) {
            conv_forward(*conv, cur, next);
        } else if (std::holds_alternative<ReluLayer>(layers[li])) {
            relu_forward(cur, next);
            if (signature) {
                for (const double v : cur.v) {
                    sig ^= (v > 0.0) ? 0x9E3779B97F4A7C15ull : 0x517CC1B727220A95ull;
                    sig *= 0x100000001B3ull;
                }
            }
        } else if (const auto* pool = std::get_if<BoxPoolLayer>(&layers[li])) {
            pool_forward(pool->factor, cur, next);
        } else if (const auto* dense = std::get_if<DenseLayer>(&layers[li])) {
            dense_forward(*dense, cur, next);
        } else {
            throw InvalidInputError("softmax before the end of the stack");
        }
        if (trace) trace->push_back(std::move(cur));
        cur = std::move(next);
    }
    if (signature) *signature = sig;
    std::vector<double> logits = cur.v;
    if (trace) trace->push_back(std::move(cur));
    return logits;
}

} // namespace

LayerStack::LayerStack(Shape3 input_shape, std::vector<Layer> layers)
    : input_shape_(input_shape), layers_(std::move(layers)) {
    if (input_shape_.height <= 0 || input_shape_.width <= 0 || input_shape_.channels <= 0)
        throw InvalidInputError("stack: input shape must be positive");
    if (layers_.empty()) throw InvalidInputError("stack: no layers");
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
        if (std::holds_alternative<SoftmaxLayer>(layers_[i]))
            throw InvalidInputError("stack: softmax must be the last layer only");
    }
    if (!std::holds_alternative<SoftmaxLayer>(layers_.back()))
        throw InvalidInputError("stack: last layer must be softmax");
    shapes_.reserve(layers_.size() + 1);
    shapes_.push_back(input_shape_);
    for (const Layer& layer : layers_) {
        if (!params_finite(layer)) throw InvalidInputError("stack: non-finite parameters");
        shapes_.push_back(layer_output_shape(layer, shapes_.back()));
    }
    class_count_ = shapes_.back().channels;
}

std::size_t LayerStack::parameter_count() const {
    std::size_t n = 0;
    for (const Layer& layer : layers_) {
        if (const auto* conv = std::get_if<ConvLayer>(&layer))
            n += conv->weights.size() + conv->bias.size();
        else if (const auto* dense = std::get_if<DenseLayer>(&layer))
            n += dense->weights.size() + dense->bias.size();
    }
    return n;
}

std::vector<double> forward(const LayerStack& stack, const Tensor3& image) {
    return softmax(run_body(stack, image, nullptr, nullptr));
}

EvalProbe loss_probe(const LayerStack& stack, const Tensor3& image, int label) {
    if (label < 0 || label >= stack.class_count())
        throw InvalidInputError("loss: label out of range");
    EvalProbe probe;
    const auto probs = softmax(run_body(stack, image, nullptr, &probe.relu_signature));
    probe.loss = -std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-300));
    return probe;
}

GradientBundle loss_and_gradients(const LayerStack& stack, const Tensor3& image, int label) {
    if (label < 0 || label >= stack.class_count())
        throw InvalidInputError("loss: label out of range");

    std::vector<Buf> trace;
    trace.reserve(stack.layers().size());
    const std::vector<double> logits = run_body(stack, image, &trace, nullptr);
    const std::vector<double> probs = softmax(logits);

    GradientBundle bundle;
    bundle.loss = -std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-300));
    bundle.parameter_gradients.resize(stack.layers().size());

    // d loss / d logits for cross-entropy over softmax.
    Buf grad(stack.shape_at(stack.layers().size() - 1));
    for (std::size_t i = 0; i < probs.size(); ++i)
        grad.v[i] = probs[i] - (static_cast<int>(i) == label ? 1.0 : 0.0);

    const auto& layers = stack.layers();
    for (std::size_t li = layers.size() - 1; li-- > 0;) {
        const Buf& in = trace[li];
        Buf din(in.shape);
        if (const auto* conv = std::get_if<ConvLayer>(&layers[li])) {
            std::vector<double> dw(conv->weights.size(), 0.0);
            std::vector<double> db(conv->bias.size(), 0.0);
            conv_backward(*conv, in, grad, din, dw, db);
            Tensor3 wgrad(conv->out_channels, conv->kernel * conv->kernel, conv->in_channels);
            for (std::size_t i = 0; i < dw.size(); ++i)
                wgrad.data()[i] = static_cast<float>(dw[i]);
            Tensor3 bgrad(1, 1, conv->out_channels);
            for (std::size_t i = 0; i < db.size(); ++i)
                bgrad.data()[i] = static_cast<float>(db[i]);
            bundle.parameter_gradients[li] = {std::move(wgrad), std::move(bgrad)};
        } else if (std::holds_alternative<ReluLayer>(layers[li])) {
            for (std::size_t i = 0; i < din.v.size(); ++i)
                din.v[i] = in.v[i] > 0.0 ? grad.v[i] : 0.0;
        } else if (const auto* pool = std::get_if<BoxPoolLayer>(&layers[li])) {
            pool_backward(pool->factor, grad, din);
        } else if (const auto* dense = std::get_if<DenseLayer>(&layers[li])) {
            std::vector<double> dw(dense->weights.size(), 0.0);
            std::vector<double> db(dense->bias.size(), 0.0);
            dense_backward(*dense, in, grad, din, dw, db);
            Tensor3 wgrad(dense->out_dim, dense->in_dim, 1);
            for (std::size_t i = 0; i < dw.size(); ++i)
                wgrad.data()[i] = static_cast<float>(dw[i]);
            Tensor3 bgrad(1, 1, dense->out_dim);
            for (std::size_t i = 0; i < db.size(); ++i)
                bgrad.data()[i] = static_cast<float>(db[i]);
            bundle.parameter_gradients[li] = {std::move(wgrad), std::move(bgrad)};
        }
        grad = std::move(din);
    }

    bundle.input_gradient = Tensor3(image.height(), image.width(), image.channels());
    for (std::size_t i = 0; i < grad.v.size(); ++i)
        bundle.input_gradient.data()[i] = static_cast<float>(grad.v[i]);
    return bundle;
}

std::vector<std::vector<Tensor3>> export_parameters(const LayerStack& stack) {
    std::vector<std::vector<Tensor3>> params(stack.layers().size());
    for (std::size_t li = 0; li < stack.layers().size(); ++li) {
        const Layer& layer = stack.layers()[li];
        if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
            Tensor3 w(conv->out_channels, conv->kernel * conv->kernel, conv->in_channels);
            std::copy(conv->weights.begin(), conv->weights.end(), w.data().begin());
            Tensor3 b(1, 1, conv->out_channels);
            std::copy(conv->bias.begin(), conv->bias.end(), b.data().begin());
            params[li] = {std::move(w), std::move(b)};
        } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
            Tensor3 w(dense->out_dim, dense->in_dim, 1);
            std::copy(dense->weights.begin(), dense->weights.end(), w.data().begin());
            Tensor3 b(1, 1, dense->out_dim);
            std::copy(dense->bias.begin(), dense->bias.end(), b.data().begin());
            params[li] = {std::move(w), std::move(b)};
        }
    }
    return params;
}

LayerStack with_parameters(const LayerStack& stack,
                           const std::vector<std::vector<Tensor3>>& params) {
    if (params.size() != stack.layers().size())
        throw InvalidInputError("with_parameters: layer count mismatch");
    std::vector<Layer> layers = stack.layers();
    for (std::size_t li = 0; li < layers.size(); ++li) {
        if (auto* conv = std::get_if<ConvLayer>(&layers[li])) {
            if (params[li].size() != 2 ||
                params[li][0].size() != static_cast<int>(conv->weights.size()) ||
                params[li][1].size() != static_cast<int>(conv->bias.size()))
                throw InvalidInputError("with_parameters: conv parameter shape mismatch");
            std::copy(params[li][0].data().begin(), params[li][0].data().end(),
                      conv->weights.begin());
            std::copy(params[li][1].data().begin(), params[li][1].data().end(),
                      conv->bias.begin());
        } else if (auto* dense = std::get_if<DenseLayer>(&layers[li])) {
            if (params[li].size() != 2 ||
                params[li][0].size() != static_cast<int>(dense->weights.size()) ||
                params[li][1].size() != static_cast<int>(dense->bias.size()))
                throw InvalidInputError("with_parameters: dense parameter shape mismatch");
            std::copy(params[li][0].data().begin(), params[li][0].data().end(),
                      dense->weights.begin());
            std::copy(params[li][1].data().begin(), params[li][1].data().end(),
                      dense->bias.begin());
        } else if (!params[li].empty()) {
            throw InvalidInputError("with_parameters: unexpected parameters for layer");
        }
    }
    return LayerStack(stack.input_shape(), std::move(layers));
}

LayerStack sgd_step(const LayerStack& stack, const GradientBundle& gradients,
                    double learning_rate) {
    if (learning_rate < 0.0) throw InvalidInputError("sgd: negative learning rate");
    if (gradients.parameter_gradients.size() != stack.layers().size())
        throw InvalidInputError("sgd: gradient layer count mismatch");

    std::vector<Layer> layers = stack.layers();
    const auto apply = [&](std::vector<float>& weights, std::vector<float>& bias,
                           const std::vector<Tensor3>& grads, const char* what) {
        if (grads.size() != 2 || grads[0].size() != static_cast<int>(weights.size()) ||
            grads[1].size() != static_cast<int>(bias.size()))
            throw InvalidInputError(std::string("sgd: gradient shape mismatch in ") + what);
        if (!grads[0].all_finite() || !grads[1].all_finite())
            throw TrainError(std::string("sgd: non-finite gradient in ") + what);
        const auto wg = grads[0].data();
        for (std::size_t i = 0; i < weights.size(); ++i)
            weights[i] = static_cast<float>(weights[i] - learning_rate * wg[i]);
        const auto bg = grads[1].data();
        for (std::size_t i = 0; i < bias.size(); ++i)
            bias[i] = static_cast<float>(bias[i] - learning_rate * bg[i]);
    };

    for (std::size_t li = 0; li < layers.size(); ++li) {
        const auto& grads = gradients.parameter_gradients[li];
        if (auto* conv = std::get_if<ConvLayer>(&layers[li])) {
            apply(conv->weights, conv->bias, grads, "conv");
        } else if (auto* dense = std::get_if<DenseLayer>(&layers[li])) {
            apply(dense->weights, dense->bias, grads, "dense");
        } else if (!grads.empty()) {
            throw InvalidInputError("sgd: gradients supplied for a parameterless layer");
        }
    }
    return LayerStack(stack.input_shape(), std::move(layers));
}

} // namespace twostream
