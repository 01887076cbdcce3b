#include "twostream/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "twostream/ioutil.hpp"
#include "twostream/parallel.hpp"
#include "twostream/rng.hpp"

namespace twostream {

namespace fs = std::filesystem;
using nlohmann::json;

std::string stream_name(Stream s) { return s == Stream::kHigh ? "high" : "low"; }

Stream stream_from_name(const std::string& name) {
    if (name == "high") return Stream::kHigh;
    if (name == "low") return Stream::kLow;
    throw ConfigError("unknown stream '" + name + "' (expected high|low)");
}

TopKPrediction top_k_of(std::span<const double> probs, int k) {
    if (k < 1) throw InvalidInputError("top_k: k must be >= 1");
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (probs[static_cast<std::size_t>(a)] != probs[static_cast<std::size_t>(b)])
            return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
        return a < b;
    });
    TopKPrediction pred;
    pred.k = k;
    const int take = std::min<int>(k, static_cast<int>(probs.size()));
    pred.entries.reserve(static_cast<std::size_t>(take));
    for (int i = 0; i < take; ++i)
        pred.entries.push_back({order[static_cast<std::size_t>(i)],
                                probs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]});
    return pred;
}

TopKPrediction predict_topk(const Model& model, const Tensor3& image, int k) {
    return top_k_of(model.predict(image), k);
}

int argmax_label(const Model& model, const Tensor3& image) {
    return predict_topk(model, image, 1).entries[0].label;
}

Classifier::Classifier(Stream stream, LabelSpace labels, LayerStack stack)
    : stream_(stream), labels_(std::move(labels)), stack_(std::move(stack)) {
    if (labels_.size() != stack_.class_count())
        throw InvalidInputError("classifier: label space size does not match class count");
    const Shape3 want = stream_ == Stream::kHigh
                            ? Shape3{kHighResolution, kHighResolution, 3}
                            : Shape3{kLowResolution, kLowResolution, 3};
    if (!(stack_.input_shape() == want))
        throw InvalidInputError("classifier: input shape does not match stream");
    const LabelKind want_kind = stream_ == Stream::kHigh ? LabelKind::kFine : LabelKind::kCoarse;
    if (labels_.kind != want_kind)
        throw InvalidInputError("classifier: label space kind does not match stream");
}

std::vector<double> Classifier::predict(const Tensor3& image) const {
    return forward(stack_, image);
}

Tensor3 Classifier::input_gradient(const Tensor3& image, int label) const {
    return loss_and_gradients(stack_, image, label).input_gradient;
}

namespace {

void seed_layer_params(std::vector<float>& v, Rng& rng) {
    for (float& x : v) x = static_cast<float>(rng.uniform(-0.05, 0.05));
}

} // namespace

LayerStack reference_architecture(Stream stream, int class_count, std::uint64_t init_seed) {
    Rng rng(init_seed);
    std::vector<Layer> layers;
    if (stream == Stream::kHigh) {
        ConvLayer c1{3, 8, 3, 1, 1, {}, {}};
        c1.weights.resize(8 * 3 * 3 * 3);
        c1.bias.resize(8);
        seed_layer_params(c1.weights, rng);
        seed_layer_params(c1.bias, rng);
        ConvLayer c2{8, 16, 3, 1, 1, {}, {}};
        c2.weights.resize(16 * 3 * 3 * 8);
        c2.bias.resize(16);
        seed_layer_params(c2.weights, rng);
        seed_layer_params(c2.bias, rng);
        DenseLayer d{8 * 8 * 16, class_count, {}, {}};
        d.weights.resize(static_cast<std::size_t>(d.in_dim) * class_count);
        d.bias.resize(static_cast<std::size_t>(class_count));
        seed_layer_params(d.weights, rng);
        seed_layer_params(d.bias, rng);
        layers.emplace_back(std::move(c1));
        layers.emplace_back(ReluLayer{});
        layers.emplace_back(BoxPoolLayer{2});
        layers.emplace_back(std::move(c2));
        layers.emplace_back(ReluLayer{});
        layers.emplace_back(BoxPoolLayer{2});
        layers.emplace_back(std::move(d));
        layers.emplace_back(SoftmaxLayer{});
        return LayerStack({kHighResolution, kHighResolution, 3}, std::move(layers));
    }
    ConvLayer c1{3, 8, 3, 1, 1, {}, {}};
    c1.weights.resize(8 * 3 * 3 * 3);
    c1.bias.resize(8);
    seed_layer_params(c1.weights, rng);
    seed_layer_params(c1.bias, rng);
    DenseLayer d{8 * 8 * 8, class_count, {}, {}};
    d.weights.resize(static_cast<std::size_t>(d.in_dim) * class_count);
    d.bias.resize(static_cast<std::size_t>(class_count));
    seed_layer_params(d.weights, rng);
    seed_layer_params(d.bias, rng);
    layers.emplace_back(std::move(c1));
    layers.emplace_back(ReluLayer{});
    layers.emplace_back(std::move(d));
    layers.emplace_back(SoftmaxLayer{});
    return LayerStack({kLowResolution, kLowResolution, 3}, std::move(layers));
}

namespace {

struct TrainSet {
    std::vector<Tensor3> images;
    std::vector<int> labels;
};

TrainSet stream_view(const Dataset& ds, Stream stream) {
    TrainSet set;
    for (const auto& ex : ds.examples) {
        if (stream == Stream::kHigh) {
            set.images.push_back(ex.image_hi);
            set.labels.push_back(ex.fine_label);
        } else {
            if (ex.coarse_label == MappingTable::kOther) continue; // the low stream never sees Other
            set.images.push_back(low_res_view(ex));
            set.labels.push_back(ex.coarse_label);
        }
    }
    return set;
}

// Sums per-image parameter gradients in index order, in double, then scales.
GradientBundle mean_bundle(const std::vector<GradientBundle>& bundles, const LayerStack& stack) {
    const double inv = 1.0 / static_cast<double>(bundles.size());
    std::vector<std::vector<std::vector<double>>> acc(stack.layers().size());
    for (std::size_t li = 0; li < stack.layers().size(); ++li) {
        acc[li].resize(bundles[0].parameter_gradients[li].size());
        for (std::size_t pi = 0; pi < acc[li].size(); ++pi)
            acc[li][pi].assign(
                static_cast<std::size_t>(bundles[0].parameter_gradients[li][pi].size()), 0.0);
    }
    double loss = 0.0;
    for (const GradientBundle& b : bundles) {
        loss += b.loss;
        for (std::size_t li = 0; li < acc.size(); ++li)
            for (std::size_t pi = 0; pi < acc[li].size(); ++pi) {
                const auto src = b.parameter_gradients[li][pi].data();
                auto& dst = acc[li][pi];
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
            }
    }
    GradientBundle mean;
    mean.loss = loss * inv;
    mean.parameter_gradients.resize(acc.size());
    for (std::size_t li = 0; li < acc.size(); ++li) {
        mean.parameter_gradients[li].reserve(acc[li].size());
        for (std::size_t pi = 0; pi < acc[li].size(); ++pi) {
            const Tensor3& proto = bundles[0].parameter_gradients[li][pi];
            Tensor3 g(proto.height(), proto.width(), proto.channels());
            for (std::size_t i = 0; i < acc[li][pi].size(); ++i)
                g.data()[i] = static_cast<float>(acc[li][pi][i] * inv);
            mean.parameter_gradients[li].push_back(std::move(g));
        }
    }
    return mean;
}

} // namespace

double accuracy_on(const Model& model, const std::vector<Tensor3>& images,
                   const std::vector<int>& labels, int threads) {
    if (images.empty()) return 0.0;
    std::vector<char> hit(images.size(), 0);
    parallel_for(static_cast<int>(images.size()), threads, [&](int i) {
        hit[static_cast<std::size_t>(i)] =
            argmax_label(model, images[static_cast<std::size_t>(i)]) ==
            labels[static_cast<std::size_t>(i)];
    });
    const long correct = std::count(hit.begin(), hit.end(), char(1));
    return static_cast<double>(correct) / static_cast<double>(images.size());
}

Classifier train_classifier(const GeneratedData& data, Stream stream, const TrainConfig& cfg,
                            TrainReport* report, int threads) {
    if (cfg.epochs < 0 || cfg.batch_size <= 0 || cfg.learning_rate <= 0.0)
        throw ConfigError("train: epochs must be >= 0, batch size and learning rate positive");
    const TrainSet train = stream_view(data.train, stream);
    if (train.images.empty()) throw TrainError("train: empty dataset for stream");

    const LabelSpace& space = stream == Stream::kHigh ? data.fine_space : data.coarse_space;
    LayerStack stack = reference_architecture(stream, space.size(), derive_seed(cfg.seed, "init"));

    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    Rng augment_rng(derive_seed(cfg.seed, "augment"));
    std::vector<int> order(train.images.size());
    std::iota(order.begin(), order.end(), 0);

    // The low stream is augmented with per-image channel shifts so it learns
    // color-invariant shape features; the fine stream must keep color.
    const bool augment = stream == Stream::kLow;
    const double kChannelShift = 0.06;

    std::vector<double> epoch_losses;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        std::vector<float> shifts;
        if (augment) {
            shifts.resize(order.size() * 3);
            for (float& s : shifts)
                s = static_cast<float>(augment_rng.uniform(-kChannelShift, kChannelShift));
        }
        double loss_sum = 0.0;
        long loss_n = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<GradientBundle> bundles(end - start);
            parallel_for(static_cast<int>(end - start), threads, [&](int i) {
                const std::size_t slot = start + static_cast<std::size_t>(i);
                const int idx = order[slot];
                const Tensor3& base = train.images[static_cast<std::size_t>(idx)];
                if (!augment) {
                    bundles[static_cast<std::size_t>(i)] = loss_and_gradients(
                        stack, base, train.labels[static_cast<std::size_t>(idx)]);
                    return;
                }
                Tensor3 shifted = base;
                auto data = shifted.data();
                for (int px = 0; px < shifted.size(); px += 3)
                    for (int c = 0; c < 3; ++c) {
                        const float v = data[static_cast<std::size_t>(px + c)] +
                                        shifts[slot * 3 + static_cast<std::size_t>(c)];
                        data[static_cast<std::size_t>(px + c)] =
                            v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
                    }
                bundles[static_cast<std::size_t>(i)] = loss_and_gradients(
                    stack, shifted, train.labels[static_cast<std::size_t>(idx)]);
            });
            const GradientBundle mean = mean_bundle(bundles, stack);
            loss_sum += mean.loss * static_cast<double>(end - start);
            loss_n += static_cast<long>(end - start);
            stack = sgd_step(stack, mean, cfg.learning_rate);
        }
        epoch_losses.push_back(loss_sum / static_cast<double>(loss_n));
    }

    Classifier clf(stream, space, std::move(stack));
    if (report) {
        report->epoch_mean_loss = std::move(epoch_losses);
        report->train_accuracy = accuracy_on(clf, train.images, train.labels, threads);
        const TrainSet test = stream_view(data.test, stream);
        report->test_accuracy =
            test.images.empty() ? 0.0 : accuracy_on(clf, test.images, test.labels, threads);
    }
    return clf;
}

namespace {

json arch_to_json(const LayerStack& stack) {
    json arr = json::array();
    for (const Layer& layer : stack.layers()) {
        if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
            arr.push_back({{"type", "conv"},
                           {"in_channels", conv->in_channels},
                           {"out_channels", conv->out_channels},
                           {"kernel", conv->kernel},
                           {"stride", conv->stride},
                           {"pad", conv->pad}});
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            arr.push_back({{"type", "relu"}});
        } else if (const auto* pool = std::get_if<BoxPoolLayer>(&layer)) {
            arr.push_back({{"type", "boxpool"}, {"factor", pool->factor}});
        } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
            arr.push_back(
                {{"type", "dense"}, {"in_dim", dense->in_dim}, {"out_dim", dense->out_dim}});
        } else {
            arr.push_back({{"type", "softmax"}});
        }
    }
    return arr;
}

LayerStack arch_from_json(Shape3 input_shape, const json& arr) {
    std::vector<Layer> layers;
    for (const json& j : arr) {
        const std::string type = j.at("type").get<std::string>();
        if (type == "conv") {
            ConvLayer conv{j.at("in_channels").get<int>(), j.at("out_channels").get<int>(),
                           j.at("kernel").get<int>(),      j.at("stride").get<int>(),
                           j.at("pad").get<int>(),         {},
                           {}};
            conv.weights.assign(static_cast<std::size_t>(conv.out_channels) * conv.kernel *
                                    conv.kernel * conv.in_channels,
                                0.0f);
            conv.bias.assign(static_cast<std::size_t>(conv.out_channels), 0.0f);
            layers.emplace_back(std::move(conv));
        } else if (type == "relu") {
            layers.emplace_back(ReluLayer{});
        } else if (type == "boxpool") {
            layers.emplace_back(BoxPoolLayer{j.at("factor").get<int>()});
        } else if (type == "dense") {
            DenseLayer dense{j.at("in_dim").get<int>(), j.at("out_dim").get<int>(), {}, {}};
            dense.weights.assign(static_cast<std::size_t>(dense.in_dim) * dense.out_dim, 0.0f);
            dense.bias.assign(static_cast<std::size_t>(dense.out_dim), 0.0f);
            layers.emplace_back(std::move(dense));
        } else if (type == "softmax") {
            layers.emplace_back(SoftmaxLayer{});
        } else {
            throw IngestError("model manifest: unknown layer type '" + type + "'");
        }
    }
    return LayerStack(input_shape, std::move(layers));
}

} // namespace

void save_classifier(const fs::path& dir, const Classifier& clf) {
    fs::create_directories(dir);
    const Shape3 in = clf.input_shape();
    json manifest{{"stream", stream_name(clf.stream())},
                  {"input_shape", {in.height, in.width, in.channels}},
                  {"label_space",
                   {{"kind", clf.labels().kind == LabelKind::kFine ? "fine" : "coarse"},
                    {"names", clf.labels().names}}},
                  {"architecture", arch_to_json(clf.stack())}};
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");

    std::vector<Tensor3> flat;
    for (const auto& group : export_parameters(clf.stack()))
        for (const Tensor3& t : group) flat.push_back(t);
    write_tensor_stream(dir / "params.t3", flat);
}

Classifier load_classifier(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json"))
        throw MissingArtifactError("model manifest not found: " + (dir / "manifest.json").string());
    json manifest;
    try {
        manifest = json::parse(read_file_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw IngestError("model manifest: " + std::string(e.what()));
    }
    try {
        const auto shape = manifest.at("input_shape").get<std::vector<int>>();
        if (shape.size() != 3) throw IngestError("model manifest: input_shape must have 3 entries");
        LayerStack stack =
            arch_from_json({shape[0], shape[1], shape[2]}, manifest.at("architecture"));

        auto flat = read_tensor_stream(dir / "params.t3");
        auto grouped = export_parameters(stack); // shape prototype
        std::size_t next = 0;
        for (auto& group : grouped)
            for (Tensor3& t : group) {
                if (next >= flat.size()) throw IngestError("model params: too few tensors");
                if (!(flat[next].shape() == t.shape()))
                    throw IngestError("model params: tensor shape mismatch at index " +
                                      std::to_string(next));
                t = flat[next++];
            }
        if (next != flat.size()) throw IngestError("model params: trailing tensors");
        stack = with_parameters(stack, grouped);

        LabelSpace space;
        space.kind = manifest.at("label_space").at("kind").get<std::string>() == "fine"
                         ? LabelKind::kFine
                         : LabelKind::kCoarse;
        space.names = manifest.at("label_space").at("names").get<std::vector<std::string>>();
        return Classifier(stream_from_name(manifest.at("stream").get<std::string>()),
                          std::move(space), std::move(stack));
    } catch (const json::exception& e) {
        throw IngestError("model manifest: " + std::string(e.what()));
    }
}

} // namespace twostream
