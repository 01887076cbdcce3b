#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "twostream/dataset.hpp"
#include "twostream/layers.hpp"

namespace twostream {

enum class Stream { kHigh, kLow };

std::string stream_name(Stream s);
Stream stream_from_name(const std::string& name);

struct TopKEntry {
    int label = 0;
    double prob = 0.0;
};

// Ordered (label, probability) list, probabilities non-increasing, ties broken
// by lower label index, length min(k, class count).
struct TopKPrediction {
    std::vector<TopKEntry> entries;
    int k = 0;
};

TopKPrediction top_k_of(std::span<const double> probs, int k);

// Inference contract the detector and the attack suite are written against.
// Any backbone satisfying it can stand behind either stream.
class Model {
public:
    virtual ~Model() = default;
    virtual Shape3 input_shape() const = 0;
    virtual int class_count() const = 0;
    virtual std::vector<double> predict(const Tensor3& image) const = 0;
    virtual Tensor3 input_gradient(const Tensor3& image, int label) const = 0;
};

TopKPrediction predict_topk(const Model& model, const Tensor3& image, int k);
int argmax_label(const Model& model, const Tensor3& image);

// A trained stream: high-resolution/fine-label or low-resolution/coarse-label.
class Classifier final : public Model {
public:
    Classifier(Stream stream, LabelSpace labels, LayerStack stack);

    Stream stream() const { return stream_; }
    const LabelSpace& labels() const { return labels_; }
    const LayerStack& stack() const { return stack_; }

    Shape3 input_shape() const override { return stack_.input_shape(); }
    int class_count() const override { return stack_.class_count(); }
    std::vector<double> predict(const Tensor3& image) const override;
    Tensor3 input_gradient(const Tensor3& image, int label) const override;

private:
    Stream stream_;
    LabelSpace labels_;
    LayerStack stack_;
};

struct TrainConfig {
    int epochs = 15;
    int batch_size = 32;
    double learning_rate = 0.05;
    std::uint64_t seed = 1;
};

struct TrainReport {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::vector<double> epoch_mean_loss;
};

// Reference backbones. High: conv(3->8,3x3,pad 1)-ReLU-pool2-conv(8->16,3x3,
// pad 1)-ReLU-pool2-dense. Low: conv(3->8,3x3,pad 1)-ReLU-dense. Parameters
// seeded uniform in [-0.05, 0.05].
LayerStack reference_architecture(Stream stream, int class_count, std::uint64_t init_seed);

// Trains the requested stream on the generated data. The high stream sees
// (image_hi, fine label); the low stream sees (low_res_view, coarse label) and
// skips Other-mapped examples. Deterministic in cfg.seed for any thread count.
Classifier train_classifier(const GeneratedData& data, Stream stream, const TrainConfig& cfg,
                            TrainReport* report = nullptr, int threads = 0);

// Model directory: manifest.json (stream, label space, architecture) plus
// params.t3 with the parameter tensors concatenated in layer order.
void save_classifier(const std::filesystem::path& dir, const Classifier& clf);
Classifier load_classifier(const std::filesystem::path& dir);

double accuracy_on(const Model& model, const std::vector<Tensor3>& images,
                   const std::vector<int>& labels, int threads = 0);

} // namespace twostream
