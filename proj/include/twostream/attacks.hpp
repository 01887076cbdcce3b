#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "twostream/classifier.hpp"
#include "twostream/dataset.hpp"

namespace twostream {

enum class AttackKind { kFgsm, kIfgsm, kMifgsm, kKpixel, kLifted };

// One attack configuration. A "lifted" spec wraps an inner low-resolution
// attack and overlays its difference map onto the high-resolution image.
struct AttackSpec {
    AttackKind kind = AttackKind::kIfgsm;
    Stream target_stream = Stream::kHigh;

    double eps = 8.0 / 255.0;   // white-box L-inf budget
    double alpha = 2.0 / 255.0; // iterative step size
    int iters = 10;
    double mu = 1.0; // momentum decay

    int k = 1; // pixel budget (black-box)
    int population = 40;
    int generations = 30;
    std::uint64_t seed = 0;

    int factor = kResizeFactor;            // lifting resize factor
    std::shared_ptr<const AttackSpec> inner; // set iff kind == kLifted

    std::string name() const;
};

nlohmann::json attack_spec_to_json(const AttackSpec& spec);
AttackSpec attack_spec_from_json(const nlohmann::json& j);

struct AttackOutcome {
    Tensor3 adversarial;
    bool success = false; // victim argmax != true label
    long queries = 0;     // black-box probe count; 0 for white-box attacks
};

// x' = clip_[0,1](x + eps * sign(grad loss)). sign(0) = 0.
AttackOutcome fgsm(const Model& net, const Tensor3& image, int true_label, double eps);

// Iterated FGSM with an alpha step, re-clipped into the eps-ball around the
// original and into [0,1] after every iteration.
AttackOutcome ifgsm(const Model& net, const Tensor3& image, int true_label, double eps,
                    double alpha, int iters);

// Momentum variant: g <- mu * g + grad / ||grad||_1, step by alpha * sign(g).
// mu = 0 reproduces ifgsm exactly.
AttackOutcome mifgsm(const Model& net, const Tensor3& image, int true_label, double eps,
                     double alpha, int iters, double mu);

// Black-box differential evolution (rand/1/bin, F = 0.5, CR = 0.7) over k
// pixel positions plus replacement channel values, minimizing the victim's
// probability of the true label. Uses only forward queries.
AttackOutcome kpixel(const Model& net, const Tensor3& image, int true_label, int k, int population,
                     int generations, std::uint64_t seed);

// Fig-4-style lifting: s = downscale(image), s' = inner attack on s, then
// adversarial = clip_[0,1](image + upscale(s' - s)). Success is judged by the
// low-resolution victim on the downscaled adversarial.
AttackOutcome lift_type2(const Model& net_low, const Tensor3& image_hi, int true_coarse_label,
                         const AttackSpec& inner, int factor);

// Dispatches a top-level spec against the trained pair. Direct specs target
// the high stream on image_hi; low-targeting specs must be wrapped in a
// lifted spec so the result stays at high resolution. seed_salt keeps
// black-box attacks deterministic yet distinct per example.
AttackOutcome run_attack(const AttackSpec& spec, const Model& high_net, const Model& low_net,
                         const LabeledExample& example, std::uint64_t seed_salt = 0);

// --- attack batch manifest ----------------------------------------------------
// JSON: {"items": [{"example": id, "spec": {...}}, ...]}

struct AttackBatchItem {
    int example_id = 0;
    AttackSpec spec;
};

std::vector<AttackBatchItem> load_attack_batch(const std::filesystem::path& path);
void save_attack_batch(const std::filesystem::path& path, const std::vector<AttackBatchItem>& items);

} // namespace twostream
