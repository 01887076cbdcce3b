#include "twostream/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "twostream/ioutil.hpp"
#include "twostream/rng.hpp"

namespace twostream {

using nlohmann::json;

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor3 to_tensor(const std::vector<double>& v, Shape3 shape) {
    Tensor3 t(shape.height, shape.width, shape.channels);
    for (std::size_t i = 0; i < v.size(); ++i) t.data()[i] = static_cast<float>(v[i]);
    return t;
}

std::vector<double> to_double(const Tensor3& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
}

void check_budget(double eps, double alpha, int iters) {
    if (eps < 0.0 || alpha < 0.0) throw InvalidInputError("attack: negative budget");
    if (iters < 1) throw InvalidInputError("attack: iters must be >= 1");
}

// Shared iterative core. momentum == false ignores mu and steps by
// sign(grad); momentum == true accumulates mu * g + grad / ||grad||_1.
AttackOutcome iterative_attack(const Model& net, const Tensor3& image, int true_label, double eps,
                               double alpha, int iters, double mu, bool momentum) {
    if (!(image.shape() == net.input_shape()))
        throw InvalidInputError("attack: image shape does not match the victim");
    const std::vector<double> orig = to_double(image);
    std::vector<double> x = orig;
    std::vector<double> g_acc(x.size(), 0.0);

    for (int it = 0; it < iters; ++it) {
        const Tensor3 grad = net.input_gradient(to_tensor(x, image.shape()), true_label);
        const auto gdata = grad.data();
        if (momentum) {
            double l1 = 0.0;
            for (const float g : gdata) l1 += std::abs(static_cast<double>(g));
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double normalized = l1 > 0.0 ? gdata[i] / l1 : 0.0;
                g_acc[i] = mu * g_acc[i] + normalized;
            }
            for (std::size_t i = 0; i < x.size(); ++i) x[i] += alpha * sign_of(g_acc[i]);
        } else {
            for (std::size_t i = 0; i < x.size(); ++i) x[i] += alpha * sign_of(gdata[i]);
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = std::clamp(x[i], orig[i] - eps, orig[i] + eps);
            x[i] = std::clamp(x[i], 0.0, 1.0);
            if (std::abs(x[i] - orig[i]) > eps + 1e-12)
                throw Error("attack: epsilon ball violated after clipping");
        }
    }

    AttackOutcome out;
    out.adversarial = to_tensor(x, image.shape());
    out.success = argmax_label(net, out.adversarial) != true_label;
    return out;
}

} // namespace

AttackOutcome fgsm(const Model& net, const Tensor3& image, int true_label, double eps) {
    if (eps < 0.0) throw InvalidInputError("fgsm: negative epsilon");
    return iterative_attack(net, image, true_label, eps, eps, 1, 0.0, false);
}

AttackOutcome ifgsm(const Model& net, const Tensor3& image, int true_label, double eps,
                    double alpha, int iters) {
    check_budget(eps, alpha, iters);
    return iterative_attack(net, image, true_label, eps, alpha, iters, 0.0, false);
}

AttackOutcome mifgsm(const Model& net, const Tensor3& image, int true_label, double eps,
                     double alpha, int iters, double mu) {
    check_budget(eps, alpha, iters);
    if (mu < 0.0) throw InvalidInputError("mifgsm: negative momentum decay");
    return iterative_attack(net, image, true_label, eps, alpha, iters, mu, true);
}

namespace {

// Candidate layout: k blocks of [y, x, value_0 .. value_{c-1}].
struct DeProblem {
    const Model& net;
    const Tensor3& image;
    int true_label;
    int k;
    long queries = 0;

    int genes_per_pixel() const { return 2 + image.channels(); }
    int dims() const { return k * genes_per_pixel(); }

    Tensor3 apply(const std::vector<double>& genes) const {
        Tensor3 adv = image;
        const int gp = genes_per_pixel();
        for (int p = 0; p < k; ++p) {
            const int y = std::clamp(static_cast<int>(std::floor(genes[p * gp + 0])), 0,
                                     image.height() - 1);
            const int x = std::clamp(static_cast<int>(std::floor(genes[p * gp + 1])), 0,
                                     image.width() - 1);
            for (int c = 0; c < image.channels(); ++c) {
                adv.at(y, x, c) =
                    static_cast<float>(std::clamp(genes[p * gp + 2 + c], 0.0, 1.0));
            }
        }
        return adv;
    }

    double fitness(const std::vector<double>& genes) {
        ++queries;
        return net.predict(apply(genes))[static_cast<std::size_t>(true_label)];
    }

    void clamp_genes(std::vector<double>& genes) const {
        const int gp = genes_per_pixel();
        for (int p = 0; p < k; ++p) {
            genes[p * gp + 0] = std::clamp(genes[p * gp + 0], 0.0, image.height() - 0.001);
            genes[p * gp + 1] = std::clamp(genes[p * gp + 1], 0.0, image.width() - 0.001);
            for (int c = 0; c < image.channels(); ++c)
                genes[p * gp + 2 + c] = std::clamp(genes[p * gp + 2 + c], 0.0, 1.0);
        }
    }
};

} // namespace

AttackOutcome kpixel(const Model& net, const Tensor3& image, int true_label, int k, int population,
                     int generations, std::uint64_t seed) {
    if (!(image.shape() == net.input_shape()))
        throw InvalidInputError("kpixel: image shape does not match the victim");
    if (k < 1 || population < 4 || generations < 1)
        throw InvalidInputError("kpixel: need k >= 1, population >= 4, generations >= 1");
    if (true_label < 0 || true_label >= net.class_count())
        throw InvalidInputError("kpixel: label out of range");

    DeProblem prob{net, image, true_label, k};
    Rng rng(seed);
    const int dims = prob.dims();
    const int gp = prob.genes_per_pixel();

    std::vector<std::vector<double>> pop(static_cast<std::size_t>(population));
    std::vector<double> fit(static_cast<std::size_t>(population));
    for (int i = 0; i < population; ++i) {
        auto& genes = pop[static_cast<std::size_t>(i)];
        genes.resize(static_cast<std::size_t>(dims));
        for (int p = 0; p < k; ++p) {
            genes[p * gp + 0] = rng.uniform(0.0, image.height());
            genes[p * gp + 1] = rng.uniform(0.0, image.width());
            for (int c = 0; c < image.channels(); ++c) genes[p * gp + 2 + c] = rng.uniform();
        }
        prob.clamp_genes(genes);
        fit[static_cast<std::size_t>(i)] = prob.fitness(genes);
    }

    constexpr double kF = 0.5;  // differential weight
    constexpr double kCr = 0.7; // crossover probability
    std::vector<double> child(static_cast<std::size_t>(dims));
    for (int gen = 0; gen < generations; ++gen) {
        for (int i = 0; i < population; ++i) {
            int a, b, c;
            do { a = rng.uniform_int(population); } while (a == i);
            do { b = rng.uniform_int(population); } while (b == i || b == a);
            do { c = rng.uniform_int(population); } while (c == i || c == a || c == b);
            const int j_rand = rng.uniform_int(dims);
            for (int d = 0; d < dims; ++d) {
                const double mutant = pop[static_cast<std::size_t>(a)][static_cast<std::size_t>(d)] +
                                      kF * (pop[static_cast<std::size_t>(b)][static_cast<std::size_t>(d)] -
                                            pop[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)]);
                child[static_cast<std::size_t>(d)] =
                    (rng.uniform() < kCr || d == j_rand)
                        ? mutant
                        : pop[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)];
            }
            prob.clamp_genes(child);
            const double f = prob.fitness(child);
            if (f <= fit[static_cast<std::size_t>(i)]) {
                pop[static_cast<std::size_t>(i)] = child;
                fit[static_cast<std::size_t>(i)] = f;
            }
        }
    }

    int best = 0;
    for (int i = 1; i < population; ++i)
        if (fit[static_cast<std::size_t>(i)] < fit[static_cast<std::size_t>(best)]) best = i;

    AttackOutcome out;
    out.adversarial = prob.apply(pop[static_cast<std::size_t>(best)]);
    out.success = argmax_label(net, out.adversarial) != true_label;
    out.queries = prob.queries;
    return out;
}

namespace {

AttackOutcome dispatch_direct(const AttackSpec& spec, const Model& net, const Tensor3& image,
                              int true_label, std::uint64_t seed_salt) {
    switch (spec.kind) {
        case AttackKind::kFgsm:
            return fgsm(net, image, true_label, spec.eps);
        case AttackKind::kIfgsm:
            return ifgsm(net, image, true_label, spec.eps, spec.alpha, spec.iters);
        case AttackKind::kMifgsm:
            return mifgsm(net, image, true_label, spec.eps, spec.alpha, spec.iters, spec.mu);
        case AttackKind::kKpixel:
            return kpixel(net, image, true_label, spec.k, spec.population, spec.generations,
                          derive_seed(spec.seed, seed_salt));
        case AttackKind::kLifted:
            break;
    }
    throw InvalidInputError("attack: lifted spec cannot be dispatched as a direct attack");
}

} // namespace

AttackOutcome lift_type2(const Model& net_low, const Tensor3& image_hi, int true_coarse_label,
                         const AttackSpec& inner, int factor) {
    if (inner.kind == AttackKind::kLifted)
        throw InvalidInputError("lift: nested lifted attacks are not defined");
    if (factor < 1) throw InvalidInputError("lift: factor must be >= 1");
    const Tensor3 small = downscale_box(image_hi, factor); // validates divisibility
    if (!(small.shape() == net_low.input_shape()))
        throw InvalidInputError("lift: downscaled image does not match the low-stream input");

    const AttackOutcome inner_out =
        dispatch_direct(inner, net_low, small, true_coarse_label, /*seed_salt=*/0);

    Tensor3 diff(small.height(), small.width(), small.channels());
    for (int i = 0; i < small.size(); ++i)
        diff.data()[static_cast<std::size_t>(i)] =
            inner_out.adversarial.data()[static_cast<std::size_t>(i)] -
            small.data()[static_cast<std::size_t>(i)];
    const Tensor3 overlay = upscale_replicate(diff, factor);

    AttackOutcome out;
    out.adversarial = Tensor3(image_hi.height(), image_hi.width(), image_hi.channels());
    for (int i = 0; i < image_hi.size(); ++i) {
        const double v = static_cast<double>(image_hi.data()[static_cast<std::size_t>(i)]) +
                         static_cast<double>(overlay.data()[static_cast<std::size_t>(i)]);
        out.adversarial.data()[static_cast<std::size_t>(i)] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    out.success =
        argmax_label(net_low, downscale_box(out.adversarial, factor)) != true_coarse_label;
    out.queries = inner_out.queries;
    return out;
}

AttackOutcome run_attack(const AttackSpec& spec, const Model& high_net, const Model& low_net,
                         const LabeledExample& example, std::uint64_t seed_salt) {
    if (spec.kind == AttackKind::kLifted) {
        if (!spec.inner) throw InvalidInputError("attack: lifted spec without inner attack");
        if (example.coarse_label == MappingTable::kOther)
            throw InvalidInputError("attack: cannot lift against an Other-mapped example");
        AttackSpec inner = *spec.inner;
        inner.seed = derive_seed(inner.seed, seed_salt);
        return lift_type2(low_net, example.image_hi, example.coarse_label, inner, spec.factor);
    }
    if (spec.target_stream == Stream::kLow)
        throw InvalidInputError(
            "attack: low-targeting specs must be wrapped in a lifted spec at the pipeline level");
    return dispatch_direct(spec, high_net, example.image_hi, example.fine_label, seed_salt);
}

// --- spec (de)serialization -----------------------------------------------------

std::string AttackSpec::name() const {
    switch (kind) {
        case AttackKind::kFgsm:
            return "fgsm";
        case AttackKind::kIfgsm:
            return "ifgsm";
        case AttackKind::kMifgsm:
            return "mifgsm";
        case AttackKind::kKpixel:
            if (k == 1) return "one-pixel";
            if (k == 3) return "three-pixel";
            return std::to_string(k) + "-pixel";
        case AttackKind::kLifted:
            return "lifted-" + (inner ? inner->name() : std::string("none"));
    }
    return "unknown";
}

namespace {

const char* kind_tag(AttackKind kind) {
    switch (kind) {
        case AttackKind::kFgsm: return "fgsm";
        case AttackKind::kIfgsm: return "ifgsm";
        case AttackKind::kMifgsm: return "mifgsm";
        case AttackKind::kKpixel: return "kpixel";
        case AttackKind::kLifted: return "lifted";
    }
    return "unknown";
}

AttackKind kind_from_tag(const std::string& tag) {
    if (tag == "fgsm") return AttackKind::kFgsm;
    if (tag == "ifgsm") return AttackKind::kIfgsm;
    if (tag == "mifgsm") return AttackKind::kMifgsm;
    if (tag == "kpixel") return AttackKind::kKpixel;
    if (tag == "lifted") return AttackKind::kLifted;
    throw ConfigError("attack spec: unknown variant '" + tag + "'");
}

} // namespace

json attack_spec_to_json(const AttackSpec& spec) {
    json j{{"variant", kind_tag(spec.kind)},
           {"target", stream_name(spec.target_stream)}};
    switch (spec.kind) {
        case AttackKind::kFgsm:
            j["eps"] = spec.eps;
            break;
        case AttackKind::kIfgsm:
            j["eps"] = spec.eps;
            j["alpha"] = spec.alpha;
            j["iters"] = spec.iters;
            break;
        case AttackKind::kMifgsm:
            j["eps"] = spec.eps;
            j["alpha"] = spec.alpha;
            j["iters"] = spec.iters;
            j["mu"] = spec.mu;
            break;
        case AttackKind::kKpixel:
            j["k"] = spec.k;
            j["population"] = spec.population;
            j["generations"] = spec.generations;
            j["seed"] = spec.seed;
            break;
        case AttackKind::kLifted:
            j["factor"] = spec.factor;
            j["inner"] = spec.inner ? attack_spec_to_json(*spec.inner) : json();
            break;
    }
    return j;
}

AttackSpec attack_spec_from_json(const json& j) {
    AttackSpec spec;
    try {
        spec.kind = kind_from_tag(j.at("variant").get<std::string>());
        if (j.contains("target")) spec.target_stream = stream_from_name(j.at("target"));
        if (j.contains("eps")) spec.eps = j.at("eps").get<double>();
        if (j.contains("alpha")) spec.alpha = j.at("alpha").get<double>();
        if (j.contains("iters")) spec.iters = j.at("iters").get<int>();
        if (j.contains("mu")) spec.mu = j.at("mu").get<double>();
        if (j.contains("k")) spec.k = j.at("k").get<int>();
        if (j.contains("population")) spec.population = j.at("population").get<int>();
        if (j.contains("generations")) spec.generations = j.at("generations").get<int>();
        if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("factor")) spec.factor = j.at("factor").get<int>();
        if (spec.kind == AttackKind::kLifted) {
            if (!j.contains("inner") || j.at("inner").is_null())
                throw ConfigError("attack spec: lifted variant requires an inner spec");
            auto inner = std::make_shared<AttackSpec>(attack_spec_from_json(j.at("inner")));
            inner->target_stream = Stream::kLow;
            spec.inner = std::move(inner);
        }
    } catch (const json::exception& e) {
        throw ConfigError("attack spec: " + std::string(e.what()));
    }
    return spec;
}

std::vector<AttackBatchItem> load_attack_batch(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw MissingArtifactError("attack batch not found: " + path.string());
    json j;
    try {
        j = json::parse(read_file_text(path));
    } catch (const json::exception& e) {
        throw ConfigError("attack batch: " + std::string(e.what()));
    }
    std::vector<AttackBatchItem> items;
    try {
        for (const json& it : j.at("items")) {
            items.push_back({it.at("example").get<int>(), attack_spec_from_json(it.at("spec"))});
        }
    } catch (const json::exception& e) {
        throw ConfigError("attack batch: " + std::string(e.what()));
    }
    return items;
}

void save_attack_batch(const std::filesystem::path& path,
                       const std::vector<AttackBatchItem>& items) {
    json arr = json::array();
    for (const auto& item : items)
        arr.push_back({{"example", item.example_id}, {"spec", attack_spec_to_json(item.spec)}});
    write_file_atomic(path, json{{"items", arr}}.dump(2) + "\n");
}

} // namespace twostream
