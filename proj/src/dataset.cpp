#include "twostream/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "twostream/ioutil.hpp"
#include "twostream/rng.hpp"

namespace twostream {

namespace fs = std::filesystem;
using nlohmann::json;

int LabelSpace::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return static_cast<int>(i);
    }
    return -1;
}

namespace {

void validate_space(const LabelSpace& space, const char* what) {
    if (space.names.empty()) throw InvalidInputError(std::string(what) + ": empty label space");
    for (std::size_t i = 0; i < space.names.size(); ++i) {
        for (std::size_t j = i + 1; j < space.names.size(); ++j) {
            if (space.names[i] == space.names[j])
                throw InvalidInputError(std::string(what) + ": duplicate label name '" +
                                        space.names[i] + "'");
        }
    }
}

} // namespace

MappingTable MappingTable::from_entries(
    LabelSpace fine, LabelSpace coarse,
    const std::vector<std::pair<std::string, std::string>>& entries, std::string other_sentinel) {
    validate_space(fine, "fine space");
    validate_space(coarse, "coarse space");
    if (coarse.index_of(other_sentinel) >= 0)
        throw InvalidInputError("mapping: sentinel '" + other_sentinel +
                                "' collides with a coarse label");

    MappingTable table;
    table.fine_ = std::move(fine);
    table.coarse_ = std::move(coarse);
    table.other_ = std::move(other_sentinel);
    table.fine_to_coarse_.assign(table.fine_.names.size(), kOther);

    std::vector<bool> seen(table.fine_.names.size(), false);
    for (const auto& [fine_name, coarse_name] : entries) {
        const int fi = table.fine_.index_of(fine_name);
        if (fi < 0) throw IngestError("mapping: unknown fine label '" + fine_name + "'");
        if (seen[static_cast<std::size_t>(fi)])
            throw IngestError("mapping: duplicate fine label '" + fine_name + "'");
        seen[static_cast<std::size_t>(fi)] = true;
        if (coarse_name == table.other_) continue; // explicit Other
        const int ci = table.coarse_.index_of(coarse_name);
        if (ci < 0) throw IngestError("mapping: unknown coarse label '" + coarse_name + "'");
        table.fine_to_coarse_[static_cast<std::size_t>(fi)] = ci;
    }
    return table;
}

int MappingTable::coarse_of(int fine_label) const {
    if (fine_label < 0 || fine_label >= static_cast<int>(fine_to_coarse_.size()))
        throw InvalidInputError("mapping: fine label out of range");
    return fine_to_coarse_[static_cast<std::size_t>(fine_label)];
}

const std::string& MappingTable::coarse_name_of(const std::string& fine_name) const {
    const int fi = fine_.index_of(fine_name);
    if (fi < 0) throw InvalidInputError("mapping: unknown fine label '" + fine_name + "'");
    const int ci = fine_to_coarse_[static_cast<std::size_t>(fi)];
    return ci == kOther ? other_ : coarse_.names[static_cast<std::size_t>(ci)];
}

std::vector<std::pair<std::string, std::string>> MappingTable::entries() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t fi = 0; fi < fine_to_coarse_.size(); ++fi) {
        const int ci = fine_to_coarse_[fi];
        if (ci != kOther) out.emplace_back(fine_.names[fi], coarse_.names[static_cast<std::size_t>(ci)]);
    }
    return out;
}

namespace {

constexpr int kShapeCount = 4;
constexpr int kColorCount = 3;
constexpr int kMappedFineCount = kShapeCount * kColorCount;

const char* const kShapeNames[kShapeCount] = {"circle", "square", "triangle", "cross"};
const char* const kColorNames[kColorCount] = {"red", "green", "blue"};

// Shape fill palette: each color class owns one channel. Contrast against
// the mid-gray background is deliberately moderate; it bounds the margins a
// pixel-budget attack has to cross.
constexpr double kColorContrast = 0.20;
constexpr double kBackground = 0.50;

double base_color(int color, int channel) {
    return channel == color ? kBackground + kColorContrast : kBackground - kColorContrast;
}

struct ShapePose {
    double cx, cy, radius, cos_r, sin_r;
};

bool inside_shape(int shape, const ShapePose& pose, double px, double py) {
    const double dx = px - pose.cx;
    const double dy = py - pose.cy;
    // rotate into the shape frame
    const double qx = dx * pose.cos_r + dy * pose.sin_r;
    const double qy = -dx * pose.sin_r + dy * pose.cos_r;
    const double r = pose.radius;
    switch (shape) {
        case 0: // circle
            return qx * qx + qy * qy <= r * r;
        case 1: // square
            return std::abs(qx) <= 0.75 * r && std::abs(qy) <= 0.75 * r;
        case 2: { // triangle, circumradius r, apex up
            double vx[3], vy[3];
            for (int i = 0; i < 3; ++i) {
                const double a = -1.5707963267948966 + i * 2.0943951023931953;
                vx[i] = r * std::cos(a);
                vy[i] = r * std::sin(a);
            }
            bool pos = false, neg = false;
            for (int i = 0; i < 3; ++i) {
                const int j = (i + 1) % 3;
                const double cross =
                    (vx[j] - vx[i]) * (qy - vy[i]) - (vy[j] - vy[i]) * (qx - vx[i]);
                if (cross > 0) pos = true;
                if (cross < 0) neg = true;
            }
            return !(pos && neg);
        }
        default: // cross: two perpendicular bars
            return (std::abs(qx) <= 0.28 * r && std::abs(qy) <= r) ||
                   (std::abs(qy) <= 0.28 * r && std::abs(qx) <= r);
    }
}

LabeledExample render_example(const DatasetSpec& spec, const MappingTable& table, Rng& rng) {
    LabeledExample ex;
    const int n = kHighResolution;

    int fine = -1;
    if (spec.distractor_fraction > 0.0 && rng.uniform() < spec.distractor_fraction) {
        fine = kMappedFineCount; // the "noise" class
    } else {
        fine = rng.uniform_int(kMappedFineCount);
    }
    ex.fine_label = fine;
    ex.coarse_label = table.coarse_of(fine);
    ex.image_hi = Tensor3(n, n, 3);

    if (fine == kMappedFineCount) {
        for (float& v : ex.image_hi.data()) v = static_cast<float>(rng.uniform());
        return ex;
    }

    const int shape = fine / kColorCount;
    const int color = fine % kColorCount;
    const JitterParams& jit = spec.jitter;

    ShapePose pose;
    pose.cx = n / 2.0 + rng.uniform(-jit.position_range, jit.position_range);
    pose.cy = n / 2.0 + rng.uniform(-jit.position_range, jit.position_range);
    pose.radius = rng.uniform(jit.size_min, jit.size_max);
    const double rot = rng.uniform(-jit.rotation_range, jit.rotation_range);
    pose.cos_r = std::cos(rot);
    pose.sin_r = std::sin(rot);

    double fill[3];
    for (int c = 0; c < 3; ++c)
        fill[c] = std::clamp(base_color(color, c) + rng.uniform(-0.05, 0.05), 0.0, 1.0);

    // Clutter strokes, drawn under the shape: thin rotated bars in the base
    // palette colors.
    struct Stroke {
        ShapePose pose; // radius reused as half-length
        double half_thickness;
        double color[3];
    };
    std::vector<Stroke> strokes(static_cast<std::size_t>(std::max(0, jit.clutter_count)));
    for (auto& s : strokes) {
        s.pose.cx = rng.uniform(0.0, n);
        s.pose.cy = rng.uniform(0.0, n);
        s.pose.radius = rng.uniform(1.0, std::max(1.0, jit.clutter_max_length)) / 2.0;
        const double a = rng.uniform(0.0, 3.14159265358979323846);
        s.pose.cos_r = std::cos(a);
        s.pose.sin_r = std::sin(a);
        s.half_thickness = rng.uniform(0.4, 0.9);
        const int sc = rng.uniform_int(kColorCount);
        for (int c = 0; c < 3; ++c)
            s.color[c] = std::clamp(base_color(sc, c) + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    }

    const auto inside_stroke = [](const Stroke& s, double px, double py) {
        const double dx = px - s.pose.cx;
        const double dy = py - s.pose.cy;
        const double qx = dx * s.pose.cos_r + dy * s.pose.sin_r;
        const double qy = -dx * s.pose.sin_r + dy * s.pose.cos_r;
        return std::abs(qx) <= s.pose.radius && std::abs(qy) <= s.half_thickness;
    };

    // Per-shape interior micro-texture in pixel coordinates, +-1 and exactly
    // zero-mean inside every even-sized block.
    const auto signature = [](int sh, int y, int x) {
        switch (sh) {
            case 0: return ((y + x) & 1) ? 1.0 : -1.0;  // checker
            case 1: return (y & 1) ? 1.0 : -1.0;        // horizontal stripes
            case 2: return (x & 1) ? 1.0 : -1.0;        // vertical stripes
            default: return ((y + x) & 1) ? -1.0 : 1.0; // inverted checker
        }
    };

    // Pass 1: clean signal (background, clutter, shape on top).
    std::vector<double> signal(static_cast<std::size_t>(n) * n * 3);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            double cov_shape = 0.0;
            const Stroke* hit_stroke[4] = {nullptr, nullptr, nullptr, nullptr};
            int sub = 0;
            for (int sy = 0; sy < 2; ++sy) {
                for (int sx = 0; sx < 2; ++sx, ++sub) {
                    const double px = x + 0.25 + 0.5 * sx;
                    const double py = y + 0.25 + 0.5 * sy;
                    if (inside_shape(shape, pose, px, py)) {
                        cov_shape += 0.25;
                        continue;
                    }
                    for (const auto& s : strokes) {
                        if (inside_stroke(s, px, py)) {
                            hit_stroke[sub] = &s;
                            break;
                        }
                    }
                }
            }
            const double sig =
                cov_shape * jit.signature_amplitude * signature(shape, y, x);
            for (int c = 0; c < 3; ++c) {
                double stroke_part = 0.0;
                double stroke_frac = 0.0;
                for (sub = 0; sub < 4; ++sub) {
                    if (hit_stroke[sub]) {
                        stroke_part += 0.25 * hit_stroke[sub]->color[c];
                        stroke_frac += 0.25;
                    }
                }
                signal[(static_cast<std::size_t>(y) * n + x) * 3 + c] =
                    kBackground * (1.0 - cov_shape - stroke_frac) + fill[c] * cov_shape +
                    stroke_part + sig;
            }
        }
    }

    // Pass 2: two noise fields split by the resize factor. Block-constant
    // lighting noise lands on the low stream's block means; within-block
    // zero-sum texture noise is cancelled by the box downscale and only the
    // high stream ever sees it.
    const int f = kResizeFactor;
    std::vector<double> block_noise(static_cast<std::size_t>(n / f) * (n / f) * 3);
    for (double& v : block_noise) v = rng.uniform(-jit.noise_amplitude, jit.noise_amplitude);

    std::vector<double> texture(static_cast<std::size_t>(n) * n * 3);
    for (double& v : texture) v = rng.uniform(-jit.texture_amplitude, jit.texture_amplitude);
    for (int by = 0; by < n; by += f) {
        for (int bx = 0; bx < n; bx += f) {
            for (int c = 0; c < 3; ++c) {
                double mean = 0.0;
                for (int dy = 0; dy < f; ++dy)
                    for (int dx = 0; dx < f; ++dx)
                        mean += texture[(static_cast<std::size_t>(by + dy) * n + bx + dx) * 3 + c];
                mean /= f * f;
                for (int dy = 0; dy < f; ++dy)
                    for (int dx = 0; dx < f; ++dx)
                        texture[(static_cast<std::size_t>(by + dy) * n + bx + dx) * 3 + c] -= mean;
            }
        }
    }

    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const std::size_t block = (static_cast<std::size_t>(y / f) * (n / f) + x / f) * 3;
            for (int c = 0; c < 3; ++c) {
                const double v = signal[(static_cast<std::size_t>(y) * n + x) * 3 + c] +
                                 block_noise[block + c] +
                                 texture[(static_cast<std::size_t>(y) * n + x) * 3 + c];
                ex.image_hi.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return ex;
}

Dataset generate_split(const DatasetSpec& spec, const MappingTable& table, std::uint64_t split_seed,
                       int count) {
    Dataset split;
    split.examples.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(split_seed, static_cast<std::uint64_t>(i)));
        split.examples.push_back(render_example(spec, table, rng));
    }
    return split;
}

} // namespace

GeneratedData generate_dataset(const DatasetSpec& spec) {
    if (spec.train_count <= 0 || spec.test_count <= 0)
        throw InvalidInputError("dataset: counts must be positive");
    if (spec.distractor_fraction < 0.0 || spec.distractor_fraction >= 1.0)
        throw InvalidInputError("dataset: distractor_fraction must be in [0,1)");

    GeneratedData data;
    data.spec = spec;

    LabelSpace fine{LabelKind::kFine, {}};
    std::vector<std::pair<std::string, std::string>> entries;
    for (int s = 0; s < kShapeCount; ++s) {
        for (int c = 0; c < kColorCount; ++c) {
            const std::string name = std::string(kShapeNames[s]) + "_" + kColorNames[c];
            fine.names.push_back(name);
            entries.emplace_back(name, kShapeNames[s]);
        }
    }
    if (spec.distractor_fraction > 0.0) fine.names.push_back("noise");

    LabelSpace coarse{LabelKind::kCoarse, {kShapeNames[0], kShapeNames[1], kShapeNames[2],
                                           kShapeNames[3]}};
    data.table = MappingTable::from_entries(fine, coarse, entries);
    data.fine_space = std::move(fine);
    data.coarse_space = std::move(coarse);

    data.train = generate_split(spec, data.table, derive_seed(spec.seed, "train"), spec.train_count);
    data.test = generate_split(spec, data.table, derive_seed(spec.seed, "test"), spec.test_count);
    return data;
}

Tensor3 low_res_view(const LabeledExample& example) {
    if (!(example.image_hi.shape() == Shape3{kHighResolution, kHighResolution, 3}))
        throw InvalidInputError("low_res_view: expected a 32x32x3 image");
    return downscale_box(example.image_hi, kResizeFactor);
}

// --- mapping table io ---------------------------------------------------------

MappingTable load_mapping(const fs::path& path, LabelSpace fine, LabelSpace coarse,
                          std::string other_sentinel) {
    const std::string text = read_file_text(path);
    std::vector<std::pair<std::string, std::string>> entries;
    std::vector<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw IngestError("mapping line " + std::to_string(lineno) + ": missing tab separator");
        const std::string fine_name = line.substr(0, tab);
        const std::string coarse_name = line.substr(tab + 1);
        if (std::find(seen.begin(), seen.end(), fine_name) != seen.end())
            throw IngestError("mapping line " + std::to_string(lineno) + ": duplicate fine label '" +
                              fine_name + "'");
        seen.push_back(fine_name);
        entries.emplace_back(fine_name, coarse_name);
    }
    return MappingTable::from_entries(std::move(fine), std::move(coarse), entries,
                                      std::move(other_sentinel));
}

void save_mapping(const fs::path& path, const MappingTable& table) {
    std::string out;
    for (const auto& [fine_name, coarse_name] : table.entries()) {
        out += fine_name;
        out += '\t';
        out += coarse_name;
        out += '\n';
    }
    write_file_atomic(path, out);
}

// --- CIFAR-10 ------------------------------------------------------------------

LabelSpace cifar10_label_space() {
    return LabelSpace{LabelKind::kCoarse,
                      {"airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse",
                       "ship", "truck"}};
}

Dataset load_cifar10(const fs::path& path) {
    constexpr std::size_t kRecord = 3073;
    const auto bytes = read_file_bytes(path);
    if (bytes.size() % kRecord != 0)
        throw IngestError("cifar10: truncated record at byte offset " +
                          std::to_string((bytes.size() / kRecord) * kRecord));
    Dataset ds;
    ds.examples.reserve(bytes.size() / kRecord);
    for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
        const int label = bytes[off];
        if (label > 9)
            throw IngestError("cifar10: label byte out of range at byte offset " +
                              std::to_string(off));
        LabeledExample ex;
        ex.fine_label = label;
        ex.coarse_label = label;
        ex.image_hi = Tensor3(32, 32, 3);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < 32; ++y) {
                for (int x = 0; x < 32; ++x) {
                    const std::uint8_t b = bytes[off + 1 + static_cast<std::size_t>(c) * 1024 +
                                                 static_cast<std::size_t>(y) * 32 + x];
                    ex.image_hi.at(y, x, c) = static_cast<float>(b) / 255.0f;
                }
            }
        }
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

// --- dataset directory ----------------------------------------------------------

namespace {

json space_to_json(const LabelSpace& space) {
    return json{{"kind", space.kind == LabelKind::kFine ? "fine" : "coarse"},
                {"names", space.names}};
}

LabelSpace space_from_json(const json& j) {
    LabelSpace space;
    space.kind = j.at("kind").get<std::string>() == "fine" ? LabelKind::kFine : LabelKind::kCoarse;
    space.names = j.at("names").get<std::vector<std::string>>();
    return space;
}

json spec_to_json(const DatasetSpec& spec) {
    return json{{"seed", spec.seed},
                {"train_count", spec.train_count},
                {"test_count", spec.test_count},
                {"distractor_fraction", spec.distractor_fraction},
                {"jitter",
                 {{"position_range", spec.jitter.position_range},
                  {"size_min", spec.jitter.size_min},
                  {"size_max", spec.jitter.size_max},
                  {"rotation_range", spec.jitter.rotation_range},
                  {"noise_amplitude", spec.jitter.noise_amplitude},
                  {"texture_amplitude", spec.jitter.texture_amplitude},
                  {"signature_amplitude", spec.jitter.signature_amplitude},
                  {"clutter_count", spec.jitter.clutter_count},
                  {"clutter_max_length", spec.jitter.clutter_max_length}}}};
}

DatasetSpec spec_from_json(const json& j) {
    DatasetSpec spec;
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.train_count = j.at("train_count").get<int>();
    spec.test_count = j.at("test_count").get<int>();
    spec.distractor_fraction = j.at("distractor_fraction").get<double>();
    const json& jit = j.at("jitter");
    spec.jitter.position_range = jit.at("position_range").get<double>();
    spec.jitter.size_min = jit.at("size_min").get<double>();
    spec.jitter.size_max = jit.at("size_max").get<double>();
    spec.jitter.rotation_range = jit.at("rotation_range").get<double>();
    spec.jitter.noise_amplitude = jit.at("noise_amplitude").get<double>();
    spec.jitter.texture_amplitude = jit.at("texture_amplitude").get<double>();
    spec.jitter.signature_amplitude = jit.at("signature_amplitude").get<double>();
    spec.jitter.clutter_count = jit.at("clutter_count").get<int>();
    spec.jitter.clutter_max_length = jit.at("clutter_max_length").get<double>();
    return spec;
}

std::vector<int> fine_labels_of(const Dataset& ds) {
    std::vector<int> labels;
    labels.reserve(ds.size());
    for (const auto& ex : ds.examples) labels.push_back(ex.fine_label);
    return labels;
}

std::vector<Tensor3> images_of(const Dataset& ds) {
    std::vector<Tensor3> images;
    images.reserve(ds.size());
    for (const auto& ex : ds.examples) images.push_back(ex.image_hi);
    return images;
}

Dataset rebuild_split(std::vector<Tensor3> images, const std::vector<int>& fine,
                      const MappingTable& table, const char* what) {
    if (images.size() != fine.size())
        throw IngestError(std::string("dataset: ") + what + " image/label count mismatch");
    Dataset ds;
    ds.examples.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        LabeledExample ex;
        ex.image_hi = std::move(images[i]);
        ex.fine_label = fine[i];
        ex.coarse_label = table.coarse_of(fine[i]);
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

} // namespace

void save_dataset(const fs::path& dir, const GeneratedData& data) {
    fs::create_directories(dir);
    json manifest{{"spec", spec_to_json(data.spec)},
                  {"train_count", data.train.size()},
                  {"test_count", data.test.size()},
                  {"fine_labels", space_to_json(data.fine_space)},
                  {"coarse_labels", space_to_json(data.coarse_space)},
                  {"other_sentinel", data.table.other_sentinel()},
                  {"train_fine", fine_labels_of(data.train)},
                  {"test_fine", fine_labels_of(data.test)}};
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    save_mapping(dir / "mapping.tsv", data.table);
    const auto train_images = images_of(data.train);
    const auto test_images = images_of(data.test);
    write_tensor_stream(dir / "train_images.t3", train_images);
    write_tensor_stream(dir / "test_images.t3", test_images);
}

GeneratedData load_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json"))
        throw MissingArtifactError("dataset manifest not found: " + (dir / "manifest.json").string());
    json manifest;
    try {
        manifest = json::parse(read_file_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw IngestError("dataset manifest: " + std::string(e.what()));
    }
    GeneratedData data;
    try {
        data.spec = spec_from_json(manifest.at("spec"));
        data.fine_space = space_from_json(manifest.at("fine_labels"));
        data.coarse_space = space_from_json(manifest.at("coarse_labels"));
        data.table = load_mapping(dir / "mapping.tsv", data.fine_space, data.coarse_space,
                                  manifest.at("other_sentinel").get<std::string>());
        data.train = rebuild_split(read_tensor_stream(dir / "train_images.t3"),
                                   manifest.at("train_fine").get<std::vector<int>>(), data.table,
                                   "train");
        data.test = rebuild_split(read_tensor_stream(dir / "test_images.t3"),
                                  manifest.at("test_fine").get<std::vector<int>>(), data.table,
                                  "test");
    } catch (const json::exception& e) {
        throw IngestError("dataset manifest: " + std::string(e.what()));
    }
    return data;
}

} // namespace twostream
