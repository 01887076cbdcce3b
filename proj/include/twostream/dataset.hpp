#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "twostream/tensor.hpp"

namespace twostream {

enum class LabelKind { kFine, kCoarse };

struct LabelSpace {
    LabelKind kind = LabelKind::kFine;
    std::vector<std::string> names;

    int size() const { return static_cast<int>(names.size()); }
    // -1 when absent.
    int index_of(const std::string& name) const;
};

// Partial map from fine labels to coarse labels. Fine labels without an entry
// resolve to the Other sentinel, which is deliberately not a member of the
// coarse space.
class MappingTable {
public:
    static constexpr int kOther = -1;

    // Empty placeholder; usable only after assignment from from_entries().
    MappingTable() = default;

    // Duplicate fine names or unknown label names raise IngestError.
    static MappingTable from_entries(LabelSpace fine, LabelSpace coarse,
                                     const std::vector<std::pair<std::string, std::string>>& entries,
                                     std::string other_sentinel = "Other");

    int coarse_of(int fine_label) const;
    const std::string& coarse_name_of(const std::string& fine_name) const;

    const LabelSpace& fine_space() const { return fine_; }
    const LabelSpace& coarse_space() const { return coarse_; }
    const std::string& other_sentinel() const { return other_; }
    // Explicit entries only, in fine-space order.
    std::vector<std::pair<std::string, std::string>> entries() const;

private:
    LabelSpace fine_;
    LabelSpace coarse_;
    std::string other_;
    std::vector<int> fine_to_coarse_; // kOther where unmapped
};

struct LabeledExample {
    Tensor3 image_hi; // 32x32x3, values in [0,1]
    int fine_label = 0;
    int coarse_label = 0; // MappingTable::kOther for distractors
};

struct Dataset {
    std::vector<LabeledExample> examples;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
};

struct JitterParams {
    double position_range = 2.0; // max |offset| of the shape center, pixels
    double size_min = 11.0;      // shape circumradius, pixels
    double size_max = 13.5;
    double rotation_range = 0.20; // max |angle|, radians
    // Low-frequency lighting noise, constant inside each 4x4 block; this is
    // what the low stream has to be robust to.
    double noise_amplitude = 0.08;
    // Within-block zero-sum texture noise; the box downscale cancels it
    // exactly, so only the high stream ever sees it.
    double texture_amplitude = 0.06;
    // Amplitude of the per-shape interior micro-texture (also zero-mean per
    // block). It carries the shape class at high resolution the way texture
    // carries fine labels in natural images.
    double signature_amplitude = 0.08;
    // Background clutter strokes: fine-scale structure the high stream must
    // tell apart from the shape; box-downscaling averages it away.
    int clutter_count = 12;
    double clutter_max_length = 5.0;
};

struct DatasetSpec {
    std::uint64_t seed = 1;
    int train_count = 6000;
    int test_count = 1200;
    double distractor_fraction = 0.0; // in [0,1)
    JitterParams jitter;
};

struct GeneratedData {
    DatasetSpec spec;
    Dataset train;
    Dataset test;
    LabelSpace fine_space;
    LabelSpace coarse_space;
    MappingTable table;
};

// Deterministic synthetic two-resolution dataset: 12 fine classes
// ({circle,square,triangle,cross} x {red,green,blue}) over 4 coarse shape
// classes, plus an optional unmapped "noise" class when
// distractor_fraction > 0. Train and test draw from distinct seed
// sub-streams.
GeneratedData generate_dataset(const DatasetSpec& spec);

// The coarse stream's input: downscale_box(image_hi, 4), 8x8x3.
Tensor3 low_res_view(const LabeledExample& example);

inline constexpr int kHighResolution = 32;
inline constexpr int kLowResolution = 8;
inline constexpr int kResizeFactor = 4;

// --- mapping table text format ----------------------------------------------
// UTF-8, one "fine_name<TAB>coarse_name" entry per line. Unlisted fine labels
// resolve to Other. Duplicate fine names raise IngestError naming the line.

MappingTable load_mapping(const std::filesystem::path& path, LabelSpace fine, LabelSpace coarse,
                          std::string other_sentinel = "Other");
void save_mapping(const std::filesystem::path& path, const MappingTable& table);

// --- CIFAR-10 binary ingestion ----------------------------------------------
// Records of 1 label byte + 3072 pixel bytes (channel-planar R,G,B), pixels
// scaled to [0,1]. Both label fields carry the record label. Malformed record
// length raises IngestError with the byte offset.

Dataset load_cifar10(const std::filesystem::path& path);
LabelSpace cifar10_label_space();

// --- dataset directory format ------------------------------------------------
// manifest.json (spec, counts, label spaces, per-example fine labels),
// mapping.tsv, and train/test image streams of concatenated tensor records.

void save_dataset(const std::filesystem::path& dir, const GeneratedData& data);
GeneratedData load_dataset(const std::filesystem::path& dir);

} // namespace twostream
