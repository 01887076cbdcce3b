#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "twostream/attacks.hpp"
#include "twostream/detector.hpp"

namespace twostream {

// Per-attack top-1 accuracy of each stream on the attacked images.
struct StreamAccuracyRow {
    std::string attack;
    double high_acc = 0.0;
    double low_acc = 0.0;
};

// Per-attack reaction of the full detector. Counts are kept so that
// reject + right + wrong == total holds exactly.
struct ReactionRow {
    std::string attack;
    long reject_n = 0;
    long right_n = 0;
    long wrong_n = 0;
    long total = 0;

    double reject() const { return total ? static_cast<double>(reject_n) / total : 0.0; }
    double right() const { return total ? static_cast<double>(right_n) / total : 0.0; }
    double wrong() const { return total ? static_cast<double>(wrong_n) / total : 0.0; }
};

// Raw per-image outcome, enough to recompute any ReactionRow.
struct VerdictLogEntry {
    std::string attack;
    int example_id = 0;
    bool rejected = false;
    int verdict_coarse = -1;
    int truth_coarse = -1;
};

struct EvalContext {
    const Model& high_net;
    const Model& low_net;
    const MappingTable& table;
    DetectorConfig detector;
    int eval_count = 300; // images per row
    std::uint64_t seed = 1;
    int threads = 0;
};

// Accuracy of both streams per attack, with a leading "non-attack" control
// row. Evaluation draws the first eval_count mapped examples of the split.
std::vector<StreamAccuracyRow> eval_streams(const Dataset& test,
                                            std::span<const AttackSpec> attacks,
                                            const EvalContext& ctx);

// Reject/Right/Wrong rates of the detector per attack; Right and Wrong are
// judged in the coarse space.
std::vector<ReactionRow> eval_reaction(const Dataset& test, std::span<const AttackSpec> attacks,
                                       const EvalContext& ctx,
                                       std::vector<VerdictLogEntry>* log = nullptr);

ReactionRow row_from_log(std::span<const VerdictLogEntry> log, const std::string& attack);

// Low-stream accuracy after a downscale -> upscale -> downscale round trip of
// clean images; isolates what resizing alone costs.
double resize_control(const Dataset& test, const Model& low_net, int factor,
                      const EvalContext& ctx);

void write_stream_rows_csv(const std::filesystem::path& path,
                           std::span<const StreamAccuracyRow> rows);
void write_reaction_rows_csv(const std::filesystem::path& path,
                             std::span<const ReactionRow> rows);
void write_verdict_log_csv(const std::filesystem::path& path,
                           std::span<const VerdictLogEntry> log);

// Generic (x, y) series emitter: x,series,y per row.
void write_series_csv(const std::filesystem::path& path,
                      const std::map<std::string, std::vector<double>>& series);

nlohmann::json eval_summary_to_json(std::span<const StreamAccuracyRow> stream_rows,
                                    std::span<const ReactionRow> reaction_rows,
                                    double resize_control_accuracy);

} // namespace twostream
