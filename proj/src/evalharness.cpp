#include "twostream/evalharness.hpp"

#include <sstream>

#include "twostream/ioutil.hpp"
#include "twostream/parallel.hpp"
#include "twostream/rng.hpp"

namespace twostream {

using nlohmann::json;

namespace {

// First eval_count mapped examples: the detector's coarse-space scoring needs
// a coarse ground truth, so Other-mapped distractors are not eval rows.
std::vector<const LabeledExample*> eval_subset(const Dataset& test, int eval_count) {
    std::vector<const LabeledExample*> subset;
    for (const LabeledExample& ex : test.examples) {
        if (ex.coarse_label == MappingTable::kOther) continue;
        subset.push_back(&ex);
        if (static_cast<int>(subset.size()) >= eval_count) break;
    }
    if (subset.empty()) throw InvalidInputError("eval: no mapped examples in the split");
    return subset;
}

Tensor3 attacked_image(const AttackSpec* spec, const LabeledExample& ex, const EvalContext& ctx,
                       int index) {
    if (!spec) return ex.image_hi;
    return run_attack(*spec, ctx.high_net, ctx.low_net, ex,
                      derive_seed(ctx.seed, static_cast<std::uint64_t>(index)))
        .adversarial;
}

} // namespace

std::vector<StreamAccuracyRow> eval_streams(const Dataset& test,
                                            std::span<const AttackSpec> attacks,
                                            const EvalContext& ctx) {
    const auto subset = eval_subset(test, ctx.eval_count);
    const int n = static_cast<int>(subset.size());

    std::vector<StreamAccuracyRow> rows;
    for (int row = -1; row < static_cast<int>(attacks.size()); ++row) {
        const AttackSpec* spec = row < 0 ? nullptr : &attacks[static_cast<std::size_t>(row)];
        std::vector<char> high_hit(static_cast<std::size_t>(n), 0);
        std::vector<char> low_hit(static_cast<std::size_t>(n), 0);
        parallel_for(n, ctx.threads, [&](int i) {
            const LabeledExample& ex = *subset[static_cast<std::size_t>(i)];
            const Tensor3 img = attacked_image(spec, ex, ctx, i);
            high_hit[static_cast<std::size_t>(i)] =
                argmax_label(ctx.high_net, img) == ex.fine_label;
            low_hit[static_cast<std::size_t>(i)] =
                argmax_label(ctx.low_net, downscale_box(img, kResizeFactor)) == ex.coarse_label;
        });
        StreamAccuracyRow out;
        out.attack = spec ? spec->name() : "non-attack";
        long hi = 0, lo = 0;
        for (int i = 0; i < n; ++i) {
            hi += high_hit[static_cast<std::size_t>(i)];
            lo += low_hit[static_cast<std::size_t>(i)];
        }
        out.high_acc = static_cast<double>(hi) / n;
        out.low_acc = static_cast<double>(lo) / n;
        rows.push_back(std::move(out));
    }
    return rows;
}

std::vector<ReactionRow> eval_reaction(const Dataset& test, std::span<const AttackSpec> attacks,
                                       const EvalContext& ctx, std::vector<VerdictLogEntry>* log) {
    const auto subset = eval_subset(test, ctx.eval_count);
    const int n = static_cast<int>(subset.size());

    std::vector<ReactionRow> rows;
    for (int row = -1; row < static_cast<int>(attacks.size()); ++row) {
        const AttackSpec* spec = row < 0 ? nullptr : &attacks[static_cast<std::size_t>(row)];
        const std::string name = spec ? spec->name() : "non-attack";
        std::vector<Verdict> verdicts(static_cast<std::size_t>(n));
        parallel_for(n, ctx.threads, [&](int i) {
            const LabeledExample& ex = *subset[static_cast<std::size_t>(i)];
            const Tensor3 img = attacked_image(spec, ex, ctx, i);
            verdicts[static_cast<std::size_t>(i)] =
                classify_image(ctx.high_net, ctx.low_net, img, ctx.table, ctx.detector);
        });
        ReactionRow out;
        out.attack = name;
        out.total = n;
        for (int i = 0; i < n; ++i) {
            const LabeledExample& ex = *subset[static_cast<std::size_t>(i)];
            const Verdict& v = verdicts[static_cast<std::size_t>(i)];
            if (!v.is_accept()) {
                ++out.reject_n;
            } else if (v.accepted().coarse_label == ex.coarse_label) {
                ++out.right_n;
            } else {
                ++out.wrong_n;
            }
            if (log) {
                log->push_back({name, i, !v.is_accept(),
                                v.is_accept() ? v.accepted().coarse_label : -1,
                                ex.coarse_label});
            }
        }
        rows.push_back(std::move(out));
    }
    return rows;
}

ReactionRow row_from_log(std::span<const VerdictLogEntry> log, const std::string& attack) {
    ReactionRow row;
    row.attack = attack;
    for (const VerdictLogEntry& e : log) {
        if (e.attack != attack) continue;
        ++row.total;
        if (e.rejected)
            ++row.reject_n;
        else if (e.verdict_coarse == e.truth_coarse)
            ++row.right_n;
        else
            ++row.wrong_n;
    }
    return row;
}

double resize_control(const Dataset& test, const Model& low_net, int factor,
                      const EvalContext& ctx) {
    const auto subset = eval_subset(test, ctx.eval_count);
    const int n = static_cast<int>(subset.size());
    std::vector<char> hit(static_cast<std::size_t>(n), 0);
    parallel_for(n, ctx.threads, [&](int i) {
        const LabeledExample& ex = *subset[static_cast<std::size_t>(i)];
        const Tensor3 low = downscale_box(ex.image_hi, kResizeFactor);
        const Tensor3 roundtrip =
            factor == 1 ? low : downscale_box(upscale_replicate(low, factor), factor);
        hit[static_cast<std::size_t>(i)] =
            argmax_label(low_net, roundtrip) == ex.coarse_label;
    });
    long correct = 0;
    for (const char h : hit) correct += h;
    return static_cast<double>(correct) / n;
}

void write_stream_rows_csv(const std::filesystem::path& path,
                           std::span<const StreamAccuracyRow> rows) {
    std::ostringstream out;
    out << "attack,high_acc,low_acc\n";
    for (const auto& row : rows)
        out << row.attack << "," << row.high_acc << "," << row.low_acc << "\n";
    write_file_atomic(path, out.str());
}

void write_reaction_rows_csv(const std::filesystem::path& path,
                             std::span<const ReactionRow> rows) {
    std::ostringstream out;
    out << "attack,reject,right,wrong\n";
    for (const auto& row : rows)
        out << row.attack << "," << row.reject() << "," << row.right() << "," << row.wrong()
            << "\n";
    write_file_atomic(path, out.str());
}

void write_verdict_log_csv(const std::filesystem::path& path,
                           std::span<const VerdictLogEntry> log) {
    std::ostringstream out;
    out << "attack,example,rejected,verdict_coarse,truth_coarse\n";
    for (const auto& e : log)
        out << e.attack << "," << e.example_id << "," << (e.rejected ? 1 : 0) << ","
            << e.verdict_coarse << "," << e.truth_coarse << "\n";
    write_file_atomic(path, out.str());
}

void write_series_csv(const std::filesystem::path& path,
                      const std::map<std::string, std::vector<double>>& series) {
    std::ostringstream out;
    out << "x,series,y\n";
    for (const auto& [name, values] : series)
        for (std::size_t i = 0; i < values.size(); ++i)
            out << (i + 1) << "," << name << "," << values[i] << "\n";
    write_file_atomic(path, out.str());
}

json eval_summary_to_json(std::span<const StreamAccuracyRow> stream_rows,
                          std::span<const ReactionRow> reaction_rows,
                          double resize_control_accuracy) {
    json streams = json::array();
    for (const auto& row : stream_rows)
        streams.push_back(
            {{"attack", row.attack}, {"high_acc", row.high_acc}, {"low_acc", row.low_acc}});
    json reactions = json::array();
    for (const auto& row : reaction_rows)
        reactions.push_back({{"attack", row.attack},
                             {"reject", row.reject()},
                             {"right", row.right()},
                             {"wrong", row.wrong()},
                             {"total", row.total}});
    return json{{"stream_accuracy", streams},
                {"reaction", reactions},
                {"resize_control_accuracy", resize_control_accuracy}};
}

} // namespace twostream
