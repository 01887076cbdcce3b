#include "twostream/detector.hpp"

namespace twostream {

std::vector<MatchCandidate> enumerate_candidates(const TopKPrediction& high,
                                                 const TopKPrediction& low,
                                                 const MappingTable& table,
                                                 const DetectorConfig& cfg) {
    const int fine_count = table.fine_space().size();
    const int coarse_count = table.coarse_space().size();
    std::vector<MatchCandidate> candidates;
    for (std::size_t i = 0; i < high.entries.size(); ++i) {
        const TopKEntry& h = high.entries[i];
        if (h.label < 0 || h.label >= fine_count)
            throw InvalidInputError("detect: high prediction is not over the fine label space");
        const int mapped = table.coarse_of(h.label);
        if (mapped == MappingTable::kOther) continue;
        if (h.prob < cfg.p1) continue;
        for (std::size_t j = 0; j < low.entries.size(); ++j) {
            const TopKEntry& l = low.entries[j];
            if (l.label < 0 || l.label >= coarse_count)
                throw InvalidInputError("detect: low prediction is not over the coarse label space");
            if (l.label != mapped) continue;
            if (l.prob < cfg.p2) continue;
            candidates.push_back(
                {static_cast<int>(i), static_cast<int>(j), h.prob * l.prob});
        }
    }
    return candidates;
}

Verdict detect(const TopKPrediction& high, const TopKPrediction& low, const MappingTable& table,
               const DetectorConfig& cfg) {
    const auto candidates = enumerate_candidates(high, low, table, cfg);
    if (candidates.empty()) return Verdict::reject();
    // Enumeration order is (i, j) ascending, so a strict > keeps the smallest
    // i then smallest j among equal scores.
    const MatchCandidate* best = &candidates[0];
    for (const MatchCandidate& c : candidates) {
        if (c.score > best->score) best = &c;
    }
    const int fine = high.entries[static_cast<std::size_t>(best->i)].label;
    return Verdict::accept(fine, table.coarse_of(fine), best->score);
}

Verdict classify_image(const Model& high_net, const Model& low_net, const Tensor3& image_hi,
                       const MappingTable& table, const DetectorConfig& cfg) {
    if (!(image_hi.shape() == high_net.input_shape()))
        throw InvalidInputError("classify_image: image does not match the high stream input");
    const Shape3 lo = low_net.input_shape();
    if (high_net.input_shape().height % lo.height != 0 ||
        high_net.input_shape().width % lo.width != 0 ||
        high_net.input_shape().height / lo.height != high_net.input_shape().width / lo.width)
        throw InvalidInputError("classify_image: stream resolutions are not an integer factor apart");
    const int factor = high_net.input_shape().height / lo.height;
    const TopKPrediction high = predict_topk(high_net, image_hi, cfg.k_high);
    const TopKPrediction low =
        predict_topk(low_net, downscale_box(image_hi, factor), cfg.k_low);
    return detect(high, low, table, cfg);
}

} // namespace twostream
