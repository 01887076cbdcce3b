#pragma once

#include <optional>

#include "twostream/classifier.hpp"
#include "twostream/dataset.hpp"

namespace twostream {

struct DetectorConfig {
    double p1 = 0.10; // high-stream probability threshold (inclusive)
    double p2 = 0.20; // low-stream probability threshold (inclusive)
    int k_high = 5;
    int k_low = 2;
};

// A (high entry, low entry) pair whose labels agree through the mapping and
// whose probabilities clear both thresholds.
struct MatchCandidate {
    int i = 0; // index into the high top-k
    int j = 0; // index into the low top-k
    double score = 0.0; // product of the two probabilities
};

struct Accepted {
    int fine_label = 0;
    int coarse_label = 0;
    double score = 0.0;
};

// Either an accepted classification or a rejection as adversarial.
class Verdict {
public:
    static Verdict reject() { return Verdict{}; }
    static Verdict accept(int fine_label, int coarse_label, double score) {
        Verdict v;
        v.accepted_ = Accepted{fine_label, coarse_label, score};
        return v;
    }

    bool is_accept() const { return accepted_.has_value(); }
    const Accepted& accepted() const {
        if (!accepted_) throw InvalidInputError("verdict: rejected, no accepted payload");
        return *accepted_;
    }

    bool operator==(const Verdict& other) const {
        if (accepted_.has_value() != other.accepted_.has_value()) return false;
        if (!accepted_) return true;
        return accepted_->fine_label == other.accepted_->fine_label &&
               accepted_->coarse_label == other.accepted_->coarse_label;
    }

private:
    std::optional<Accepted> accepted_;
};

// The two-stream comparison: keeps every (i, j) pair with
// map(high_i) == low_j, map(high_i) != Other, high_i.prob >= p1 and
// low_j.prob >= p2; returns the highest-score candidate (ties: smallest i,
// then smallest j) or rejects when no pair qualifies.
Verdict detect(const TopKPrediction& high, const TopKPrediction& low, const MappingTable& table,
               const DetectorConfig& cfg);

// Enumerates the surviving candidates in (i, j) order; detect() picks from
// this set. Exposed so the verdict can be audited by re-enumeration.
std::vector<MatchCandidate> enumerate_candidates(const TopKPrediction& high,
                                                 const TopKPrediction& low,
                                                 const MappingTable& table,
                                                 const DetectorConfig& cfg);

// Full pipeline for one image: top-k of the high stream on the image, top-k
// of the low stream on its downscaled view, then detect().
Verdict classify_image(const Model& high_net, const Model& low_net, const Tensor3& image_hi,
                       const MappingTable& table, const DetectorConfig& cfg);

} // namespace twostream
