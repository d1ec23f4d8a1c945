#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "tinydetr/box.hpp"
#include "tinydetr/labels.hpp"

namespace tinydetr {

struct Detection {
    BoxValues box;  // normalized center form (cx, cy, w, h)
    std::size_t class_id = 0;
    double confidence = 0.0;
};

// Canonical ranking: confidence descending, ties broken by content (class,
// then box coordinates). Equal detection sets therefore rank identically no
// matter what order they arrive in.
bool detection_before(const Detection& a, const Detection& b);
std::vector<Detection> ranked_detections(std::vector<Detection> detections);

// Greedy per-class matching: walking detections in canonical rank order, each
// one claims the highest-IoU still-unmatched ground truth of its class with
// IoU >= threshold (ties -> lowest ground-truth index). Matched -> true
// positive, otherwise false positive; leftover ground truths are misses.
struct MatchOutcome {
    std::vector<Detection> ranked;
    std::vector<bool> true_positive;  // parallel to ranked
    std::size_t missed = 0;
};
MatchOutcome match_detections(const std::vector<Detection>& detections,
                              const std::vector<GroundTruthObject>& ground_truth,
                              double iou_threshold);

// 0/0 is defined as precision 1 (nothing claimed, nothing wrong) and
// recall 0 (nothing found).
std::pair<double, double> precision_recall(std::size_t tp, std::size_t fp, std::size_t fn);

enum class ApInterpolation {
    k101Point,   // mean of the precision envelope at recalls 0.00, 0.01, ..., 1.00
    kAllPoints,  // exact area under the precision envelope
};

// AP from an already-ranked true-positive flag sequence for one class.
double average_precision_from_flags(const std::vector<bool>& ranked_true_positive,
                                    std::size_t ground_truth_count,
                                    ApInterpolation interpolation);

// Single-pool AP for one class at one IoU threshold. Throws
// std::invalid_argument when the class has no ground truth (AP undefined).
double average_precision(const std::vector<Detection>& detections,
                         const std::vector<GroundTruthObject>& ground_truth,
                         std::size_t class_id, double iou_threshold,
                         ApInterpolation interpolation = ApInterpolation::k101Point);

// The ten IoU thresholds 0.50, 0.55, ..., 0.95.
std::array<double, 10> iou_threshold_grid();

struct EvalOptions {
    ApInterpolation interpolation = ApInterpolation::k101Point;
};

struct EvalReport {
    double map = 0.0;       // class-mean AP averaged over the IoU grid
    double map50 = 0.0;     // class-mean AP at IoU 0.50
    double mar_10d = 0.0;   // mean recall, <= 10 detections kept per image
    double mar_100d = 0.0;  // mean recall, <= 100 detections kept per image
    std::array<double, kNumClasses> class_ap{};    // per class, averaged over the grid
    std::array<double, kNumClasses> class_ap50{};  // per class at IoU 0.50
    // classes without any ground truth are excluded from every mean above and
    // carry zeros in the tables
    std::array<bool, kNumClasses> class_has_ground_truth{};
};

// Corpus-level evaluation. Detections are keyed by image id and may only
// reference ids present in the ground-truth map.
EvalReport evaluate(const std::map<std::int64_t, std::vector<Detection>>& detections_by_image,
                    const std::map<std::int64_t, std::vector<GroundTruthObject>>& ground_truth_by_image,
                    const EvalOptions& options = {});

}  // namespace tinydetr
