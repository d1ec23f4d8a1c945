#include "tinydetr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tinydetr/errors.hpp"

namespace tinydetr {

namespace {

double detection_iou(const BoxValues& a, const BoxValues& b) {
    return iou(center_to_corner(a), center_to_corner(b));
}

double mean_or_zero(double sum, std::size_t count) {
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace

bool detection_before(const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) {
        return a.confidence > b.confidence;
    }
    if (a.class_id != b.class_id) {
        return a.class_id < b.class_id;
    }
    return a.box < b.box;
}

std::vector<Detection> ranked_detections(std::vector<Detection> detections) {
    std::stable_sort(detections.begin(), detections.end(), detection_before);
    return detections;
}

MatchOutcome match_detections(const std::vector<Detection>& detections,
                              const std::vector<GroundTruthObject>& ground_truth,
                              double iou_threshold) {
    MatchOutcome out;
    out.ranked = ranked_detections(detections);
    out.true_positive.assign(out.ranked.size(), false);
    std::vector<bool> claimed(ground_truth.size(), false);
    for (std::size_t d = 0; d < out.ranked.size(); ++d) {
        const Detection& det = out.ranked[d];
        std::size_t best = ground_truth.size();
        double best_iou = -1.0;
        for (std::size_t g = 0; g < ground_truth.size(); ++g) {
            if (claimed[g] || ground_truth[g].class_id != det.class_id) {
                continue;
            }
            const double overlap = detection_iou(det.box, ground_truth[g].box);
            if (overlap >= iou_threshold && overlap > best_iou) {
                best = g;
                best_iou = overlap;
            }
        }
        if (best < ground_truth.size()) {
            claimed[best] = true;
            out.true_positive[d] = true;
        }
    }
    out.missed = static_cast<std::size_t>(
        std::count(claimed.begin(), claimed.end(), false));
    return out;
}

std::pair<double, double> precision_recall(std::size_t tp, std::size_t fp, std::size_t fn) {
    const double precision =
        tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall =
        tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    return {precision, recall};
}

double average_precision_from_flags(const std::vector<bool>& ranked_true_positive,
                                    std::size_t ground_truth_count,
                                    ApInterpolation interpolation) {
    if (ground_truth_count == 0) {
        throw std::invalid_argument("average_precision: no ground truth; AP is undefined");
    }
    const std::size_t n = ranked_true_positive.size();
    if (n == 0) {
        return 0.0;
    }
    std::vector<double> precision(n);
    std::vector<double> recall(n);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        tp += ranked_true_positive[i] ? 1 : 0;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp) / static_cast<double>(ground_truth_count);
    }
    // precision envelope: best precision achievable at this recall or beyond
    for (std::size_t i = n - 1; i-- > 0;) {
        precision[i] = std::max(precision[i], precision[i + 1]);
    }

    if (interpolation == ApInterpolation::k101Point) {
        double sum = 0.0;
        for (int level = 0; level <= 100; ++level) {
            const double want = static_cast<double>(level) / 100.0;
            const auto it = std::lower_bound(recall.begin(), recall.end(), want);
            if (it != recall.end()) {
                sum += precision[static_cast<std::size_t>(it - recall.begin())];
            }
        }
        return sum / 101.0;
    }
    double area = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (recall[i] > prev_recall) {
            area += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
    }
    return area;
}

double average_precision(const std::vector<Detection>& detections,
                         const std::vector<GroundTruthObject>& ground_truth,
                         std::size_t class_id, double iou_threshold,
                         ApInterpolation interpolation) {
    std::vector<Detection> mine;
    for (const Detection& d : detections) {
        if (d.class_id == class_id) {
            mine.push_back(d);
        }
    }
    std::vector<GroundTruthObject> theirs;
    for (const GroundTruthObject& g : ground_truth) {
        if (g.class_id == class_id) {
            theirs.push_back(g);
        }
    }
    const MatchOutcome m = match_detections(mine, theirs, iou_threshold);
    std::vector<bool> flags(m.true_positive.begin(), m.true_positive.end());
    return average_precision_from_flags(flags, theirs.size(), interpolation);
}

std::array<double, 10> iou_threshold_grid() {
    std::array<double, 10> grid{};
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid[i] = static_cast<double>(50 + 5 * i) / 100.0;
    }
    return grid;
}

EvalReport evaluate(const std::map<std::int64_t, std::vector<Detection>>& detections_by_image,
                    const std::map<std::int64_t, std::vector<GroundTruthObject>>& ground_truth_by_image,
                    const EvalOptions& options) {
    for (const auto& [image_id, dets] : detections_by_image) {
        if (!ground_truth_by_image.count(image_id)) {
            throw DataError("evaluate: detections reference unknown image id " +
                            std::to_string(image_id));
        }
        for (const Detection& d : dets) {
            if (!valid_class_id(static_cast<std::int64_t>(d.class_id))) {
                throw DataError("evaluate: detection in image " + std::to_string(image_id) +
                                " has invalid class id " + std::to_string(d.class_id));
            }
            if (!std::isfinite(d.confidence) || d.confidence < 0.0 || d.confidence > 1.0) {
                throw DataError("evaluate: detection in image " + std::to_string(image_id) +
                                " has confidence outside [0, 1]");
            }
        }
    }

    std::array<std::size_t, kNumClasses> gt_count{};
    for (const auto& [image_id, objects] : ground_truth_by_image) {
        for (const GroundTruthObject& g : objects) {
            ++gt_count[g.class_id];
        }
    }

    EvalReport report;
    std::size_t present = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        report.class_has_ground_truth[c] = gt_count[c] > 0;
        present += gt_count[c] > 0 ? 1 : 0;
    }
    if (present == 0) {
        return report;
    }

    // pre-rank once per image; recall caps take canonical-order prefixes
    struct ImageLists {
        const std::vector<GroundTruthObject>* gt;
        std::vector<Detection> full, top100, top10;
    };
    std::vector<ImageLists> images;
    for (const auto& [image_id, objects] : ground_truth_by_image) {
        ImageLists lists;
        lists.gt = &objects;
        const auto it = detections_by_image.find(image_id);
        if (it != detections_by_image.end()) {
            lists.full = ranked_detections(it->second);
        }
        lists.top100.assign(lists.full.begin(),
                            lists.full.begin() +
                                static_cast<std::ptrdiff_t>(std::min<std::size_t>(100, lists.full.size())));
        lists.top10.assign(lists.full.begin(),
                           lists.full.begin() +
                               static_cast<std::ptrdiff_t>(std::min<std::size_t>(10, lists.full.size())));
        images.push_back(std::move(lists));
    }

    const auto grid = iou_threshold_grid();
    double map_sum = 0.0;
    double mar10_sum = 0.0;
    double mar100_sum = 0.0;
    for (std::size_t ti = 0; ti < grid.size(); ++ti) {
        const double threshold = grid[ti];

        // pool per-image match flags by class, then rank the pool
        struct Flagged {
            Detection det;
            bool tp;
        };
        std::array<std::vector<Flagged>, kNumClasses> pooled;
        std::array<std::size_t, kNumClasses> tp10{};
        std::array<std::size_t, kNumClasses> tp100{};
        for (const ImageLists& im : images) {
            const MatchOutcome full = match_detections(im.full, *im.gt, threshold);
            for (std::size_t d = 0; d < full.ranked.size(); ++d) {
                pooled[full.ranked[d].class_id].push_back(
                    Flagged{full.ranked[d], full.true_positive[d]});
            }
            const MatchOutcome m100 = match_detections(im.top100, *im.gt, threshold);
            const MatchOutcome m10 = match_detections(im.top10, *im.gt, threshold);
            for (std::size_t d = 0; d < m100.ranked.size(); ++d) {
                tp100[m100.ranked[d].class_id] += m100.true_positive[d] ? 1 : 0;
            }
            for (std::size_t d = 0; d < m10.ranked.size(); ++d) {
                tp10[m10.ranked[d].class_id] += m10.true_positive[d] ? 1 : 0;
            }
        }

        double class_ap_sum = 0.0;
        double recall10_sum = 0.0;
        double recall100_sum = 0.0;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            if (gt_count[c] == 0) {
                continue;
            }
            auto& pool = pooled[c];
            std::stable_sort(pool.begin(), pool.end(),
                             [](const Flagged& a, const Flagged& b) {
                                 return detection_before(a.det, b.det);
                             });
            std::vector<bool> flags;
            flags.reserve(pool.size());
            for (const Flagged& f : pool) {
                flags.push_back(f.tp);
            }
            const double ap =
                average_precision_from_flags(flags, gt_count[c], options.interpolation);
            class_ap_sum += ap;
            report.class_ap[c] += ap;
            if (ti == 0) {
                report.class_ap50[c] = ap;
            }
            recall10_sum += static_cast<double>(tp10[c]) / static_cast<double>(gt_count[c]);
            recall100_sum += static_cast<double>(tp100[c]) / static_cast<double>(gt_count[c]);
        }
        const double mean_ap = mean_or_zero(class_ap_sum, present);
        if (ti == 0) {
            report.map50 = mean_ap;
        }
        map_sum += mean_ap;
        mar10_sum += mean_or_zero(recall10_sum, present);
        mar100_sum += mean_or_zero(recall100_sum, present);
    }

    report.map = map_sum / static_cast<double>(grid.size());
    report.mar_10d = mar10_sum / static_cast<double>(grid.size());
    report.mar_100d = mar100_sum / static_cast<double>(grid.size());
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (gt_count[c] > 0) {
            report.class_ap[c] /= static_cast<double>(grid.size());
        }
    }
    return report;
}

}  // namespace tinydetr
