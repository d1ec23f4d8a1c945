#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tinydetr/labels.hpp"
#include "tinydetr/matching.hpp"
#include "tinydetr/tensor.hpp"

namespace tinydetr {

struct LossWeights {
    double cls = 1.0;
    double l1 = 5.0;
    double giou = 2.0;
    double eos_coef = 0.1;  // down-weight for no-object slots in the class term
};

// Scalars stay graph-connected so one backward pass reaches both heads.
struct LossBreakdown {
    Tensor total;
    Tensor class_loss;
    Tensor l1_loss;
    Tensor giou_loss;
    std::size_t matched_count = 0;
};

// Differentiable GIoU for row-aligned box pairs in normalized center form:
// [M,4] x [M,4] -> [M]. Degenerate unions and hulls are guarded by tiny
// denominator floors instead of branches so the expression stays on the tape.
Tensor giou_pairs(const Tensor& pred_boxes, const Tensor& target_boxes);

// Hungarian set loss for one image. Class term: cross-entropy over all N
// slots (unmatched slots score the no-object class, weighted by eos_coef),
// normalized by N. Box terms: mean L1 and mean (1 - GIoU) over the matched
// pairs only, normalized by M; exactly zero when M == 0. The assignment is
// a fixed input, not differentiated through.
LossBreakdown set_loss(const Tensor& class_logits, const Tensor& boxes,
                       std::span<const GroundTruthObject> targets, const Assignment& assignment,
                       const LossWeights& weights = {});

// Batch variant: runs matching internally per image, normalizes the class
// term by the total slot count and the box terms by the total matched count
// across the whole batch (so empty images cannot produce NaN).
LossBreakdown batch_set_loss(std::span<const Tensor> class_logits_per_image,
                             std::span<const Tensor> boxes_per_image,
                             std::span<const std::vector<GroundTruthObject>> targets_per_image,
                             const MatchWeights& match_weights = {},
                             const LossWeights& loss_weights = {});

}  // namespace tinydetr
