#include "tinydetr/loss.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "tinydetr/errors.hpp"

namespace tinydetr {

namespace {

constexpr double kAreaFloor = 1e-30;

struct SlotTargets {
    std::vector<std::size_t> slot_class;   // per slot, no-object = C
    std::vector<double> slot_weight;       // eos_coef on no-object slots
    std::vector<std::size_t> matched_slots;    // ascending
    std::vector<std::size_t> matched_targets;  // aligned with matched_slots
};

SlotTargets build_slot_targets(std::size_t num_slots, std::size_t num_classes,
                               std::span<const GroundTruthObject> targets,
                               const Assignment& assignment, double eos_coef) {
    if (assignment.prediction_for_target.size() != targets.size()) {
        throw std::invalid_argument("set_loss: assignment covers " +
                                    std::to_string(assignment.prediction_for_target.size()) +
                                    " targets but " + std::to_string(targets.size()) +
                                    " were given");
    }
    SlotTargets out;
    out.slot_class.assign(num_slots, num_classes);  // no-object index
    out.slot_weight.assign(num_slots, eos_coef);
    std::vector<bool> used(num_slots, false);
    for (std::size_t j = 0; j < targets.size(); ++j) {
        const std::size_t slot = assignment.prediction_for_target[j];
        if (slot >= num_slots) {
            throw std::invalid_argument("set_loss: assignment references slot " +
                                        std::to_string(slot) + " of " +
                                        std::to_string(num_slots));
        }
        if (used[slot]) {
            throw std::invalid_argument("set_loss: assignment is not injective (slot " +
                                        std::to_string(slot) + " used twice)");
        }
        used[slot] = true;
        if (targets[j].class_id >= num_classes) {
            throw DataError("set_loss: target class " + std::to_string(targets[j].class_id) +
                            " outside the " + std::to_string(num_classes) + "-class label space");
        }
        out.slot_class[slot] = targets[j].class_id;
        out.slot_weight[slot] = 1.0;
    }
    // canonical slot-ascending order keeps reductions bit-stable no matter
    // how the caller ordered the targets
    for (std::size_t slot = 0; slot < num_slots; ++slot) {
        if (used[slot]) {
            out.matched_slots.push_back(slot);
        }
    }
    out.matched_targets.resize(out.matched_slots.size());
    for (std::size_t j = 0; j < targets.size(); ++j) {
        const std::size_t slot = assignment.prediction_for_target[j];
        const auto it = std::lower_bound(out.matched_slots.begin(), out.matched_slots.end(), slot);
        out.matched_targets[static_cast<std::size_t>(it - out.matched_slots.begin())] = j;
    }
    return out;
}

}  // namespace

Tensor giou_pairs(const Tensor& pred_boxes, const Tensor& target_boxes) {
    if (pred_boxes.ndim() != 2 || pred_boxes.shape()[1] != 4 ||
        pred_boxes.shape() != target_boxes.shape()) {
        throw std::invalid_argument("giou_pairs: expected matching [M,4] tensors; got " +
                                    shape_to_string(pred_boxes.shape()) + " and " +
                                    shape_to_string(target_boxes.shape()));
    }
    const std::size_t m = pred_boxes.shape()[0];
    Tensor zero(Shape{m}, 0.0);

    auto corners = [](const Tensor& b) {
        Tensor cx = select_col(b, 0);
        Tensor cy = select_col(b, 1);
        Tensor hw = mul(select_col(b, 2), 0.5);
        Tensor hh = mul(select_col(b, 3), 0.5);
        return std::array<Tensor, 4>{sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)};
    };
    const auto [px0, py0, px1, py1] = corners(pred_boxes);
    const auto [tx0, ty0, tx1, ty1] = corners(target_boxes);

    Tensor iw = maximum(sub(minimum(px1, tx1), maximum(px0, tx0)), zero);
    Tensor ih = maximum(sub(minimum(py1, ty1), maximum(py0, ty0)), zero);
    Tensor inter = mul(iw, ih);
    Tensor area_p = mul(sub(px1, px0), sub(py1, py0));
    Tensor area_t = mul(sub(tx1, tx0), sub(ty1, ty0));
    Tensor uni = sub(add(area_p, area_t), inter);
    Tensor iou = div(inter, add(uni, kAreaFloor));

    Tensor hull = mul(sub(maximum(px1, tx1), minimum(px0, tx0)),
                      sub(maximum(py1, ty1), minimum(py0, ty0)));
    return sub(iou, div(sub(hull, uni), add(hull, kAreaFloor)));
}

LossBreakdown set_loss(const Tensor& class_logits, const Tensor& boxes,
                       std::span<const GroundTruthObject> targets, const Assignment& assignment,
                       const LossWeights& weights) {
    if (class_logits.ndim() != 2 || boxes.ndim() != 2 || boxes.shape()[1] != 4 ||
        class_logits.shape()[0] != boxes.shape()[0]) {
        throw std::invalid_argument("set_loss: expected [N,classes] logits and [N,4] boxes; got " +
                                    shape_to_string(class_logits.shape()) + " and " +
                                    shape_to_string(boxes.shape()));
    }
    const std::size_t n = class_logits.shape()[0];
    const std::size_t num_classes = class_logits.shape()[1] - 1;
    const SlotTargets st =
        build_slot_targets(n, num_classes, targets, assignment, weights.eos_coef);
    const std::size_t m = st.matched_slots.size();

    LossBreakdown out;
    out.matched_count = m;
    out.class_loss =
        div(cross_entropy_rows(class_logits, st.slot_class, st.slot_weight),
            static_cast<double>(n));

    if (m > 0) {
        Tensor pred_matched = select_rows(boxes, st.matched_slots);
        std::vector<double> tvals(m * 4);
        for (std::size_t k = 0; k < m; ++k) {
            const BoxValues& b = targets[st.matched_targets[k]].box;
            std::copy(b.begin(), b.end(), tvals.begin() + static_cast<std::ptrdiff_t>(k * 4));
        }
        Tensor target_matched(Shape{m, 4}, std::move(tvals));
        out.l1_loss = div(sum(abs(sub(pred_matched, target_matched))), static_cast<double>(m));
        out.giou_loss = div(sum(sub(1.0, giou_pairs(pred_matched, target_matched))),
                            static_cast<double>(m));
    } else {
        out.l1_loss = Tensor::scalar(0.0);
        out.giou_loss = Tensor::scalar(0.0);
    }
    out.total = add(mul(out.class_loss, weights.cls),
                    add(mul(out.l1_loss, weights.l1), mul(out.giou_loss, weights.giou)));
    return out;
}

LossBreakdown batch_set_loss(std::span<const Tensor> class_logits_per_image,
                             std::span<const Tensor> boxes_per_image,
                             std::span<const std::vector<GroundTruthObject>> targets_per_image,
                             const MatchWeights& match_weights,
                             const LossWeights& loss_weights) {
    const std::size_t batch = class_logits_per_image.size();
    if (batch == 0 || boxes_per_image.size() != batch || targets_per_image.size() != batch) {
        throw std::invalid_argument("batch_set_loss: per-image spans must be nonempty and equal "
                                    "length");
    }

    std::size_t total_slots = 0;
    std::size_t total_matched = 0;
    Tensor class_sum, l1_sum, giou_sum;
    for (std::size_t b = 0; b < batch; ++b) {
        const Tensor& logits = class_logits_per_image[b];
        const Tensor& boxes = boxes_per_image[b];
        const auto& targets = targets_per_image[b];
        const Assignment assignment =
            hungarian(pairwise_cost(logits, boxes, targets, match_weights));

        const std::size_t n = logits.shape()[0];
        const std::size_t num_classes = logits.shape()[1] - 1;
        const SlotTargets st =
            build_slot_targets(n, num_classes, targets, assignment, loss_weights.eos_coef);
        total_slots += n;

        Tensor ce = cross_entropy_rows(logits, st.slot_class, st.slot_weight);
        class_sum = class_sum.defined() ? add(class_sum, ce) : ce;

        const std::size_t m = st.matched_slots.size();
        if (m == 0) {
            continue;
        }
        total_matched += m;
        Tensor pred_matched = select_rows(boxes, st.matched_slots);
        std::vector<double> tvals(m * 4);
        for (std::size_t k = 0; k < m; ++k) {
            const BoxValues& bv = targets[st.matched_targets[k]].box;
            std::copy(bv.begin(), bv.end(), tvals.begin() + static_cast<std::ptrdiff_t>(k * 4));
        }
        Tensor target_matched(Shape{m, 4}, std::move(tvals));
        Tensor l1 = sum(abs(sub(pred_matched, target_matched)));
        Tensor gi = sum(sub(1.0, giou_pairs(pred_matched, target_matched)));
        l1_sum = l1_sum.defined() ? add(l1_sum, l1) : l1;
        giou_sum = giou_sum.defined() ? add(giou_sum, gi) : gi;
    }

    LossBreakdown out;
    out.matched_count = total_matched;
    out.class_loss = div(class_sum, static_cast<double>(total_slots));
    if (total_matched > 0) {
        out.l1_loss = div(l1_sum, static_cast<double>(total_matched));
        out.giou_loss = div(giou_sum, static_cast<double>(total_matched));
    } else {
        out.l1_loss = Tensor::scalar(0.0);
        out.giou_loss = Tensor::scalar(0.0);
    }
    out.total = add(mul(out.class_loss, loss_weights.cls),
                    add(mul(out.l1_loss, loss_weights.l1),
                        mul(out.giou_loss, loss_weights.giou)));
    return out;
}

}  // namespace tinydetr
