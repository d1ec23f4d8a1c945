#include "tinydetr/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "tinydetr/errors.hpp"

namespace tinydetr {

namespace {

double assignment_total(const CostMatrix& cost, const std::vector<std::size_t>& pred_for_target) {
    double total = 0.0;
    for (std::size_t j = 0; j < pred_for_target.size(); ++j) {
        total += cost.at(pred_for_target[j], j);
    }
    return total;
}

void check_rectangular(const CostMatrix& cost) {
    if (cost.cols() > cost.rows()) {
        throw std::invalid_argument("cost matrix has more targets (" +
                                    std::to_string(cost.cols()) + ") than prediction slots (" +
                                    std::to_string(cost.rows()) + ")");
    }
}

}  // namespace

CostMatrix::CostMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}

CostMatrix pairwise_cost(const Tensor& class_logits, const Tensor& boxes,
                         std::span<const GroundTruthObject> targets,
                         const MatchWeights& weights) {
    if (class_logits.ndim() != 2 || boxes.ndim() != 2 || boxes.shape()[1] != 4 ||
        class_logits.shape()[0] != boxes.shape()[0]) {
        throw std::invalid_argument("pairwise_cost: expected [N,classes] logits and [N,4] boxes; "
                                    "got " + shape_to_string(class_logits.shape()) + " and " +
                                    shape_to_string(boxes.shape()));
    }
    const std::size_t n = class_logits.shape()[0];
    const std::size_t classes = class_logits.shape()[1];
    const std::size_t m = targets.size();
    if (m > n) {
        throw DataError("image has " + std::to_string(m) + " objects but the model only has " +
                        std::to_string(n) +
                        " prediction slots; increase num_queries to at least " +
                        std::to_string(m));
    }

    // plain forward softmax; matching is not differentiated through
    const auto logits = class_logits.data();
    std::vector<double> probs(n * classes);
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = logits.data() + i * classes;
        double mx = z[0];
        for (std::size_t c = 1; c < classes; ++c) {
            mx = std::max(mx, z[c]);
        }
        double denom = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            denom += std::exp(z[c] - mx);
        }
        for (std::size_t c = 0; c < classes; ++c) {
            probs[i * classes + c] = std::exp(z[c] - mx) / denom;
        }
    }

    const auto bx = boxes.data();
    CostMatrix cost(n, m);
    for (std::size_t j = 0; j < m; ++j) {
        const GroundTruthObject& tgt = targets[j];
        if (tgt.class_id + 1 >= classes) {
            throw DataError("pairwise_cost: target class " + std::to_string(tgt.class_id) +
                            " outside the model's " + std::to_string(classes - 1) +
                            " real classes");
        }
        const CornerBox tbox = center_to_corner(tgt.box);
        for (std::size_t i = 0; i < n; ++i) {
            const double* b = bx.data() + i * 4;
            const double l1 = std::abs(b[0] - tgt.box[0]) + std::abs(b[1] - tgt.box[1]) +
                              std::abs(b[2] - tgt.box[2]) + std::abs(b[3] - tgt.box[3]);
            const CornerBox pbox = center_to_corner(BoxValues{b[0], b[1], b[2], b[3]});
            const double g = giou(pbox, tbox);
            cost.at(i, j) = weights.cls * (-probs[i * classes + tgt.class_id]) +
                            weights.l1 * l1 + weights.giou * (1.0 - g);
        }
    }
    return cost;
}

Assignment hungarian(const CostMatrix& cost) {
    check_rectangular(cost);
    for (double v : cost.values()) {
        if (!std::isfinite(v)) {
            throw NumericError("hungarian: non-finite cost entry");
        }
    }
    const std::size_t m = cost.cols();  // targets, all must be assigned
    const std::size_t n = cost.rows();  // prediction slots
    Assignment out;
    out.prediction_for_target.assign(m, 0);
    if (m == 0) {
        return out;
    }

    // Potentials formulation, 1-indexed: "rows" of the square view are the
    // targets (each gets a match), "columns" are the prediction slots.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(m + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= m; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) {
                    continue;
                }
                const double cur = cost.at(j - 1, i0 - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    for (std::size_t j = 1; j <= n; ++j) {
        if (p[j] != 0) {
            out.prediction_for_target[p[j] - 1] = j - 1;
        }
    }
    out.total_cost = assignment_total(cost, out.prediction_for_target);
    return out;
}

Assignment brute_force_match(const CostMatrix& cost) {
    check_rectangular(cost);
    if (cost.rows() > 8) {
        throw std::invalid_argument("brute_force_match: refusing " + std::to_string(cost.rows()) +
                                    " prediction slots (factorial blowup); limit is 8");
    }
    for (double v : cost.values()) {
        if (!std::isfinite(v)) {
            throw NumericError("brute_force_match: non-finite cost entry");
        }
    }
    const std::size_t m = cost.cols();
    const std::size_t n = cost.rows();
    Assignment best;
    best.prediction_for_target.assign(m, 0);
    if (m == 0) {
        return best;
    }
    double best_total = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> current(m, 0);
    std::vector<bool> taken(n, false);

    // Depth-first over targets, candidate rows ascending: assignments are
    // visited in lexicographic order, and strict `<` keeps the first optimum.
    auto recurse = [&](auto&& self, std::size_t j) -> void {
        if (j == m) {
            const double total = assignment_total(cost, current);
            if (total < best_total) {
                best_total = total;
                best.prediction_for_target = current;
            }
            return;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (taken[r]) {
                continue;
            }
            taken[r] = true;
            current[j] = r;
            self(self, j + 1);
            taken[r] = false;
        }
    };
    recurse(recurse, 0);
    best.total_cost = best_total;
    return best;
}

}  // namespace tinydetr
