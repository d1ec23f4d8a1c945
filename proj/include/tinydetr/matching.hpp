#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tinydetr/labels.hpp"
#include "tinydetr/tensor.hpp"

namespace tinydetr {

struct MatchWeights {
    double cls = 1.0;
    double l1 = 5.0;
    double giou = 2.0;
};

// Pairwise matching costs. Rows are prediction slots (N), columns are
// ground-truth objects (M <= N).
class CostMatrix {
public:
    CostMatrix() = default;
    CostMatrix(std::size_t rows, std::size_t cols);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double& at(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
    std::span<const double> values() const { return values_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

// Injective assignment of every target column to a distinct prediction row.
// Prediction rows absent from the map are implicitly the no-object slots.
// total_cost is the sum of the selected cost entries, accumulated in
// ascending column order so equal assignments reproduce equal totals bit for
// bit across solvers.
struct Assignment {
    std::vector<std::size_t> prediction_for_target;
    double total_cost = 0.0;
};

// cost(i,j) = w_cls * (-p_i(c_j)) + w_l1 * |b_i - b_j|_1 + w_giou * (1 - GIoU).
// class_logits: [N, C+1] raw logits (softmax applied internally);
// boxes: [N, 4] normalized center form. Throws when M > N.
CostMatrix pairwise_cost(const Tensor& class_logits, const Tensor& boxes,
                         std::span<const GroundTruthObject> targets,
                         const MatchWeights& weights = {});

// Exact minimum-cost assignment in O(rows * cols^2) via the potentials form
// of the Hungarian algorithm. Deterministic: scans rows and columns in
// ascending order, so equal-cost alternatives resolve toward lower indices.
// Throws NumericError on non-finite entries.
Assignment hungarian(const CostMatrix& cost);

// Literal argmin over injective column->row maps, enumerated in lexicographic
// order of (row for target 0, row for target 1, ...) with strict improvement,
// so the first optimum found is the lexicographically smallest. Guarded to
// rows <= 8.
Assignment brute_force_match(const CostMatrix& cost);

}  // namespace tinydetr
